"""Hypothesis strategies shared by the test modules."""
import numpy as np
from hypothesis import strategies as st

from numinv.static import FiniteSpace
from numinv.tree import random_tree

weights = st.floats(0.05, 1.0, allow_nan=False)
values = st.one_of(st.just(0.0), st.floats(1e-6, 10.0))
positive_values = st.floats(0.1, 10.0, allow_nan=False)


@st.composite
def spaces(draw, min_atoms=1, max_atoms=6):
    w = np.array(draw(st.lists(weights, min_size=min_atoms, max_size=max_atoms)))
    return FiniteSpace(w / w.sum())


@st.composite
def space_and_outcomes(draw, k=2, min_atoms=1, max_atoms=6, positive=False):
    sp = draw(spaces(min_atoms, max_atoms))
    elem = positive_values if positive else values
    outs = [np.array(draw(st.lists(elem, min_size=sp.n, max_size=sp.n))) for _ in range(k)]
    return (sp, *outs)


seeds = st.integers(0, 2**32 - 1)


@st.composite
def trees(draw, max_depth=4, max_branching=3):
    rng = np.random.default_rng(draw(seeds))
    return random_tree(rng, draw(st.integers(1, max_depth)), max_branching), rng
