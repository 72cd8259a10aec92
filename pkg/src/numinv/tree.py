"""Finite event trees as discrete filtered probability spaces.

Nodes are stored level by level (time 0 first), so a forward pass over node
indices visits parents before children and a reverse pass does the opposite.
Node processes are plain float arrays with one entry per node.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .static import DomainError

DEFAULT_MAX_NODES = 10**6


class TreeError(DomainError):
    pass


@dataclass(frozen=True, eq=False)
class EventTree:
    """Validated event tree.

    Attributes
    ----------
    parent : int array, ``-1`` at the root
    time : int array of time indices
    cond_prob : transition probability from the parent (1 at the root)
    prob : unconditional node probability
    """

    parent: np.ndarray
    time: np.ndarray
    cond_prob: np.ndarray
    prob: np.ndarray
    children: tuple
    labels: tuple | None = None

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @property
    def horizon(self) -> int:
        return int(self.time[-1])

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.time == self.horizon)

    @property
    def internal(self) -> np.ndarray:
        return np.flatnonzero(self.time < self.horizon)

    def level(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.time == t)

    def path(self, node: int) -> list[int]:
        """Node indices from the root down to ``node``."""
        out = []
        while node >= 0:
            out.append(int(node))
            node = self.parent[node]
        return out[::-1]

    def ancestor_at(self, node: int, t: int) -> int:
        while self.time[node] > t:
            node = self.parent[node]
        return int(node)

    def leaf_paths(self) -> np.ndarray:
        """Array ``(n_leaves, horizon + 1)`` of node indices along each root-to-leaf path."""
        leaves = self.leaves
        T = self.horizon
        out = np.empty((leaves.size, T + 1), dtype=np.int64)
        out[:, T] = leaves
        for t in range(T - 1, -1, -1):
            out[:, t] = self.parent[out[:, t + 1]]
        return out

    def increments(self, x: np.ndarray) -> np.ndarray:
        """``x(node) - x(parent)``, with the parent value of the root taken as 0."""
        x = self.process(x)
        d = x.copy()
        d[1:] -= x[self.parent[1:]]
        return d

    def process(self, x) -> np.ndarray:
        a = np.asarray(x, dtype=float)
        if a.shape[:1] != (self.n_nodes,):
            raise TreeError(f"node process has shape {a.shape}, tree has {self.n_nodes} nodes")
        return a


def _finish(parent, time, cond_prob, labels=None, *, atol=1e-12, max_nodes=DEFAULT_MAX_NODES):
    parent = np.asarray(parent, dtype=np.int64)
    time = np.asarray(time, dtype=np.int64)
    cond_prob = np.asarray(cond_prob, dtype=float)
    n = parent.size
    if n > max_nodes:
        raise TreeError(f"tree has {n} nodes, above the cap of {max_nodes}")
    if n == 0 or parent[0] != -1 or time[0] != 0:
        raise TreeError("node 0 must be the root at time 0")
    if np.any(parent[1:] < 0) or np.any(parent[1:] >= np.arange(1, n)):
        raise TreeError("orphan node: every non-root node needs an earlier parent")
    if np.any(time[1:] != time[parent[1:]] + 1):
        raise TreeError("child time must be parent time + 1")
    if np.any(np.diff(time) < 0):
        raise TreeError("nodes must be ordered by time")
    if np.any(~np.isfinite(cond_prob[1:])) or np.any(cond_prob[1:] <= 0):
        raise TreeError("transition probabilities must be strictly positive")
    children = [[] for _ in range(n)]
    for i in range(1, n):
        children[parent[i]].append(i)
    T = time[-1]
    for i in range(n):
        kids = children[i]
        if kids:
            s = math.fsum(cond_prob[kids])
            if abs(s - 1.0) > atol:
                raise TreeError(f"transition probabilities out of node {i} sum to {s!r}")
        elif time[i] != T:
            raise TreeError(f"node {i} is a leaf at time {time[i]}, but leaves must sit at {T}")
    prob = cond_prob.copy()
    prob[0] = 1.0
    for i in range(1, n):
        prob[i] = prob[parent[i]] * cond_prob[i]
    for a in (parent, time, cond_prob, prob):
        a.setflags(write=False)
    return EventTree(parent, time, cond_prob, prob, tuple(tuple(c) for c in children), labels)


def build_tree(spec, *, max_nodes: int = DEFAULT_MAX_NODES) -> EventTree:
    """Build a tree from a dict spec.

    Two forms are accepted::

        {"lattice": {"steps": 2, "probs": [0.5, 0.5]}}
        {"nodes": [{"id": "r"}, {"id": "u", "parent": "r", "prob": 0.5}, ...]}

    The lattice form expands to a full (non-recombined) tree in which every node
    branches with the same transition probabilities; ``probs`` may also be a list
    with one probability vector per time step.
    """
    if "lattice" in spec:
        lat = spec["lattice"]
        return lattice_tree(lat["steps"], lat["probs"], max_nodes=max_nodes)
    if "nodes" in spec:
        return tree_from_nodes(spec["nodes"], max_nodes=max_nodes)
    raise TreeError("tree spec needs either 'lattice' or 'nodes'")


def lattice_tree(steps: int, probs, *, max_nodes: int = DEFAULT_MAX_NODES) -> EventTree:
    if steps < 0:
        raise TreeError("steps must be nonnegative")
    nested = len(probs) > 0 and np.ndim(probs[0]) == 1
    per_step = [np.asarray(p, float) for p in probs] if nested else [np.asarray(probs, float)] * steps
    if len(per_step) != steps:
        raise TreeError("need one probability vector per step")
    size = 1
    total = 1
    for p in per_step:
        size *= p.size
        total += size
        if total > max_nodes:
            raise TreeError(f"lattice expands to more than {max_nodes} nodes")
    parent, time, cp = [-1], [0], [1.0]
    frontier = [0]
    for t, p in enumerate(per_step, start=1):
        nxt = []
        for node in frontier:
            for q in p:
                parent.append(node)
                time.append(t)
                cp.append(float(q))
                nxt.append(len(parent) - 1)
        frontier = nxt
    return _finish(parent, time, cp, max_nodes=max_nodes)


def tree_from_nodes(nodes: Sequence[dict], *, max_nodes: int = DEFAULT_MAX_NODES) -> EventTree:
    ids = [n["id"] for n in nodes]
    if len(set(ids)) != len(ids):
        raise TreeError("duplicate node ids")
    roots = [n for n in nodes if n.get("parent") is None]
    if len(roots) != 1:
        raise TreeError("exactly one root (node without parent) is required")
    known = set(ids)
    for n in nodes:
        if n.get("parent") is not None and n["parent"] not in known:
            raise TreeError(f"orphan node {n['id']!r}: unknown parent {n['parent']!r}")
    kids: dict = {i: [] for i in ids}
    for n in nodes:
        if n.get("parent") is not None:
            kids[n["parent"]].append(n)
    order, parent, time, cp = [], [], [], []
    index = {}
    frontier = [(roots[0], -1, 0)]
    while frontier:
        nxt = []
        for node, par, t in frontier:
            index[node["id"]] = len(order)
            order.append(node["id"])
            parent.append(par)
            time.append(t)
            cp.append(1.0 if par < 0 else float(node["prob"]))
            nxt.extend((c, index[node["id"]], t + 1) for c in kids[node["id"]])
        frontier = nxt
    if len(order) != len(ids):
        raise TreeError("tree has nodes unreachable from the root")
    return _finish(parent, time, cp, tuple(order), max_nodes=max_nodes)


def random_tree(rng: np.random.Generator, depth: int, max_branching: int, *, min_prob: float = 0.05) -> EventTree:
    """Random tree of exactly ``depth`` periods; each internal node has 1..max_branching children."""
    parent, time, cp = [-1], [0], [1.0]
    frontier = [0]
    for t in range(1, depth + 1):
        nxt = []
        for node in frontier:
            k = int(rng.integers(1, max_branching + 1))
            q = min_prob + (1 - k * min_prob) * rng.dirichlet(np.ones(k))
            q /= q.sum()
            for j in range(k):
                parent.append(node)
                time.append(t)
                cp.append(float(q[j]))
                nxt.append(len(parent) - 1)
        frontier = nxt
    return _finish(parent, time, cp, atol=1e-12)


# ---------------------------------------------------------------------------
# expectations and martingales
# ---------------------------------------------------------------------------


def backward_expectation(tree: EventTree, leaf_values) -> np.ndarray:
    """Conditional expectation of a terminal quantity at every node.

    ``leaf_values`` is either one value per leaf (ordered as ``tree.leaves``) or a
    node process whose leaf entries are used.
    """
    v = np.asarray(leaf_values, dtype=float)
    out = np.zeros(tree.n_nodes)
    leaves = tree.leaves
    if v.shape[0] == tree.n_nodes:
        out[leaves] = v[leaves]
    elif v.shape[0] == leaves.size:
        out[leaves] = v
    else:
        raise TreeError("need one value per leaf or per node")
    weighted = np.zeros(tree.n_nodes)
    for t in range(tree.horizon, 0, -1):
        lvl = tree.level(t)
        weighted[lvl] = tree.cond_prob[lvl] * out[lvl]
        np.add.at(out, tree.parent[lvl], weighted[lvl])
    return out


def conditional_expectation(tree: EventTree, x, node: int | None = None):
    """``E[X_T | node]``; the whole node process when ``node`` is None."""
    m = backward_expectation(tree, x)
    return m if node is None else float(m[node])


def one_step_drift(tree: EventTree, x) -> np.ndarray:
    """``E[X(child) - X(node) | node]`` for every node (0 at leaves)."""
    x = tree.process(x)
    drift = np.zeros(tree.n_nodes)
    kids = np.arange(1, tree.n_nodes)
    np.add.at(drift, tree.parent[kids], tree.cond_prob[kids] * x[kids])
    internal = tree.internal
    drift[internal] -= x[internal]
    drift[tree.leaves] = 0.0
    return drift


class MartingaleClass(enum.Enum):
    MARTINGALE = "martingale"
    SUPERMARTINGALE = "supermartingale"
    SUBMARTINGALE = "submartingale"
    NONE = "none"


@dataclass(frozen=True)
class MartingaleReport:
    kind: MartingaleClass
    max_up: float  # largest positive drift
    max_down: float  # largest negative drift, as a positive number
    drift: np.ndarray

    @property
    def max_violation(self) -> float:
        return max(self.max_up, self.max_down)


def martingale_class(tree: EventTree, x, tol: float = 1e-10, mask=None) -> MartingaleReport:
    """Classify a node process by its one-step drifts.

    ``mask`` restricts the classification to a subset of nodes (e.g. where a
    process is still alive).
    """
    d = one_step_drift(tree, x)
    sel = d if mask is None else d[np.asarray(mask, bool)]
    up = float(max(sel.max(initial=0.0), 0.0))
    down = float(max(-sel.min(initial=0.0), 0.0))
    if up <= tol and down <= tol:
        kind = MartingaleClass.MARTINGALE
    elif up <= tol:
        kind = MartingaleClass.SUPERMARTINGALE
    elif down <= tol:
        kind = MartingaleClass.SUBMARTINGALE
    else:
        kind = MartingaleClass.NONE
    return MartingaleReport(kind, up, down, d)


def is_nondecreasing(tree: EventTree, x, tol: float = 0.0) -> bool:
    return bool(np.all(tree.increments(x)[1:] >= -tol))


# ---------------------------------------------------------------------------
# random times
# ---------------------------------------------------------------------------


def random_time(tree: EventTree, times) -> np.ndarray:
    """Validate a random time given as one time index per leaf (ordered as ``tree.leaves``)."""
    t = np.asarray(times)
    if t.shape != (tree.leaves.size,):
        raise TreeError("a random time needs one time index per leaf")
    if not np.issubdtype(t.dtype, np.integer):
        if np.any(t != np.round(t)):
            raise TreeError("time indices must be integers")
        t = t.astype(np.int64)
    if np.any(t < 0) or np.any(t > tree.horizon):
        raise TreeError(f"time indices must lie in 0..{tree.horizon}")
    return t


def first_argmax_time(tree: EventTree, x) -> np.ndarray:
    """Per leaf, the first time the path of ``x`` attains its maximum."""
    paths = tree.leaf_paths()
    return np.argmax(tree.process(x)[paths], axis=1)


def first_argmin_time(tree: EventTree, x) -> np.ndarray:
    paths = tree.leaf_paths()
    return np.argmin(tree.process(x)[paths], axis=1)


def is_stopping_time(tree: EventTree, times) -> bool:
    """True when ``{T = t}`` is decided by the node at time ``t`` on every path."""
    times = random_time(tree, times)
    paths = tree.leaf_paths()
    for t in range(tree.horizon + 1):
        hit = times == t
        nodes = paths[:, t]
        for node in np.unique(nodes):
            s = hit[nodes == node]
            if s.any() and not s.all():
                return False
    return True


def dual_optional_projection(tree: EventTree, times) -> np.ndarray:
    """Nondecreasing node process ``H`` with ``E[sum V dH] = E[V_T]`` for adapted ``V``.

    The increment at a node at time ``t`` is ``P[T = t, path through node] / P[node]``.
    """
    times = random_time(tree, times)
    paths = tree.leaf_paths()
    leaves = tree.leaves
    mass = np.zeros(tree.n_nodes)
    nodes_at_t = paths[np.arange(leaves.size), times]
    np.add.at(mass, nodes_at_t, tree.prob[leaves])
    dh = mass / tree.prob
    return cumulate(tree, dh)


def cumulate(tree: EventTree, increments) -> np.ndarray:
    """Running sum of node increments along each path (inverse of ``tree.increments``)."""
    d = tree.process(increments)
    out = d.copy()
    for t in range(1, tree.horizon + 1):
        lvl = tree.level(t)
        out[lvl] += out[tree.parent[lvl]]
    return out
