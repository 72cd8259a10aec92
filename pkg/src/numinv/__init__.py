"""Preferences by expected relative return on finite spaces and event trees.

Submodules
----------
static      finite spaces, the relative-return rule and its counterexamples
choice      log-optimal elements of polytopes, full simplices, probability recovery
tree        event trees, conditional expectations, random times
canonical   (L, K) pairs of optional measures on trees
market      wealth, numéraire portfolios, optimal consumption, random-time sampling
montecarlo  path ensembles for the maximal identity and the exponential law
cli         scenario runner
"""
from .static import DomainError, FiniteSpace, Preference, prefers, rel, safe_div

__version__ = "0.1.0"

__all__ = ["DomainError", "FiniteSpace", "Preference", "prefers", "rel", "safe_div", "__version__"]
