"""Invariant random subsets of Z^d: samplers, estimators and tests.

Polynomial thinning processes S_k, Bernoulli and periodic baselines,
cut-and-project sets and their combinators live in ``src.services``;
pydantic specs and report models in ``src.models``; the command groups
wired into ``lattice_app.py`` in ``src.functions``.
"""

from src.utils.constants import TOOL_VERSION

__version__ = TOOL_VERSION
