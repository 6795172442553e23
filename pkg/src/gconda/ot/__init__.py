"""Ground costs, exact transport between equal-size uniform batches, and W1 estimates.

The assignment kernel is compiled (Cython) when available; set
``GCONDA_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _lsa_py

if os.environ.get("GCONDA_PURE_PYTHON", "") not in ("", "0"):
    _assign = _lsa_py.assign
    BACKEND = "python"
else:
    try:
        from ._lsa import assign as _assign
        BACKEND = "cython"
    except ImportError:  # extension not built
        _assign = _lsa_py.assign
        BACKEND = "python"

from .core import (  # noqa: E402
    CE_EPS,
    TransportPlan,
    brute_force_emd,
    cost_joint,
    cost_label,
    pairwise_sq_dists,
    sinkhorn,
    solve_emd,
    w1_estimate,
)

__all__ = [
    "BACKEND",
    "CE_EPS",
    "TransportPlan",
    "brute_force_emd",
    "cost_joint",
    "cost_label",
    "pairwise_sq_dists",
    "sinkhorn",
    "solve_emd",
    "w1_estimate",
]
