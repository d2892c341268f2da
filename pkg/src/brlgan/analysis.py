"""Mechanical check that FiLM is a bilinear map with rank-two weight matrices.

For a fixed feature vector ``f`` with a nonzero entry ``f[k]``, output ``i``
of FiLM equals ``f @ W_i @ c`` for every condition ``c`` where

    W_i = outer(W_f[:, i], W_gain[:, i]) + E_k

and ``E_k`` is zero except for row ``k``, which holds ``W_c[:, i] / f[k]``.
Both summands have rank one, hence rank(W_i) <= 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .conditioning import FiLMParams, film_condition
from .tensor import ParameterError, Rng

RANK_TOL = 1e-10
DEVIATION_TOL = 1e-9
MIN_PIVOT = 1e-6


class DegenerateInputError(ValueError):
    """The feature vector has no usable nonzero entry."""


@dataclass
class EquivalenceReport:
    max_deviation: float
    ranks: list[int] = field(default_factory=list)
    tolerance: float = DEVIATION_TOL

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance and all(r <= 2 for r in self.ranks)

    def merge(self, other: "EquivalenceReport") -> "EquivalenceReport":
        return EquivalenceReport(max(self.max_deviation, other.max_deviation),
                                 self.ranks + other.ranks, self.tolerance)

    def to_dict(self) -> dict:
        return {"pass": self.passed, "max_deviation": self.max_deviation,
                "max_rank": max(self.ranks, default=0), "ranks": self.ranks,
                "tolerance": self.tolerance}


def film_to_bilinear_matrix(p: FiLMParams, i: int, f) -> np.ndarray:
    """The ``[D, D_cond]`` matrix whose bilinear form reproduces FiLM output ``i`` at ``f``.

    The pivot ``k`` is the largest-magnitude entry of ``f`` (lowest index on
    ties), which keeps the division well conditioned.
    """
    f = np.asarray(f, dtype=np.float64)
    W_f, W_gain, W_c = (np.asarray(w) for w in p.weights())
    if f.shape != (W_f.shape[0],):
        raise ParameterError(f"feature vector has shape {f.shape}, expected ({W_f.shape[0]},)")
    k = int(np.argmax(np.abs(f)))
    if f[k] == 0.0:
        raise DegenerateInputError("feature vector is all zeros; no pivot row exists")
    W = np.outer(W_f[:, i], W_gain[:, i])
    W[k] += W_c[:, i] / f[k]
    return W


def numerical_rank(m, tol: float = RANK_TOL) -> int:
    """Number of singular values above ``tol`` times the largest one.

    Singular values come from one-sided (Hestenes) Jacobi rotations.
    """
    m = np.asarray(m, dtype=np.float64)
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    if m.ndim != 2 or m.size == 0:
        raise ParameterError(f"numerical_rank needs a non-empty matrix, got shape {m.shape}")
    sv = kernels.singular_values(m)
    if sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > tol * sv[0]))


def verify_film_equivalence(p: FiLMParams, trials: int, rng: Rng, n_conditions: int = 16,
                            tolerance: float = DEVIATION_TOL) -> EquivalenceReport:
    """Build every ``W_i`` for random features and compare against FiLM on random conditions."""
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    W_f = np.asarray(p.W_f)
    D, O = W_f.shape
    D_cond = np.asarray(p.W_c).shape[0]
    deviation, ranks = 0.0, []
    for _ in range(trials):
        f = rng.normal(D)
        while np.max(np.abs(f)) < MIN_PIVOT:
            f = rng.normal(D)
        conds = rng.normal((n_conditions, D_cond))
        film = np.asarray(film_condition(p, np.tile(f, (n_conditions, 1)), conds))
        for i in range(O):
            W = film_to_bilinear_matrix(p, i, f)
            bil = conds @ (W.T @ f)
            deviation = max(deviation, float(np.max(np.abs(bil - film[:, i]))))
            ranks.append(numerical_rank(W))
    return EquivalenceReport(deviation, ranks, tolerance)
