"""Sparse direct solution of the per-step constrained saddle systems.

Every time step reduces to one (or, inside a Picard loop, a few) solves
with a block matrix coupling velocity, pressure, optionally a projected
dynamic-pressure variable, and the scalar mean multipliers.  Systems are
factorized monolithically: the identities the test-suite checks live at
the 1e-10 level and would be polluted by iterative-solver tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RESIDUAL_REL_TOL = 1e-11


class LinearSolveError(RuntimeError):
    pass


class Factorization:
    """LU factor of a sparse matrix, reusable across right-hand sides."""

    def __init__(self, matrix):
        self.matrix = matrix.tocsc()
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:  # singular factorization
            raise LinearSolveError(f"factorization failed: {exc}") from exc

    def solve(self, rhs):
        return self._lu.solve(rhs)


@dataclass
class SaddleSystem:
    """Block system with named unknown slices (u, p, and friends)."""

    matrix: sp.spmatrix
    rhs: np.ndarray
    slices: dict = field(default_factory=dict)

    def factorize(self) -> Factorization:
        return Factorization(self.matrix)


@dataclass
class SaddleSolution:
    x: np.ndarray
    residual: float
    slices: dict

    def __getitem__(self, name):
        return self.x[self.slices[name]]


def solve_saddle(system: SaddleSystem,
                 factor: Factorization | None = None) -> SaddleSolution:
    """Direct solve with a relative-residual guard.

    The residual |Ax - b| must not exceed RESIDUAL_REL_TOL * |b|; a
    violation signals a (numerically) singular system and aborts.
    """
    if factor is None:
        factor = system.factorize()
    x = factor.solve(system.rhs)
    norm_rhs = float(np.linalg.norm(system.rhs))
    resid = float(np.linalg.norm(factor.matrix @ x - system.rhs))
    if not np.all(np.isfinite(x)) and np.all(np.isfinite(system.rhs)):
        raise LinearSolveError("solution is not finite")
    if np.isfinite(norm_rhs) and resid > RESIDUAL_REL_TOL * max(norm_rhs, 1e-300):
        raise LinearSolveError(
            f"residual {resid:.3e} exceeds {RESIDUAL_REL_TOL:.0e} * |rhs| "
            f"({norm_rhs:.3e})")
    return SaddleSolution(x=x, residual=resid, slices=system.slices)
