"""Sparse direct solves with factor reuse and residual checking."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import LinearSolveError

__all__ = ["Factorization", "solve_sparse"]


class Factorization:
    """LU factorization of a sparse matrix, reusable for A x = b and A^T x = b."""

    def __init__(self, matrix: sp.spmatrix):
        self.matrix = matrix.tocsc()
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise LinearSolveError(f"matrix is not square: {self.matrix.shape}")
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:  # singular factor
            raise LinearSolveError(str(exc)) from exc

    def solve(self, rhs: np.ndarray, trans: str = "N", check: bool = True) -> np.ndarray:
        x = self._lu.solve(rhs, trans=trans)
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("non-finite solution from direct solve")
        if check:
            a = self.matrix if trans == "N" else self.matrix.T
            res = a @ x - rhs
            scale = np.linalg.norm(rhs)
            if scale > 0:
                rel = np.linalg.norm(res) / scale
                if rel > 1e-8:
                    # one step of iterative refinement before giving up
                    x = x + self._lu.solve(rhs - a @ x, trans=trans)
                    rel = np.linalg.norm(a @ x - rhs) / scale
                    if rel > 1e-6:
                        raise LinearSolveError(f"direct solve residual {rel:.3e}")
        return x


def solve_sparse(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    return Factorization(matrix).solve(rhs)
