"""Reference triangle bases (P1, P2) and quadrature rules.

Triangle rule: 7-point degree-5 Dunavant (exact for quadratic-velocity
convection terms on affine elements). Edge rule: 3-point Gauss (degree 5).
Quadrature weights include the reference-cell measure, so physical integrals
are sum(w * f) * detJ with detJ twice the triangle area.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "TRI_QP",
    "TRI_QW",
    "EDGE_QP",
    "EDGE_QW",
    "p1_basis",
    "p1_grads",
    "p2_basis",
    "p2_grads",
    "edge_ref_points",
    "EDGE_VERTICES",
]

_s15 = np.sqrt(15.0)
_a1 = (6.0 - _s15) / 21.0
_a2 = (6.0 + _s15) / 21.0
_w0 = 9.0 / 40.0
_w1 = (155.0 - _s15) / 1200.0
_w2 = (155.0 + _s15) / 1200.0

# barycentric -> (xi, eta) with lambda = (1 - xi - eta, xi, eta)
TRI_QP = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0],
        [_a1, _a1],
        [1.0 - 2.0 * _a1, _a1],
        [_a1, 1.0 - 2.0 * _a1],
        [_a2, _a2],
        [1.0 - 2.0 * _a2, _a2],
        [_a2, 1.0 - 2.0 * _a2],
    ]
)
TRI_QW = 0.5 * np.array([_w0, _w1, _w1, _w1, _w2, _w2, _w2])

_g = 0.5 * np.sqrt(3.0 / 5.0)
EDGE_QP = np.array([0.5 - _g, 0.5, 0.5 + _g])
EDGE_QW = np.array([5.0, 8.0, 5.0]) / 18.0

# local edge l connects vertices (l+1)%3 -> (l+2)%3 and carries midpoint dof 3+l
EDGE_VERTICES = np.array([[1, 2], [2, 0], [0, 1]])


def _bary(pts: np.ndarray) -> np.ndarray:
    xi, eta = pts[:, 0], pts[:, 1]
    return np.stack([1.0 - xi - eta, xi, eta], axis=1)


def p1_basis(pts: np.ndarray) -> np.ndarray:
    """(3, nq) linear basis values."""
    return _bary(pts).T


def p1_grads() -> np.ndarray:
    """(3, 2) constant reference gradients."""
    return np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def p2_basis(pts: np.ndarray) -> np.ndarray:
    """(6, nq) quadratic basis values, node order (v0, v1, v2, m12, m20, m01)."""
    lam = _bary(pts)
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l1 * l2,
            4 * l2 * l0,
            4 * l0 * l1,
        ]
    )


def p2_grads(pts: np.ndarray) -> np.ndarray:
    """(6, nq, 2) reference gradients of the quadratic basis."""
    lam = _bary(pts)
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    g0 = np.array([-1.0, -1.0])
    g1 = np.array([1.0, 0.0])
    g2 = np.array([0.0, 1.0])
    nq = len(pts)
    out = np.empty((6, nq, 2))
    out[0] = (4 * l0 - 1)[:, None] * g0
    out[1] = (4 * l1 - 1)[:, None] * g1
    out[2] = (4 * l2 - 1)[:, None] * g2
    out[3] = 4 * (l1[:, None] * g2 + l2[:, None] * g1)
    out[4] = 4 * (l2[:, None] * g0 + l0[:, None] * g2)
    out[5] = 4 * (l0[:, None] * g1 + l1[:, None] * g0)
    return out


def edge_ref_points(local_edge: int, t: np.ndarray) -> np.ndarray:
    """Reference coordinates of points parametrized along local edge `local_edge`."""
    a, b = EDGE_VERTICES[local_edge]
    lam = np.zeros((len(t), 3))
    lam[:, a] = 1.0 - t
    lam[:, b] = t
    return np.column_stack([lam[:, 1], lam[:, 2]])
