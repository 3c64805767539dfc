"""Lagrange polynomial bases on the reference triangle and segment, and quadrature.

The reference triangle is {x >= 0, y >= 0, x + y <= 1}; nodes are equispaced
(vertices, p-1 per edge, interior grid), so traces on an edge coincide with
the p+1 equispaced nodes of the reference segment [0, 1]. That node sharing is
what lets the skeleton space stay continuous across cells.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import linalg

__all__ = [
    "CellBasis",
    "FaceBasis",
    "QuadratureRule",
    "cell_basis",
    "face_basis",
    "cell_quadrature",
    "face_quadrature",
    "eval_cell_basis",
    "REF_VERTICES",
    "MAX_DEGREE",
]

MAX_DEGREE = 6

# reference vertices; local edge f runs from vertex f to vertex (f+1) % 3
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (n, dim) reference coordinates
    weights: np.ndarray  # (n,) positive


@dataclass(frozen=True)
class CellBasis:
    """Nodal basis of P_p on the reference triangle.

    node_kinds classifies each node as ("vertex", k), ("edge", f, j) with
    j in 1..p-1 counted from vertex f, or ("interior", m).
    """

    degree: int
    nodes: np.ndarray
    node_kinds: tuple
    powers: np.ndarray
    coeffs: np.ndarray  # column i holds monomial coefficients of phi_i

    @property
    def n_functions(self):
        return self.nodes.shape[0]

    def barycentric_nodes(self):
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        return np.stack([1.0 - x - y, x, y], axis=1)

    def eval(self, points):
        """Values and gradients at reference points: (npts, n), (npts, n, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        a, b = self.powers[:, 0], self.powers[:, 1]
        x = pts[:, 0, None]
        y = pts[:, 1, None]
        mono = x**a * y**b
        dx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y**b, 0.0)
        dy = np.where(b > 0, b * x**a * y ** np.maximum(b - 1, 0), 0.0)
        vals = mono @ self.coeffs
        grads = np.stack([dx @ self.coeffs, dy @ self.coeffs], axis=2)
        return vals, grads


@dataclass(frozen=True)
class FaceBasis:
    """Nodal basis of P_p on [0, 1] with p+1 equispaced nodes, endpoints included."""

    degree: int
    nodes: np.ndarray
    coeffs: np.ndarray

    @property
    def n_functions(self):
        return self.nodes.shape[0]

    def eval(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        k = np.arange(self.degree + 1)
        mono = t[:, None] ** k
        return mono @ self.coeffs


def _check_degree(p):
    if not 1 <= p <= MAX_DEGREE:
        raise ValueError(f"polynomial degree {p} unsupported (need 1..{MAX_DEGREE})")


def _inv(V):
    fact = linalg.factorize(V)
    return linalg.back_solve(fact, np.eye(V.shape[0]))


@lru_cache(maxsize=None)
def cell_basis(p: int) -> CellBasis:
    _check_degree(p)
    nodes = [tuple(v) for v in REF_VERTICES]
    kinds = [("vertex", 0), ("vertex", 1), ("vertex", 2)]
    for f in range(3):
        a = REF_VERTICES[f]
        b = REF_VERTICES[(f + 1) % 3]
        for j in range(1, p):
            nodes.append(tuple(a + (j / p) * (b - a)))
            kinds.append(("edge", f, j))
    m = 0
    for j in range(1, p):
        for i in range(1, p - j):
            nodes.append((i / p, j / p))
            kinds.append(("interior", m))
            m += 1
    nodes = np.array(nodes)
    powers = np.array([(a, d - a) for d in range(p + 1) for a in range(d, -1, -1)])
    V = nodes[:, 0, None] ** powers[:, 0] * nodes[:, 1, None] ** powers[:, 1]
    return CellBasis(p, nodes, tuple(kinds), powers, _inv(V))


@lru_cache(maxsize=None)
def face_basis(p: int) -> FaceBasis:
    _check_degree(p)
    t = np.linspace(0.0, 1.0, p + 1)
    V = t[:, None] ** np.arange(p + 1)
    return FaceBasis(p, t, _inv(V))


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _duffy_rule(n: int) -> QuadratureRule:
    """Tensor Gauss rule on the square collapsed onto the triangle.

    Exact for total degree 2n - 2 (the collapse raises the eta-degree by one).
    """
    xi, wx = _gauss01(n)
    eta, we = _gauss01(n)
    X, E = np.meshgrid(xi, eta, indexing="ij")
    W = np.outer(wx, we) * (1.0 - E)
    pts = np.stack([(X * (1.0 - E)).ravel(), E.ravel()], axis=1)
    return QuadratureRule(pts, W.ravel())


def triangle_rule_for_degree(d: int) -> QuadratureRule:
    """Quadrature on the reference triangle exact for total degree >= d."""
    return _duffy_rule(max((d + 2 + 1) // 2, 1))


def cell_quadrature(p: int) -> QuadratureRule:
    """Triangle rule exact for degree 2p + 2, covering all local bilinear forms."""
    _check_degree(p)
    return triangle_rule_for_degree(2 * p + 2)


@lru_cache(maxsize=None)
def _segment_rule(n: int) -> QuadratureRule:
    t, w = _gauss01(n)
    return QuadratureRule(t.reshape(-1, 1), w)


def face_quadrature(p: int) -> QuadratureRule:
    """Gauss rule on [0, 1] exact for degree 2p + 1."""
    _check_degree(p)
    return _segment_rule(p + 1)


def eval_cell_basis(basis: CellBasis, points, tol=1e-12):
    """Basis values and reference gradients at points inside the reference triangle."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, y = pts[:, 0], pts[:, 1]
    if np.any(x < -tol) or np.any(y < -tol) or np.any(x + y > 1.0 + tol):
        raise ValueError("evaluation point outside the reference triangle")
    return basis.eval(pts)
