"""Single-element polynomial machinery on the reference square [-1, 1]^2.

Nodes are tensor-product Legendre-Gauss-Lobatto (GLL) points. Local node
``(a, b)`` (``a`` along r, ``b`` along s) has index ``a * (Pz + 1) + b``; modal
index ``(n, m)`` uses the same layout, so every 2D matrix here is a Kronecker
product of a horizontal and a vertical 1D factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

MAX_ORDER = 20


def _recurrence_coeff(k: int) -> float:
    return math.sqrt(k * k / ((2 * k + 1) * (2 * k - 1)))


def legendre_table(P: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal Legendre polynomials 0..P and their derivatives at ``x``.

    Returns ``(values, derivs)`` each of shape ``(len(x), P + 1)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    vals = np.zeros((x.size, P + 1))
    ders = np.zeros((x.size, P + 1))
    vals[:, 0] = 1.0 / math.sqrt(2.0)
    if P >= 1:
        vals[:, 1] = math.sqrt(1.5) * x
        ders[:, 1] = math.sqrt(1.5)
    for k in range(2, P + 1):
        ak, akm1 = _recurrence_coeff(k), _recurrence_coeff(k - 1)
        vals[:, k] = (x * vals[:, k - 1] - akm1 * vals[:, k - 2]) / ak
        ders[:, k] = (vals[:, k - 1] + x * ders[:, k - 1] - akm1 * ders[:, k - 2]) / ak
    return vals, ders


def legendre_eval(k: int, x: float) -> tuple[float, float]:
    """Value and derivative of the orthonormal Legendre polynomial of degree k."""
    if k < 0:
        raise ValueError(f"degree must be non-negative, got {k}")
    vals, ders = legendre_table(k, [x])
    return float(vals[0, k]), float(ders[0, k])


def gll_nodes_weights(P: int, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Legendre-Gauss-Lobatto nodes and weights for polynomial order P.

    Newton iteration on (1 - x^2) L_P'(x) from Chebyshev-Gauss-Lobatto guesses,
    using the standard (non-normalised) Legendre recurrence.
    """
    if P < 1:
        raise ValueError(f"GLL rule needs P >= 1, got {P}")
    x = -np.cos(np.pi * np.arange(P + 1) / P)
    L = np.zeros((P + 1, P + 1))
    for _ in range(100):
        L[:, 0] = 1.0
        L[:, 1] = x
        for k in range(2, P + 1):
            L[:, k] = ((2 * k - 1) * x * L[:, k - 1] - (k - 1) * L[:, k - 2]) / k
        step = (x * L[:, P] - L[:, P - 1]) / ((P + 1) * L[:, P])
        x = x - step
        if np.max(np.abs(step)) < tol:
            break
    L[:, 0] = 1.0
    L[:, 1] = x
    for k in range(2, P + 1):
        L[:, k] = ((2 * k - 1) * x * L[:, k - 1] - (k - 1) * L[:, k - 2]) / k
    # symmetrise and pin the endpoints
    x = 0.5 * (x - x[::-1])
    x[0], x[-1] = -1.0, 1.0
    w = 2.0 / (P * (P + 1) * L[:, P] ** 2)
    w = 0.5 * (w + w[::-1])
    return x, w


def quadrature_size(P: int) -> int:
    """Gauss points that integrate a product of four degree-P polynomials exactly.

    The mixed-stage operator multiplies two interpolated metric fields with a
    test function and a trial derivative, which is degree 4P per direction.
    """
    return 2 * P + 1


@dataclass(frozen=True, eq=False)
class Basis1D:
    P: int
    nodes: np.ndarray
    weights: np.ndarray
    V: np.ndarray
    Vr: np.ndarray
    invV: np.ndarray
    D: np.ndarray
    M: np.ndarray
    # over-integration rule and nodal-to-quadrature maps
    qpoints: np.ndarray
    qweights: np.ndarray
    Iq: np.ndarray
    dIq: np.ndarray

    @classmethod
    def build(cls, P: int) -> "Basis1D":
        nodes, weights = gll_nodes_weights(P)
        V, Vr = legendre_table(P, nodes)
        invV = np.linalg.inv(V)
        D = Vr @ invV
        M = np.linalg.inv(V @ V.T)
        qp, qw = np.polynomial.legendre.leggauss(quadrature_size(P))
        Phi, dPhi = legendre_table(P, qp)
        return cls(P, nodes, weights, V, Vr, invV, D, M, qp, qw, Phi @ invV, dPhi @ invV)

    def lagrange_at(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Nodal basis values and derivatives at arbitrary points in [-1, 1]."""
        Phi, dPhi = legendre_table(self.P, x)
        return Phi @ self.invV, dPhi @ self.invV


@dataclass(frozen=True)
class FilterSpec:
    """Exponential cut-off filter: modes above ``cutoff`` are damped."""

    cutoff: int
    alpha: float
    beta: float = 2.0

    @classmethod
    def default(cls, P: int, retain: float = 0.98, beta: float = 2.0) -> "FilterSpec":
        # highest mode keeps `retain` of its amplitude
        Pc = max(P - 2, 0)
        xi = (P - Pc) / (P + 1 - Pc)
        return cls(Pc, math.log(retain) / xi**beta, beta)

    def response(self, P: int) -> np.ndarray:
        if not 0 <= self.cutoff <= P:
            raise ValueError(f"cutoff {self.cutoff} outside [0, {P}]")
        i = np.arange(P + 1)
        S = np.ones(P + 1)
        hi = i > self.cutoff
        S[hi] = np.exp(self.alpha * ((i[hi] - self.cutoff) / (P + 1 - self.cutoff)) ** self.beta)
        return S


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    Px: int
    Pz: int
    bx: Basis1D
    bz: Basis1D
    V: np.ndarray
    Vr: np.ndarray
    Vs: np.ndarray
    invV: np.ndarray
    M_local: np.ndarray
    Dr: np.ndarray
    Ds: np.ndarray
    r: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)

    @property
    def P(self) -> tuple[int, int]:
        return self.Px, self.Pz

    @property
    def Np(self) -> int:
        return (self.Px + 1) * (self.Pz + 1)

    @property
    def gll_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return self.bx.nodes, self.bz.nodes

    @property
    def gll_weights(self) -> tuple[np.ndarray, np.ndarray]:
        return self.bx.weights, self.bz.weights


def build_reference_element(Px: int, Pz: int | None = None) -> ReferenceElement:
    """Vandermonde matrices, exact mass matrix and derivative matrices.

    ``M = (V V^T)^{-1}``, ``Dr = Vr V^{-1}``, ``Ds = Vs V^{-1}``.
    """
    Pz = Px if Pz is None else Pz
    for P in (Px, Pz):
        if not 1 <= P <= MAX_ORDER:
            raise ValueError(f"order {P} outside supported range 1..{MAX_ORDER}")
    bx, bz = Basis1D.build(Px), Basis1D.build(Pz)
    V = np.kron(bx.V, bz.V)
    Vr = np.kron(bx.Vr, bz.V)
    Vs = np.kron(bx.V, bz.Vr)
    invV = np.kron(bx.invV, bz.invV)
    M = np.kron(bx.M, bz.M)
    Dr = np.kron(bx.D, np.eye(Pz + 1))
    Ds = np.kron(np.eye(Px + 1), bz.D)
    r = np.repeat(bx.nodes, Pz + 1)
    s = np.tile(bz.nodes, Px + 1)
    return ReferenceElement(Px, Pz, bx, bz, V, Vr, Vs, invV, M, Dr, Ds, r, s)


def interpolation_matrix_1d(b_from: Basis1D, b_to: Basis1D) -> np.ndarray:
    Phi, _ = legendre_table(b_from.P, b_to.nodes)
    return Phi @ b_from.invV


def interpolation_matrix(el_from: ReferenceElement, el_to: ReferenceElement) -> np.ndarray:
    """Nodal values at order ``el_from`` -> nodal values at order ``el_to``."""
    return np.kron(interpolation_matrix_1d(el_from.bx, el_to.bx),
                   interpolation_matrix_1d(el_from.bz, el_to.bz))


def filter_matrix_1d(basis: Basis1D, spec: FilterSpec) -> np.ndarray:
    return basis.V @ np.diag(spec.response(basis.P)) @ basis.invV


def filter_matrix(el: ReferenceElement, spec: FilterSpec,
                  spec_z: FilterSpec | None = None) -> np.ndarray:
    """Nodal filter ``V diag(S) V^{-1}``.

    A tensor mode (n, m) is scaled by ``min(Sx(n), Sz(m))``; for equal orders
    this is ``S(max(n, m))``. When the vertical order differs and no vertical
    spec is given, the vertical cut-off keeps the same distance to the order.
    """
    if spec_z is None:
        spec_z = spec if el.Pz == el.Px else replace(
            spec, cutoff=max(0, el.Pz - (el.Px - spec.cutoff)))
    S = np.minimum.outer(spec.response(el.Px), spec_z.response(el.Pz)).ravel()
    return el.V @ (S[:, None] * el.invV)
