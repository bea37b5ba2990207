"""Global sparse SEM operators on the (x*, sigma) strip.

Weak integrals use the reference measure dx* dsigma. Coefficient fields are
nodal interpolants; every product (coefficient x test x trial) is integrated
exactly with a per-direction Gauss rule of ``(3P + 2) // 2`` points, so the
matrices equal their analytic Galerkin counterparts up to rounding.

Element matrices are formed by sum factorisation and summed into a CSR
pattern computed once per mesh; the summation order is fixed, so assembly is
deterministic.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import FACES, BoundaryTag, Mesh, element_jacobians


class OperatorKind(enum.Enum):
    MASS = "Mass"
    ADVECTION_X = "Advection_x"
    ADVECTION_SIGMA = "Advection_sigma"
    STIFFNESS = "Stiffness"
    STIFFNESS_X = "Stiffness_x"
    STIFFNESS_SIGMA = "Stiffness_sigma"
    BOUNDARY_X = "Boundary_x"
    BOUNDARY_SIGMA = "Boundary_sigma"


# (test derivative, trial derivative) per volume kind; '0' = no derivative
_KIND_TERMS = {
    OperatorKind.MASS: [("0", "0")],
    OperatorKind.ADVECTION_X: [("0", "x")],
    OperatorKind.ADVECTION_SIGMA: [("0", "s")],
    OperatorKind.STIFFNESS: [("x", "x"), ("s", "s")],
    OperatorKind.STIFFNESS_X: [("x", "x")],
    OperatorKind.STIFFNESS_SIGMA: [("s", "s")],
}
# (trial derivative, normal component) per boundary kind
_BOUNDARY_KIND = {
    OperatorKind.BOUNDARY_X: ("x", "x"),
    OperatorKind.BOUNDARY_SIGMA: ("s", "s"),
}


@dataclass
class GlobalOperator:
    matrix: sp.csr_matrix
    kind: OperatorKind
    coefficient: str = "1"

    def __matmul__(self, v):
        return self.matrix @ v


class SEMSpace:
    """Quadrature, interpolation and assembly helpers bound to one mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        el = mesh.el
        self.el = el
        bx, bz = el.bx, el.bz
        self.Px, self.Pz = el.Px, el.Pz
        self.Ix, self.dIx, self.wx = bx.Iq, bx.dIq, bx.qweights
        self.Iz, self.dIz, self.wz = bz.Iq, bz.dIq, bz.qweights
        self.nqx, self.nqz = self.wx.size, self.wz.size
        jac = element_jacobians(mesh)
        self.detJ, self.rx, self.ss, self.face_jac = jac.detJ, jac.rx, jac.s_sigma, jac.face_jac
        self.W = np.outer(self.wx, self.wz)
        self.K = mesh.K
        self.gids = mesh.global_ids
        self._pattern = None
        self._mass = None
        self._mass_lu = None
        self._faces = {}

    # ------------------------------------------------------------------ fields
    def local(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.K,):
            raise ValueError(f"field has shape {f.shape}, expected ({self.K},)")
        return f[self.gids].reshape(-1, self.Px + 1, self.Pz + 1)

    def to_quad(self, f, deriv: str = "0") -> np.ndarray:
        """Interpolant of a nodal field (or its x*/sigma derivative) at Gauss points."""
        F = self.local(f)
        X = self.dIx if deriv == "x" else self.Ix
        Z = self.dIz if deriv == "s" else self.Iz
        q = np.matmul(np.matmul(X, F), Z.T)
        if deriv == "x":
            q *= self.rx[:, None, None]
        elif deriv == "s":
            q *= self.ss[:, None, None]
        return q

    def _factors(self, d: str):
        X = self.dIx if d == "x" else self.Ix
        Z = self.dIz if d == "s" else self.Iz
        return X, Z

    def _scale(self, d: str) -> np.ndarray | float:
        if d == "x":
            return self.rx
        if d == "s":
            return self.ss
        return 1.0

    # ---------------------------------------------------------------- assembly
    def pattern(self):
        if self._pattern is None:
            Np = self.el.Np
            rows = np.repeat(self.gids, Np, axis=1).astype(np.int64)
            cols = np.tile(self.gids, (1, Np)).astype(np.int64)
            keys = rows * self.K + cols
            uniq, inv = np.unique(keys.ravel(), return_inverse=True)
            indices = (uniq % self.K).astype(np.int32)
            counts = np.bincount(uniq // self.K, minlength=self.K)
            indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
            self._pattern = (indices, indptr, inv.reshape(self.gids.shape[0], Np * Np), uniq.size)
        return self._pattern

    def assemble_elements(self, E: np.ndarray, elements: np.ndarray | None = None) -> sp.csr_matrix:
        """Sum dense element matrices (n, Np, Np) into a global CSR matrix."""
        indices, indptr, inv, nnz = self.pattern()
        idx = inv if elements is None else inv[elements]
        data = np.bincount(idx.ravel(), weights=E.ravel(), minlength=nnz)
        return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(self.K, self.K))

    def element_matrices(self, terms: Iterable) -> np.ndarray:
        """Element matrices for sum of int c * d_test N_i * d_trial N_j.

        ``terms`` holds ``(test, trial, c)`` with derivatives in {'0','x','s'}
        and ``c`` either a scalar or Gauss-point values of shape (Nel, nqx, nqz).
        """
        Nel = self.gids.shape[0]
        Px1, Pz1 = self.Px + 1, self.Pz + 1
        groups = {}
        for test, trial, c in terms:
            scale = self.detJ * self._scale(test) * self._scale(trial)
            C = np.broadcast_to(np.asarray(c, dtype=float), (Nel, self.nqx, self.nqz))
            C = C * self.W[None] * np.broadcast_to(scale, (Nel,))[:, None, None]
            _, Zt = self._factors(test)
            _, Zr = self._factors(trial)
            ZZ = (Zt[:, :, None] * Zr[:, None, :]).reshape(self.nqz, Pz1 * Pz1)
            T = (C.reshape(Nel * self.nqx, self.nqz) @ ZZ).reshape(Nel, self.nqx, Pz1 * Pz1)
            key = (test == "x", trial == "x")
            groups[key] = groups.get(key, 0.0) + T
        E = np.zeros((Nel, Px1, Pz1, Px1, Pz1))
        for (tx, rx_), T in groups.items():
            Xt = self.dIx if tx else self.Ix
            Xr = self.dIx if rx_ else self.Ix
            XX = (Xt[:, :, None] * Xr[:, None, :]).reshape(self.nqx, Px1 * Px1)
            # E[e, a, c, b, d] = sum_q XX[q, (a, c)] T[e, q, (b, d)]
            G = np.matmul(XX.T, T)
            E += G.reshape(Nel, Px1, Px1, Pz1, Pz1).transpose(0, 1, 3, 2, 4)
        return E.reshape(Nel, Px1 * Pz1, Px1 * Pz1)

    def assemble_terms(self, terms: Iterable) -> sp.csr_matrix:
        return self.assemble_elements(self.element_matrices(terms))

    def weak_action(self, terms: Iterable) -> np.ndarray:
        """Global vector v_i = sum int g * d_test N_i for ``(test, g)`` pairs."""
        Nel = self.gids.shape[0]
        loc = np.zeros((Nel, self.Px + 1, self.Pz + 1))
        for test, g in terms:
            scale = self.detJ * self._scale(test)
            G = np.asarray(g) * self.W[None] * np.broadcast_to(scale, (Nel,))[:, None, None]
            X, Z = self._factors(test)
            loc += np.matmul(np.matmul(X.T, G), Z)
        return np.bincount(self.gids.ravel(), weights=loc.ravel(), minlength=self.K)

    # ------------------------------------------------------------------- faces
    def face_data(self, face: str):
        """Gauss points, values and derivative factors of the local basis on a face."""
        if face not in self._faces:
            el = self.el
            coord, val, normal = FACES[face]
            if coord == "s":
                bz = el.bz
                zi = 0 if val < 0 else self.Pz
                zval = np.zeros(self.Pz + 1)
                zval[zi] = 1.0
                zder = bz.D[zi]
                phi = np.einsum("qa,b->qab", self.Ix, zval).reshape(self.nqx, -1)
                dphi_x = np.einsum("qa,b->qab", self.dIx, zval).reshape(self.nqx, -1)
                dphi_s = np.einsum("qa,b->qab", self.Ix, zder).reshape(self.nqx, -1)
                w = self.wx
            else:
                bx = el.bx
                xi = 0 if val < 0 else self.Px
                xval = np.zeros(self.Px + 1)
                xval[xi] = 1.0
                xder = bx.D[xi]
                phi = np.einsum("a,qb->qab", xval, self.Iz).reshape(self.nqz, -1)
                dphi_x = np.einsum("a,qb->qab", xder, self.Iz).reshape(self.nqz, -1)
                dphi_s = np.einsum("a,qb->qab", xval, self.dIz).reshape(self.nqz, -1)
                w = self.wz
            self._faces[face] = dict(phi=phi, dx=dphi_x, ds=dphi_s, w=w, normal=normal)
        return self._faces[face]

    def face_eval(self, f, face: str, elements, deriv: str = "0") -> np.ndarray:
        """Field (or derivative) at the Gauss points of ``face`` of each element."""
        fd = self.face_data(face)
        F = np.asarray(f, dtype=float)[self.gids[elements]]
        if deriv == "0":
            return F @ fd["phi"].T
        if deriv == "x":
            return (F @ fd["dx"].T) * self.rx[elements, None]
        return (F @ fd["ds"].T) * self.ss[elements, None]

    def boundary_groups(self, tags=None):
        """{face name: element index array} for boundary faces with the given tags."""
        tags = set(BoundaryTag) if tags is None else set(tags)
        out = {}
        for bf in self.mesh.boundary_faces:
            if bf.tag in tags:
                out.setdefault(bf.face, []).append(bf.element)
        return {k: np.asarray(v) for k, v in out.items()}

    def boundary_matrix(self, terms: Iterable, tags=None) -> sp.csr_matrix:
        """Sum over boundary faces of int c * N_i * d_trial N_j * n_comp.

        ``terms`` holds ``(trial, c, normal)``: trial in {'0','x','s'}, ``c`` a
        scalar, a nodal field or a tuple of nodal fields whose interpolants are
        multiplied, normal component in {'x','s'}.
        """
        terms = list(terms)
        mats = sp.csr_matrix((self.K, self.K))
        for face, elems in self.boundary_groups(tags).items():
            fd = self.face_data(face)
            nvec = fd["normal"]
            jac = self.face_jac[face][elems]
            Np = self.el.Np
            E = np.zeros((elems.size, Np, Np))
            for trial, c, ncomp in terms:
                n = nvec[0] if ncomp == "x" else nvec[1]
                if n == 0.0:
                    continue
                if isinstance(c, tuple):
                    cq = np.prod([self.face_eval(f, face, elems) for f in c], axis=0)
                elif np.ndim(c) == 0:
                    cq = float(c)
                else:
                    cq = self.face_eval(c, face, elems)
                if trial == "0":
                    dphi, sc = fd["phi"], 1.0
                elif trial == "x":
                    dphi, sc = fd["dx"], self.rx[elems]
                else:
                    dphi, sc = fd["ds"], self.ss[elems]
                coef = cq * fd["w"][None, :] * (jac * sc * n)[:, None]
                E += np.matmul(fd["phi"].T[None] * coef[:, None, :], dphi[None])
            mats = mats + self.assemble_elements(E, elems)
        return mats.tocsr()

    def boundary_action(self, values: dict) -> np.ndarray:
        """v_i = int_face N_i g for face Gauss values ``{face: (elems, g)}``."""
        out = np.zeros(self.K)
        for face, (elems, g) in values.items():
            fd = self.face_data(face)
            jac = self.face_jac[face][elems]
            loc = (g * fd["w"][None, :] * jac[:, None]) @ fd["phi"]
            out += np.bincount(self.gids[elems].ravel(), weights=loc.ravel(), minlength=self.K)
        return out

    # -------------------------------------------------------------------- mass
    @property
    def mass(self) -> sp.csr_matrix:
        if self._mass is None:
            self._mass = self.assemble_terms([("0", "0", 1.0)])
        return self._mass

    def mass_solve(self, b):
        if self._mass_lu is None:
            self._mass_lu = spla.splu(self.mass.tocsc(), permc_spec="MMD_AT_PLUS_A")
        return self._mass_lu.solve(np.asarray(b, dtype=float))

    def project(self, terms) -> np.ndarray:
        """L2 projection onto the continuous space of sum g * d_test-weighted terms."""
        return self.mass_solve(self.weak_action(terms))


def sem_space(mesh: Mesh) -> SEMSpace:
    if "space" not in mesh._cache:
        mesh._cache["space"] = SEMSpace(mesh)
    return mesh._cache["space"]


def _coef_quad(space: SEMSpace, b, deriv="0"):
    if np.ndim(b) == 0:
        return 0.0 if deriv != "0" else float(b)
    return space.to_quad(b, deriv)


def assemble_weighted(kind: OperatorKind, b, mesh: Mesh, el=None, tags=None) -> GlobalOperator:
    """Global M^b, A^b, L^b or B^b matrix for a nodal (or constant) coefficient."""
    space = sem_space(mesh)
    if np.ndim(b) != 0 and np.shape(b) != (mesh.K,):
        raise ValueError(f"coefficient has shape {np.shape(b)}, expected ({mesh.K},)")
    desc = "1" if np.ndim(b) == 0 and float(b) == 1.0 else "field"
    if kind in _KIND_TERMS:
        bq = _coef_quad(space, b)
        A = space.assemble_terms([(t, r, bq) for t, r in _KIND_TERMS[kind]])
    else:
        trial, ncomp = _BOUNDARY_KIND[kind]
        A = space.boundary_matrix([(trial, b, ncomp)], tags)
    return GlobalOperator(A, kind, desc)


# ------------------------------------------------------------------ Laplacians
@dataclass
class LaplacianOperator:
    """Weak transformed Laplacian split into volume and boundary parts.

    ``(volume + boundary) @ f`` is the weak form of the operator applied to f;
    boundary terms are where Neumann data enters.
    """

    volume: sp.csr_matrix
    boundary: sp.csr_matrix

    @property
    def matrix(self) -> sp.csr_matrix:
        return (self.volume + self.boundary).tocsr()

    def __matmul__(self, f):
        return self.volume @ f + self.boundary @ f


def mixed_laplacian_terms(space: SEMSpace, sx_km1, sx_k, sz_km1, sz_k, sxx_km1=None,
                          form: str = "divergence"):
    """Volume and boundary term lists of the weak mixed-stage Laplacian.

    ``form='divergence'`` integrates grad^k . (grad^{k-1} f) by parts with the
    inner gradient left underived, so the volume part is the weak divergence
    at stage k applied to the stage k-1 gradient and the boundary part is
    int v (J^{k,T} n*) . grad^{k-1} f. ``form='expanded'`` integrates the
    expanded second-order operator term by term, using sig_xx^{k-1} for the
    first-order sigma coefficient.
    """
    if form == "divergence":
        dsx_k = space.to_quad(sx_k, "s")
        volume = [
            ("x", "x", -1.0),
            ("x", "s", -space.to_quad(sx_km1)),
            ("s", "x", -space.to_quad(sx_k)),
            ("s", "s", -(space.to_quad(sx_km1) * space.to_quad(sx_k)
                         + space.to_quad(sz_km1) * space.to_quad(sz_k))),
            ("0", "x", -dsx_k),
            ("0", "s", -dsx_k * space.to_quad(sx_km1)),
        ]
        boundary = [
            ("x", 1.0, "x"),
            ("x", sx_k, "s"),
            ("s", sx_km1, "x"),
            ("s", (sx_km1, sx_k), "s"),
            ("s", (sz_km1, sz_k), "s"),
        ]
    elif form == "expanded":
        if sxx_km1 is None:
            raise ValueError("expanded form needs sig_xx of stage k-1")
        Sbar = sx_km1 * sx_k + sz_km1 * sz_k
        c0s = (-space.to_quad(Sbar, "s") - space.to_quad(sx_k, "x") + space.to_quad(sxx_km1))
        volume = [
            ("x", "x", -1.0),
            ("s", "s", -space.to_quad(Sbar)),
            ("0", "s", c0s),
            ("0", "x", -space.to_quad(sx_km1, "s")),
            ("s", "x", -space.to_quad(sx_km1)),
            ("x", "s", -space.to_quad(sx_k)),
        ]
        boundary = [
            ("x", 1.0, "x"),
            ("x", sx_km1, "s"),
            ("s", Sbar, "s"),
            ("s", sx_k, "x"),
        ]
    else:
        raise ValueError(f"unknown form {form!r}")
    return volume, boundary


def mixed_stage_laplacian(metrics_k, metrics_km1, mesh: Mesh, el=None, tags=None,
                          form: str = "divergence", with_boundary: bool = True) -> LaplacianOperator:
    """Weak form of grad_sigma^k . grad_sigma^{k-1} with cross-stage metrics."""
    sk, skm1 = getattr(metrics_k, "stage", None), getattr(metrics_km1, "stage", None)
    if sk is not None and skm1 is not None and sk < skm1:
        raise ValueError(f"stage labels out of order: k={sk}, k-1={skm1}")
    space = sem_space(mesh)
    vol, bnd = mixed_laplacian_terms(space, metrics_km1.sig_x, metrics_k.sig_x,
                                     metrics_km1.sig_z, metrics_k.sig_z, metrics_km1.sig_xx, form)
    B = space.boundary_matrix(bnd, tags) if with_boundary else sp.csr_matrix((mesh.K, mesh.K))
    return LaplacianOperator(space.assemble_terms(vol), B)


def sigma_laplacian(metrics, mesh: Mesh, el=None, coef: float = 1.0, tags=None,
                    form: str = "divergence") -> LaplacianOperator:
    """Weak transformed Laplacian of a single stage, scaled by ``coef``."""
    op = mixed_stage_laplacian(metrics, metrics, mesh, el, tags, form)
    if coef != 1.0:
        op = LaplacianOperator((coef * op.volume).tocsr(), (coef * op.boundary).tocsr())
    return op


# --------------------------------------------------------- gradient recovery
def l2_gradient(f, direction: str, mesh: Mesh, el=None) -> np.ndarray:
    """Continuous derivative g with M g = A_dir f (direction 'x' or 'sigma')."""
    space = sem_space(mesh)
    d = "x" if direction in ("x", "x*") else "s"
    return space.project([("0", space.to_quad(f, d))])


class TraceSpace:
    """1D spectral element space on the sigma = 1 trace."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        b = mesh.el.bx
        self.basis = b
        self.P = b.P
        self.n = mesh.nxn
        ex = np.arange(mesh.Nx)
        self.gids = (ex[:, None] * self.P + np.arange(self.P + 1)[None, :]) % self.n
        self.dx = np.diff(mesh.x_edges)
        self.jac = self.dx / 2.0
        self.rx = 2.0 / self.dx
        self.x = mesh.x_nodes
        self.Iq, self.dIq, self.w = b.Iq, b.dIq, b.qweights
        E = self.jac[:, None, None] * b.M[None]
        rows = np.repeat(self.gids, self.P + 1, axis=1).ravel()
        cols = np.tile(self.gids, (1, self.P + 1)).ravel()
        self.mass = sp.csr_matrix((E.ravel(), (rows, cols)), shape=(self.n, self.n))
        self._lu = spla.splu(self.mass.tocsc(), permc_spec="MMD_AT_PLUS_A")

    def to_quad(self, f, deriv: bool = False) -> np.ndarray:
        F = np.asarray(f, dtype=float)[self.gids]
        if deriv:
            return (F @ self.dIq.T) * self.rx[:, None]
        return F @ self.Iq.T

    def weak_action(self, g) -> np.ndarray:
        loc = (g * self.w[None, :] * self.jac[:, None]) @ self.Iq
        return np.bincount(self.gids.ravel(), weights=loc.ravel(), minlength=self.n)

    def mass_solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))

    def derivative(self, f) -> np.ndarray:
        """L2-recovered continuous derivative of a trace field."""
        return self.mass_solve(self.weak_action(self.to_quad(f, True)))

    def advection(self, b, f) -> np.ndarray:
        """Action of A^b: int N_i b f_x."""
        return self.weak_action(self.to_quad(b) * self.to_quad(f, True))


def trace_space(mesh: Mesh) -> TraceSpace:
    if "trace" not in mesh._cache:
        mesh._cache["trace"] = TraceSpace(mesh)
    return mesh._cache["trace"]


def dump_matrix_market(op, path) -> None:
    """Write an operator (or sparse matrix) in Matrix Market text format."""
    A = op.matrix if hasattr(op, "matrix") else op
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))
