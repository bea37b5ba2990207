"""p-multigrid preconditioning for the pressure system.

Levels share the element partition of the fine mesh and differ in polynomial
order. Each level operator is rediscretized on the still-water geometry, so
the hierarchy is built once per simulation. Smoothing is an overlapping
additive Schwarz method (element block plus two layers of neighbour nodes,
weighted by node multiplicity); the coarsest level is factorized.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, remesh
from .reference_element import build_reference_element, interpolation_matrix


class SolverDivergence(RuntimeError):
    """Iterative residual kept growing."""


def coarsen_order(P: int) -> int:
    """Next coarser order, ceil((P + 1) / 2)."""
    return (P + 2) // 2


def level_orders(Px: int, Pz: int, coarsest: int = 2) -> list:
    """Order pairs from fine to coarse.

    The larger of the two orders is coarsened first and clamped to the
    smaller one; once equal both are coarsened together.
    """
    out = [(Px, Pz)]
    while max(Px, Pz) > coarsest:
        if Px > Pz:
            Px = max(coarsen_order(Px), Pz)
        elif Pz > Px:
            Pz = max(coarsen_order(Pz), Px)
        else:
            Px = Pz = max(coarsen_order(Px), coarsest)
        out.append((Px, Pz))
    return out


def eliminate_dirichlet(A: sp.spmatrix, dirichlet_ids) -> sp.csr_matrix:
    """Replace Dirichlet rows and columns by the identity (homogeneous data)."""
    A = sp.csr_matrix(A, copy=True)
    K = A.shape[0]
    keep = np.ones(K, dtype=bool)
    keep[dirichlet_ids] = False
    rows = np.repeat(np.arange(K), np.diff(A.indptr))
    A.data[~(keep[rows] & keep[A.indices])] = 0.0
    A = A + sp.diags((~keep).astype(float))
    A.eliminate_zeros()
    return A.tocsr()


def prolongation(coarse: Mesh, fine: Mesh) -> sp.csr_matrix:
    """Global interpolation from coarse-order nodal values to fine-order nodes.

    Each fine node takes its row from one owning element, so shared nodes are
    not summed.
    """
    I = interpolation_matrix(coarse.el, fine.el)
    gf, gc = fine.global_ids, coarse.global_ids
    npf = gf.shape[1]
    ids, first = np.unique(gf.ravel(), return_index=True)
    e, i = first // npf, first % npf
    rows = np.repeat(ids, gc.shape[1])
    cols = gc[e].ravel()
    vals = I[i].ravel()
    vals[np.abs(vals) < 1e-14] = 0.0
    P = sp.csr_matrix((vals, (rows, cols)), shape=(fine.K, coarse.K))
    P.eliminate_zeros()
    return P


def asm_blocks(mesh: Mesh, overlap: int = 2) -> list:
    """Node index sets of the overlapping subdomains, one per element."""
    Px, Pz = mesh.el.Px, mesh.el.Pz
    blocks = []
    for ex in range(mesh.Nx):
        cols = np.arange(ex * Px - overlap, ex * Px + Px + overlap + 1)
        if mesh.periodic:
            cols = np.unique(cols % mesh.nxn)
        else:
            cols = cols[(cols >= 0) & (cols < mesh.nxn)]
        for ez in range(mesh.Nz):
            levs = np.arange(ez * Pz - overlap, ez * Pz + Pz + overlap + 1)
            levs = levs[(levs >= 0) & (levs < mesh.nzn)]
            blocks.append(np.unique((cols[:, None] * mesh.nzn + levs[None, :]).ravel()))
    return blocks


class ASMSmoother:
    """Weighted overlapping additive Schwarz: x += W sum_i R_i^T A_i^{-1} R_i r."""

    def __init__(self, A: sp.csr_matrix, blocks: list):
        A = A.tocsr()
        K = A.shape[0]
        count = np.zeros(K)
        groups: dict = {}
        for b in blocks:
            count[b] += 1
            groups.setdefault(b.size, []).append(b)
        self.weight = 1.0 / np.maximum(count, 1)
        self.groups = []
        for size, bl in groups.items():
            idx = np.vstack(bl)
            sub = np.stack([A[b][:, b].toarray() for b in bl])
            self.groups.append((idx, np.linalg.inv(sub)))
        self.K = K

    def apply(self, r) -> np.ndarray:
        out = np.zeros(self.K)
        for idx, Ainv in self.groups:
            loc = np.matmul(Ainv, r[idx][:, :, None])[:, :, 0]
            out += np.bincount(idx.ravel(), weights=loc.ravel(), minlength=self.K)
        return self.weight * out


@dataclass
class Level:
    mesh: Mesh
    A: sp.csr_matrix
    dirichlet: np.ndarray
    smoother: ASMSmoother | None = None


@dataclass
class Hierarchy:
    levels: list
    P: list                     # P[l] maps level l + 1 to level l
    coarse_lu: object = None
    nu1: int = 1
    nu2: int = 1
    stats: dict = field(default_factory=dict)
    R: list = field(default_factory=list)

    def __post_init__(self):
        if not self.R:
            self.R = [p.T.tocsr() for p in self.P]

    @property
    def orders(self) -> list:
        return [(lv.mesh.el.Px, lv.mesh.el.Pz) for lv in self.levels]

    def vcycle(self, b, level: int = 0) -> np.ndarray:
        """One V-cycle for A_level e = b from a zero initial guess."""
        lv = self.levels[level]
        if level == len(self.levels) - 1:
            return self.coarse_lu.solve(b)
        x = np.zeros_like(b)
        for _ in range(self.nu1):
            x += lv.smoother.apply(b - lv.A @ x)
        r = b - lv.A @ x
        rc = self.R[level] @ r
        rc[self.levels[level + 1].dirichlet] = 0.0
        x += self.P[level] @ self.vcycle(rc, level + 1)
        for _ in range(self.nu2):
            x += lv.smoother.apply(b - lv.A @ x)
        return x

    __call__ = vcycle


def build_hierarchy(mesh: Mesh, operator_for, orders=None, coarsest: int = 2,
                    nu1: int = 1, nu2: int = 1, overlap: int = 2) -> Hierarchy:
    """Build levels from ``operator_for(level_mesh) -> (A, dirichlet_ids)``.

    ``A`` must already carry the Dirichlet identity rows.
    """
    t0 = time.perf_counter()
    el = mesh.el
    orders = orders or level_orders(el.Px, el.Pz, coarsest)
    levels = []
    for i, (px, pz) in enumerate(orders):
        m = mesh if i == 0 else remesh(mesh, build_reference_element(px, pz))
        A, dir_ids = operator_for(m)
        levels.append(Level(m, A.tocsr(), np.asarray(dir_ids)))
    for lv in levels[:-1]:
        lv.smoother = ASMSmoother(lv.A, asm_blocks(lv.mesh, overlap))
    P = [prolongation(levels[i + 1].mesh, levels[i].mesh) for i in range(len(levels) - 1)]
    h = Hierarchy(levels, P, spla.splu(levels[-1].A.tocsc(), permc_spec="MMD_AT_PLUS_A"), nu1, nu2)
    h.stats["setup_time"] = time.perf_counter() - t0
    h.stats["overlap"] = overlap
    return h


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residuals: list             # relative residual norms, starting with the initial one
    converged: bool
    time: float = 0.0


def pdc_solve(A, b, x0, precond, tol: float = 1e-6, maxit: int = 200,
              growth_limit: int = 3) -> SolveResult:
    """Preconditioned defect correction x <- x + M^{-1}(b - A x)."""
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return SolveResult(np.zeros_like(x), 0, [0.0], True, time.perf_counter() - t0)
    r = b - A @ x
    hist = [np.linalg.norm(r) / bn]
    grow = 0
    it = 0
    while hist[-1] > tol and it < maxit:
        x += precond(r)
        r = b - A @ x
        it += 1
        hist.append(np.linalg.norm(r) / bn)
        grow = grow + 1 if hist[-1] > hist[-2] else 0
        if grow >= growth_limit:
            raise SolverDivergence(f"defect correction diverging after {it} iterations "
                                   f"(residual {hist[-1]:.3e})")
    return SolveResult(x, it, hist, hist[-1] <= tol, time.perf_counter() - t0)


def gmres_solve(A, b, x0, precond, tol: float = 1e-6, restart: int = 50,
                maxit: int = 200, norm: str = "true") -> SolveResult:
    """Left-preconditioned GMRES.

    ``norm='true'`` stops on ||b - A x|| <= tol ||b||; ``norm='preconditioned'``
    stops on the Arnoldi estimate of ||M^{-1}(b - A x)|| <= tol ||M^{-1} b||.
    The recorded history uses the monitored norm.
    """
    if norm not in ("true", "preconditioned"):
        raise ValueError(f"unknown residual norm {norm!r}")
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return SolveResult(np.zeros_like(x), 0, [0.0], True, time.perf_counter() - t0)
    if norm == "preconditioned":
        bn = np.linalg.norm(precond(b))
    r = b - A @ x
    z = precond(r)
    hist = [np.linalg.norm(r if norm == "true" else z) / bn]
    it = 0
    while hist[-1] > tol and it < maxit:
        beta = np.linalg.norm(z)
        if beta == 0.0:
            break
        m = min(restart, maxit - it)
        V = np.zeros((m + 1, x.size))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = z / beta
        xj = x
        for j in range(m):
            w = precond(A @ V[j])
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w = w - H[i, j] * V[i]
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            if hnext > 0:
                V[j + 1] = w / hnext
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            den = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / den, H[j + 1, j] / den
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            it += 1
            if norm == "true":
                y = np.linalg.solve(np.triu(H[: j + 1, : j + 1]), g[: j + 1])
                xj = x + V[: j + 1].T @ y
                hist.append(np.linalg.norm(b - A @ xj) / bn)
            else:
                hist.append(abs(g[j + 1]) / bn)
            if hist[-1] <= tol or hnext == 0.0 or j == m - 1:
                y = np.linalg.solve(np.triu(H[: j + 1, : j + 1]), g[: j + 1])
                xj = x + V[: j + 1].T @ y
                break
        x = xj
        if hist[-1] > tol and it < maxit:
            r = b - A @ x
            z = precond(r)
    return SolveResult(x, it, hist, hist[-1] <= tol, time.perf_counter() - t0)
