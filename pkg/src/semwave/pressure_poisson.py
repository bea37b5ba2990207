"""Mixed-stage pressure Poisson problem of each Runge-Kutta stage.

The stage pressure satisfies grad^k . grad^{k-1} p = rho/(beta dt) grad^k . u*,
where u* is the stage velocity without the dynamic-pressure contribution.
p = 0 on the free surface; on the bottom and walls the Neumann data is
chosen so that the corrected velocity has no normal component. The system
matrix is the negated weak operator with Dirichlet rows and columns replaced
by the identity, so it is positive on the still-water geometry.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dynamics import SystemContext
from .mesh import BoundaryTag, Mesh
from .mg_solver import (Hierarchy, SolveResult, build_hierarchy, eliminate_dirichlet,
                        gmres_solve, pdc_solve)
from .operators import mixed_stage_laplacian, sem_space
from .sigma_transform import SigmaMetrics, compute_metrics

NEUMANN_TAGS = frozenset({BoundaryTag.BOTTOM, BoundaryTag.WALL})


def dirichlet_ids(mesh: Mesh) -> np.ndarray:
    """Pressure Dirichlet nodes: the whole sigma = 1 trace."""
    return mesh.trace_ids()


def free_ids(mesh: Mesh) -> np.ndarray:
    mask = np.ones(mesh.K, dtype=bool)
    mask[dirichlet_ids(mesh)] = False
    return np.flatnonzero(mask)


def _scaled_normal_on_faces(space, metrics: SigmaMetrics, tags):
    """Per boundary face: (elements, (J^{k,T} n*)_x, (J^{k,T} n*)_z) at face Gauss points."""
    out = {}
    for face, elems in space.boundary_groups(tags).items():
        nx, ns = space.face_data(face)["normal"]
        sx = space.face_eval(metrics.sig_x, face, elems)
        sz = space.face_eval(metrics.sig_z, face, elems)
        out[face] = (elems, nx + sx * ns, sz * ns)
    return out


def divergence_volume(u, w, metrics: SigmaMetrics, space, at_quad: bool = False) -> np.ndarray:
    """-int [N_x u + N_sigma (sig_x u + sig_z w) + N d_sigma(sig_x) u] per node.

    ``at_quad`` means u and w are already given at the Gauss points.
    """
    uq, wq = (u, w) if at_quad else (space.to_quad(u), space.to_quad(w))
    sxq, szq = space.to_quad(metrics.sig_x), space.to_quad(metrics.sig_z)
    dsx = space.to_quad(metrics.sig_x, "s")
    return -space.weak_action([("x", uq), ("s", sxq * uq + szq * wq), ("0", dsx * uq)])


def divergence_functional(u, w, metrics: SigmaMetrics, ctx: SystemContext,
                          tags=NEUMANN_TAGS) -> np.ndarray:
    """Weak divergence int N_i grad^k . u, integrated by parts.

    Equals the volume form plus the flux int N_i (J^{k,T} n*) . u over the
    boundaries in ``tags``; the free-surface flux is left out because those
    rows are Dirichlet rows of the pressure problem.
    """
    space = ctx.space
    vol = divergence_volume(u, w, metrics, space)
    flux = {face: (el, space.face_eval(u, face, el) * ax + space.face_eval(w, face, el) * az)
            for face, (el, ax, az) in _scaled_normal_on_faces(space, metrics, tags).items()}
    return vol + space.boundary_action(flux)


def corrected_divergence(u_star, w_star, p, metrics_k: SigmaMetrics, metrics_km1: SigmaMetrics,
                         beta_dt: float, ctx: SystemContext, tags=NEUMANN_TAGS) -> np.ndarray:
    """Weak divergence of the corrected velocity u* - (beta dt / rho) grad^{k-1} p.

    The gradient is evaluated exactly at the Gauss points (before the nodal
    projection) and the boundary flux is the one imposed by the Neumann data,
    i.e. (J^{k,T} n*) . u* - (beta dt / rho) g_N.
    """
    space = ctx.space
    c = beta_dt / ctx.params.rho
    ps = space.to_quad(p, "s")
    uq = space.to_quad(u_star) - c * (space.to_quad(p, "x") + space.to_quad(metrics_km1.sig_x) * ps)
    wq = space.to_quad(w_star) - c * space.to_quad(metrics_km1.sig_z) * ps
    vol = divergence_volume(uq, wq, metrics_k, space, at_quad=True)
    neu = build_neumann_data(u_star, w_star, metrics_k, beta_dt, ctx, tags)
    flux = {face: (el, space.face_eval(u_star, face, el) * ax + space.face_eval(w_star, face, el) * az
                   - c * neu[face][1])
            for face, (el, ax, az) in _scaled_normal_on_faces(space, metrics_k, tags).items()}
    return vol + space.boundary_action(flux)


def build_neumann_data(u_star, w_star, metrics_k: SigmaMetrics, beta_dt: float, ctx: SystemContext,
                       tags=NEUMANN_TAGS) -> dict:
    """Face Gauss values of (J^{k,T} n*) . grad^{k-1} p prescribed on bottom and walls.

    With this data the corrected velocity u* - beta dt grad p / rho has zero
    flux through those boundaries.
    """
    c = ctx.params.rho / beta_dt
    space = ctx.space
    return {face: (el, c * (space.face_eval(u_star, face, el) * ax + space.face_eval(w_star, face, el) * az))
            for face, (el, ax, az) in _scaled_normal_on_faces(space, metrics_k, tags).items()}


def build_poisson_rhs(u_prev, w_prev, registers, forcing: dict, metrics_k: SigmaMetrics,
                      alpha: float, beta: float, dt: float, ctx: SystemContext, *,
                      tags=NEUMANN_TAGS, return_groups: bool = False):
    """Weak right-hand side of the stage pressure problem.

    The source rho/(beta dt) div^k u* is linear in u*, which is the sum of the
    previous stage velocity, the scaled register and one contribution per
    momentum forcing group. ``return_groups`` additionally returns the source
    of each group separately (their sum equals the total source up to
    round-off). The Neumann contribution is subtracted in the total.
    """
    rho = ctx.params.rho
    c = rho / (beta * dt)
    parts = {"velocity": (u_prev, w_prev),
             "register": (beta * alpha * registers.u, beta * alpha * registers.w)}
    for name, (fu, fw) in forcing.items():
        parts[name] = (beta * dt * fu, beta * dt * fw)
    u_star = sum(p[0] for p in parts.values())
    w_star = sum(p[1] for p in parts.values())
    neu = build_neumann_data(u_star, w_star, metrics_k, beta * dt, ctx, tags)
    total = c * divergence_functional(u_star, w_star, metrics_k, ctx, tags) - ctx.space.boundary_action(neu)
    if not return_groups:
        return total
    groups = {k: c * divergence_functional(a, b, metrics_k, ctx, tags) for k, (a, b) in parts.items()}
    groups["neumann"] = -ctx.space.boundary_action(neu)
    return total, groups


def poisson_matrix(metrics_k: SigmaMetrics, metrics_km1: SigmaMetrics, mesh: Mesh) -> sp.csr_matrix:
    """System matrix -L (volume part) with the surface Dirichlet rows eliminated.

    The Neumann boundary terms of the weak operator are not assembled: they
    are supplied through the Neumann data on the right-hand side.
    """
    L = mixed_stage_laplacian(metrics_k, metrics_km1, mesh, with_boundary=False).volume
    return eliminate_dirichlet(-L, dirichlet_ids(mesh))


@dataclass
class PoissonSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray             # right-hand side of matrix @ p = rhs
    dirichlet: np.ndarray


def assemble_stage_system(u_star, w_star, metrics_k, metrics_km1, beta_dt: float,
                          ctx: SystemContext, tags=NEUMANN_TAGS) -> PoissonSystem:
    """Matrix and right-hand side for the stage pressure from the velocity u*."""
    mesh = ctx.mesh
    c = ctx.params.rho / beta_dt
    neu = build_neumann_data(u_star, w_star, metrics_k, beta_dt, ctx, tags)
    weak = c * divergence_functional(u_star, w_star, metrics_k, ctx, tags) - ctx.space.boundary_action(neu)
    dir_ids = dirichlet_ids(mesh)
    b = -weak
    b[dir_ids] = 0.0
    return PoissonSystem(poisson_matrix(metrics_k, metrics_km1, mesh), b, dir_ids)


def still_water_operator(bathy):
    """Level-operator factory for the multigrid hierarchy (eta = 0 geometry)."""

    def operator_for(mesh: Mesh):
        m0 = compute_metrics(np.zeros(mesh.nxn), bathy, None, mesh)
        return poisson_matrix(m0, m0, mesh), dirichlet_ids(mesh)

    return operator_for


@dataclass
class StageSolve:
    p: np.ndarray
    iterations: int
    residual: float
    time: float
    history: list = field(default_factory=list)


class PressureSolver:
    """Stage pressure solver: 'direct', 'pdc' (defect correction) or 'gmres'.

    The iterative methods are preconditioned by one p-multigrid V-cycle built
    on the still-water geometry, and are warm-started from the previous
    pressure. Residual histories of every solve are kept in ``history``.
    """

    neumann_tags = NEUMANN_TAGS

    def __init__(self, ctx: SystemContext, method: str = "gmres", tol: float = 1e-6,
                 maxit: int = 200, hierarchy: Hierarchy | None = None, coarsest: int = 2,
                 overlap: int = 2, nu1: int = 1, nu2: int = 1, gmres_norm: str = "true"):
        if method not in ("direct", "pdc", "gmres"):
            raise ValueError(f"unknown pressure solver {method!r}")
        if not tol > 0:
            raise ValueError("tolerance must be positive")
        self.ctx = ctx
        self.method = method
        self.gmres_norm = gmres_norm
        self.tol = tol
        self.maxit = maxit
        self.free_ids = free_ids(ctx.mesh)
        self.hierarchy = hierarchy
        if method != "direct" and hierarchy is None:
            self.hierarchy = build_hierarchy(ctx.mesh, still_water_operator(ctx.bathy), coarsest=coarsest,
                                             nu1=nu1, nu2=nu2, overlap=overlap)
        self.history: list = []

    def solve_system(self, system: PoissonSystem, p_guess=None) -> StageSolve:
        A, b = system.matrix, system.rhs
        x0 = np.zeros_like(b) if p_guess is None else np.array(p_guess, dtype=float)
        x0[system.dirichlet] = 0.0
        if self.method == "direct":
            t0 = time.perf_counter()
            x = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(b)
            bn = np.linalg.norm(b)
            res = float(np.linalg.norm(b - A @ x) / bn) if bn > 0 else 0.0
            out = SolveResult(x, 1, [res], True, time.perf_counter() - t0)
        elif self.method == "pdc":
            out = pdc_solve(A, b, x0, self.hierarchy, self.tol, self.maxit)
        else:
            out = gmres_solve(A, b, x0, self.hierarchy, self.tol, maxit=self.maxit, norm=self.gmres_norm)
        self.history.append(out.residuals)
        return StageSolve(out.x, out.iterations, out.residuals[-1], out.time, out.residuals)

    def solve_stage(self, u_star, w_star, metrics_k, metrics_km1, beta_dt: float, p_guess=None) -> StageSolve:
        system = assemble_stage_system(u_star, w_star, metrics_k, metrics_km1, beta_dt, self.ctx)
        return self.solve_system(system, p_guess)


def solve_pressure(system: PoissonSystem, solver: PressureSolver, p_guess=None) -> StageSolve:
    return solver.solve_system(system, p_guess)
