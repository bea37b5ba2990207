"""Five-stage fourth-order low-storage Runge-Kutta time stepping.

Each stage advances the free surface first (its tendency does not involve
the dynamic pressure), builds the metrics of both stages, solves the
mixed-stage pressure problem and then applies the divergence-free velocity
update. Relaxation and filtering follow once per completed step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (FieldState, SystemContext, apply_filter, free_surface_rhs,
                       momentum_forcing, pressure_gradient, relax_state)
from .mesh import Mesh
from .sigma_transform import compute_metrics


@dataclass(frozen=True)
class RKScheme:
    alpha: tuple
    beta: tuple
    c: tuple

    @property
    def stages(self) -> int:
        return len(self.alpha)


def lserk_coefficients() -> RKScheme:
    """Carpenter-Kennedy 5-stage 4th-order 2N-storage coefficients."""
    alpha = (0.0,
             -567301805773.0 / 1357537059087.0,
             -2404267990393.0 / 2016746695238.0,
             -3550918686646.0 / 2091501179385.0,
             -1275806237668.0 / 842570457699.0)
    beta = (1432997174477.0 / 9575080441755.0,
            5161836677717.0 / 13612068292357.0,
            1720146321549.0 / 2090206949498.0,
            3134564353537.0 / 4481467310338.0,
            2277821191437.0 / 14882151754819.0)
    c = (0.0,
         1432997174477.0 / 9575080441755.0,
         2526269341429.0 / 6820363962896.0,
         2006345519317.0 / 3224310063776.0,
         2802321613138.0 / 2924317926251.0)
    return RKScheme(alpha, beta, c)


def lserk_scalar(f, y0, t0: float, dt: float, nsteps: int = 1, scheme: RKScheme | None = None):
    """Integrate dy/dt = f(y, t) with the low-storage scheme (generic reference driver)."""
    s = scheme or lserk_coefficients()
    y = np.array(y0, dtype=float)
    t = t0
    for _ in range(nsteps):
        K = np.zeros_like(y)
        for a, b, c in zip(s.alpha, s.beta, s.c):
            K = a * K + dt * f(y, t + c * dt)
            y = y + b * K
        t += dt
    return y


@dataclass
class Registers:
    """One accumulator per prognostic field."""

    u: np.ndarray
    w: np.ndarray
    eta: np.ndarray

    @classmethod
    def zeros_like(cls, state: FieldState) -> "Registers":
        return cls(np.zeros_like(state.u), np.zeros_like(state.w), np.zeros_like(state.eta))


@dataclass
class StageRecord:
    step: int
    stage: int
    iterations: int
    residual: float
    divergence: float
    divergence_scale: float
    solve_time: float
    nodal_divergence: float = 0.0


@dataclass
class StepperLog:
    records: list = field(default_factory=list)

    @property
    def max_divergence_ratio(self) -> float:
        r = [rec.divergence / rec.divergence_scale for rec in self.records if rec.divergence_scale > 0]
        return max(r, default=0.0)

    @property
    def max_nodal_divergence_ratio(self) -> float:
        r = [rec.nodal_divergence / rec.divergence_scale for rec in self.records if rec.divergence_scale > 0]
        return max(r, default=0.0)


def lserk_step(state: FieldState, dt: float, ctx: SystemContext, pressure, scheme: RKScheme | None = None,
               log: StepperLog | None = None, step_index: int = 0, relax: bool = True,
               filt: bool = True) -> FieldState:
    """Advance (u, w, eta) by one step; ``pressure`` is a PressureSolver."""
    from .pressure_poisson import corrected_divergence, divergence_functional

    s = scheme or lserk_coefficients()
    rho = ctx.params.rho
    y = state.copy()
    R = Registers.zeros_like(state)
    p = state.p.copy()
    t0 = state.t
    for k in range(s.stages):
        a, b = s.alpha[k], s.beta[k]
        y.t = t0 + s.c[k] * dt
        f_eta = free_surface_rhs(y, ctx)
        m_km1 = compute_metrics(y.eta, ctx.bathy, f_eta, ctx.mesh, stage=k)
        R.eta = a * R.eta + dt * f_eta
        eta_new = y.eta + b * R.eta
        m_k = compute_metrics(eta_new, ctx.bathy, None, ctx.mesh, stage=k + 1)

        forcing = momentum_forcing(y, m_km1, ctx)
        fu = sum(v[0] for v in forcing.values())
        fw = sum(v[1] for v in forcing.values())
        u_star = y.u + b * (a * R.u + dt * fu)
        w_star = y.w + b * (a * R.w + dt * fw)

        res = pressure.solve_stage(u_star, w_star, m_k, m_km1, b * dt, p)
        p = res.p
        gx, gz = pressure_gradient(p, m_km1, ctx)
        R.u = a * R.u + dt * (fu - gx / rho)
        R.w = a * R.w + dt * (fw - gz / rho)
        ctx.enforce_impermeability(R.u, R.w)
        y.u = y.u + b * R.u
        y.w = y.w + b * R.w
        y.eta = eta_new
        y.p = p
        if log is not None:
            free = pressure.free_ids
            div = corrected_divergence(u_star, w_star, p, m_k, m_km1, b * dt, ctx, pressure.neumann_tags)
            scale = divergence_functional(u_star, w_star, m_k, ctx, pressure.neumann_tags)
            nodal = divergence_functional(y.u, y.w, m_k, ctx, pressure.neumann_tags)
            log.records.append(StageRecord(step_index, k + 1, res.iterations, res.residual,
                                           float(np.linalg.norm(div[free])),
                                           float(np.linalg.norm(scale[free])), res.time,
                                           float(np.linalg.norm(nodal[free]))))
    y.t = t0 + dt
    if relax:
        y = relax_state(y, ctx)
    if filt:
        y = apply_filter(y, ctx)
    return y


def stable_timestep(state: FieldState, mesh: Mesh, params, courant: float = 0.5, bathy=None) -> float:
    """courant * min(horizontal GLL spacing / (|u| + sqrt(g d))).

    Without ``bathy`` a still depth of one is assumed.
    """
    if not 0 < courant <= 1:
        raise ValueError(f"courant must be in (0, 1], got {courant}")
    x = mesh.x_nodes
    if mesh.periodic:
        dxn = np.diff(np.concatenate([x, [x[0] + mesh.length]]))
    else:
        dxn = np.diff(x)
    spacing = np.minimum(dxn, np.roll(dxn, 1)) if mesh.periodic else np.minimum(
        np.concatenate([dxn, [dxn[-1]]]), np.concatenate([[dxn[0]], dxn]))
    h = bathy.h(x) if bathy is not None else np.ones_like(x)
    d = state.eta + h
    umax = np.abs(state.u).reshape(mesh.nxn, mesh.nzn).max(axis=1)
    speed = umax + np.sqrt(params.g * np.maximum(d, 0.0))
    return float(courant * np.min(spacing / speed))
