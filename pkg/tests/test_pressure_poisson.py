import math

import numpy as np
import pytest

from semwave.dynamics import FieldState, SystemContext, momentum_forcing
from semwave.mesh import Bathymetry, build_mesh
from semwave.pressure_poisson import (PressureSolver, assemble_stage_system, build_neumann_data,
                                      build_poisson_rhs, corrected_divergence, dirichlet_ids,
                                      divergence_functional, free_ids, poisson_matrix)
from semwave.reference_element import build_reference_element
from semwave.sigma_transform import compute_metrics, physical_z
from semwave.time_integration import Registers
from semwave.wave_theory import WaveSpec, streamfunction_solve


def context(P=4, Nx=4, bathy=None, periodic=False, extent=(0.0, 4.0)):
    m = build_mesh(Nx, 2, extent, build_reference_element(P), periodic=periodic)
    return SystemContext(m, bathy or Bathymetry.flat(1.0))


def test_dirichlet_and_free_partition():
    ctx = context()
    d, f = dirichlet_ids(ctx.mesh), free_ids(ctx.mesh)
    assert d.size + f.size == ctx.mesh.K
    assert np.intersect1d(d, f).size == 0
    _, S = ctx.mesh.node_coords
    assert np.all(S[d] == 1.0) and np.all(S[f] < 1.0)


def test_matrix_identity_rows_and_nonsingular():
    ctx = context(bathy=Bathymetry.linear(1.0, -0.1))
    m0 = compute_metrics(np.zeros(ctx.mesh.nxn), ctx.bathy, None, ctx.mesh)
    A = poisson_matrix(m0, m0, ctx.mesh).toarray()
    d = dirichlet_ids(ctx.mesh)
    assert np.array_equal(A[d], np.eye(ctx.mesh.K)[d])
    sv = np.linalg.svd(A, compute_uv=False)
    assert sv.min() > 1e-6 * sv.max()
    # the sigma-weak form is unsymmetric over a sloping bed, symmetric positive definite when flat
    assert not np.allclose(A, A.T, atol=1e-8)
    flat = context()
    m0 = compute_metrics(np.zeros(flat.mesh.nxn), flat.bathy, None, flat.mesh)
    F = poisson_matrix(m0, m0, flat.mesh).toarray()
    assert np.allclose(F, F.T, atol=1e-12)
    assert np.linalg.eigvalsh(F).min() > 0


@pytest.mark.parametrize("bathy", [Bathymetry.flat(1.0), Bathymetry.linear(1.0, -0.1)])
def test_still_water_rhs_vanishes(bathy):
    ctx = context(bathy=bathy)
    s = FieldState.still(ctx.mesh)
    mt = compute_metrics(s.eta, bathy, None, ctx.mesh)
    forcing = momentum_forcing(s, mt, ctx)
    rhs = build_poisson_rhs(s.u, s.w, Registers.zeros_like(s), forcing, mt, 0.0, 0.15, 0.01, ctx)
    assert np.max(np.abs(rhs[free_ids(ctx.mesh)])) < 1e-10
    neu = build_neumann_data(s.u, s.w, mt, 0.01, ctx)
    assert all(np.max(np.abs(v)) < 1e-14 for _, v in neu.values())


def _wave_state(ctx, wave):
    m = ctx.mesh
    X, _ = m.node_coords
    eta = wave.surface(m.x_nodes)
    f = wave.evaluate(X, physical_z(m, eta, ctx.bathy), check_inside=False)
    return FieldState(f.u, f.w, eta, f.p_D)


@pytest.fixture(scope="module")
def wave():
    return streamfunction_solve(WaveSpec(H=0.1, h=1.0, L=2 * math.pi), N_sf=24)


def test_rhs_groups_scale_with_inverse_dt(wave, rng):
    ctx = context(P=6, Nx=6, periodic=True, extent=(0.0, wave.L))
    s = _wave_state(ctx, wave)
    mt = compute_metrics(s.eta, ctx.bathy, None, ctx.mesh)
    forcing = momentum_forcing(s, mt, ctx)
    reg = Registers(rng.standard_normal(ctx.mesh.K), rng.standard_normal(ctx.mesh.K), np.zeros(ctx.mesh.nxn))
    a, b = -0.4, 0.3
    t1, g1 = build_poisson_rhs(s.u, s.w, reg, forcing, mt, a, b, 0.01, ctx, return_groups=True)
    t2, g2 = build_poisson_rhs(s.u, s.w, reg, forcing, mt, a, b, 0.02, ctx, return_groups=True)
    for k in ("velocity", "register"):
        assert np.max(np.abs(g2[k] - 0.5 * g1[k])) < 1e-12 * np.max(np.abs(g1[k]))
    for k in ("advection", "hydrostatic", "viscous"):
        assert np.max(np.abs(g2[k] - g1[k])) <= 1e-12 * max(1.0, np.max(np.abs(g1[k])))
    total = sum(v for v in g1.values())
    assert np.max(np.abs(total - t1)) < 1e-9 * np.max(np.abs(t1))


def test_divergence_free_field_has_small_weak_divergence(wave):
    errs = []
    for P in (4, 6, 8):
        ctx = context(P=P, Nx=8, periodic=True, extent=(0.0, wave.L))
        s = _wave_state(ctx, wave)
        mt = compute_metrics(s.eta, ctx.bathy, None, ctx.mesh)
        d = divergence_functional(s.u, s.w, mt, ctx)
        errs.append(np.max(np.abs(d[free_ids(ctx.mesh)])))
    assert errs[-1] < 1e-6 and errs[-1] < 1e-2 * errs[0]


def test_zero_rhs_gives_zero_pressure():
    ctx = context()
    s = FieldState.still(ctx.mesh)
    mt = compute_metrics(s.eta, ctx.bathy, None, ctx.mesh)
    sys_ = assemble_stage_system(s.u, s.w, mt, mt, 0.01, ctx)
    assert np.all(sys_.rhs == 0.0)
    for method in ("direct", "pdc", "gmres"):
        out = PressureSolver(ctx, method).solve_system(sys_)
        assert np.all(out.p == 0.0)


@pytest.mark.parametrize("method", ["direct", "pdc", "gmres"])
def test_corrected_velocity_is_weakly_divergence_free(wave, method, rng):
    ctx = context(P=8, Nx=10, periodic=True, extent=(0.0, wave.L))
    s = _wave_state(ctx, wave)
    K = ctx.mesh.K
    u_star = s.u + 0.01 * rng.standard_normal(K)
    w_star = s.w + 0.01 * rng.standard_normal(K)
    mk = compute_metrics(s.eta, ctx.bathy, None, ctx.mesh, stage=2)
    mkm1 = compute_metrics(0.98 * s.eta, ctx.bathy, None, ctx.mesh, stage=1)
    beta_dt = 0.3 * 0.01
    solver = PressureSolver(ctx, method, tol=1e-6)
    res = solver.solve_stage(u_star, w_star, mk, mkm1, beta_dt)
    sys_ = assemble_stage_system(u_star, w_star, mk, mkm1, beta_dt, ctx)
    assert np.all(sys_.rhs[sys_.dirichlet] == 0.0)
    assert np.linalg.norm(sys_.rhs - sys_.matrix @ res.p) <= 1.01e-6 * np.linalg.norm(sys_.rhs)
    free = free_ids(ctx.mesh)
    div = corrected_divergence(u_star, w_star, res.p, mk, mkm1, beta_dt, ctx)
    scale = divergence_functional(u_star, w_star, mk, ctx)
    assert np.linalg.norm(div[free]) <= 1e-6 * np.linalg.norm(scale[free])


def test_solver_validation():
    ctx = context()
    with pytest.raises(ValueError):
        PressureSolver(ctx, "jacobi")
    with pytest.raises(ValueError):
        PressureSolver(ctx, "direct", tol=0.0)
