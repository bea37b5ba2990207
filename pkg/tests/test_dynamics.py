import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semwave.dynamics import (FieldState, PhysicalParams, RelaxationZones, SystemContext, Zone,
                              ZoneKind, apply_filter, apply_relaxation, f_a, f_g,
                              free_surface_rhs, momentum_forcing, momentum_rhs, relax_state,
                              relaxation_profiles)
from semwave.mesh import Bathymetry, build_mesh
from semwave.operators import OperatorKind, assemble_weighted
from semwave.reference_element import FilterSpec, build_reference_element
from semwave.sigma_transform import compute_metrics, physical_z
from semwave.wave_theory import WaveSpec, streamfunction_solve


def context(Nx=4, Nz=2, P=4, extent=(0.0, 2.0), bathy=None, periodic=False, **kw):
    m = build_mesh(Nx, Nz, extent, build_reference_element(P), periodic=periodic)
    return SystemContext(m, bathy or Bathymetry.flat(1.0), **kw)


def test_params_validation():
    assert PhysicalParams().rho == 999.70
    for bad in ({"rho": 0.0}, {"nu": -1e-6}, {"g": 0.0}):
        with pytest.raises(ValueError):
            PhysicalParams(**bad)


@pytest.mark.parametrize("bathy", [Bathymetry.flat(1.0), Bathymetry.linear(0.6, 0.1)])
def test_still_water_has_zero_tendency(bathy):
    ctx = context(bathy=bathy, params=PhysicalParams(nu=1e-3))
    s = FieldState.still(ctx.mesh)
    mt = compute_metrics(s.eta, bathy, None, ctx.mesh)
    du, dw = momentum_rhs(s, mt, ctx)
    assert np.max(np.abs(du)) < 1e-10 and np.max(np.abs(dw)) < 1e-10
    assert np.max(np.abs(free_surface_rhs(s, ctx))) < 1e-14


def test_uniform_current_has_zero_tendency():
    ctx = context(periodic=True)
    s = FieldState.still(ctx.mesh)
    s.u[:] = 0.7
    mt = compute_metrics(s.eta, ctx.bathy, None, ctx.mesh)
    du, dw = momentum_rhs(s, mt, ctx)
    assert np.max(np.abs(du)) < 1e-10 and np.max(np.abs(dw)) < 1e-10


def test_free_surface_trivial_cases():
    ctx = context(periodic=True)
    s = FieldState.still(ctx.mesh)
    s.eta[:] = 0.2
    s.u[:] = 0.3
    assert np.max(np.abs(free_surface_rhs(s, ctx))) < 1e-12
    s.u[:] = 0.0
    s.w[:] = 0.4
    assert np.allclose(free_surface_rhs(s, ctx), 0.4, atol=1e-12)


def test_advection_linear_in_added_current(rng):
    ctx = context(periodic=True, P=5)
    s = FieldState.still(ctx.mesh)
    X, S = ctx.mesh.node_coords
    s.u = np.sin(math.pi * X) * (1 + S)
    s.w = 0.1 * np.cos(math.pi * X) * S
    mt = compute_metrics(s.eta, ctx.bathy, None, ctx.mesh)
    a0 = momentum_forcing(s, mt, ctx)["advection"]
    s2 = s.copy()
    s2.u = s.u + 0.5
    a1 = momentum_forcing(s2, mt, ctx)["advection"]
    # extra terms are -0.5 (u_x, w_x) projected
    sp_ = ctx.space
    ex = sp_.project([("0", -0.5 * sp_.to_quad(s.u, "x"))]), sp_.project([("0", -0.5 * sp_.to_quad(s.w, "x"))])
    assert np.max(np.abs(a1[0] - a0[0] - ex[0])) < 1e-11
    assert np.max(np.abs(a1[1] - a0[1] - ex[1])) < 1e-11


@pytest.fixture(scope="module")
def wave():
    return streamfunction_solve(WaveSpec(H=0.1, h=1.0, L=2 * math.pi), N_sf=24)


def _sigma_frame_rates(wave, mesh, bathy, eps):
    """d/dt at fixed (x*, sigma) of the analytic fields by central differences in time."""
    X, _ = mesh.node_coords

    def at(t):
        eta = wave.surface(mesh.x_nodes, t)
        f = wave.evaluate(X, physical_z(mesh, eta, bathy), t, check_inside=False)
        return eta, f.u, f.w

    a, b = at(eps), at(-eps)
    return [(p - q) / (2 * eps) for p, q in zip(a, b)]


def test_wave_snapshot_tendencies_converge(wave):
    bathy = Bathymetry.flat(1.0)
    errs = []
    for P in (4, 6, 8, 10):
        ctx = context(Nx=8, Nz=2, P=P, extent=(0.0, wave.L), periodic=True)
        m = ctx.mesh
        X, _ = m.node_coords
        eta = wave.surface(m.x_nodes)
        f = wave.evaluate(X, physical_z(m, eta, bathy), check_inside=False)
        s = FieldState(f.u, f.w, eta, f.p_D)
        deta = free_surface_rhs(s, ctx)
        mt = compute_metrics(eta, bathy, deta, m)
        du, dw = momentum_rhs(s, mt, ctx)
        ret, ru, rw = _sigma_frame_rates(wave, m, bathy, 1e-4 * wave.T)
        errs.append(max(np.max(np.abs(deta - ret)), np.max(np.abs(du - ru)), np.max(np.abs(dw - rw))))
    assert errs[-1] < 1e-5
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2 * errs[0]


def test_filter_neutral_below_cutoff():
    ctx = context(P=8, filter_spec=FilterSpec(5, -2.0, 4.0))
    X, S = ctx.mesh.node_coords
    s = FieldState.still(ctx.mesh)
    s.w = (0.3 + X**3) * S**2           # compatible with the slip conditions
    s.eta = 0.01 * ctx.x_trace**4
    s.p = np.ones(ctx.mesh.K)
    out = apply_filter(s, ctx)
    assert np.max(np.abs(out.w - s.w)) < 1e-11
    assert np.max(np.abs(out.eta - s.eta)) < 1e-11
    assert out.p is not s.p and np.array_equal(out.p, s.p)
    twice = apply_filter(out, ctx)
    assert np.max(np.abs(twice.w - out.w)) < 1e-11


def test_filter_without_spec_is_copy():
    ctx = context()
    s = FieldState.still(ctx.mesh)
    out = apply_filter(s, ctx)
    assert out is not s and np.array_equal(out.u, s.u)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), P=st.integers(3, 9))
def test_filter_does_not_increase_energy(seed, P):
    rng = np.random.default_rng(seed)
    ctx = context(Nx=3, P=P, periodic=True, filter_spec=FilterSpec.default(P, retain=0.5))
    s = FieldState.still(ctx.mesh)
    s.u = rng.standard_normal(ctx.mesh.K)
    M = assemble_weighted(OperatorKind.MASS, 1.0, ctx.mesh).matrix
    out = apply_filter(s, ctx)
    assert out.u @ (M @ out.u) <= s.u @ (M @ s.u) * (1 + 1e-12)


def test_blend_functions():
    assert f_g(0.0) == 0.0 and f_g(1.0) == 1.0 and f_g(0.5) == 0.5
    e = 1e-6
    assert abs((f_g(e) - f_g(-e)) / (2 * e)) < 1e-9
    assert abs((f_g(1 + e) - f_g(1 - e)) / (2 * e)) < 1e-9
    assert f_a(0.0) == 0.0 and f_a(1.0) == 1.0


def bar_zones(pairing="literal"):
    return RelaxationZones([Zone(-10.0, 0.0, ZoneKind.GENERATION, inner="right", target="wave"),
                            Zone(25.0, 35.0, ZoneKind.ABSORPTION, inner="left")], pairing)


def test_profiles_working_section_and_bounds():
    x = np.linspace(-10, 35, 901)
    for pairing in ("literal", "complementary"):
        gg, ga = relaxation_profiles(x, bar_zones(pairing))
        work = (x > 0) & (x < 25)
        assert np.all(gg[work] == 0.0) and np.all(ga[work] == 1.0)
        assert np.all(gg >= 0) and np.all(ga >= 0) and np.all(gg + ga <= 1 + 1e-12)
    gg, ga = relaxation_profiles(np.array([-10.0, 35.0]), bar_zones())
    assert gg[0] == 1.0 and ga[1] == 0.0
    gg, ga = relaxation_profiles(x, bar_zones("complementary"))
    assert np.allclose(gg + ga, 1.0)


def test_zone_validation():
    with pytest.raises(ValueError):
        RelaxationZones([Zone(0, 2, ZoneKind.ABSORPTION), Zone(1, 3, ZoneKind.ABSORPTION)])
    with pytest.raises(ValueError):
        RelaxationZones([Zone(2, 2, ZoneKind.ABSORPTION)])


def test_apply_relaxation_limits():
    n, nz = 5, 3
    s = FieldState(np.arange(n * nz, dtype=float), np.ones(n * nz), np.arange(n, dtype=float),
                   np.zeros(n * nz))
    tgt = (np.full(n, 9.0), np.full(n * nz, 7.0), np.full(n * nz, 5.0))
    gg = np.array([1.0, 0.0, 0.5, 0.0, 1.0])
    ga = np.array([0.0, 1.0, 0.5, 1.0, 0.0])
    out = apply_relaxation(s, tgt, (gg, ga))
    assert out.eta[0] == 9.0 and out.eta[1] == 1.0 and out.eta[2] == 0.5 * 2 + 4.5
    assert np.all(out.u[:nz] == 7.0) and np.array_equal(out.u[nz:2 * nz], s.u[nz:2 * nz])


def test_relax_state_absorbs_toward_rest():
    ctx = context(Nx=6, extent=(0.0, 3.0), zones=RelaxationZones([Zone(2.0, 3.0, ZoneKind.ABSORPTION, "left")]))
    s = FieldState.still(ctx.mesh)
    s.eta[:] = 0.01
    out = relax_state(s, ctx)
    x = ctx.x_trace
    assert np.allclose(out.eta[x < 2.0], 0.01)
    assert abs(out.eta[-1]) < 1e-15
    assert np.all(np.abs(out.eta) <= 0.01 + 1e-15)
