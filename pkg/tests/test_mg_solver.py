import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from numpy.polynomial import legendre as npleg

from semwave.mesh import Bathymetry, build_mesh, remesh
from semwave.mg_solver import (ASMSmoother, SolverDivergence, asm_blocks, build_hierarchy,
                               coarsen_order, eliminate_dirichlet, gmres_solve, level_orders,
                               pdc_solve, prolongation)
from semwave.pressure_poisson import poisson_matrix, still_water_operator
from semwave.reference_element import build_reference_element
from semwave.sigma_transform import compute_metrics


def mesh_of(Nx=4, Nz=2, P=4, Pz=None, periodic=False, extent=(0.0, 4.0)):
    return build_mesh(Nx, Nz, extent, build_reference_element(P, Pz), periodic=periodic)


def model_system(m, seed=0):
    A, dir_ids = still_water_operator(Bathymetry.flat(1.0))(m)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(m.K)
    x[dir_ids] = 0.0
    return A, A @ x, x


def test_coarsen_order_values():
    assert [coarsen_order(p) for p in (8, 5, 3, 2)] == [5, 3, 2, 2]


def test_level_orders():
    assert level_orders(8, 8) == [(8, 8), (5, 5), (3, 3), (2, 2)]
    assert level_orders(8, 4) == [(8, 4), (5, 4), (4, 4), (3, 3), (2, 2)]
    assert level_orders(2, 2) == [(2, 2)]
    assert level_orders(3, 6) == [(3, 6), (3, 4), (3, 3), (2, 2)]


def test_eliminate_dirichlet():
    A = sp.csr_matrix(np.arange(1.0, 17.0).reshape(4, 4))
    B = eliminate_dirichlet(A, [1]).toarray()
    assert np.array_equal(B[1], [0, 1, 0, 0]) and np.array_equal(B[:, 1], [0, 1, 0, 0])
    assert B[0, 0] == 1.0 and B[2, 3] == 12.0


@settings(max_examples=15, deadline=None)
@given(Pf=st.integers(2, 9), Nx=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_prolongation_reproduces_coarse_polynomials(Pf, Nx, seed):
    fine = mesh_of(Nx=Nx, P=Pf, extent=(-1.0, 1.0))
    coarse = remesh(fine, build_reference_element(coarsen_order(Pf)))
    Pc = coarse.el.Px
    c = np.random.default_rng(seed).standard_normal((Pc + 1, Pc + 1))
    Xc, Sc = coarse.node_coords
    Xf, Sf = fine.node_coords
    P = prolongation(coarse, fine)
    if Nx == 1:
        # a single element: a global polynomial of the coarse degree
        out = P @ npleg.legval2d(Xc, 2 * Sc - 1, c)
        assert np.max(np.abs(out - npleg.legval2d(Xf, 2 * Sf - 1, c))) < 1e-11 * max(1, np.abs(c).sum())
    assert np.allclose(P @ np.ones(coarse.K), 1.0, atol=1e-12)
    assert np.allclose(P @ Xc, Xf, atol=1e-12)


def test_restriction_is_exact_transpose():
    m = mesh_of(P=8)
    h = build_hierarchy(m, still_water_operator(Bathymetry.flat(1.0)))
    for R, P in zip(h.R, h.P):
        assert abs(R - P.T).max() == 0.0
    assert h.orders == [(8, 8), (5, 5), (3, 3), (2, 2)]


def test_asm_blocks_cover_all_nodes():
    for periodic in (False, True):
        m = mesh_of(P=3, periodic=periodic)
        cover = np.zeros(m.K, dtype=int)
        for b in asm_blocks(m):
            cover[b] += 1
        assert cover.min() >= 1
        sm = ASMSmoother(model_system(m)[0], asm_blocks(m))
        assert np.allclose(sm.weight, 1.0 / cover)


def test_asm_single_block_is_exact_solve():
    m = mesh_of(Nx=1, Nz=1, P=5)
    A, b, x = model_system(m)
    sm = ASMSmoother(A, asm_blocks(m, overlap=0))
    assert len(asm_blocks(m, overlap=0)) == 1
    assert np.max(np.abs(sm.apply(b) - x)) < 1e-10
    assert np.all(sm.apply(np.zeros(m.K)) == 0.0)


def test_asm_richardson_contracts():
    m = mesh_of(Nx=4, Nz=2, P=4)
    A, b, _ = model_system(m)
    sm = ASMSmoother(A, asm_blocks(m))
    x = np.zeros(m.K)
    res = [np.linalg.norm(b)]
    for _ in range(10):
        x += sm.apply(b - A @ x)
        res.append(np.linalg.norm(b - A @ x))
    assert all(r1 < r0 for r0, r1 in zip(res, res[1:]))


@pytest.fixture(scope="module")
def model_hierarchy():
    m = mesh_of(Nx=10, Nz=2, P=8, extent=(0.0, 10.0))
    return m, build_hierarchy(m, still_water_operator(Bathymetry.flat(1.0)))


def test_vcycle_trivial_cases(model_hierarchy):
    m, h = model_hierarchy
    assert np.all(h.vcycle(np.zeros(m.K)) == 0.0)
    A, b, x = model_system(m)
    r = pdc_solve(A, b, x, h, tol=1e-6)
    assert r.iterations == 0 and np.array_equal(r.x, x)


def test_vcycle_contraction(model_hierarchy):
    # measured asymptotic factor is about 0.1 with the default overlap
    m, h = model_hierarchy
    A, b, _ = model_system(m, seed=3)
    r = pdc_solve(A, b, np.zeros(m.K), h, tol=1e-10)
    res = np.array(r.residuals)
    assert r.converged
    assert np.max(res[1:] / res[:-1]) <= 0.2


def test_pdc_and_gmres_agree(model_hierarchy):
    m, h = model_hierarchy
    A, b, x = model_system(m, seed=5)
    p = pdc_solve(A, b, np.zeros(m.K), h, tol=1e-13, maxit=100)
    g = gmres_solve(A, b, np.zeros(m.K), h, tol=1e-13, maxit=100)
    assert p.converged and g.converged
    assert np.max(np.abs(p.x - g.x)) < 1e-10 * np.max(np.abs(x))
    assert g.iterations < p.iterations


def test_preconditioner_equals_operator(model_hierarchy):
    m, h = model_hierarchy
    A, b, _ = model_system(m, seed=1)
    r = pdc_solve(A, b, np.zeros(m.K), lambda v: np.linalg.solve(A.toarray(), v), tol=1e-6)
    assert r.iterations <= 2
    # the V-cycle on the same still-water operator needs only a few cycles
    assert pdc_solve(A, b, np.zeros(m.K), h, tol=1e-6).iterations <= 8


def test_zero_rhs_returns_immediately(model_hierarchy):
    m, h = model_hierarchy
    A = h.levels[0].A
    for solve in (pdc_solve, gmres_solve):
        r = solve(A, np.zeros(m.K), np.ones(m.K), h)
        assert r.iterations == 0 and np.all(r.x == 0.0)


def test_gmres_norm_options(model_hierarchy):
    m, h = model_hierarchy
    A, b, _ = model_system(m, seed=2)
    t = gmres_solve(A, b, np.zeros(m.K), h, tol=1e-8, norm="true")
    assert np.linalg.norm(b - A @ t.x) <= 1e-8 * np.linalg.norm(b) * (1 + 1e-6)
    p = gmres_solve(A, b, np.zeros(m.K), h, tol=1e-8, norm="preconditioned")
    assert p.converged
    with pytest.raises(ValueError):
        gmres_solve(A, b, np.zeros(m.K), h, norm="energy")


def test_wavy_operator_preconditioned_by_still_water(model_hierarchy):
    m, h = model_hierarchy
    eta = 0.05 * np.cos(2 * np.pi * m.x_nodes / 2.5)
    mk = compute_metrics(eta, Bathymetry.flat(1.0), None, m)
    mkm1 = compute_metrics(0.9 * eta, Bathymetry.flat(1.0), None, m)
    A = poisson_matrix(mk, mkm1, m)
    b = A @ np.random.default_rng(7).standard_normal(m.K)
    b[m.trace_ids()] = 0.0
    r = gmres_solve(A, b, np.zeros(m.K), h, tol=1e-8)
    assert r.converged and r.iterations <= 20


def test_pdc_divergence_detected():
    A = sp.identity(4, format="csr")
    with pytest.raises(SolverDivergence):
        pdc_solve(A, np.ones(4), np.zeros(4), lambda r: -2.0 * r, tol=1e-12)
