import math

import numpy as np
import pytest

from semwave.wave_theory import (StreamFunctionError, WaveSpec, airy_wave, airy_wavenumber,
                                 battjes_max_steepness, streamfunction_solve, streamfunction_table)

G = 9.81
KH = (0.5, 2.0, 2.0 * math.pi)
FRACS = (0.1, 0.5, 0.9)


def test_battjes_limits():
    assert battjes_max_steepness(1e6) == pytest.approx(0.1401)
    assert battjes_max_steepness(1e-9) < 1e-9
    assert battjes_max_steepness(1.0) == pytest.approx(0.1401 * math.tanh(0.8863), rel=1e-12)
    assert 0.3 * battjes_max_steepness(1.0) == pytest.approx(0.0301, abs=5e-4)
    with pytest.raises(ValueError):
        battjes_max_steepness(0.0)


def test_wavespec_validation():
    with pytest.raises(ValueError):
        WaveSpec(H=0.1, h=1.0)
    with pytest.raises(ValueError):
        WaveSpec(H=2.0, h=1.0, L=2.0)
    s = WaveSpec.from_steepness(2.0, 0.5)
    assert s.kh == pytest.approx(2.0)
    assert s.H / s.L == pytest.approx(0.5 * battjes_max_steepness(2.0))


def test_airy_basics():
    spec = WaveSpec(H=0.02, h=1.0, L=1.0)
    f = airy_wave(spec, 0.0, 0.0, 0.0)
    assert float(f.eta) == pytest.approx(0.01)
    f = airy_wave(spec, np.linspace(0, 1, 7), -1.0, 0.3)
    assert np.allclose(f.w, 0.0, atol=1e-15)
    k = 2 * math.pi
    omega = math.sqrt(G * k * math.tanh(k))
    assert omega**2 / (G * k * math.tanh(2 * math.pi)) == pytest.approx(1.0, abs=1e-12)
    assert airy_wavenumber(omega, 1.0) == pytest.approx(k, rel=1e-12)


@pytest.fixture(scope="module")
def nine_cases():
    out = {}
    for kh in KH:
        for fr in FRACS:
            out[kh, fr] = streamfunction_solve(WaveSpec.from_steepness(kh, fr), N_sf=32)
    return out


def test_nine_cases_converge(nine_cases):
    for (kh, fr), sol in nine_cases.items():
        kin, dyn = sol.residuals()
        assert kin < 1e-10 and dyn < 1e-10, (kh, fr)
        x = np.linspace(0, sol.L, 401)
        eta = sol.surface(x)
        assert eta.max() - eta.min() == pytest.approx(sol.H, abs=1e-9)
        assert np.allclose(sol.surface(x + sol.L), eta, atol=1e-12)


def test_celerity_increases_with_steepness(nine_cases):
    for kh in KH:
        cs = [nine_cases[kh, fr].c for fr in FRACS]
        assert cs[0] < cs[1] < cs[2]


@pytest.mark.parametrize("kh", KH)
def test_small_amplitude_matches_airy(kh):
    spec = WaveSpec.from_steepness(kh, 0.01)
    sol = streamfunction_solve(spec, N_sf=16)
    k = 2 * math.pi / spec.L
    c_airy = math.sqrt(G * math.tanh(k) / k)
    assert abs(sol.c / c_airy - 1) < 1e-3


def test_travelling_wave_and_bottom(nine_cases):
    sol = nine_cases[2.0, 0.5]
    x = np.linspace(0, sol.L, 31)
    c, dt = sol.c, 0.37
    assert np.allclose(sol.surface(x, 1.0), sol.surface(x - c * dt, 1.0 - dt), atol=1e-10)
    f = sol.evaluate(x, -sol.h * np.ones_like(x), 0.4)
    assert np.max(np.abs(f.w)) < 1e-10
    with pytest.raises(ValueError):
        sol.evaluate(x, np.full_like(x, sol.H))


@pytest.mark.parametrize("key", [(0.5, 0.5), (2.0, 0.9), (2.0 * math.pi, 0.5)])
def test_divergence_and_vorticity_free(nine_cases, key, rng):
    sol = nine_cases[key]
    x = rng.uniform(0, sol.L, 20)
    eta = sol.surface(x)
    z = -sol.h + rng.uniform(0.05, 0.9, 20) * (eta + sol.h)
    e = 1e-5 * sol.h
    ux = (sol.evaluate(x + e, z).u - sol.evaluate(x - e, z).u) / (2 * e)
    wz = (sol.evaluate(x, z + e).w - sol.evaluate(x, z - e).w) / (2 * e)
    uz = (sol.evaluate(x, z + e).u - sol.evaluate(x, z - e).u) / (2 * e)
    wx = (sol.evaluate(x + e, z).w - sol.evaluate(x - e, z).w) / (2 * e)
    scale = sol.c / sol.h
    assert np.max(np.abs(ux + wz)) < 1e-8 * max(1.0, scale)
    assert np.max(np.abs(uz - wx)) < 1e-8 * max(1.0, scale)


def test_dynamic_pressure_zero_at_surface(nine_cases):
    sol = nine_cases[0.5, 0.9]
    x = np.linspace(0, sol.L, 17)
    f = sol.evaluate(x, sol.surface(x), check_inside=False)
    assert np.max(np.abs(f.p_D)) < 1e-8 * sol.rho * G * sol.h


def test_period_given_instead_of_length():
    ref = streamfunction_solve(WaveSpec(H=0.1, h=1.0, L=2 * math.pi), N_sf=24)
    sol = streamfunction_solve(WaveSpec(H=0.1, h=1.0, T=ref.T), N_sf=24)
    assert sol.L == pytest.approx(ref.L, rel=1e-9)


def test_table_and_errors():
    sol = streamfunction_solve(WaveSpec(H=0.05, h=1.0, L=3.0), N_sf=16)
    tab = streamfunction_table(sol, 32)
    assert tab.shape == (32, 4)
    assert tab[0, 1] == pytest.approx(tab[:, 1].max())
    with pytest.raises(ValueError):
        streamfunction_solve(WaveSpec(H=0.05, h=1.0, L=3.0), N_sf=1)
    assert issubclass(StreamFunctionError, RuntimeError)
