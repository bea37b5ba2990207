"""Analytic and semi-analytic periodic wave solutions.

The nonlinear solution uses Fourier collocation of the stream function in a
frame moving with the wave (Rienecker-Fenton formulation): N+1 surface points
over half a wavelength, unknowns the surface elevations, N Fourier
coefficients, the mean flow speed, the volume flux and the Bernoulli
constant, plus the wavenumber when the period is prescribed. The mean
Eulerian current is zero, so the phase speed equals the mean flow speed.
Internally all quantities are scaled by the still-water depth and sqrt(g h).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

G_DEFAULT = 9.81
RHO_DEFAULT = 999.70


class StreamFunctionError(RuntimeError):
    """Collocation system did not converge."""


def battjes_max_steepness(kh) -> float:
    """Breaking limit (H/L)_max = 0.1401 tanh(0.8863 kh)."""
    kh = np.asarray(kh, dtype=float)
    if np.any(kh <= 0):
        raise ValueError("kh must be positive")
    out = 0.1401 * np.tanh(0.8863 * kh)
    return float(out) if out.ndim == 0 else out


@dataclass
class WaveSpec:
    """Periodic wave in still depth h; give the length L or the period T."""

    H: float
    h: float
    L: float | None = None
    T: float | None = None
    steepness_frac: float | None = None

    def __post_init__(self):
        if self.H <= 0 or self.h <= 0:
            raise ValueError("H and h must be positive")
        if (self.L is None) == (self.T is None):
            raise ValueError("give exactly one of L or T")
        if self.L is not None:
            if self.L <= 0:
                raise ValueError("L must be positive")
            if self.H / self.L > battjes_max_steepness(self.kh):
                raise ValueError(f"H/L = {self.H / self.L:.4f} exceeds the breaking limit")

    @classmethod
    def from_steepness(cls, kh: float, frac: float, h: float = 1.0) -> "WaveSpec":
        """Wave with H/L equal to ``frac`` of the breaking limit at this kh."""
        L = 2.0 * math.pi * h / kh
        return cls(H=frac * battjes_max_steepness(kh) * L, h=h, L=L, steepness_frac=frac)

    @property
    def k(self) -> float | None:
        return None if self.L is None else 2.0 * math.pi / self.L

    @property
    def kh(self) -> float | None:
        return None if self.L is None else self.k * self.h


@dataclass
class WaveFields:
    eta: np.ndarray
    u: np.ndarray
    w: np.ndarray
    p_D: np.ndarray


def airy_wave(spec: WaveSpec, x, z, t, g: float = G_DEFAULT, rho: float = RHO_DEFAULT) -> WaveFields:
    """Linear wave, crest at x = 0 for t = 0."""
    if spec.L is not None:
        k = spec.k
        omega = math.sqrt(g * k * math.tanh(k * spec.h))
    else:
        omega = 2.0 * math.pi / spec.T
        k = airy_wavenumber(omega, spec.h, g)
    a = 0.5 * spec.H
    x, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(z, float))
    th = k * x - omega * t
    zb = k * (z + spec.h)
    kh = k * spec.h
    eta = a * np.cos(th)
    u = a * omega * np.cosh(zb) / np.sinh(kh) * np.cos(th)
    w = a * omega * np.sinh(zb) / np.sinh(kh) * np.sin(th)
    pD = rho * g * a * np.cos(th) * (np.cosh(zb) / np.cosh(kh) - 1.0)
    return WaveFields(eta, u, w, pD)


def airy_wavenumber(omega: float, h: float, g: float = G_DEFAULT) -> float:
    """Solve omega^2 = g k tanh(k h) for k."""
    f = lambda k: g * k * math.tanh(k * h) - omega**2
    k0 = omega**2 / g
    return optimize.brentq(f, 1e-12, max(k0, omega / math.sqrt(g * h)) * 4 + 1.0)


def _sinh_over_cosh(a, b):
    """sinh(a) / cosh(b) for a, b >= 0 without overflow."""
    return (np.exp(a - b) - np.exp(-a - b)) / (1.0 + np.exp(-2.0 * b))


def _cosh_over_cosh(a, b):
    return (np.exp(a - b) + np.exp(-a - b)) / (1.0 + np.exp(-2.0 * b))


@dataclass
class StreamFnSolution:
    N: int
    h: float
    H: float
    k: float
    c: float
    ubar: float
    Q: float
    R: float
    B: np.ndarray               # dimensional coefficients, length N
    eta_colloc: np.ndarray      # surface height above the bed at X_m = m pi / (k N)
    g: float = G_DEFAULT
    rho: float = RHO_DEFAULT
    residual: float = 0.0
    _E: np.ndarray = field(default=None, repr=False)

    @property
    def L(self) -> float:
        return 2.0 * math.pi / self.k

    @property
    def T(self) -> float:
        return self.L / self.c

    @property
    def kh(self) -> float:
        return self.k * self.h

    def _psi_terms(self, X, zb):
        j = np.arange(1, self.N + 1)
        jk = j * self.k
        a = np.multiply.outer(zb, jk)
        b = jk * self.h
        sc = _sinh_over_cosh(a, b)
        cc = _cosh_over_cosh(a, b)
        cos = np.cos(np.multiply.outer(X, jk))
        sin = np.sin(np.multiply.outer(X, jk))
        return jk, sc, cc, cos, sin

    def psi(self, X, zb):
        jk, sc, _, cos, _ = self._psi_terms(X, zb)
        return -self.ubar * zb + np.sum(self.B * sc * cos, axis=-1)

    def _frame_velocity(self, X, zb):
        jk, sc, cc, cos, sin = self._psi_terms(X, zb)
        U = -self.ubar + np.sum(jk * self.B * cc * cos, axis=-1)
        W = np.sum(jk * self.B * sc * sin, axis=-1)
        return U, W

    def surface_bed(self, X) -> np.ndarray:
        """Surface height above the bed: Fourier interpolant refined onto the psi = -Q streamline."""
        X = np.asarray(X, dtype=float)
        if self._E is None:
            N = self.N
            m = np.arange(N + 1)
            wts = np.ones(N + 1)
            wts[0] = wts[-1] = 0.5
            j = np.arange(N + 1)
            E = (2.0 / N) * (np.cos(np.outer(j, m) * math.pi / N) @ (wts * self.eta_colloc))
            E[0] *= 0.5
            E[-1] *= 0.5
            self._E = E
        j = np.arange(self.N + 1)
        zb = np.cos(np.multiply.outer(X, j * self.k)) @ self._E
        for _ in range(20):
            U, _ = self._frame_velocity(X, zb)
            step = (self.psi(X, zb) + self.Q) / U
            zb = zb - step
            if np.max(np.abs(step), initial=0.0) < 1e-15 * self.h:
                break
        return zb

    def surface(self, x, t=0.0) -> np.ndarray:
        """Free-surface elevation relative to still water."""
        X = np.asarray(x, dtype=float) - self.c * t
        return self.surface_bed(X) - self.h

    def evaluate(self, x, z, t=0.0, check_inside: bool = True) -> WaveFields:
        """Fields in the fixed frame; z measured upward from still water."""
        x, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(z, float))
        X = x - self.c * t
        etab = self.surface_bed(X)
        zb = z + self.h
        if check_inside and np.any(zb > etab + 1e-9 * self.h):
            raise ValueError("evaluation point above the free surface")
        U, W = self._frame_velocity(X, zb)
        u = U + self.c
        pD = self.rho * (self.R - 0.5 * (U**2 + W**2) - self.g * etab)
        return WaveFields(etab - self.h, u, W, pD)

    def residuals(self) -> tuple[float, float]:
        """Max kinematic and dynamic collocation residuals (dimensional)."""
        X = np.arange(self.N + 1) * math.pi / (self.k * self.N)
        zb = self.eta_colloc
        kin = self.psi(X, zb) + self.Q
        U, W = self._frame_velocity(X, zb)
        dyn = 0.5 * (U**2 + W**2) + self.g * zb - self.R
        return float(np.max(np.abs(kin))), float(np.max(np.abs(dyn)))


def _residual(v, N, Hn, kn_fixed, Tn):
    """Dimensionless collocation residual; lengths scaled by h, speeds by sqrt(g h)."""
    eta = v[: N + 1]
    B = v[N + 1: 2 * N + 1]
    ubar, Q, R = v[2 * N + 1: 2 * N + 4]
    kn = kn_fixed if Tn is None else v[2 * N + 4]
    j = np.arange(1, N + 1)
    X = np.arange(N + 1) * math.pi / (kn * N)
    a = np.outer(eta, j * kn)
    b = j * kn
    sc = _sinh_over_cosh(a, b)
    cc = _cosh_over_cosh(a, b)
    cos = np.cos(np.outer(X, j * kn))
    sin = np.sin(np.outer(X, j * kn))
    psi = -ubar * eta + (sc * cos) @ B
    U = -ubar + (cc * cos) @ (j * kn * B)
    W = (sc * sin) @ (j * kn * B)
    kin = psi + Q
    dyn = 0.5 * (U**2 + W**2) + eta - R
    wts = np.ones(N + 1)
    wts[0] = wts[-1] = 0.5
    mean = np.dot(wts, eta) / N - 1.0
    height = eta[0] - eta[-1] - Hn
    out = [kin, dyn, [mean, height]]
    if Tn is not None:
        out.append([kn * ubar * Tn - 2.0 * math.pi])
    return np.concatenate(out)


def _airy_guess(N, Hn, kn):
    X = np.arange(N + 1) * math.pi / (kn * N)
    eta = 1.0 + 0.5 * Hn * np.cos(kn * X)
    c = math.sqrt(math.tanh(kn) / kn)
    B = np.zeros(N)
    B[0] = c * 0.5 * Hn / math.tanh(kn)
    return np.concatenate([eta, B, [c, c, 0.5 * c * c + 1.0]])


def _jacobian(v, N, Hn, kn_fixed, Tn):
    """Analytic Jacobian of ``_residual`` (finite difference for the wavenumber column)."""
    eta = v[: N + 1]
    B = v[N + 1: 2 * N + 1]
    ubar = v[2 * N + 1]
    kn = kn_fixed if Tn is None else v[2 * N + 4]
    j = np.arange(1, N + 1)
    jk = j * kn
    phase = np.outer(np.arange(N + 1), j) * math.pi / N
    cos, sin = np.cos(phase), np.sin(phase)
    a = np.outer(eta, jk)
    S = _sinh_over_cosh(a, jk)
    C = _cosh_over_cosh(a, jk)
    U = -ubar + (C * cos) @ (jk * B)
    W = (S * sin) @ (jk * B)
    dU_deta = (S * cos) @ (jk**2 * B)
    dW_deta = (C * sin) @ (jk**2 * B)
    n = v.size
    J = np.zeros((n, n))
    rk = np.arange(N + 1)
    ib = slice(N + 1, 2 * N + 1)
    # kinematic rows
    J[rk, rk] = U
    J[rk, ib] = S * cos
    J[rk, 2 * N + 1] = -eta
    J[rk, 2 * N + 2] = 1.0
    # dynamic rows
    rd = N + 1 + rk
    J[rd, rk] = U * dU_deta + W * dW_deta + 1.0
    J[rd, ib] = U[:, None] * (jk * C * cos) + W[:, None] * (jk * S * sin)
    J[rd, 2 * N + 1] = -U
    J[rd, 2 * N + 3] = -1.0
    # mean level and height
    wts = np.ones(N + 1)
    wts[0] = wts[-1] = 0.5
    J[2 * N + 2, : N + 1] = wts / N
    J[2 * N + 3, 0] = 1.0
    J[2 * N + 3, N] = -1.0
    if Tn is not None:
        dk = 1e-6 * kn
        vp, vm = v.copy(), v.copy()
        vp[-1] += dk
        vm[-1] -= dk
        J[:, -1] = (_residual(vp, N, Hn, kn_fixed, Tn) - _residual(vm, N, Hn, kn_fixed, Tn)) / (2 * dk)
        J[-1, 2 * N + 1] = kn * Tn
    return J


def _newton(v, args, maxit: int = 60, tol: float = 1e-14):
    """Damped Newton iteration on the collocation system."""
    r = _residual(v, *args)
    nr = np.max(np.abs(r))
    for _ in range(maxit):
        if nr < tol:
            break
        step = np.linalg.solve(_jacobian(v, *args), -r)
        lam = 1.0
        while lam > 1e-4:
            vn = v + lam * step
            rn = _residual(vn, *args)
            nn = np.max(np.abs(rn))
            if np.isfinite(nn) and nn < nr:
                break
            lam *= 0.5
        else:
            break
        v, r, nr = vn, rn, nn
    return v, float(nr)


def streamfunction_solve(spec: WaveSpec, N_sf: int = 32, g: float = G_DEFAULT,
                         rho: float = RHO_DEFAULT, tol: float = 1e-12,
                         max_steps: int | None = None) -> StreamFnSolution:
    """Solve the collocation system with height continuation from an Airy guess."""
    if N_sf < 2:
        raise ValueError("N_sf must be at least 2")
    h = spec.h
    Hn = spec.H / h
    vscale = math.sqrt(g * h)
    Tn = None if spec.T is None else spec.T * vscale / h
    if spec.L is not None:
        kn = spec.k * h
    else:
        kn = airy_wavenumber(2.0 * math.pi / spec.T, h, g) * h
    steep = Hn * kn / (2.0 * math.pi)
    if max_steps is None:
        ratio = steep / battjes_max_steepness(kn)
        max_steps = 1 + int(math.ceil(16.0 * ratio**2))
    v = _airy_guess(N_sf, Hn / max_steps, kn)
    if Tn is not None:
        v = np.concatenate([v, [kn]])
    prev = None
    for step in range(1, max_steps + 1):
        Hs = Hn * step / max_steps
        if prev is not None:
            # secant extrapolation along the height path
            v, prev = 2.0 * v - prev, v
        elif step > 1:
            fac = step / (step - 1)
            prev = v
            v = v.copy()
            v[: N_sf + 1] = 1.0 + fac * (v[: N_sf + 1] - 1.0)
            v[N_sf + 1: 2 * N_sf + 1] *= fac
        v, res = _newton(v, (N_sf, Hs, kn, Tn))
        if not np.isfinite(res) or res > 1e-8:
            raise StreamFunctionError(f"no convergence at H/h={Hs:.4g}: residual {res:.3e}")
    if res > max(tol, 1e-10):
        raise StreamFunctionError(f"collocation residual {res:.3e} above tolerance")
    if Tn is not None:
        kn = v[2 * N_sf + 4]
    ubar, Q, R = v[2 * N_sf + 1: 2 * N_sf + 4]
    return StreamFnSolution(
        N=N_sf, h=h, H=spec.H, k=kn / h, c=ubar * vscale, ubar=ubar * vscale,
        Q=Q * vscale * h, R=R * g * h, B=v[N_sf + 1: 2 * N_sf + 1] * vscale * h,
        eta_colloc=v[: N_sf + 1] * h, g=g, rho=rho, residual=res)


def streamfunction_eval(sol: StreamFnSolution, x, z, t=0.0) -> WaveFields:
    return sol.evaluate(x, z, t)


def streamfunction_table(sol: StreamFnSolution, n: int = 64) -> np.ndarray:
    """(phase, eta, u, w) at the surface over one wavelength."""
    phase = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    x = phase / sol.k
    eta = sol.surface(x)
    f = sol.evaluate(x, eta, check_inside=False)
    return np.column_stack([phase, eta, f.u, f.w])
