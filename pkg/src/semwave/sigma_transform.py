"""Time-dependent metric fields of the map sigma = (z + h) / d, d = eta + h."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Bathymetry, BoundaryTag, Mesh
from .operators import trace_space


class DepthError(RuntimeError):
    """Total water depth fell below the admissible minimum."""


@dataclass
class SigmaMetrics:
    d: np.ndarray           # per column
    d_x: np.ndarray
    d_xx: np.ndarray
    d_t: np.ndarray
    eta_x: np.ndarray
    sig_t: np.ndarray       # per global node
    sig_x: np.ndarray
    sig_xx: np.ndarray
    sig_z: np.ndarray
    stage: int | None = None

    @property
    def sig_x_sigma(self) -> np.ndarray:
        """d(sig_x)/d(sigma) per column, equal to -d_x / d."""
        return -self.d_x / self.d


def compute_metrics(eta, bathy: Bathymetry, eta_rate, mesh: Mesh, *, stage: int | None = None,
                    d_min: float | None = None) -> SigmaMetrics:
    """Metric fields for a surface ``eta`` with surface velocity ``eta_rate``.

    eta_x and eta_xx are continuous L2-recovered derivatives on the trace;
    the bathymetry derivatives are analytic.
    """
    tr = trace_space(mesh)
    eta = np.asarray(eta, dtype=float)
    x = mesh.x_nodes
    h, hx, hxx = bathy.h(x), bathy.hx(x), bathy.hxx(x)
    d = eta + h
    if d_min is None:
        d_min = 1e-6 * float(np.max(np.abs(h)))
    if np.min(d) < d_min:
        i = int(np.argmin(d))
        raise DepthError(f"depth {d[i]:.3e} below minimum {d_min:.3e} at x*={x[i]:.6g}")
    eta_x = tr.derivative(eta)
    eta_xx = tr.derivative(eta_x)
    d_x = hx + eta_x
    d_xx = hxx + eta_xx
    d_t = np.zeros_like(d) if eta_rate is None else np.asarray(eta_rate, dtype=float)

    nz = mesh.nzn
    sig = np.tile(mesh.sigma_nodes, mesh.nxn)
    col = lambda a: np.repeat(a, nz)
    D, Dx, Dxx, Dt = col(d), col(d_x), col(d_xx), col(d_t)
    sig_x = (col(hx) - sig * Dx) / D
    sig_xx = (col(hxx) - sig * Dxx - 2.0 * sig_x * Dx) / D
    return SigmaMetrics(d, d_x, d_xx, d_t, eta_x, -sig * Dt / D, sig_x, sig_xx, 1.0 / D, stage)


def w_sigma(u, w, metrics: SigmaMetrics) -> np.ndarray:
    """Vertical velocity in the sigma frame: sig_t + u sig_x + w sig_z."""
    return metrics.sig_t + u * metrics.sig_x + w * metrics.sig_z


def physical_z(mesh: Mesh, eta, bathy: Bathymetry) -> np.ndarray:
    """Physical elevation of every global node."""
    x, s = mesh.node_coords
    h = bathy.h(x)
    return s * (np.repeat(eta, mesh.nzn) + h) - h


def sigma_gradient(fx_star, fs, metrics: SigmaMetrics):
    """Physical gradient (f_x, f_z) from x* and sigma derivatives."""
    return fx_star + metrics.sig_x * fs, metrics.sig_z * fs


@dataclass
class BoundaryNormals:
    ids: np.ndarray         # global node ids
    scaled: np.ndarray      # J^T n*, shape (n, 2)
    N: np.ndarray           # 2-norm of the scaled normal
    unit: np.ndarray        # physical unit normal


def transform_normals(metrics: SigmaMetrics, mesh: Mesh, tag: BoundaryTag) -> BoundaryNormals:
    """Map reference outward normals of a boundary to physical normals at its nodes.

    ``J^T (n_x*, n_sigma) = (n_x* + sig_x n_sigma, sig_z n_sigma)``; at corner
    nodes the first face encountered wins.
    """
    from .mesh import FACES
    ids, normals = [], []
    seen = set()
    for bf in mesh.faces_with_tag(tag):
        coord, val, n = FACES[bf.face]
        el = mesh.el
        if coord == "s":
            loc = np.where(el.s == val)[0]
        else:
            loc = np.where(el.r == val)[0]
        for g in mesh.global_ids[bf.element, loc]:
            if g not in seen:
                seen.add(int(g))
                ids.append(int(g))
                normals.append(n)
    ids = np.asarray(ids, dtype=int)
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    n = np.asarray(normals, dtype=float).reshape(-1, 2)[order]
    scaled = np.column_stack([n[:, 0] + metrics.sig_x[ids] * n[:, 1], metrics.sig_z[ids] * n[:, 1]])
    N = np.hypot(scaled[:, 0], scaled[:, 1])
    return BoundaryNormals(ids, scaled, N, scaled / N[:, None])
