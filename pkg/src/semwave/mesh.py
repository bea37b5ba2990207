"""Structured quadrilateral mesh of the fixed (x*, sigma) computational strip.

Global node ``ix * nzn + iz`` sits at column ``ix`` and level ``iz``; sigma
runs fastest so each vertical column is a contiguous block and the free
surface nodes are the last entry of every block. Elements are numbered
``ex * Nz + ez``. With ``periodic=True`` the last node column is identified
with the first one.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .reference_element import ReferenceElement


class BoundaryTag(enum.Enum):
    FREE_SURFACE = "FreeSurface"
    WALL = "Wall"
    BOTTOM = "Bottom"


# face name -> (fixed reference coordinate, value, outward normal in (x*, sigma))
FACES = {
    "bottom": ("s", -1.0, (0.0, -1.0)),
    "top": ("s", 1.0, (0.0, 1.0)),
    "left": ("r", -1.0, (-1.0, 0.0)),
    "right": ("r", 1.0, (1.0, 0.0)),
}


@dataclass(frozen=True)
class BoundaryFace:
    element: int
    face: str
    tag: BoundaryTag


@dataclass
class Bathymetry:
    """Still-water depth h(x) with its first two derivatives."""

    h: Callable[[np.ndarray], np.ndarray]
    hx: Callable[[np.ndarray], np.ndarray]
    hxx: Callable[[np.ndarray], np.ndarray]
    description: str = ""

    def __call__(self, x):
        return self.h(np.asarray(x, dtype=float))

    @classmethod
    def flat(cls, depth: float) -> "Bathymetry":
        if depth <= 0:
            raise ValueError("depth must be positive")
        return cls(lambda x: np.full(np.shape(x), float(depth)),
                   lambda x: np.zeros(np.shape(x)),
                   lambda x: np.zeros(np.shape(x)),
                   f"flat h={depth}")

    @classmethod
    def linear(cls, h0: float, slope: float) -> "Bathymetry":
        """h(x) = h0 + slope * x."""
        return cls(lambda x: h0 + slope * np.asarray(x, dtype=float),
                   lambda x: np.full(np.shape(x), float(slope)),
                   lambda x: np.zeros(np.shape(x)),
                   f"linear h={h0}+{slope}x")

    @classmethod
    def smoothed_ramps(cls, h0: float, breakpoints, depths, width: float = 0.05) -> "Bathymetry":
        """Piecewise-linear depth through (breakpoints, depths), corners rounded.

        Constant ``h0`` left of the first breakpoint and constant last depth
        right of the final one. Each slope change is replaced by a softplus of
        horizontal width ``width``, so h is smooth with analytic derivatives.
        """
        xs = np.asarray(breakpoints, dtype=float)
        hs = np.asarray(depths, dtype=float)
        if xs.size != hs.size or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ValueError("breakpoints must be increasing and match depths")
        if not np.isclose(hs[0], h0):
            raise ValueError("first depth must equal h0")
        slopes = np.concatenate([[0.0], np.diff(hs) / np.diff(xs), [0.0]])
        jumps = np.diff(slopes)
        w = float(width)

        def h(x):
            x = np.asarray(x, dtype=float)
            y = (x[..., None] - xs) / w
            return h0 + w * np.sum(jumps * np.logaddexp(0.0, y), axis=-1)

        def hx(x):
            x = np.asarray(x, dtype=float)
            y = (x[..., None] - xs) / w
            return np.sum(jumps * _sigmoid(y), axis=-1)

        def hxx(x):
            x = np.asarray(x, dtype=float)
            y = (x[..., None] - xs) / w
            s = _sigmoid(y)
            return np.sum(jumps * s * (1.0 - s), axis=-1) / w

        return cls(h, hx, hxx, f"ramps {list(xs)} -> {list(hs)}")


def _sigmoid(y):
    return 0.5 * (1.0 + np.tanh(0.5 * y))


@dataclass(eq=False)
class Mesh:
    Nx: int
    Nz: int
    x_edges: np.ndarray
    sigma_edges: np.ndarray
    el: ReferenceElement
    periodic: bool
    nxn: int                    # distinct node columns
    nzn: int                    # nodes per column
    x_nodes: np.ndarray         # per column
    sigma_nodes: np.ndarray     # per level
    global_ids: np.ndarray      # (Nel, Np)
    elem_dx: np.ndarray
    elem_ds: np.ndarray
    boundary_faces: list
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def Nel(self) -> int:
        return self.Nx * self.Nz

    @property
    def K(self) -> int:
        return self.nxn * self.nzn

    @property
    def extent(self) -> tuple[float, float]:
        return float(self.x_edges[0]), float(self.x_edges[-1])

    @property
    def length(self) -> float:
        return float(self.x_edges[-1] - self.x_edges[0])

    @property
    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """(x*, sigma) of every global node."""
        return (np.repeat(self.x_nodes, self.nzn), np.tile(self.sigma_nodes, self.nxn))

    @property
    def column_of_node(self) -> np.ndarray:
        return np.repeat(np.arange(self.nxn), self.nzn)

    @property
    def level_of_node(self) -> np.ndarray:
        return np.tile(np.arange(self.nzn), self.nxn)

    def element_index(self, ex: int, ez: int) -> int:
        return ex * self.Nz + ez

    def element_nodes_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-element local node coordinates, shape (Nel, Np); no periodic wrap."""
        ex = np.repeat(np.arange(self.Nx), self.Nz)
        ez = np.tile(np.arange(self.Nz), self.Nx)
        x = self.x_edges[ex, None] + 0.5 * (self.el.r[None, :] + 1.0) * self.elem_dx[:, None]
        s = self.sigma_edges[ez, None] + 0.5 * (self.el.s[None, :] + 1.0) * self.elem_ds[:, None]
        return x, s

    def scatter(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[self.global_ids]

    def gather_average(self, local: np.ndarray) -> np.ndarray:
        ids = self.global_ids.ravel()
        tot = np.bincount(ids, weights=np.asarray(local, dtype=float).ravel(), minlength=self.K)
        cnt = np.bincount(ids, minlength=self.K)
        return tot / cnt

    def trace_ids(self) -> np.ndarray:
        return free_surface_trace(self)

    def bottom_ids(self) -> np.ndarray:
        return np.arange(self.nxn) * self.nzn

    def wall_ids(self) -> np.ndarray:
        if self.periodic:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.arange(self.nzn), (self.nxn - 1) * self.nzn + np.arange(self.nzn)])

    def faces_with_tag(self, tag: BoundaryTag) -> list:
        return [f for f in self.boundary_faces if f.tag == tag]

    def summary(self) -> str:
        x0, x1 = self.extent
        lines = [
            f"elements {self.Nx} x {self.Nz} = {self.Nel}",
            f"order {self.el.Px} x {self.el.Pz}",
            f"nodes K = {self.K} ({self.nxn} columns x {self.nzn} levels)",
            f"periodic {self.periodic}",
            f"bounding box x* [{x0:.12g}, {x1:.12g}] sigma [0, 1]",
            f"boundary faces " + ", ".join(
                f"{t.value}={len(self.faces_with_tag(t))}" for t in BoundaryTag),
        ]
        return "\n".join(lines) + "\n"


def sigma_layers(Nz: int, ratio: float = 1.0) -> np.ndarray:
    """Vertical element edges in [0, 1]; ``ratio`` < 1 thins layers toward sigma = 1."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    thick = ratio ** np.arange(Nz)
    edges = np.concatenate([[0.0], np.cumsum(thick)])
    edges /= edges[-1]
    edges[-1] = 1.0
    return edges


def build_mesh(Nx: int, Nz: int, x_extent, el: ReferenceElement, *,
               periodic: bool = False, sigma_ratio: float = 1.0, sigma_edges=None) -> Mesh:
    x0, x1 = map(float, x_extent)
    if Nx < 1 or Nz < 1:
        raise ValueError("need at least one element per direction")
    if not x1 > x0:
        raise ValueError(f"degenerate extent [{x0}, {x1}]")
    Px, Pz = el.Px, el.Pz
    x_edges = np.linspace(x0, x1, Nx + 1)
    s_edges = sigma_layers(Nz, sigma_ratio) if sigma_edges is None else np.asarray(sigma_edges, dtype=float)
    if s_edges.size != Nz + 1:
        raise ValueError("sigma_edges must have Nz + 1 entries")
    rx, rs = el.gll_nodes

    ncols_full = Nx * Px + 1
    nxn = Nx * Px if periodic else ncols_full
    nzn = Nz * Pz + 1
    xcols = np.concatenate([x_edges[e] + 0.5 * (rx[:-1] + 1.0) * (x_edges[e + 1] - x_edges[e])
                            for e in range(Nx)] + [[x1]])
    slev = np.concatenate([s_edges[e] + 0.5 * (rs[:-1] + 1.0) * (s_edges[e + 1] - s_edges[e])
                           for e in range(Nz)] + [[1.0]])

    ex = np.repeat(np.arange(Nx), Nz)
    ez = np.tile(np.arange(Nz), Nx)
    col = (ex[:, None] * Px + np.repeat(np.arange(Px + 1), Pz + 1)[None, :]) % nxn
    lev = ez[:, None] * Pz + np.tile(np.arange(Pz + 1), Px + 1)[None, :]
    gids = col * nzn + lev

    faces = []
    for ex_ in range(Nx):
        for ez_ in range(Nz):
            e = ex_ * Nz + ez_
            if ez_ == 0:
                faces.append(BoundaryFace(e, "bottom", BoundaryTag.BOTTOM))
            if ez_ == Nz - 1:
                faces.append(BoundaryFace(e, "top", BoundaryTag.FREE_SURFACE))
            if not periodic and ex_ == 0:
                faces.append(BoundaryFace(e, "left", BoundaryTag.WALL))
            if not periodic and ex_ == Nx - 1:
                faces.append(BoundaryFace(e, "right", BoundaryTag.WALL))

    return Mesh(Nx, Nz, x_edges, s_edges, el, periodic, nxn, nzn, xcols[:nxn], slev,
                gids, np.diff(x_edges)[ex], np.diff(s_edges)[ez], faces)


def remesh(mesh: Mesh, el: ReferenceElement) -> Mesh:
    """Same element partition as ``mesh`` with a different reference element."""
    return build_mesh(mesh.Nx, mesh.Nz, mesh.extent, el, periodic=mesh.periodic,
                      sigma_edges=mesh.sigma_edges)


@dataclass(frozen=True)
class ElementJacobians:
    detJ: np.ndarray        # (Nel,)
    rx: np.ndarray
    s_sigma: np.ndarray
    face_jac: dict          # face name -> (Nel,)


def element_jacobians(mesh: Mesh, el: ReferenceElement | None = None) -> ElementJacobians:
    """Affine map data; Jacobians refer to the (x*, sigma) measure."""
    dx, ds = mesh.elem_dx, mesh.elem_ds
    return ElementJacobians(dx * ds / 4.0, 2.0 / dx, 2.0 / ds,
                            {"bottom": dx / 2, "top": dx / 2, "left": ds / 2, "right": ds / 2})


def free_surface_trace(mesh: Mesh) -> np.ndarray:
    """Global ids of the sigma = 1 nodes ordered by increasing x*."""
    return np.arange(mesh.nxn) * mesh.nzn + mesh.nzn - 1
