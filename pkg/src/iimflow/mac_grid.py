"""Uniform staggered (MAC) grid: fields, operators, boundary conditions.

Pressure lives at cell centers, u at vertical faces, v at horizontal
faces. Arrays carry a one-deep ghost ring so the 5-point stencils and the
advection slopes can be evaluated up to the boundary; `apply_bcs` is the
only thing that writes ghosts. Gradient, divergence and Laplacian are the
plain second-order two-point/5-point forms; interface corrections are
layered on top of them elsewhere and never modify these kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "BCSpec",
    "GridSpec",
    "Inflow",
    "NoSlipWall",
    "Outflow",
    "ScalarField",
    "SlipWall",
    "VectorField",
    "advect",
    "advective_term",
    "apply_bcs",
    "divergence",
    "gradient",
    "laplacian",
    "write_vtk_snapshot",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform isotropic grid: nx-by-ny cells of size h starting at origin."""

    origin: tuple[float, float]
    nx: int
    ny: int
    h: float

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs at least 4 cells per direction")
        if self.h <= 0:
            raise ValueError("cell size must be positive")

    @staticmethod
    def from_extent(origin, extent, nx, ny) -> "GridSpec":
        hx, hy = extent[0] / nx, extent[1] / ny
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise ValueError(f"grid must be isotropic, got hx={hx}, hy={hy}")
        return GridSpec(tuple(origin), nx, ny, hx)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.nx * self.h, self.ny * self.h)

    # coordinate arrays for each unknown family
    def p_coords(self):
        x0, y0 = self.origin
        return (x0 + (np.arange(self.nx) + 0.5) * self.h,
                y0 + (np.arange(self.ny) + 0.5) * self.h)

    def u_coords(self):
        x0, y0 = self.origin
        return (x0 + np.arange(self.nx + 1) * self.h,
                y0 + (np.arange(self.ny) + 0.5) * self.h)

    def v_coords(self):
        x0, y0 = self.origin
        return (x0 + (np.arange(self.nx) + 0.5) * self.h,
                y0 + np.arange(self.ny + 1) * self.h)


class ScalarField:
    """Cell-centered scalar with a one-cell ghost ring."""

    def __init__(self, grid: GridSpec, values=None):
        self.grid = grid
        self._data = np.zeros((grid.nx + 2, grid.ny + 2))
        if values is not None:
            self.values[:] = values

    @property
    def values(self) -> np.ndarray:
        return self._data[1:-1, 1:-1]

    def copy(self) -> "ScalarField":
        out = ScalarField(self.grid)
        out._data[:] = self._data
        return out


class VectorField:
    """Face-centered velocity: u on vertical faces, v on horizontal faces."""

    def __init__(self, grid: GridSpec, u=None, v=None):
        self.grid = grid
        self._u = np.zeros((grid.nx + 3, grid.ny + 2))
        self._v = np.zeros((grid.nx + 2, grid.ny + 3))
        if u is not None:
            self.u[:] = u
        if v is not None:
            self.v[:] = v

    @property
    def u(self) -> np.ndarray:
        return self._u[1:-1, 1:-1]

    @property
    def v(self) -> np.ndarray:
        return self._v[1:-1, 1:-1]

    def copy(self) -> "VectorField":
        out = VectorField(self.grid)
        out._u[:] = self._u
        out._v[:] = self._v
        return out

    def max_speed(self) -> float:
        return max(np.abs(self.u).max(), np.abs(self.v).max())


# -- boundary conditions --------------------------------------------------


@dataclass(frozen=True)
class Inflow:
    """Dirichlet velocity; functions of (x, y, t), vectorized over x/y."""

    u_fn: Callable
    v_fn: Callable


@dataclass(frozen=True)
class Outflow:
    """Zero normal derivative of velocity; pressure datum anchors here."""


@dataclass(frozen=True)
class SlipWall:
    """Zero normal velocity, zero tangential traction."""


@dataclass(frozen=True)
class NoSlipWall:
    """Zero velocity."""


@dataclass(frozen=True)
class BCSpec:
    left: object
    right: object
    bottom: object
    top: object

    def sides(self):
        return {"left": self.left, "right": self.right,
                "bottom": self.bottom, "top": self.top}


def tangential_ghost_rule(bc, side: str):
    """Ghost value of the tangential component: ghost = alpha*interior + beta.

    beta is a callable (coords, t) -> array for Dirichlet-type sides,
    else 0. `coords` is the 1D array of positions along the boundary.
    """
    if isinstance(bc, Inflow):
        # tangential component: v on left/right walls, u on bottom/top
        if side in ("left", "right"):
            fn = bc.v_fn
            def beta(coords, t, x_b):
                return 2.0 * np.asarray(fn(x_b, coords, t), dtype=float)
        else:
            fn = bc.u_fn
            def beta(coords, t, x_b):
                return 2.0 * np.asarray(fn(coords, x_b, t), dtype=float)
        return -1.0, beta
    if isinstance(bc, NoSlipWall):
        return -1.0, None
    if isinstance(bc, (SlipWall, Outflow)):
        return 1.0, None
    raise TypeError(f"unknown boundary condition {bc!r}")


def _normal_face_values(bc, side, grid, t):
    """Values of the boundary-normal velocity faces, or None if untied."""
    if isinstance(bc, Inflow):
        if side in ("left", "right"):
            x = grid.origin[0] + (0.0 if side == "left" else grid.extent[0])
            _, yu = grid.u_coords()
            return np.asarray(bc.u_fn(x, yu, t), dtype=float)
        y = grid.origin[1] + (0.0 if side == "bottom" else grid.extent[1])
        xv, _ = grid.v_coords()
        return np.asarray(bc.v_fn(xv, y, t), dtype=float)
    if isinstance(bc, (SlipWall, NoSlipWall)):
        return np.zeros(grid.ny if side in ("left", "right") else grid.nx)
    return None  # outflow: handled as zero-gradient copy


def apply_bcs(w: VectorField, spec: BCSpec, t: float = 0.0) -> None:
    """Fill boundary faces and the ghost ring of a velocity field in place."""
    g = w.grid
    u, v = w._u, w._v  # padded arrays; physical u: [1:-1,1:-1]
    x0, y0 = g.origin
    ex, ey = g.extent

    # boundary-normal faces
    for side, bc in spec.sides().items():
        vals = _normal_face_values(bc, side, g, t)
        if side == "left":
            u[1, 1:-1] = u[2, 1:-1] if vals is None else vals
        elif side == "right":
            u[-2, 1:-1] = u[-3, 1:-1] if vals is None else vals
        elif side == "bottom":
            v[1:-1, 1] = v[1:-1, 2] if vals is None else vals
        else:
            v[1:-1, -2] = v[1:-1, -3] if vals is None else vals

    # tangential ghosts
    alpha, beta = tangential_ghost_rule(spec.bottom, "bottom")
    xu, _ = g.u_coords()
    u[1:-1, 0] = alpha * u[1:-1, 1]
    if beta is not None:
        u[1:-1, 0] += beta(xu, t, y0)
    alpha, beta = tangential_ghost_rule(spec.top, "top")
    u[1:-1, -1] = alpha * u[1:-1, -2]
    if beta is not None:
        u[1:-1, -1] += beta(xu, t, y0 + ey)
    alpha, beta = tangential_ghost_rule(spec.left, "left")
    _, yv = g.v_coords()
    v[0, 1:-1] = alpha * v[1, 1:-1]
    if beta is not None:
        v[0, 1:-1] += beta(yv, t, x0)
    alpha, beta = tangential_ghost_rule(spec.right, "right")
    v[-1, 1:-1] = alpha * v[-2, 1:-1]
    if beta is not None:
        v[-1, 1:-1] += beta(yv, t, x0 + ex)

    # ghosts of the normal component beyond the boundary line (only the
    # advection slopes read these): linear extrapolation through the
    # boundary face, zero-gradient copy past an outflow
    u[0, 1:-1] = (u[1, 1:-1] if isinstance(spec.left, Outflow)
                  else 2.0 * u[1, 1:-1] - u[2, 1:-1])
    u[-1, 1:-1] = (u[-2, 1:-1] if isinstance(spec.right, Outflow)
                   else 2.0 * u[-2, 1:-1] - u[-3, 1:-1])
    v[1:-1, 0] = (v[1:-1, 1] if isinstance(spec.bottom, Outflow)
                  else 2.0 * v[1:-1, 1] - v[1:-1, 2])
    v[1:-1, -1] = (v[1:-1, -2] if isinstance(spec.top, Outflow)
                   else 2.0 * v[1:-1, -2] - v[1:-1, -3])

    # corners of the ghost ring (unused by the stencils; keep finite)
    for arr in (u, v):
        arr[0, 0] = arr[1, 1]
        arr[0, -1] = arr[1, -2]
        arr[-1, 0] = arr[-2, 1]
        arr[-1, -1] = arr[-2, -2]


def apply_pressure_ghosts(p: ScalarField) -> None:
    """Zero-normal-gradient ghost fill for cell-centered scalars."""
    d = p._data
    d[0, :] = d[1, :]
    d[-1, :] = d[-2, :]
    d[:, 0] = d[:, 1]
    d[:, -1] = d[:, -2]


# -- plain (uncorrected) operators -----------------------------------------


def gradient(p: ScalarField) -> VectorField:
    """Two-point pressure gradient on interior faces; boundary faces zero."""
    g = p.grid
    out = VectorField(g)
    pv = p.values
    out.u[1:-1, :] = (pv[1:, :] - pv[:-1, :]) / g.h
    out.v[:, 1:-1] = (pv[:, 1:] - pv[:, :-1]) / g.h
    return out


def divergence(w: VectorField) -> ScalarField:
    g = w.grid
    out = ScalarField(g)
    out.values[:] = ((w.u[1:, :] - w.u[:-1, :])
                     + (w.v[:, 1:] - w.v[:, :-1])) / g.h
    return out


def laplacian(w: VectorField) -> VectorField:
    """5-point Laplacian at interior faces, reading the ghost ring.

    Boundary-normal faces (where Dirichlet/outflow rows live) get zero.
    """
    g = w.grid
    h2 = g.h * g.h
    out = VectorField(g)
    U, V = w._u, w._v
    out.u[1:-1, :] = (U[3:-1, 1:-1] + U[1:-3, 1:-1]
                      + U[2:-2, 2:] + U[2:-2, :-2]
                      - 4.0 * U[2:-2, 1:-1]) / h2
    out.v[:, 1:-1] = (V[2:, 2:-2] + V[:-2, 2:-2]
                      + V[1:-1, 3:-1] + V[1:-1, 1:-3]
                      - 4.0 * V[1:-1, 2:-2]) / h2
    return out


def _limited_slope(dm, dp):
    # van Leer harmonic mean; zero at extrema
    prod = dm * dp
    denom = dm + dp
    safe = np.where(np.abs(denom) > 0, denom, 1.0)
    return np.where(prod > 0, 2.0 * prod / safe, 0.0)


def _muscl_derivative(f, axis, c, h):
    """Upwind MUSCL derivative of a padded array along an axis.

    f has one ghost layer on each end of `axis`; the result covers the
    unpadded range. c is the advecting velocity there (selects the upwind
    branch).
    """
    d = (np.diff(f, axis=axis)) / h  # differences between consecutive entries
    # slopes at each unpadded node: needs both neighbors
    sl = _limited_slope(_take(d, axis, 0, -1), _take(d, axis, 1, None))
    # replicate edge slopes so sigma_{i +/- 1} exists everywhere (falls back
    # to plain upwind at the outermost nodes, exact for affine fields)
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 1)
    slp = np.pad(sl, pad, mode="edge")
    dm = _take(d, axis, 0, -1)
    dp = _take(d, axis, 1, None)
    deriv_pos = dm + 0.5 * (_take(slp, axis, 1, -1) - _take(slp, axis, 0, -2))
    deriv_neg = dp - 0.5 * (_take(slp, axis, 2, None) - _take(slp, axis, 1, -1))
    return np.where(c >= 0, deriv_pos, deriv_neg)


def _take(a, axis, start, stop):
    sl = [slice(None), slice(None)]
    sl[axis] = slice(start, stop)
    return a[tuple(sl)]


def advective_term(w: VectorField) -> VectorField:
    """A = (w . grad) w on faces, limited second-order upwind.

    Requires ghosts filled by apply_bcs. Values at boundary-normal faces
    are zeroed: those unknowns carry boundary rows, not momentum rows.
    """
    g = w.grid
    h = g.h
    U, V = w._u, w._v
    out = VectorField(g)

    # u faces: advect u by (u, vbar); vbar averages the four v faces around
    # each u face (ghost columns cover the boundary faces)
    u_phys = w.u
    vbar = 0.25 * (V[:-1, 1:-2] + V[1:, 1:-2]
                   + V[:-1, 2:-1] + V[1:, 2:-1])
    du_dx = _muscl_derivative(U[:, 1:-1], 0, u_phys, h)
    du_dy = _muscl_derivative(U[1:-1, :], 1, vbar, h)
    out.u[:] = u_phys * du_dx + vbar * du_dy
    out.u[0, :] = 0.0
    out.u[-1, :] = 0.0

    # v faces: advect v by (ubar, v)
    v_phys = w.v
    ubar = 0.25 * (U[1:-2, :-1] + U[2:-1, :-1]
                   + U[1:-2, 1:] + U[2:-1, 1:])
    dv_dx = _muscl_derivative(V[:, 1:-1], 0, ubar, h)
    dv_dy = _muscl_derivative(V[1:-1, :], 1, v_phys, h)
    out.v[:] = ubar * dv_dx + v_phys * dv_dy
    out.v[:, 0] = 0.0
    out.v[:, -1] = 0.0
    return out


def advect(w: VectorField, a_prev: VectorField | None) -> tuple[VectorField, VectorField]:
    """Advection extrapolated to the half step: 1.5*A(w) - 0.5*A_prev.

    Returns (a_half, a_now); the caller stores a_now for the next step.
    The first step bootstraps with a_prev = a_now.
    """
    a_now = advective_term(w)
    if a_prev is None:
        a_prev = a_now
    a_half = VectorField(w.grid)
    a_half.u[:] = 1.5 * a_now.u - 0.5 * a_prev.u
    a_half.v[:] = 1.5 * a_now.v - 0.5 * a_prev.v
    return a_half, a_now


# -- snapshot output --------------------------------------------------------


def write_vtk_snapshot(path, grid: GridSpec, p: ScalarField,
                       w: VectorField, title: str = "iimflow snapshot") -> None:
    """Legacy-VTK STRUCTURED_POINTS file with cell-centered p and velocity."""
    uc = 0.5 * (w.u[1:, :] + w.u[:-1, :])
    vc = 0.5 * (w.v[:, 1:] + w.v[:, :-1])
    nx, ny = grid.nx, grid.ny
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(title + "\n")
        f.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        f.write(f"DIMENSIONS {nx + 1} {ny + 1} 1\n")
        f.write(f"ORIGIN {grid.origin[0]} {grid.origin[1]} 0\n")
        f.write(f"SPACING {grid.h} {grid.h} 1\n")
        f.write(f"CELL_DATA {nx * ny}\n")
        f.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
        np.savetxt(f, p.values.T.reshape(-1, 1), fmt="%.9g")
        f.write("VECTORS velocity double\n")
        vel = np.column_stack((uc.T.ravel(), vc.T.ravel(),
                               np.zeros(nx * ny)))
        np.savetxt(f, vel, fmt="%.9g")
