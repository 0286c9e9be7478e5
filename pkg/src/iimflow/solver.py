"""Implicit MAC solver coupled to the immersed interface.

One time step: predict the interface position with interpolated velocity,
build the midpoint penalty force and its stencil corrections, solve the
coupled Crank-Nicolson / AB2 momentum-continuity system with those
corrections on the right-hand side, then correct the interface position
with the midpoint velocity.

The linear system couples all velocity faces, cell pressures and one
Lagrange multiplier that pins the mean pressure (pressure only enters
through differences, so the constant mode must be fixed; the multiplier
also absorbs roundoff-level flux incompatibility of all-wall cases). The
operator is constant in time: boundary rows, Crank-Nicolson coefficients
and the gradient/divergence blocks never change, so a direct
factorization is reused across steps. A projection-preconditioned GMRES
path is available for grids too large to factor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coupling import (
    CorrectionLedger,
    OutOfDomainError,
    classify_sides,
    interp_velocity,
    spread,
)
from .interface_mesh import BasisKind, InterfaceMesh, SurfaceProjector
from .jump_conditions import (
    PenaltyParams,
    PrescribedMotion,
    assemble_jumps,
    penalty_force,
)
from .mac_grid import (
    BCSpec,
    GridSpec,
    Inflow,
    NoSlipWall,
    Outflow,
    ScalarField,
    SlipWall,
    VectorField,
    advect,
    apply_bcs,
    divergence,
    laplacian,
    tangential_ghost_rule,
)

__all__ = [
    "FluidParams",
    "LinearSolveParams",
    "SolverState",
    "Stepper",
    "TimeStepReport",
    "load_checkpoint",
    "save_checkpoint",
]


@dataclass(frozen=True)
class FluidParams:
    rho: float
    mu: float

    def __post_init__(self):
        if self.rho <= 0 or self.mu <= 0:
            raise ValueError("density and viscosity must be positive")


@dataclass(frozen=True)
class LinearSolveParams:
    rel_tol: float = 1e-9
    max_iters: int = 500
    method: str = "direct"  # "direct" or "gmres"

    def __post_init__(self):
        if not (0 < self.rel_tol < 1):
            raise ValueError("rel_tol must be in (0, 1)")


@dataclass
class SolverState:
    t: float
    u: VectorField
    p: ScalarField
    mesh: InterfaceMesh | None
    adv_prev: VectorField | None = None
    U_nodal: np.ndarray | None = None

    def copy(self):
        return SolverState(
            t=self.t, u=self.u.copy(), p=self.p.copy(), mesh=self.mesh,
            adv_prev=None if self.adv_prev is None else self.adv_prev.copy(),
            U_nodal=None if self.U_nodal is None else self.U_nodal.copy(),
        )


@dataclass
class TimeStepReport:
    t: float
    residual: float
    iterations: int
    max_eps: float
    cfl: float
    div_inf: float
    unstable: bool = False


class _SaddleSystem:
    """Constant-in-time coupled matrix and its solvers."""

    def __init__(self, grid: GridSpec, bc: BCSpec, fluid: FluidParams,
                 dt: float, lsp: LinearSolveParams):
        self.grid, self.bc, self.fluid, self.dt, self.lsp = grid, bc, fluid, dt, lsp
        nx, ny, h = grid.nx, grid.ny, grid.h
        self.nu_dofs = (nx + 1) * ny
        self.nv_dofs = nx * (ny + 1)
        self.np_dofs = nx * ny
        self.n = self.nu_dofs + self.nv_dofs + self.np_dofs + 1
        self._build_matrix()
        if lsp.method == "direct":
            self._lu = spla.splu(self.A.tocsc())
        elif lsp.method == "gmres":
            self._build_preconditioner()
        else:
            raise ValueError(f"unknown linear solver method {lsp.method!r}")

    # index maps
    def iu(self, i, j):
        return i * self.grid.ny + j

    def iv(self, i, j):
        return self.nu_dofs + i * (self.grid.ny + 1) + j

    def ip(self, i, j):
        return self.nu_dofs + self.nv_dofs + i * self.grid.ny + j

    def _build_matrix(self):
        g, fl, dt = self.grid, self.fluid, self.dt
        nx, ny, h = g.nx, g.ny, g.h
        vis = 0.5 * fl.mu / (h * h)
        diag_t = fl.rho / dt
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        # ghost elimination coefficients for tangential components
        a_bot, _ = tangential_ghost_rule(self.bc.bottom, "bottom")
        a_top, _ = tangential_ghost_rule(self.bc.top, "top")
        a_left, _ = tangential_ghost_rule(self.bc.left, "left")
        a_right, _ = tangential_ghost_rule(self.bc.right, "right")

        # u rows
        for i in range(nx + 1):
            for j in range(ny):
                r = self.iu(i, j)
                if i == 0:
                    if isinstance(self.bc.left, Outflow):
                        add(r, r, 1.0)
                        add(r, self.iu(1, j), -1.0)
                    else:
                        add(r, r, 1.0)
                    continue
                if i == nx:
                    if isinstance(self.bc.right, Outflow):
                        add(r, r, 1.0)
                        add(r, self.iu(nx - 1, j), -1.0)
                    else:
                        add(r, r, 1.0)
                    continue
                center = diag_t + 4.0 * vis
                add(r, self.iu(i - 1, j), -vis)
                add(r, self.iu(i + 1, j), -vis)
                if j > 0:
                    add(r, self.iu(i, j - 1), -vis)
                else:
                    center += -vis * a_bot
                if j < ny - 1:
                    add(r, self.iu(i, j + 1), -vis)
                else:
                    center += -vis * a_top
                add(r, r, center)
                add(r, self.ip(i, j), 1.0 / h)
                add(r, self.ip(i - 1, j), -1.0 / h)

        # v rows
        for i in range(nx):
            for j in range(ny + 1):
                r = self.iv(i, j)
                if j == 0:
                    if isinstance(self.bc.bottom, Outflow):
                        add(r, r, 1.0)
                        add(r, self.iv(i, 1), -1.0)
                    else:
                        add(r, r, 1.0)
                    continue
                if j == ny:
                    if isinstance(self.bc.top, Outflow):
                        add(r, r, 1.0)
                        add(r, self.iv(i, ny - 1), -1.0)
                    else:
                        add(r, r, 1.0)
                    continue
                center = diag_t + 4.0 * vis
                add(r, self.iv(i, j - 1), -vis)
                add(r, self.iv(i, j + 1), -vis)
                if i > 0:
                    add(r, self.iv(i - 1, j), -vis)
                else:
                    center += -vis * a_left
                if i < nx - 1:
                    add(r, self.iv(i + 1, j), -vis)
                else:
                    center += -vis * a_right
                add(r, r, center)
                add(r, self.ip(i, j), 1.0 / h)
                add(r, self.ip(i, j - 1), -1.0 / h)

        # continuity rows with the mean-pressure multiplier column
        lam = self.n - 1
        for i in range(nx):
            for j in range(ny):
                r = self.ip(i, j)
                add(r, self.iu(i + 1, j), 1.0 / h)
                add(r, self.iu(i, j), -1.0 / h)
                add(r, self.iv(i, j + 1), 1.0 / h)
                add(r, self.iv(i, j), -1.0 / h)
                add(r, lam, 1.0)
        # mean-pressure row
        for i in range(nx):
            for j in range(ny):
                add(lam, self.ip(i, j), 1.0 / (nx * ny))

        self.A = sp.coo_matrix(
            (np.array(vals), (np.array(rows), np.array(cols))),
            shape=(self.n, self.n)).tocsr()

    def _build_preconditioner(self):
        """One approximate projection sweep: Helmholtz solves for the
        velocity blocks, then a pressure Poisson solve."""
        g, fl, dt = self.grid, self.fluid, self.dt
        nx, ny, h = g.nx, g.ny, g.h
        Au = self.A[:self.nu_dofs, :self.nu_dofs].tocsc()
        off = self.nu_dofs
        Av = self.A[off:off + self.nv_dofs, off:off + self.nv_dofs].tocsc()
        self._lu_u = spla.splu(Au)
        self._lu_v = spla.splu(Av)

        rows, cols, vals = [], [], []

        def idx(i, j):
            return i * ny + j

        has_outflow = any(isinstance(b, Outflow) for b in
                          (self.bc.left, self.bc.right, self.bc.bottom,
                           self.bc.top))
        for i in range(nx):
            for j in range(ny):
                r = idx(i, j)
                diag = 0.0
                for (di, dj, boundary_side) in (
                        (-1, 0, "left"), (1, 0, "right"),
                        (0, -1, "bottom"), (0, 1, "top")):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < nx and 0 <= jj < ny:
                        rows.append(r)
                        cols.append(idx(ii, jj))
                        vals.append(-1.0 / h**2)
                        diag += 1.0 / h**2
                    else:
                        side_bc = getattr(self.bc, boundary_side)
                        if isinstance(side_bc, Outflow):
                            diag += 2.0 / h**2  # Dirichlet datum at outflow
                rows.append(r)
                cols.append(r)
                vals.append(diag)
        P = sp.coo_matrix((vals, (rows, cols)),
                          shape=(self.np_dofs, self.np_dofs)).tocsc()
        if not has_outflow:
            P = P + sp.coo_matrix(([1.0], ([0], [0])), shape=P.shape).tocsc()
        self._lu_p = spla.splu(P)

    def _apply_preconditioner(self, r):
        g = self.grid
        nx, ny, h = g.nx, g.ny, g.h
        dt, rho = self.dt, self.fluid.rho
        nu_d, nv_d = self.nu_dofs, self.nv_dofs
        zu = self._lu_u.solve(r[:nu_d])
        zv = self._lu_v.solve(r[nu_d:nu_d + nv_d])
        rp = r[nu_d + nv_d:-1]
        U = zu.reshape(nx + 1, ny)
        V = zv.reshape(nx, ny + 1)
        div = (U[1:, :] - U[:-1, :] + V[:, 1:] - V[:, :-1]) / h
        phi = self._lu_p.solve((rho / dt) * (div.ravel() - rp))
        Phi = phi.reshape(nx, ny)
        U[1:-1, :] -= (dt / rho) * (Phi[1:, :] - Phi[:-1, :]) / h
        V[:, 1:-1] -= (dt / rho) * (Phi[:, 1:] - Phi[:, :-1]) / h
        z = np.empty_like(r)
        z[:nu_d] = U.ravel()
        z[nu_d:nu_d + nv_d] = V.ravel()
        z[nu_d + nv_d:-1] = phi
        z[-1] = r[-1]
        return z

    def solve(self, rhs, x0=None):
        """Solve to the configured relative residual; returns (x, res, iters)."""
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            return np.zeros_like(rhs), 0.0, 0
        if self.lsp.method == "direct":
            x = self._lu.solve(rhs)
            res = np.linalg.norm(rhs - self.A @ x) / bnorm
            iters = 1
            while res > self.lsp.rel_tol and iters < 4:
                x += self._lu.solve(rhs - self.A @ x)
                res = np.linalg.norm(rhs - self.A @ x) / bnorm
                iters += 1
            return x, res, iters
        M = spla.LinearOperator((self.n, self.n), matvec=self._apply_preconditioner)
        x = np.zeros_like(rhs) if x0 is None else x0.copy()
        total = 0
        for _ in range(6):
            x, _ = spla.gmres(self.A, rhs, x0=x, M=M,
                              rtol=0.1 * self.lsp.rel_tol, atol=0.0,
                              restart=40, maxiter=self.lsp.max_iters)
            total += 1
            res = np.linalg.norm(rhs - self.A @ x) / bnorm
            if res <= self.lsp.rel_tol:
                break
        return x, res, total


class Stepper:
    """Owns the grid, boundary conditions, interface machinery and the
    factorized linear operator for one case."""

    def __init__(self, grid: GridSpec, bc: BCSpec, fluid: FluidParams,
                 dt: float, mesh: InterfaceMesh | None = None,
                 motion: PrescribedMotion | None = None,
                 penalty: PenaltyParams | None = None,
                 basis_kind: BasisKind = BasisKind.DG,
                 lsp: LinearSolveParams = LinearSolveParams(),
                 side_classifier=None, body_force=None, force_fn=None,
                 velocity_scale: float = 1.0):
        self.grid, self.bc, self.fluid, self.dt = grid, bc, fluid, dt
        self.mesh0 = mesh
        self.motion = motion
        self.penalty = penalty
        self.basis_kind = BasisKind(basis_kind)
        self.lsp = lsp
        self.side_classifier = side_classifier
        self.body_force = body_force
        self.force_fn = force_fn  # optional override: (mesh, U, t) -> (M, 2)
        self.velocity_scale = velocity_scale
        self.system = _SaddleSystem(grid, bc, fluid, dt, lsp)
        if mesh is not None:
            self.proj_cg = SurfaceProjector(mesh, BasisKind.CG)
            self.proj_jumps = (self.proj_cg if self.basis_kind is BasisKind.CG
                               else SurfaceProjector(mesh, BasisKind.DG))
        else:
            self.proj_cg = self.proj_jumps = None

    # -- forcing --------------------------------------------------------------

    def nodal_force(self, mesh, U_nodal, t):
        if self.force_fn is not None:
            return self.force_fn(mesh, U_nodal, t)
        if self.penalty is None or self.motion is None:
            return np.zeros_like(mesh.cur_nodes)
        return penalty_force(mesh, self.motion, U_nodal, self.penalty, t)

    # -- pieces of the step -----------------------------------------------------

    def initial_state(self, u_init=None, t0=0.0) -> SolverState:
        w = VectorField(self.grid)
        if u_init is not None:
            u_init(w)
        apply_bcs(w, self.bc, t0)
        U0 = None
        if self.mesh0 is not None:
            U0 = np.zeros_like(self.mesh0.cur_nodes)
        return SolverState(t=t0, u=w, p=ScalarField(self.grid),
                           mesh=self.mesh0, U_nodal=U0)

    def predict_positions(self, state: SolverState):
        """Interface velocity now, predicted endpoint and midpoint meshes."""
        mesh = state.mesh
        F_n = self.nodal_force(mesh, state.U_nodal, state.t)
        jumps = assemble_jumps(mesh, F_n, self.basis_kind,
                               projector=self.proj_jumps)
        U_n = interp_velocity(state.u, mesh, jumps, self.fluid.mu,
                              projector=self.proj_cg)
        chi_hat = mesh.cur_nodes + self.dt * U_n
        mesh_mid = mesh.with_current(0.5 * (chi_hat + mesh.cur_nodes))
        return U_n, chi_hat, mesh_mid

    def momentum_solve(self, state: SolverState, ledger: CorrectionLedger | None,
                       x0=None):
        """Advance velocity and pressure one step; returns
        (u_new, p_new, a_now, residual, iterations)."""
        g, fl, dt = self.grid, self.fluid, self.dt
        nx, ny, h = g.nx, g.ny, g.h
        w = state.u
        apply_bcs(w, self.bc, state.t)
        a_half, a_now = advect(w, state.adv_prev)
        lap_n = laplacian(w)

        sysm = self.system
        rhs = np.zeros(sysm.n)
        t_new = state.t + dt
        t_half = state.t + 0.5 * dt

        ru = (fl.rho / dt) * w.u - fl.rho * a_half.u + 0.5 * fl.mu * lap_n.u
        rv = (fl.rho / dt) * w.v - fl.rho * a_half.v + 0.5 * fl.mu * lap_n.v
        if ledger is not None:
            ru = ru + ledger.mom_u
            rv = rv + ledger.mom_v
        if self.body_force is not None:
            xu, yu = g.u_coords()
            xv, yv = g.v_coords()
            fx_u, _ = self.body_force(xu[:, None], yu[None, :], t_half)
            _, fy_v = self.body_force(xv[:, None], yv[None, :], t_half)
            ru = ru + np.broadcast_to(fx_u, ru.shape)
            rv = rv + np.broadcast_to(fy_v, rv.shape)

        # ghost constants of the implicit side at t^{n+1}
        vis = 0.5 * fl.mu / (h * h)
        _, beta_b = tangential_ghost_rule(self.bc.bottom, "bottom")
        _, beta_t = tangential_ghost_rule(self.bc.top, "top")
        _, beta_l = tangential_ghost_rule(self.bc.left, "left")
        _, beta_r = tangential_ghost_rule(self.bc.right, "right")
        xu, yu = g.u_coords()
        xv, yv = g.v_coords()
        y0, x0c = g.origin[1], g.origin[0]
        ex, ey = g.extent
        if beta_b is not None:
            ru[:, 0] = ru[:, 0] + vis * beta_b(xu, t_new, y0)
        if beta_t is not None:
            ru[:, -1] = ru[:, -1] + vis * beta_t(xu, t_new, y0 + ey)
        if beta_l is not None:
            rv[0, :] = rv[0, :] + vis * beta_l(yv, t_new, x0c)
        if beta_r is not None:
            rv[-1, :] = rv[-1, :] + vis * beta_r(yv, t_new, x0c + ex)

        rhs[:sysm.nu_dofs] = ru.ravel()
        rhs[sysm.nu_dofs:sysm.nu_dofs + sysm.nv_dofs] = rv.ravel()

        # boundary rows
        def bval(bc, side, coords_norm, fixed, t):
            if isinstance(bc, Inflow):
                if side in ("left", "right"):
                    return np.asarray(bc.u_fn(fixed, coords_norm, t), dtype=float)
                return np.asarray(bc.v_fn(coords_norm, fixed, t), dtype=float)
            return np.zeros(len(coords_norm))

        rhs_u = rhs[:sysm.nu_dofs].reshape(nx + 1, ny)
        rhs_v = rhs[sysm.nu_dofs:sysm.nu_dofs + sysm.nv_dofs].reshape(nx, ny + 1)
        rhs_u[0, :] = bval(self.bc.left, "left", yu, x0c, t_new)
        rhs_u[-1, :] = bval(self.bc.right, "right", yu, x0c + ex, t_new)
        rhs_v[:, 0] = bval(self.bc.bottom, "bottom", xv, y0, t_new)
        rhs_v[:, -1] = bval(self.bc.top, "top", xv, y0 + ey, t_new)

        if ledger is not None:
            rhs[sysm.nu_dofs + sysm.nv_dofs:-1] = ledger.continuity.ravel()
        rhs[-1] = 0.0

        x, res, iters = sysm.solve(rhs, x0=x0)
        if res > self.lsp.rel_tol:
            raise RuntimeError(
                f"linear solve stalled at relative residual {res:.3e} "
                f"(target {self.lsp.rel_tol:.1e})")
        u_new = VectorField(g)
        u_new.u[:] = x[:sysm.nu_dofs].reshape(nx + 1, ny)
        u_new.v[:] = x[sysm.nu_dofs:sysm.nu_dofs + sysm.nv_dofs].reshape(nx, ny + 1)
        p_new = ScalarField(g)
        p_new.values[:] = x[sysm.nu_dofs + sysm.nv_dofs:-1].reshape(nx, ny)
        return u_new, p_new, a_now, res, iters, x

    def correct_positions(self, state, u_new, mesh_mid, jumps_mid):
        w_mid = VectorField(self.grid)
        w_mid.u[:] = 0.5 * (state.u.u + u_new.u)
        w_mid.v[:] = 0.5 * (state.u.v + u_new.v)
        apply_bcs(w_mid, self.bc, state.t + 0.5 * self.dt)
        U_half = interp_velocity(w_mid, mesh_mid, jumps_mid, self.fluid.mu,
                                 projector=self.proj_cg)
        chi_new = state.mesh.cur_nodes + self.dt * U_half
        return chi_new, U_half

    def step(self, state: SolverState, x0=None):
        """Advance one time step; returns (new_state, report, raw_solution)."""
        g, dt = self.grid, self.dt
        ledger = None
        mesh_mid = None
        jumps_mid = None
        if state.mesh is not None:
            U_n, chi_hat, mesh_mid = self.predict_positions(state)
            t_half = state.t + 0.5 * dt
            F_half = self.nodal_force(mesh_mid, U_n, t_half)
            ledger = spread(mesh_mid, F_half, self.basis_kind, g,
                            self.fluid.mu, classifier=self.side_classifier,
                            projector=self.proj_jumps)
            jumps_mid = ledger.jumps

        u_new, p_new, a_now, res, iters, x = self.momentum_solve(state, ledger,
                                                                 x0=x0)

        new_state = SolverState(t=state.t + dt, u=u_new, p=p_new,
                                mesh=state.mesh, adv_prev=a_now,
                                U_nodal=state.U_nodal)
        max_eps = 0.0
        if state.mesh is not None:
            chi_new, U_half = self.correct_positions(state, u_new, mesh_mid,
                                                     jumps_mid)
            new_state.mesh = state.mesh.with_current(chi_new)
            new_state.U_nodal = U_half
            if self.motion is not None:
                xi = self.motion.xi(new_state.t)
                max_eps = float(np.linalg.norm(xi - chi_new, axis=1).max())

        div = divergence(u_new)
        if ledger is not None:
            div_def = np.abs(div.values - ledger.continuity).max()
        else:
            div_def = np.abs(div.values).max()
        speed = u_new.max_speed()
        unstable = (not np.isfinite(speed)) or speed > 1e4 * self.velocity_scale
        report = TimeStepReport(t=new_state.t, residual=res, iterations=iters,
                                max_eps=max_eps, cfl=speed * dt / g.h,
                                div_inf=div_def, unstable=bool(unstable))
        return new_state, report, x


# -- checkpointing ------------------------------------------------------------

_MAGIC = b"IIMSOLV1"


def save_checkpoint(path, state: SolverState) -> None:
    """Binary state dump: versioned header then little-endian float64 arrays."""
    g = state.u.grid
    mesh = state.mesh
    M = 0 if mesh is None else mesh.num_nodes
    E = 0 if mesh is None else mesh.num_elements
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<iddiid", 1, g.origin[0], g.origin[1],
                            g.nx, g.ny, g.h))
        f.write(struct.pack("<dii?", state.t, M, E,
                            bool(mesh.closed) if mesh else False))
        f.write(struct.pack("<?", state.adv_prev is not None))

        def dump(arr):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

        dump(state.u.u)
        dump(state.u.v)
        dump(state.p.values)
        if state.adv_prev is not None:
            dump(state.adv_prev.u)
            dump(state.adv_prev.v)
        if mesh is not None:
            dump(mesh.ref_nodes)
            dump(mesh.cur_nodes)
            f.write(np.ascontiguousarray(mesh.elements, dtype="<i8").tobytes())
            dump(state.U_nodal if state.U_nodal is not None
                 else np.zeros((M, 2)))


def load_checkpoint(path) -> SolverState:
    with open(path, "rb") as f:
        if f.read(8) != _MAGIC:
            raise ValueError("not a solver checkpoint")
        _, ox, oy, nx, ny, h = struct.unpack("<iddiid", f.read(36))
        t, M, E, closed = struct.unpack("<dii?", f.read(17))
        has_adv, = struct.unpack("<?", f.read(1))
        grid = GridSpec((ox, oy), nx, ny, h)

        def read(shape):
            n = int(np.prod(shape))
            return np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).copy()

        w = VectorField(grid)
        w.u[:] = read((nx + 1, ny))
        w.v[:] = read((nx, ny + 1))
        p = ScalarField(grid)
        p.values[:] = read((nx, ny))
        adv = None
        if has_adv:
            adv = VectorField(grid)
            adv.u[:] = read((nx + 1, ny))
            adv.v[:] = read((nx, ny + 1))
        mesh = None
        U = None
        if M:
            ref = read((M, 2))
            cur = read((M, 2))
            elems = np.frombuffer(f.read(8 * 2 * E), dtype="<i8").reshape(E, 2)
            mesh = InterfaceMesh(ref, elems.copy(), cur, closed=closed,
                                 validate=False)
            U = read((M, 2))
    return SolverState(t=t, u=w, p=p, mesh=mesh, adv_prev=adv, U_nodal=U)
