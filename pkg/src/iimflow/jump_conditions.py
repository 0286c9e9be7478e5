"""Penalty forcing and projected interfacial jump conditions.

A concentrated force F (applied by the interface to the fluid, per unit
reference length) makes pressure and the viscous stress jump across the
interface while velocity stays continuous. With the outward unit normal
n stored by the mesh, jumps defined as exterior minus interior limit,
and area stretch jinv, the pointwise relations are

    [p]                 =  jinv * (F . n)
    mu * [du_i / dx_j]  = -jinv * (F - (F.n) n)_i * n_j

i.e. the mu-scaled velocity-gradient jump is the outer product of the
tangential force with the normal. Both relations follow from the traction
balance across a massless interface (check: a shear layer u = S*y for
y > 0, u = 0 below, held by a tangential force (-mu*S, 0) at y = 0 gives
mu*[du/dy] = mu*S). Those pointwise values are L2-projected onto a CG or
DG surface basis; the DG projection keeps the one-sided values exact
where the geometry (and hence the normal) is discontinuous.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .interface_mesh import (
    BasisKind,
    InterfaceMesh,
    SurfaceField,
    SurfaceProjector,
)

__all__ = [
    "JumpSet",
    "PenaltyParams",
    "PrescribedMotion",
    "assemble_jumps",
    "penalty_force",
    "pointwise_jumps",
]


@dataclass(frozen=True)
class PenaltyParams:
    """Spring stiffness and damping of the penalty coupling."""

    kappa: float
    eta: float

    def __post_init__(self):
        if self.kappa < 0 or self.eta < 0:
            raise ValueError("penalty coefficients must be nonnegative")


@dataclass(frozen=True)
class PrescribedMotion:
    """Target configuration xi(t) and its velocity V(t), per mesh node."""

    xi: Callable[[float], np.ndarray]
    vel: Callable[[float], np.ndarray]

    @staticmethod
    def stationary(mesh: InterfaceMesh) -> "PrescribedMotion":
        ref = mesh.ref_nodes.copy()
        zero = np.zeros_like(ref)
        return PrescribedMotion(xi=lambda t: ref, vel=lambda t: zero)


@dataclass
class JumpSet:
    """Projected jump conditions on a mesh.

    p_jump is a scalar field; mu_grad_u_jump has 4 components storing the
    2x2 matrix mu*[du_i/dx_j] row-major with row = velocity component
    (u, v) and column = derivative axis (x, y). The velocity jump itself
    is identically zero and is not stored.
    """

    mesh: InterfaceMesh
    p_jump: SurfaceField
    mu_grad_u_jump: SurfaceField
    basis_kind: BasisKind

    def eval_p(self, elems, s) -> np.ndarray:
        return self.p_jump.eval(self.mesh, elems, s)[..., 0]

    def eval_mu_grad(self, elems, s) -> np.ndarray:
        flat = self.mu_grad_u_jump.eval(self.mesh, elems, s)
        return flat.reshape(flat.shape[:-1] + (2, 2))


def penalty_force(mesh: InterfaceMesh, motion: PrescribedMotion,
                  U: np.ndarray | None, params: PenaltyParams,
                  t: float) -> np.ndarray:
    """Nodal penalty force kappa*(xi - chi) + eta*(V - U), shape (M, 2).

    The result is a force density per unit reference length in the CG
    (shared-node) basis; U defaults to zero when omitted.
    """
    if isinstance(U, SurfaceField):
        U = U.coeffs
    if U is None:
        U = np.zeros_like(mesh.cur_nodes)
    F = params.kappa * (motion.xi(t) - mesh.cur_nodes)
    F += params.eta * (motion.vel(t) - U)
    return F


def pointwise_jumps(F, n, jinv):
    """Pressure and mu-scaled velocity-gradient jumps for one force sample.

    Broadcasts over leading axes: F and n of shape (..., 2), jinv (...,).
    Returns (p_jump (...,), matrix (..., 2, 2)).
    """
    F = np.asarray(F, dtype=float)
    n = np.asarray(n, dtype=float)
    jinv = np.asarray(jinv, dtype=float)
    fdotn = np.sum(F * n, axis=-1)
    p_jump = jinv * fdotn
    f_tan = F - fdotn[..., None] * n
    mat = -jinv[..., None, None] * f_tan[..., :, None] * n[..., None, :]
    return p_jump, mat


def assemble_jumps(mesh: InterfaceMesh, F: SurfaceField | np.ndarray,
                   basis_kind: BasisKind,
                   projector: SurfaceProjector | None = None) -> JumpSet:
    """Project the pointwise jumps induced by a nodal CG force field.

    Normals and stretches come from the current configuration; the
    projection integrates over the reference configuration. Passing a
    prebuilt projector avoids refactorizing the CG mass matrix.
    """
    basis_kind = BasisKind(basis_kind)
    if isinstance(F, SurfaceField):
        F = F.coeffs
    proj = projector or SurfaceProjector(mesh, basis_kind)
    elems, s = proj.elems, proj.s

    a, b = mesh.elements[elems, 0], mesh.elements[elems, 1]
    Fq = (1.0 - s)[:, None] * F[a] + s[:, None] * F[b]
    nq = mesh.normals(use_current=True)[elems]
    jq = mesh.stretches()[elems]
    p_q, mat_q = pointwise_jumps(Fq, nq, jq)

    p_field = proj.project_values(p_q)
    mat_field = proj.project_values(mat_q.reshape(len(elems), 4))
    return JumpSet(mesh=mesh, p_jump=p_field, mu_grad_u_jump=mat_field,
                   basis_kind=basis_kind)
