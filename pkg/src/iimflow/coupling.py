"""Coupling between the interface and the staggered grid.

Finite-difference arms (pairs of adjacent same-type unknowns) that
straddle the interface pick up Taylor corrections built from the known
field jumps at the crossing point: a two-point difference (phi_b -
phi_a)/h whose arm crosses at distance d from `a` needs
(J0 + (h - d) J1)/h subtracted when `a` sits on the interior side (sign
flipped otherwise), with J0 the value jump and J1 the arm-direction
derivative jump. Summing every such correction into per-equation fields
realizes the force-spreading operator; the same idea applied to bilinear
interpolation arms gives the sharp velocity-interpolation operator.

Sides are labelled +1 for the exterior and -1 for the interior; jumps are
exterior minus interior, so crossing an element along direction e adds
the jump when e points with the element normal (exiting the interior).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interface_mesh import BasisKind, InterfaceMesh, SurfaceProjector
from .jump_conditions import JumpSet, assemble_jumps
from .mac_grid import GridSpec, VectorField

__all__ = [
    "CorrectionLedger",
    "Intersection",
    "OutOfDomainError",
    "ResolutionError",
    "SideMap",
    "classify_sides",
    "correction_for_arm",
    "corrected_difference_contribution",
    "find_intersections",
    "interp_velocity",
    "laplacian_arm_correction",
    "spread",
    "two_point_correction",
    "write_ledger_csv",
]

EXTERIOR, INTERIOR = 1, -1

# relative perturbations that make degenerate alignments deterministic
POINT_NUDGE = 1e-12
CROSSING_NUDGE = 1e-10


class ResolutionError(RuntimeError):
    """An arm crosses the interface more than once: under-resolved geometry."""


class OutOfDomainError(RuntimeError):
    """An interface point left the grid."""


@dataclass(frozen=True)
class Intersection:
    """One transversal crossing of a stencil arm.

    kind: unknown family of the arm ('p', 'u' or 'v'); axis: 0 for a
    horizontal arm, 1 for vertical; (i, j): index of the arm's first
    (left/bottom) unknown; element/s: crossing location on the mesh;
    d: distance from the first unknown, in (0, h); first_side: +-1.
    """

    kind: str
    axis: int
    i: int
    j: int
    element: int
    s: float
    d: float
    first_side: int


@dataclass
class SideMap:
    """Exterior(+1)/interior(-1) labels for every p, u and v location."""

    grid: GridSpec
    p_side: np.ndarray
    u_side: np.ndarray
    v_side: np.ndarray

    def of(self, kind: str) -> np.ndarray:
        return {"p": self.p_side, "u": self.u_side, "v": self.v_side}[kind]


def _winding_inside(mesh: InterfaceMesh, x, y) -> np.ndarray:
    """Winding-number inside test, vectorized over flat point arrays."""
    a = mesh.cur_nodes[mesh.elements[:, 0]]
    b = mesh.cur_nodes[mesh.elements[:, 1]]
    # process elements in blocks to bound the broadcast size
    wn = np.zeros(x.shape, dtype=np.int64)
    for lo in range(0, mesh.num_elements, 512):
        aa = a[lo:lo + 512]
        bb = b[lo:lo + 512]
        ax, ay = aa[:, 0][:, None], aa[:, 1][:, None]
        bx, by = bb[:, 0][:, None], bb[:, 1][:, None]
        is_left = (bx - ax) * (y[None, :] - ay) - (x[None, :] - ax) * (by - ay)
        up = (ay <= y[None, :]) & (by > y[None, :]) & (is_left > 0)
        dn = (ay > y[None, :]) & (by <= y[None, :]) & (is_left < 0)
        wn += up.sum(axis=0) - dn.sum(axis=0)
    inside = wn != 0
    return inside


def classify_sides(mesh: InterfaceMesh, grid: GridSpec,
                   classifier=None) -> SideMap:
    """Label every unknown location as exterior (+1) or interior (-1).

    Closed meshes use a winding-number test in the current configuration;
    points are nudged by ~1e-12*h so locations exactly on the interface
    get a deterministic side. Open meshes need a per-geometry classifier
    f(x, y) -> +-1 array.
    """
    coords = {"p": grid.p_coords(), "u": grid.u_coords(), "v": grid.v_coords()}
    out = {}
    if classifier is None and not mesh.closed:
        raise ValueError("open meshes need an explicit side classifier")
    if classifier is not None:
        for kind, (cx, cy) in coords.items():
            X, Y = np.meshgrid(cx, cy, indexing="ij")
            side = np.asarray(classifier(X, Y), dtype=np.int8)
            out[kind] = side
        return SideMap(grid, out["p"], out["u"], out["v"])

    nudge = POINT_NUDGE * grid.h
    lo = mesh.cur_nodes.min(axis=0) - 2 * nudge
    hi = mesh.cur_nodes.max(axis=0) + 2 * nudge
    for kind, (cx, cy) in coords.items():
        side = np.full((len(cx), len(cy)), EXTERIOR, dtype=np.int8)
        ix = np.nonzero((cx >= lo[0]) & (cx <= hi[0]))[0]
        iy = np.nonzero((cy >= lo[1]) & (cy <= hi[1]))[0]
        if len(ix) and len(iy):
            X, Y = np.meshgrid(cx[ix], cy[iy], indexing="ij")
            inside = _winding_inside(mesh, X.ravel() + nudge,
                                     Y.ravel() + 1.3 * nudge)
            sub = np.where(inside, INTERIOR, EXTERIOR).astype(np.int8)
            side[np.ix_(ix, iy)] = sub.reshape(len(ix), len(iy))
        out[kind] = side
    return SideMap(grid, out["p"], out["u"], out["v"])


# -- segment/element crossings ----------------------------------------------


def _segment_element_params(p0, p1, a, b):
    """Line-parameter pairs (t along p0->p1, s along a->b), vectorized.

    p0, p1: (n, 2) segment endpoints; a, b: (m, 2) element endpoints.
    Returns (t, s, ok) of shape (n, m); ok excludes (near-)parallel pairs.
    """
    r = (p1 - p0)[:, None, :]
    e = (b - a)[None, :, :]
    ap = a[None, :, :] - p0[:, None, :]
    denom = r[..., 0] * e[..., 1] - r[..., 1] * e[..., 0]
    r_len = np.linalg.norm(r, axis=-1)
    e_len = np.linalg.norm(e, axis=-1)
    ok = np.abs(denom) > 1e-14 * r_len * e_len
    safe = np.where(ok, denom, 1.0)
    t = (ap[..., 0] * e[..., 1] - ap[..., 1] * e[..., 0]) / safe
    s = (ap[..., 0] * r[..., 1] - ap[..., 1] * r[..., 0]) / safe
    return t, s, ok


def _crossings_of_segments(mesh, p0, p1, tol=1e-9):
    """All transversal crossings of segments with the mesh.

    Returns (seg_idx, elem, t, s) arrays sorted by (segment, t), with
    near-duplicate hits through shared nodes collapsed.
    """
    a = mesh.cur_nodes[mesh.elements[:, 0]]
    b = mesh.cur_nodes[mesh.elements[:, 1]]
    t, s, ok = _segment_element_params(p0, p1, a, b)
    hit = ok & (t >= -tol) & (t <= 1 + tol) & (s >= -tol) & (s <= 1 + tol)
    seg_idx, elem = np.nonzero(hit)
    tt = np.clip(t[seg_idx, elem], 0.0, 1.0)
    ss = np.clip(s[seg_idx, elem], 0.0, 1.0)
    order = np.lexsort((tt, seg_idx))
    seg_idx, elem, tt, ss = seg_idx[order], elem[order], tt[order], ss[order]
    if len(seg_idx) > 1:
        dup = np.zeros(len(seg_idx), dtype=bool)
        dup[1:] = (seg_idx[1:] == seg_idx[:-1]) & (np.abs(tt[1:] - tt[:-1]) < 1e-8)
        keep = ~dup
        seg_idx, elem, tt, ss = (seg_idx[keep], elem[keep], tt[keep], ss[keep])
    return seg_idx, elem, tt, ss


_FAMILIES = (
    ("p", 0), ("p", 1),
    ("u", 0), ("u", 1),
    ("v", 0), ("v", 1),
)


def _family_crossings(mesh, grid, sides, kind, axis):
    """Crossing arrays for one arm family; one crossing per straddling arm.

    Returns dict with i, j (first-unknown index), element, s, d,
    first_side arrays.
    """
    side = sides.of(kind)
    cx, cy = {"p": grid.p_coords, "u": grid.u_coords, "v": grid.v_coords}[kind]()
    if axis == 0:
        straddle = side[:-1, :] * side[1:, :] < 0
    else:
        straddle = side[:, :-1] * side[:, 1:] < 0
    ii, jj = np.nonzero(straddle)
    empty = dict(i=np.empty(0, int), j=np.empty(0, int),
                 element=np.empty(0, int), s=np.empty(0), d=np.empty(0),
                 first_side=np.empty(0, np.int8))
    if len(ii) == 0:
        return empty
    x0 = cx[ii]
    y0 = cy[jj]
    p0 = np.column_stack((x0, y0))
    p1 = p0.copy()
    p1[:, axis] += grid.h
    seg_idx, elem, t, s = _crossings_of_segments(mesh, p0, p1)
    counts = np.bincount(seg_idx, minlength=len(ii))
    if np.any(counts > 1):
        # distinct crossings on one arm: the interface has sub-grid features
        bad = np.nonzero(counts > 1)[0][0]
        els = elem[seg_idx == bad]
        raise ResolutionError(
            f"{kind}-arm at index ({ii[bad]}, {jj[bad]}) crosses the "
            f"interface {counts[bad]} times (elements {sorted(set(els))}); "
            "refine the grid or the interface")
    if np.any(counts == 0):
        bad = np.nonzero(counts == 0)[0][0]
        raise ResolutionError(
            f"{kind}-arm at index ({ii[bad]}, {jj[bad]}) straddles the "
            "interface but no crossing was found (degenerate geometry)")
    # one crossing per arm, already in arm order
    d = np.clip(t, CROSSING_NUDGE, 1.0 - CROSSING_NUDGE) * grid.h
    first_side = side[ii, jj].astype(np.int8)
    return dict(i=ii, j=jj, element=elem, s=s, d=d, first_side=first_side)


def find_intersections(mesh: InterfaceMesh, grid: GridSpec,
                       sides: SideMap | None = None,
                       classifier=None) -> list[Intersection]:
    """Every stencil-arm crossing, as Intersection records."""
    sides = sides or classify_sides(mesh, grid, classifier)
    out = []
    for kind, axis in _FAMILIES:
        c = _family_crossings(mesh, grid, sides, kind, axis)
        for k in range(len(c["i"])):
            out.append(Intersection(kind=kind, axis=axis,
                                    i=int(c["i"][k]), j=int(c["j"][k]),
                                    element=int(c["element"][k]),
                                    s=float(c["s"][k]), d=float(c["d"][k]),
                                    first_side=int(c["first_side"][k])))
    return out


# -- correction primitives ----------------------------------------------------


def two_point_correction(j0, j1_arm, d, h, first_side):
    """Amount to subtract from a two-point difference (phi_b - phi_a)/h."""
    sgn = np.where(np.asarray(first_side) == INTERIOR, 1.0, -1.0)
    return sgn * (j0 + (h - d) * j1_arm) / h


def laplacian_arm_correction(j0, j1_home_to_nb, d_home, h, home_side):
    """Amount to subtract from the 5-point stencil at the arm's home unknown.

    d_home is the crossing distance from the home unknown and
    j1_home_to_nb the derivative jump along home -> neighbor.
    """
    sgn = np.where(np.asarray(home_side) == INTERIOR, 1.0, -1.0)
    return sgn * (j0 + (h - d_home) * j1_home_to_nb) / (h * h)


def correction_for_arm(x: Intersection, jumps: JumpSet, quantity: str,
                       mu: float):
    """(value jump, arm-direction derivative jump) at a crossing.

    Pressure carries a value jump only (no derivative jump is available
    at lowest order); u and v carry derivative jumps only.
    """
    if quantity == "p":
        return float(jumps.eval_p([x.element], [x.s])[0]), 0.0
    comp = {"u": 0, "v": 1}[quantity]
    mat = jumps.eval_mu_grad([x.element], [x.s])[0]
    return 0.0, float(mat[comp, x.axis]) / mu


def corrected_difference_contribution(x: Intersection, jumps: JumpSet,
                                      grid: GridSpec, mu: float):
    """RHS-ready ledger entries generated by one crossing.

    Pressure arms correct the pressure gradient in the matching momentum
    equation; velocity arms correct the divergence (continuity slot) and
    the viscous Laplacian at both arm endpoints (momentum slots).
    """
    h = grid.h
    entries = []
    if x.kind == "p":
        j0, _ = correction_for_arm(x, jumps, "p", mu)
        c = two_point_correction(j0, 0.0, x.d, h, x.first_side)
        slot = "momentum-u" if x.axis == 0 else "momentum-v"
        # the corrected -G~p contributes +c to the momentum RHS
        face = (x.i + 1, x.j) if x.axis == 0 else (x.i, x.j + 1)
        entries.append((slot, face, float(c)))
        return entries

    comp = {"u": 0, "v": 1}[x.kind]
    slot = f"momentum-{x.kind}"
    _, j1 = correction_for_arm(x, jumps, x.kind, mu)
    # continuity slot: only arms differencing the component along its own
    # axis appear in D.u (u along x, v along y)
    if comp == x.axis:
        c_div = two_point_correction(0.0, j1, x.d, h, x.first_side)
        entries.append(("continuity", (x.i, x.j), float(c_div)))
    # viscous Laplacian at both arm endpoints; RHS gets -mu * correction
    c_home = laplacian_arm_correction(0.0, j1, x.d, h, x.first_side)
    c_nb = laplacian_arm_correction(0.0, -j1, h - x.d, h, -x.first_side)
    nb = (x.i + 1, x.j) if x.axis == 0 else (x.i, x.j + 1)
    entries.append((slot, (x.i, x.j), float(-mu * c_home)))
    entries.append((slot, nb, float(-mu * c_nb)))
    return entries


# -- the spreading operator ----------------------------------------------------


@dataclass
class CorrectionLedger:
    """Assembled Eulerian corrections plus their per-arm provenance.

    mom_u/mom_v are added to the momentum right-hand sides; continuity is
    added to the divergence equation right-hand side. entries holds
    (slot, (i, j), value) triples in deterministic order.
    """

    grid: GridSpec
    mom_u: np.ndarray
    mom_v: np.ndarray
    continuity: np.ndarray
    entries: list
    jumps: JumpSet | None = None

    @staticmethod
    def empty(grid: GridSpec) -> "CorrectionLedger":
        return CorrectionLedger(
            grid,
            np.zeros((grid.nx + 1, grid.ny)),
            np.zeros((grid.nx, grid.ny + 1)),
            np.zeros((grid.nx, grid.ny)),
            entries=[],
        )


def spread(mesh: InterfaceMesh, F, basis_kind: BasisKind, grid: GridSpec,
           mu: float, sides: SideMap | None = None, classifier=None,
           projector: SurfaceProjector | None = None) -> CorrectionLedger:
    """Assemble all stencil corrections generated by a nodal force field.

    This is the force-spreading operator: its output fields are exactly
    the Eulerian forcing the corrected solver feels.
    """
    ledger = CorrectionLedger.empty(grid)
    jumps = assemble_jumps(mesh, F, basis_kind, projector=projector)
    ledger.jumps = jumps
    sides = sides or classify_sides(mesh, grid, classifier)
    h = grid.h

    targets = {"momentum-u": ledger.mom_u, "momentum-v": ledger.mom_v,
               "continuity": ledger.continuity}

    for kind, axis in _FAMILIES:
        c = _family_crossings(mesh, grid, sides, kind, axis)
        n = len(c["i"])
        if n == 0:
            continue
        ii, jj, d = c["i"], c["j"], c["d"]
        sgn = np.where(c["first_side"] == INTERIOR, 1.0, -1.0)
        if kind == "p":
            j0 = jumps.eval_p(c["element"], c["s"])
            val = sgn * j0 / h
            slot = "momentum-u" if axis == 0 else "momentum-v"
            fi = ii + 1 if axis == 0 else ii
            fj = jj if axis == 0 else jj + 1
            np.add.at(targets[slot], (fi, fj), val)
            ledger.entries += [(slot, (int(a), int(b)), float(v))
                               for a, b, v in zip(fi, fj, val)]
            continue
        comp = {"u": 0, "v": 1}[kind]
        mat = jumps.eval_mu_grad(c["element"], c["s"])
        mu_j1 = mat[:, comp, axis]          # mu * derivative jump along arm
        slot = f"momentum-{kind}"
        # viscous corrections at both endpoints (RHS gets -mu * correction)
        v_home = -sgn * (h - d) * mu_j1 / (h * h)
        v_nb = -sgn * d * mu_j1 / (h * h)
        np.add.at(targets[slot], (ii, jj), v_home)
        nbi = ii + 1 if axis == 0 else ii
        nbj = jj if axis == 0 else jj + 1
        np.add.at(targets[slot], (nbi, nbj), v_nb)
        ledger.entries += [(slot, (int(a), int(b)), float(v))
                           for a, b, v in zip(ii, jj, v_home)]
        ledger.entries += [(slot, (int(a), int(b)), float(v))
                           for a, b, v in zip(nbi, nbj, v_nb)]
        if comp == axis:
            c_div = sgn * (h - d) * (mu_j1 / mu) / h
            np.add.at(targets["continuity"], (ii, jj), c_div)
            ledger.entries += [("continuity", (int(a), int(b)), float(v))
                               for a, b, v in zip(ii, jj, c_div)]
    return ledger


def write_ledger_csv(ledger: CorrectionLedger, path) -> None:
    with open(path, "w") as f:
        f.write("slot,i,j,value\n")
        for slot, (i, j), val in ledger.entries:
            f.write(f"{slot},{i},{j},{val:.17g}\n")


# -- corrected velocity interpolation -----------------------------------------


def _corner_corrections(mesh, jumps, mu, comp, starts, corners, chunk=2048):
    """Correction to subtract from each corner sample so all four corners
    describe the same one-sided extension as the (on-interface) start point.

    Velocity is continuous, so only derivative jumps contribute: each
    crossing along start -> corner adds sgn * dist_to_corner * [d comp/d e]
    with sgn by crossing direction against the element normal.
    """
    n = len(starts)
    out = np.zeros(n)
    normals = mesh.normals(use_current=True)
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        p0, p1 = starts[sl], corners[sl]
        seg_idx, elem, t, s = _crossings_of_segments(mesh, p0, p1)
        if len(seg_idx) == 0:
            continue
        e_vec = p1[seg_idx] - p0[seg_idx]
        seg_len = np.linalg.norm(e_vec, axis=1)
        ok = seg_len > 0
        e_hat = np.where(ok[:, None], e_vec / np.where(ok, seg_len, 1.0)[:, None], 0.0)
        ndot = np.sum(e_hat * normals[elem], axis=1)
        sgn = np.sign(ndot)
        mat = jumps.eval_mu_grad(elem, s)
        dj = (e_hat[:, 0] * mat[:, comp, 0] + e_hat[:, 1] * mat[:, comp, 1]) / mu
        contrib = sgn * (1.0 - t) * seg_len * dj
        np.add.at(out, seg_idx + lo, contrib)
    return out


def _bilinear_corners(grid, kind, pts):
    """Corner indices and weights of the 4-point stencil around each point."""
    cx, cy = {"u": grid.u_coords, "v": grid.v_coords}[kind]()
    h = grid.h
    fx = (pts[:, 0] - cx[0]) / h
    fy = (pts[:, 1] - cy[0]) / h
    ix = np.floor(fx).astype(int)
    iy = np.floor(fy).astype(int)
    if np.any(ix < 0) or np.any(ix > len(cx) - 2) \
            or np.any(iy < 0) or np.any(iy > len(cy) - 2):
        raise OutOfDomainError("interpolation point outside the grid")
    tx = fx - ix
    ty = fy - iy
    return ix, iy, tx, ty


def interp_velocity(w: VectorField, mesh: InterfaceMesh, jumps: JumpSet | None,
                    mu: float,
                    projector: SurfaceProjector | None = None) -> np.ndarray:
    """Interface nodal velocity: corrected bilinear sampling + CG projection.

    Velocity components are sampled at the interface quadrature points
    with the 4 surrounding same-component faces; sampling arms that cross
    the interface are corrected with the velocity-gradient jumps so the
    interpolant is one-sided. The samples are then L2-projected onto the
    CG basis. Passing jumps=None (or a zero force) reduces to plain
    bilinear interpolation.

    Returns nodal velocities of shape (M, 2).
    """
    grid = w.grid
    proj = projector or SurfaceProjector(mesh, BasisKind.CG)
    elems, s = proj.elems, proj.s
    pts = mesh.points_at(elems, s, use_current=True)
    # nudge the sample point off the interface toward the interior so the
    # crossing search is well-posed; with [u] = 0 the side is immaterial
    normals = mesh.normals(use_current=True)[elems]
    starts = pts - POINT_NUDGE * grid.h * normals

    samples = np.empty((len(pts), 2))
    for comp, (kind, data) in enumerate((("u", w.u), ("v", w.v))):
        ix, iy, tx, ty = _bilinear_corners(grid, kind, pts)
        cx, cy = {"u": grid.u_coords, "v": grid.v_coords}[kind]()
        vals = []
        for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
            corner_vals = data[ix + dx, iy + dy]
            if jumps is not None:
                corners = np.column_stack((cx[ix + dx], cy[iy + dy]))
                corner_vals = corner_vals - _corner_corrections(
                    mesh, jumps, mu, comp, starts, corners)
            vals.append(corner_vals)
        w00, w10, w01, w11 = ((1 - tx) * (1 - ty), tx * (1 - ty),
                              (1 - tx) * ty, tx * ty)
        samples[:, comp] = (w00 * vals[0] + w10 * vals[1]
                            + w01 * vals[2] + w11 * vals[3])
    return proj.project_values(samples).coeffs
