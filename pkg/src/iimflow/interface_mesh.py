"""Piecewise-linear interface meshes with CG/DG linear bases and L2 projection.

The immersed boundary is a polyline of straight elements. Two function
spaces live on it: a continuous (CG) nodal basis where adjacent elements
share their endpoint value, and a discontinuous (DG) basis where every
element owns both of its endpoint values, so fields may jump at shared
nodes. Projection of pointwise data onto either basis is done with
Gauss-Legendre quadrature that is exact through degree 7.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "BasisKind",
    "BasisSpec",
    "InterfaceMesh",
    "QuadratureRule",
    "SurfaceField",
    "SurfaceProjector",
    "build_polyline",
    "element_normal",
    "element_stretch",
    "eval_field",
    "gauss_rule",
    "project",
    "quad_points",
    "read_mesh_text",
    "write_mesh_text",
]


class BasisKind(str, Enum):
    CG = "cg"
    DG = "dg"


@dataclass(frozen=True)
class BasisSpec:
    """Which basis a surface field lives in and how many dofs it has."""

    kind: BasisKind
    dof_count: int

    @staticmethod
    def for_mesh(mesh: "InterfaceMesh", kind: BasisKind) -> "BasisSpec":
        kind = BasisKind(kind)
        n = mesh.num_nodes if kind is BasisKind.CG else 2 * mesh.num_elements
        return BasisSpec(kind, n)


@dataclass(frozen=True)
class QuadratureRule:
    """Reference-element quadrature: points in [0, 1], weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray


def gauss_rule(npts: int = 4) -> QuadratureRule:
    """Gauss-Legendre rule mapped to [0, 1]; npts=4 is exact through degree 7."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return QuadratureRule(points=0.5 * (x + 1.0), weights=0.5 * w)


class InterfaceMesh:
    """Polyline mesh of an immersed boundary.

    Reference node positions stay fixed for the life of the mesh; the
    current positions track the deformed configuration. Closed meshes are
    stored counterclockwise so that element normals (tangent rotated by
    -90 degrees) point into the exterior region.
    """

    def __init__(self, ref_nodes, elements, cur_nodes=None, closed=False,
                 validate=True):
        self.ref_nodes = np.array(ref_nodes, dtype=float)
        self.elements = np.array(elements, dtype=int)
        if cur_nodes is None:
            cur_nodes = self.ref_nodes
        self.cur_nodes = np.array(cur_nodes, dtype=float)
        self.closed = bool(closed)
        if self.elements.ndim != 2 or self.elements.shape[1] != 2:
            raise ValueError("elements must be an (E, 2) index array")
        if self.ref_nodes.shape != self.cur_nodes.shape:
            raise ValueError("ref/cur node arrays differ in shape")
        if validate:
            self._validate()

    # -- construction helpers -------------------------------------------------

    def with_current(self, cur_nodes) -> "InterfaceMesh":
        """New mesh sharing reference geometry, with updated current positions."""
        return InterfaceMesh(self.ref_nodes, self.elements, cur_nodes,
                             closed=self.closed, validate=False)

    def _validate(self):
        M, E = self.num_nodes, self.num_elements
        if E == 0 or M < 2:
            raise ValueError("mesh needs at least one element")
        if np.any(self.elements < 0) or np.any(self.elements >= M):
            raise ValueError("element node index out of range")
        if np.any(self.elements[:, 0] == self.elements[:, 1]):
            raise ValueError("element with repeated node index")
        if np.any(self.ref_lengths() <= 0.0):
            raise ValueError("element with zero reference length")
        if self.closed:
            counts = np.bincount(self.elements.ravel(), minlength=M)
            if np.any(counts != 2):
                raise ValueError("closed mesh must have node degree 2 everywhere")
            # single cycle with consistent orientation: each node appears once
            # as a start and once as an end, and walking the successor map
            # visits every element
            start = self.elements[:, 0]
            if len(np.unique(start)) != E or E != M:
                raise ValueError("closed mesh elements do not form one cycle")
            succ = {a: b for a, b in self.elements}
            seen, node = 0, self.elements[0, 0]
            while seen < E:
                node = succ[node]
                seen += 1
            if node != self.elements[0, 0]:
                raise ValueError("closed mesh elements do not form one cycle")
            if self.signed_area() <= 0.0:
                raise ValueError("closed mesh must be oriented counterclockwise")

    # -- geometry --------------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return self.ref_nodes.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    def _nodes(self, use_current: bool) -> np.ndarray:
        return self.cur_nodes if use_current else self.ref_nodes

    def edge_vectors(self, use_current: bool = True) -> np.ndarray:
        nodes = self._nodes(use_current)
        return nodes[self.elements[:, 1]] - nodes[self.elements[:, 0]]

    def lengths(self, use_current: bool = True) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors(use_current), axis=1)

    def ref_lengths(self) -> np.ndarray:
        return self.lengths(use_current=False)

    def normals(self, use_current: bool = True) -> np.ndarray:
        """Unit element normals, tangent rotated by -90 degrees."""
        t = self.edge_vectors(use_current)
        ln = np.linalg.norm(t, axis=1)
        if np.any(ln <= 0.0):
            raise ValueError("degenerate element while computing normals")
        return np.column_stack((t[:, 1], -t[:, 0])) / ln[:, None]

    def stretches(self) -> np.ndarray:
        """Current over reference length per element (da/dA)."""
        return self.lengths(True) / self.lengths(False)

    def signed_area(self) -> float:
        a = self.ref_nodes[self.elements[:, 0]]
        b = self.ref_nodes[self.elements[:, 1]]
        return 0.5 * float(np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))

    def points_at(self, elems, s, use_current: bool = True) -> np.ndarray:
        """Positions at local coordinates s within the given elements."""
        nodes = self._nodes(use_current)
        elems = np.asarray(elems, dtype=int)
        s = np.asarray(s, dtype=float)[..., None]
        a = nodes[self.elements[elems, 0]]
        b = nodes[self.elements[elems, 1]]
        return (1.0 - s) * a + s * b


def element_normal(mesh: InterfaceMesh, e: int, use_current: bool = True) -> np.ndarray:
    t = mesh.edge_vectors(use_current)[e]
    ln = np.linalg.norm(t)
    if ln <= 0.0:
        raise ValueError(f"element {e} is degenerate")
    return np.array([t[1], -t[0]]) / ln


def element_stretch(mesh: InterfaceMesh, e: int) -> float:
    lref = mesh.lengths(False)[e]
    if lref <= 0.0:
        raise ValueError(f"element {e} has zero reference length")
    return float(mesh.lengths(True)[e] / lref)


def quad_points(mesh: InterfaceMesh, rule: QuadratureRule | None = None,
                use_current: bool = True):
    """Quadrature points over the whole mesh.

    Returns (elems, s, xy, w): element index, local coordinate, position and
    weight per point. Weights are scaled by element length in the chosen
    configuration, so summing them gives the total interface length.
    """
    rule = rule or gauss_rule()
    E = mesh.num_elements
    nq = len(rule.points)
    elems = np.repeat(np.arange(E), nq)
    s = np.tile(rule.points, E)
    w = np.outer(mesh.lengths(use_current), rule.weights).ravel()
    xy = mesh.points_at(elems, s, use_current=use_current)
    return elems, s, xy, w


# -- surface fields -----------------------------------------------------------


@dataclass
class SurfaceField:
    """Coefficients of a (possibly multi-component) field in a surface basis.

    coeffs has shape (dof_count, components). Within any element the field
    is affine in the local coordinate.
    """

    basis: BasisSpec
    coeffs: np.ndarray
    components: int = 1

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim == 1:
            self.coeffs = self.coeffs[:, None]
        if self.coeffs.shape != (self.basis.dof_count, self.components):
            raise ValueError("coefficient array shape does not match basis")

    def dofs_of_element(self, mesh: InterfaceMesh, e) -> np.ndarray:
        e = np.asarray(e, dtype=int)
        if self.basis.kind is BasisKind.CG:
            return mesh.elements[e]
        return np.stack((2 * e, 2 * e + 1), axis=-1)

    def eval(self, mesh: InterfaceMesh, e, s) -> np.ndarray:
        """Field values at local coordinates s of elements e."""
        e = np.atleast_1d(np.asarray(e, dtype=int))
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < -1e-12) or np.any(s > 1.0 + 1e-12):
            raise ValueError("local coordinate outside [0, 1]")
        dofs = self.dofs_of_element(mesh, e)
        c0 = self.coeffs[dofs[..., 0]]
        c1 = self.coeffs[dofs[..., 1]]
        return (1.0 - s)[..., None] * c0 + s[..., None] * c1


def eval_field(field: SurfaceField, mesh: InterfaceMesh, e: int, s: float):
    """Evaluate a surface field at one point; scalar fields return a float."""
    out = field.eval(mesh, e, s)[0]
    return float(out[0]) if field.components == 1 else out


class SurfaceProjector:
    """Reusable L2 projector onto a CG or DG basis of a fixed mesh.

    Mass matrices use the reference-configuration measure. The CG mass
    matrix is factorized once (sparse direct); the DG mass matrix is
    block-diagonal 2x2 and inverted in closed form.
    """

    def __init__(self, mesh: InterfaceMesh, kind: BasisKind,
                 rule: QuadratureRule | None = None):
        self.mesh = mesh
        self.kind = BasisKind(kind)
        self.rule = rule or gauss_rule()
        self.basis = BasisSpec.for_mesh(mesh, self.kind)
        self.elems, self.s, _, self.w_ref = quad_points(mesh, self.rule,
                                                        use_current=False)
        lref = mesh.ref_lengths()
        if self.kind is BasisKind.CG:
            E = mesh.num_elements
            a, b = mesh.elements[:, 0], mesh.elements[:, 1]
            diag, off = lref / 3.0, lref / 6.0
            rows = np.concatenate([a, b, a, b])
            cols = np.concatenate([a, b, b, a])
            vals = np.concatenate([diag, diag, off, off])
            M = sp.coo_matrix((vals, (rows, cols)),
                              shape=(self.basis.dof_count,) * 2).tocsc()
            self._mass_lu = spla.splu(M)
            self._mass = M
        else:
            # inverse of l * [[1/3, 1/6], [1/6, 1/3]] per element
            self._dg_inv = np.empty((mesh.num_elements, 2, 2))
            self._dg_inv[:, 0, 0] = self._dg_inv[:, 1, 1] = 4.0 / lref
            self._dg_inv[:, 0, 1] = self._dg_inv[:, 1, 0] = -2.0 / lref

    def project_values(self, values: np.ndarray) -> SurfaceField:
        """Project samples given at this projector's quadrature points."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        ncomp = values.shape[1]
        wv = self.w_ref[:, None] * values
        phi0, phi1 = (1.0 - self.s)[:, None], self.s[:, None]
        if self.kind is BasisKind.CG:
            rhs = np.zeros((self.basis.dof_count, ncomp))
            dofs = self.mesh.elements[self.elems]
            np.add.at(rhs, dofs[:, 0], phi0 * wv)
            np.add.at(rhs, dofs[:, 1], phi1 * wv)
            coeffs = self._mass_lu.solve(rhs)
        else:
            E = self.mesh.num_elements
            nq = len(self.rule.points)
            b = np.empty((E, 2, ncomp))
            b[:, 0] = (phi0 * wv).reshape(E, nq, ncomp).sum(axis=1)
            b[:, 1] = (phi1 * wv).reshape(E, nq, ncomp).sum(axis=1)
            coeffs = np.einsum("eij,ejc->eic", self._dg_inv, b).reshape(2 * E, ncomp)
        return SurfaceField(self.basis, coeffs, components=ncomp)

    def project(self, sampler) -> SurfaceField:
        vals = np.asarray(sampler(self.elems, self.s), dtype=float)
        return self.project_values(vals)


def project(mesh: InterfaceMesh, basis, sampler,
            rule: QuadratureRule | None = None) -> SurfaceField:
    """L2-project pointwise data onto a surface basis.

    sampler(elems, s) is called with index/coordinate arrays covering the
    quadrature points and must return values of shape (n,) or (n, ncomp).
    """
    kind = basis.kind if isinstance(basis, BasisSpec) else BasisKind(basis)
    return SurfaceProjector(mesh, kind, rule).project(sampler)


# -- geometry construction ----------------------------------------------------


def _cross2(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def _segments_properly_intersect(p0, p1, q0, q1) -> bool:
    d1 = _cross2(q1 - q0, p0 - q0)
    d2 = _cross2(q1 - q0, p1 - q0)
    d3 = _cross2(p1 - p0, q0 - p0)
    d4 = _cross2(p1 - p0, q1 - p0)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def build_polyline(vertices, target_h: float, closed: bool = False) -> InterfaceMesh:
    """Mesh a polyline, splitting each input edge into equal segments.

    Every input vertex becomes a mesh node, which keeps sharp corners on
    element boundaries. Closed inputs are reoriented counterclockwise if
    needed. Raises on self-intersecting input or zero-length edges.
    """
    if target_h <= 0.0:
        raise ValueError("target_h must be positive")
    verts = np.array(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 2:
        raise ValueError("need at least two 2D vertices")
    if closed:
        area = 0.5 * np.sum(verts[:, 0] * np.roll(verts[:, 1], -1)
                            - np.roll(verts[:, 0], -1) * verts[:, 1])
        if area < 0.0:
            verts = verts[::-1]
        edges = list(zip(verts, np.roll(verts, -1, axis=0)))
    else:
        edges = list(zip(verts[:-1], verts[1:]))

    for a, b in edges:
        if np.linalg.norm(b - a) <= 0.0:
            raise ValueError("zero-length edge in input polyline")
    n_edges = len(edges)
    for i in range(n_edges):
        for j in range(i + 1, n_edges):
            adjacent = (j == i + 1) or (closed and i == 0 and j == n_edges - 1)
            if adjacent:
                continue
            if _segments_properly_intersect(*edges[i], *edges[j]):
                raise ValueError("self-intersecting input polyline")

    nodes: list[np.ndarray] = []
    for a, b in edges:
        nseg = int(np.ceil(np.linalg.norm(b - a) / target_h))
        for k in range(nseg):
            nodes.append(a + (b - a) * (k / nseg))
    if not closed:
        nodes.append(verts[-1])
    nodes_arr = np.array(nodes)
    M = len(nodes_arr)
    if closed:
        elements = np.column_stack((np.arange(M), (np.arange(M) + 1) % M))
    else:
        elements = np.column_stack((np.arange(M - 1), np.arange(1, M)))
    return InterfaceMesh(nodes_arr, elements, closed=closed)


def merge_meshes(meshes) -> InterfaceMesh:
    """Concatenate open meshes (disjoint chains) into one open mesh."""
    ref, cur, elems, offset = [], [], [], 0
    for m in meshes:
        if m.closed:
            raise ValueError("merge_meshes only supports open meshes")
        ref.append(m.ref_nodes)
        cur.append(m.cur_nodes)
        elems.append(m.elements + offset)
        offset += m.num_nodes
    return InterfaceMesh(np.vstack(ref), np.vstack(elems), np.vstack(cur),
                         closed=False, validate=False)


# -- plain-text mesh I/O ------------------------------------------------------


def write_mesh_text(mesh: InterfaceMesh, path) -> None:
    with open(path, "w") as f:
        f.write(f"nodes {mesh.num_nodes} elements {mesh.num_elements} "
                f"closed {int(mesh.closed)}\n")
        for x, y in mesh.ref_nodes:
            f.write(f"{x:.17g} {y:.17g}\n")
        for a, b in mesh.elements:
            f.write(f"{a} {b}\n")


def read_mesh_text(path) -> InterfaceMesh:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 6 or header[0] != "nodes" or header[2] != "elements" \
                or header[4] != "closed":
            raise ValueError("bad mesh file header")
        M, E, closed = int(header[1]), int(header[3]), bool(int(header[5]))
        nodes = np.array([[float(v) for v in f.readline().split()]
                          for _ in range(M)])
        elems = np.array([[int(v) for v in f.readline().split()]
                          for _ in range(E)])
    return InterfaceMesh(nodes, elems, closed=closed)
