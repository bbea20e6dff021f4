"""Simplicial meshes, compartment markers, and facet machinery.

Meshes are plain vertex/cell arrays with topological dimension 1, 2 or 3 and
an embedding dimension that may exceed the topological one only for 1D
segment meshes (thin-tube media living in 3D space). Facets are the
(topo_dim-1)-subsimplices of the cells; a vertex for interval meshes, an
edge for triangles, a triangle for tetrahedra.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCellError, MeshError, PeriodicPairingError

_FACTORIAL = (1.0, 1.0, 2.0, 6.0)


class Mesh:
    """Simplicial mesh with facet-to-cell adjacency.

    Parameters
    ----------
    vertices : (n_vertices, embed_dim) float array, coordinates in um.
    cells : (n_cells, topo_dim + 1) int array of vertex indices.
    """

    def __init__(self, vertices, cells):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        if self.vertices.ndim == 1:
            self.vertices = self.vertices[:, None]
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        if self.vertices.ndim != 2 or self.cells.ndim != 2:
            raise MeshError("vertices and cells must be 2-d arrays")
        self.embed_dim = self.vertices.shape[1]
        self.topo_dim = self.cells.shape[1] - 1
        if self.embed_dim not in (1, 2, 3) or self.topo_dim not in (1, 2, 3):
            raise MeshError(f"unsupported dimensions embed={self.embed_dim} topo={self.topo_dim}")
        if self.topo_dim > self.embed_dim:
            raise MeshError("topological dimension exceeds embedding dimension")
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= len(self.vertices)):
            raise MeshError("cell vertex index out of bounds")
        self._build_facets()

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    def _build_facets(self):
        d = self.topo_dim
        table = {}
        # facet i of a cell is the subsimplex omitting local vertex i
        for c, cell in enumerate(self.cells):
            for omit in range(d + 1):
                key = tuple(sorted(np.delete(cell, omit)))
                table.setdefault(key, []).append((c, omit))
        self.facets = np.array(sorted(table.keys()), dtype=np.int64).reshape(len(table), d)
        self.facet_cells = []
        self.facet_local = []
        for key in map(tuple, self.facets):
            inc = table[key]
            self.facet_cells.append(np.array([c for c, _ in inc], dtype=np.int64))
            self.facet_local.append(np.array([o for _, o in inc], dtype=np.int64))
        ninc = np.array([len(c) for c in self.facet_cells])
        self.boundary_facets = np.nonzero(ninc == 1)[0]
        self.interior_facets = np.nonzero(ninc >= 2)[0]
        # junction facets (>2 incident cells) only make sense on 1D networks
        if self.topo_dim >= 2 and np.any(ninc > 2):
            bad = int(np.nonzero(ninc > 2)[0][0])
            raise MeshError(f"facet {bad} has {ninc[bad]} incident cells (non-manifold mesh)")

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def cell_midpoints(self):
        return self.vertices[self.cells].mean(axis=1)

    def boundary_vertices(self):
        ids = np.unique(self.facets[self.boundary_facets].ravel())
        return ids


@dataclass
class MeshGeometry:
    """Per-cell and per-facet geometry tables for P1 assembly."""

    cell_measures: np.ndarray          # (n_cells,)
    cell_grads: np.ndarray             # (n_cells, topo_dim+1, embed_dim)
    cell_diameters: np.ndarray         # (n_cells,)
    facet_measures: np.ndarray         # (n_facets,)
    facet_normals: np.ndarray          # (n_facets, embed_dim), outward from facet_cells[0]


def _simplex_measure(coords):
    """Measure of a k-simplex embedded in R^e from its (k+1, e) vertex block."""
    k = coords.shape[0] - 1
    if k == 0:
        return 1.0
    edges = coords[1:] - coords[0]
    gram = edges @ edges.T
    det = np.linalg.det(gram)
    if det <= 0.0:
        return 0.0
    return float(np.sqrt(det)) / _FACTORIAL[k]


def geometry_tables(mesh: Mesh) -> MeshGeometry:
    """Compute cell measures, P1 basis gradients, facet measures and normals.

    Gradients are tangential for segment meshes embedded in higher dimension.
    Raises DegenerateCellError for zero-measure cells.
    """
    d, e = mesh.topo_dim, mesh.embed_dim
    nc = mesh.num_cells
    coords = mesh.vertices[mesh.cells]                      # (nc, d+1, e)
    edges = coords[:, 1:, :] - coords[:, :1, :]             # (nc, d, e)
    gram = np.einsum("cie,cje->cij", edges, edges)
    det = np.linalg.det(gram)
    bad = np.nonzero(det <= 0.0)[0]
    if bad.size:
        raise DegenerateCellError(int(bad[0]), "zero or negative Gram determinant")
    measures = np.sqrt(det) / _FACTORIAL[d]
    # barycentric gradients: grad(lambda_m) for m>=1 are rows of G^{-1} E,
    # the tangential least-squares inverse of the edge map; lambda_0 closes the sum.
    ginv = np.linalg.inv(gram)
    grads_rest = np.einsum("cij,cje->cie", ginv, edges)     # (nc, d, e)
    grads = np.empty((nc, d + 1, e))
    grads[:, 1:, :] = grads_rest
    grads[:, 0, :] = -grads_rest.sum(axis=1)
    diffs = coords[:, :, None, :] - coords[:, None, :, :]
    diameters = np.sqrt((diffs ** 2).sum(axis=-1)).max(axis=(1, 2))

    nf = len(mesh.facets)
    fmeas = np.empty(nf)
    fnorm = np.empty((nf, e))
    for f in range(nf):
        fverts = mesh.vertices[mesh.facets[f]]
        fmeas[f] = _simplex_measure(fverts)
        c0 = mesh.facet_cells[f][0]
        omit = mesh.facet_local[f][0]
        opp = mesh.vertices[mesh.cells[c0, omit]]
        # outward direction = (facet centroid - opposite vertex), with the
        # in-plane part removed via modified Gram-Schmidt on the facet edges
        w = fverts.mean(axis=0) - opp
        basis = []
        for s in fverts[1:] - fverts[0]:
            for b in basis:
                s = s - (s @ b) * b
            s_norm = np.linalg.norm(s)
            if s_norm > 0.0:
                basis.append(s / s_norm)
        for b in basis:
            w = w - (w @ b) * b
        nw = np.linalg.norm(w)
        if nw == 0.0:
            raise DegenerateCellError(int(c0), f"cannot orient facet {f}")
        fnorm[f] = w / nw
    return MeshGeometry(measures, grads, diameters, fmeas, fnorm)


def phase_from_marker(marker) -> np.ndarray:
    """Two-group phase indicator: marker parity (even -> 0, odd -> 1)."""
    marker = np.asarray(marker, dtype=np.int64)
    if np.any(marker < 0):
        raise ValueError("compartment markers must be non-negative")
    return (marker % 2).astype(np.int64)


@dataclass
class InterfaceFacetSet:
    """Interior facets separating phase-0 from phase-1 cells.

    Normals are the phase-0 outward direction (pointing into the phase-1
    cell); cells0/cells1 hold the incident cell on each side.
    """

    facet_ids: np.ndarray
    cells0: np.ndarray
    cells1: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.facet_ids)


def interface_facets(mesh: Mesh, phase, geo: MeshGeometry | None = None) -> InterfaceFacetSet:
    """Collect interior facets whose two incident cells differ in phase."""
    phase = np.asarray(phase, dtype=np.int64)
    if len(phase) != mesh.num_cells:
        raise ValueError("phase length does not match cell count")
    if geo is None:
        geo = geometry_tables(mesh)
    ids, c0s, c1s, normals = [], [], [], []
    for f in mesh.interior_facets:
        inc = mesh.facet_cells[f]
        ph = phase[inc]
        if ph.min() == ph.max():
            continue
        if len(inc) != 2:
            raise MeshError(f"facet {f}: phase change at a junction with {len(inc)} cells")
        a, b = inc
        if phase[a] == 0:
            c0, c1 = a, b
        else:
            c0, c1 = b, a
        n = geo.facet_normals[f]
        # stored normal points away from facet_cells[f][0]
        if c0 != inc[0]:
            n = -n
        ids.append(f)
        c0s.append(c0)
        c1s.append(c1)
        normals.append(n)
    if not ids:
        return InterfaceFacetSet(
            np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64), np.empty((0, mesh.embed_dim)))
    return InterfaceFacetSet(np.array(ids), np.array(c0s), np.array(c1s), np.array(normals))


@dataclass
class FacetPairing:
    """Bijection between the two boundary faces of a box along one axis.

    master is the face at the lower coordinate a_k, slave the one at b_k;
    vertex_map pairs master vertices with their translated slave copies.
    """

    axis: int
    shift: float
    shift_vector: np.ndarray
    facet_map: dict = field(default_factory=dict)    # master facet id -> slave facet id
    vertex_map: dict = field(default_factory=dict)   # master vertex id -> slave vertex id


def find_periodic_pairs(mesh: Mesh, axis: int, tol: float | None = None) -> FacetPairing:
    """Pair boundary facets on the two faces x_axis = a_k and x_axis = b_k.

    tol defaults to 1e-9 relative to the box extent along the axis. Raises
    PeriodicPairingError (reporting the facet centroid) if any facet on
    either face has no translated partner.
    """
    lo, hi = mesh.bounding_box()
    if axis < 0 or axis >= mesh.embed_dim:
        raise ValueError(f"axis {axis} out of range for embedding dimension {mesh.embed_dim}")
    extent = hi[axis] - lo[axis]
    if extent <= 0:
        raise MeshError(f"mesh has zero extent along axis {axis}")
    if tol is None:
        tol = 1e-9 * extent
    coords = mesh.vertices[:, axis]

    def _face_facets(value):
        out = []
        for f in mesh.boundary_facets:
            if np.all(np.abs(coords[mesh.facets[f]] - value) <= tol):
                out.append(f)
        return out

    masters = _face_facets(lo[axis])
    slaves = _face_facets(hi[axis])
    if not masters or len(masters) != len(slaves):
        raise PeriodicPairingError(
            f"axis {axis}: {len(masters)} master vs {len(slaves)} slave facets")

    shift = np.zeros(mesh.embed_dim)
    shift[axis] = extent

    slave_centroids = np.array([mesh.vertices[mesh.facets[f]].mean(axis=0) for f in slaves])
    ctree = cKDTree(slave_centroids)
    slave_verts = sorted(set(mesh.facets[slaves].ravel().tolist()))
    vtree = cKDTree(mesh.vertices[slave_verts])

    facet_map, vertex_map, used = {}, {}, set()
    for f in masters:
        target = mesh.vertices[mesh.facets[f]].mean(axis=0) + shift
        dist, j = ctree.query(target)
        if dist > tol * 10 or slaves[j] in used:
            centroid = mesh.vertices[mesh.facets[f]].mean(axis=0)
            raise PeriodicPairingError(
                f"axis {axis}: unmatched master facet with centroid {centroid.tolist()}")
        used.add(slaves[j])
        facet_map[int(f)] = int(slaves[j])
    master_verts = sorted(set(mesh.facets[masters].ravel().tolist()))
    for v in master_verts:
        dist, j = vtree.query(mesh.vertices[v] + shift)
        if dist > tol * 10:
            raise PeriodicPairingError(
                f"axis {axis}: unmatched boundary vertex at {mesh.vertices[v].tolist()}")
        vertex_map[int(v)] = int(slave_verts[j])
    if len(set(vertex_map.values())) != len(vertex_map):
        raise PeriodicPairingError(f"axis {axis}: vertex pairing is not a bijection")

    return FacetPairing(axis=axis, shift=float(extent), shift_vector=shift,
                        facet_map=facet_map, vertex_map=vertex_map)


def build_structured_mesh(p0, p1, n) -> Mesh:
    """Structured interval/rectangle/box mesh.

    1D boxes become intervals, 2D rectangles split into 2 triangles per
    quad with a uniform diagonal, 3D boxes into 6 tetrahedra per hexahedron
    (Kuhn decomposition). Opposite faces are exact translational copies, so
    the mesh always admits periodic pairing.
    """
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    p1 = np.atleast_1d(np.asarray(p1, dtype=float))
    n = np.atleast_1d(np.asarray(n, dtype=np.int64))
    dim = len(p0)
    if len(p1) != dim or len(n) != dim:
        raise ValueError("p0, p1, n must have equal lengths")
    if np.any(p1 <= p0):
        raise ValueError("p1 must exceed p0 componentwise")
    if np.any(n < 1):
        raise ValueError("subdivision counts must be >= 1")

    axes = [np.linspace(p0[k], p1[k], n[k] + 1) for k in range(dim)]
    if dim == 1:
        verts = axes[0][:, None]
        cells = np.stack([np.arange(n[0]), np.arange(1, n[0] + 1)], axis=1)
        return Mesh(verts, cells)

    if dim == 2:
        nx, ny = n
        xs, ys = np.meshgrid(axes[0], axes[1], indexing="ij")
        verts = np.stack([xs.ravel(order="F"), ys.ravel(order="F")], axis=1)

        def vid(i, j):
            return j * (nx + 1) + i

        cells = []
        for j in range(ny):
            for i in range(nx):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
        return Mesh(verts, np.array(cells))

    nx, ny, nz = n
    verts = np.array(list(itertools.product(axes[2], axes[1], axes[0])))[:, ::-1]

    def vid3(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    perms = list(itertools.permutations(range(3)))
    cells = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                base = np.array([i, j, k])
                for perm in perms:
                    path = [base.copy()]
                    for ax in perm:
                        nxt = path[-1].copy()
                        nxt[ax] += 1
                        path.append(nxt)
                    cells.append(tuple(vid3(*p) for p in path))
    return Mesh(verts, np.array(cells))


def marker_from_axis_breaks(mesh: Mesh, axis: int, breaks) -> np.ndarray:
    """Layered compartment marker: index of the slab containing each cell midpoint."""
    breaks = np.sort(np.asarray(breaks, dtype=float))
    mid = mesh.cell_midpoints()[:, axis]
    return np.searchsorted(breaks, mid).astype(np.int64)


def build_branched_tree(depth: int = 6, trunk: float = 20.0, h: float = 1.0,
                        angle: float = 0.55, shrink: float = 0.78) -> Mesh:
    """Deterministic binary branching tree of 1D segments embedded in 3D.

    Models a dendrite-like thin-tube geometry: a trunk along +z splits into
    two children per level, tilted by +-angle in alternating planes, each
    level shrunk by the given factor. Branches are subdivided into segments
    of length <= h. Junction vertices have three incident cells.
    """
    verts = [np.zeros(3)]
    cells = []

    def add_branch(start_idx, direction, length):
        start = verts[start_idx]
        nseg = max(1, int(np.ceil(length / h)))
        prev = start_idx
        for i in range(1, nseg + 1):
            p = start + direction * (length * i / nseg)
            verts.append(p)
            cells.append((prev, len(verts) - 1))
            prev = len(verts) - 1
        return prev

    def rotate(direction, axis, ang):
        axis = axis / np.linalg.norm(axis)
        c, s = np.cos(ang), np.sin(ang)
        return (direction * c + np.cross(axis, direction) * s
                + axis * (axis @ direction) * (1.0 - c))

    def grow(node, direction, length, level):
        tip = add_branch(node, direction, length)
        if level >= depth:
            return
        # alternate the branching plane so the tree fills 3D space
        plane = np.array([1.0, 0.0, 0.0]) if level % 2 == 0 else np.array([0.0, 1.0, 0.0])
        axis = np.cross(direction, plane)
        if np.linalg.norm(axis) < 1e-12:
            axis = np.array([0.0, 1.0, 0.0])
        for sign in (+1.0, -1.0):
            child = rotate(direction, axis, sign * angle)
            child = child / np.linalg.norm(child)
            grow(tip, child, length * shrink, level + 1)

    grow(0, np.array([0.0, 0.0, 1.0]), trunk, 1)
    return Mesh(np.array(verts), np.array(cells, dtype=np.int64))
