"""P1 finite-element assembly of the time-independent constituent matrices.

Every matrix is stored as complex CSR even when its values are real: the
per-step combinations are complex and mixing dtypes buys nothing. Volume
terms are indicator-weighted (field 0 integrates over phase-0 cells only,
field 1 over phase-1 cells), so in the two-field layout they never couple
fields; only the interface matrices do.

Quadrature is exact for every term: closed-form simplex mass, gradients are
cell-wise constant, and affine weights use the exact cubic moment tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp

from .mesh import InterfaceFacetSet, Mesh, MeshGeometry

#: default T2 when relaxation is off (effectively infinite, in us)
T2_INFINITE = 1e16


@dataclass
class DofLayout:
    """Vertex-based dof numbering for one or two overlapping P1 fields.

    In 'pufem' mode field k has a dof at a vertex only when the vertex
    touches at least one phase-k cell; the indicator-weighted forms carry
    no information elsewhere and keeping such dofs would produce zero rows.
    """

    mode: str
    vertex_dofs: np.ndarray      # (n_fields, n_vertices), -1 where absent
    ndof: int
    dof_vertex: np.ndarray       # (ndof,) vertex of each dof
    dof_field: np.ndarray        # (ndof,) field of each dof

    @property
    def n_fields(self):
        return self.vertex_dofs.shape[0]

    @classmethod
    def single(cls, mesh: Mesh) -> "DofLayout":
        nv = mesh.num_vertices
        vd = np.arange(nv, dtype=np.int64)[None, :]
        return cls("single", vd, nv, np.arange(nv, dtype=np.int64),
                   np.zeros(nv, dtype=np.int64))

    @classmethod
    def pufem(cls, mesh: Mesh, phase) -> "DofLayout":
        phase = np.asarray(phase, dtype=np.int64)
        nv = mesh.num_vertices
        vd = -np.ones((2, nv), dtype=np.int64)
        support = [np.zeros(nv, bool), np.zeros(nv, bool)]
        for k in (0, 1):
            cells_k = mesh.cells[phase == k]
            if cells_k.size:
                support[k][np.unique(cells_k.ravel())] = True
        ndof = 0
        dv, df = [], []
        for k in (0, 1):
            ids = np.nonzero(support[k])[0]
            vd[k, ids] = ndof + np.arange(len(ids))
            ndof += len(ids)
            dv.extend(ids.tolist())
            df.extend([k] * len(ids))
        return cls("pufem", vd, ndof, np.array(dv, dtype=np.int64),
                   np.array(df, dtype=np.int64))

    def field_dofs_for_cells(self, cells_verts: np.ndarray, k: int) -> np.ndarray:
        dofs = self.vertex_dofs[k][cells_verts]
        if np.any(dofs < 0):
            raise ValueError(f"field {k} lacks dofs on some requested vertices")
        return dofs


def promote_diffusion(D, n_cells: int, embed_dim: int) -> np.ndarray:
    """Normalize scalar / per-cell / tensor diffusion input to (nc, e, e)."""
    eye = np.eye(embed_dim)
    D = np.asarray(D, dtype=float)
    if D.ndim == 0:
        out = np.broadcast_to(float(D) * eye, (n_cells, embed_dim, embed_dim)).copy()
    elif D.ndim == 1:
        if len(D) != n_cells:
            raise ValueError("per-cell diffusivity length mismatch")
        out = D[:, None, None] * eye[None, :, :]
    elif D.ndim == 2:
        if D.shape != (embed_dim, embed_dim):
            raise ValueError(f"tensor must be {embed_dim}x{embed_dim}")
        out = np.broadcast_to(D, (n_cells, embed_dim, embed_dim)).copy()
    elif D.shape == (n_cells, embed_dim, embed_dim):
        out = D.copy()
    else:
        raise ValueError(f"cannot interpret diffusion array of shape {D.shape}")
    return out


def check_spd(D_cells: np.ndarray):
    """Reject asymmetric or non-positive-definite cell tensors by cell id."""
    asym = np.abs(D_cells - np.transpose(D_cells, (0, 2, 1))).max(axis=(1, 2))
    scale = np.abs(D_cells).max(axis=(1, 2)) + 1e-300
    bad = np.nonzero(asym > 1e-12 * scale)[0]
    if bad.size:
        raise ValueError(f"diffusion tensor on cell {int(bad[0])} is not symmetric")
    eig = np.linalg.eigvalsh(D_cells)
    bad = np.nonzero(eig[:, 0] <= 0.0)[0]
    if bad.size:
        raise ValueError(f"diffusion tensor on cell {int(bad[0])} is not positive definite")


def _mass_pattern(nloc: int) -> np.ndarray:
    return np.ones((nloc, nloc)) + np.eye(nloc)


def _cubic_moment_tensor(d: int) -> np.ndarray:
    """T[k,i,j] = int phi_k phi_i phi_j / |K| on a d-simplex (exact)."""
    n = d + 1
    T = np.empty((n, n, n))
    for k in range(n):
        for i in range(n):
            for j in range(n):
                counts = np.bincount([k, i, j], minlength=n)
                num = factorial(d)
                for c in counts:
                    num *= factorial(c)
                T[k, i, j] = num / factorial(d + 3)
    return T


def _accumulate(layout, rows, cols, vals, shape=None):
    shape = shape or (layout.ndof, layout.ndof)
    A = sp.coo_matrix((np.concatenate(vals).astype(complex),
                       (np.concatenate(rows), np.concatenate(cols))), shape=shape)
    return A.tocsr()


def _volume_assemble(mesh, layout, phase, local_fn):
    """Sum local (nc_k, nloc, nloc) blocks per field into a global matrix."""
    phase = np.asarray(phase, dtype=np.int64)
    rows, cols, vals = [], [], []
    for k in range(layout.n_fields):
        sel = np.nonzero(phase == k)[0] if layout.mode == "pufem" else np.arange(mesh.num_cells)
        if not sel.size:
            continue
        loc = local_fn(sel)                                  # (nsel, nloc, nloc)
        dofs = layout.field_dofs_for_cells(mesh.cells[sel], k)
        nloc = dofs.shape[1]
        rows.append(np.repeat(dofs, nloc, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nloc)).ravel())
        vals.append(loc.ravel())
    if not rows:
        return sp.csr_matrix((layout.ndof, layout.ndof), dtype=complex)
    return _accumulate(layout, rows, cols, vals)


def assemble_mass(mesh: Mesh, geo: MeshGeometry, layout: DofLayout, phase) -> sp.csr_matrix:
    """Indicator-weighted P1 mass matrix."""
    d = mesh.topo_dim
    pat = _mass_pattern(d + 1) / ((d + 1) * (d + 2))

    def local(sel):
        return geo.cell_measures[sel, None, None] * pat[None, :, :]

    return _volume_assemble(mesh, layout, phase, local)


def assemble_stiffness(mesh: Mesh, geo: MeshGeometry, layout: DofLayout, phase,
                       D_cells: np.ndarray) -> sp.csr_matrix:
    """Stiffness with cell-wise tensor: sum |K| (grad phi_i . D grad phi_j)."""
    check_spd(D_cells)

    def local(sel):
        g = geo.cell_grads[sel]                              # (n, nloc, e)
        Dg = np.einsum("cde,cje->cjd", D_cells[sel], g)
        return geo.cell_measures[sel, None, None] * np.einsum("cid,cjd->cij", g, Dg)

    return _volume_assemble(mesh, layout, phase, local)


def assemble_weighted_mass(mesh: Mesh, geo: MeshGeometry, layout: DofLayout, phase,
                           cell_weights=None, affine=None) -> sp.csr_matrix:
    """Mass weighted by a cell-wise constant or by the affine function q . x.

    Affine weights are integrated exactly (degree-3 moments); the two
    options are mutually exclusive.
    """
    if (cell_weights is None) == (affine is None):
        raise ValueError("exactly one of cell_weights or affine is required")
    d = mesh.topo_dim
    if cell_weights is not None:
        w = np.asarray(cell_weights, dtype=float)
        if len(w) != mesh.num_cells:
            raise ValueError("cell weight length mismatch")
        pat = _mass_pattern(d + 1) / ((d + 1) * (d + 2))

        def local(sel):
            return (w[sel] * geo.cell_measures[sel])[:, None, None] * pat[None, :, :]

        return _volume_assemble(mesh, layout, phase, local)

    q = np.asarray(affine, dtype=float)[: mesh.embed_dim]
    T = _cubic_moment_tensor(d)
    wv = mesh.vertices @ q                                   # weight at every vertex

    def local(sel):
        wloc = wv[mesh.cells[sel]]                           # (n, nloc)
        return geo.cell_measures[sel, None, None] * np.einsum("ck,kij->cij", wloc, T)

    return _volume_assemble(mesh, layout, phase, local)


def assemble_t2_mass(mesh, geo, layout, phase, T2_cells) -> sp.csr_matrix:
    """Mass weighted by 1/T2 cell-wise."""
    T2 = np.asarray(T2_cells, dtype=float)
    if np.any(T2 <= 0.0):
        raise ValueError("T2 must be positive (use a large value for no relaxation)")
    return assemble_weighted_mass(mesh, geo, layout, phase, cell_weights=1.0 / T2)


def assemble_convection(mesh: Mesh, geo: MeshGeometry, layout: DofLayout, phase,
                        D_cells: np.ndarray, direction) -> sp.csr_matrix:
    """(q . D grad u, v) + (grad u . D q, v) = 2 (q . D grad u, v) for symmetric D."""
    check_spd(D_cells)
    q = np.asarray(direction, dtype=float)[: mesh.embed_dim]
    d = mesh.topo_dim

    def local(sel):
        qD = np.einsum("e,cde->cd", q, D_cells[sel])
        row = 2.0 * np.einsum("cd,cjd->cj", qD, geo.cell_grads[sel])
        loc = np.repeat(row[:, None, :], d + 1, axis=1)      # same for every test fn
        return geo.cell_measures[sel, None, None] / (d + 1) * loc

    return _volume_assemble(mesh, layout, phase, local)


def _facet_mass_pattern(topo_dim: int) -> np.ndarray:
    nloc = topo_dim                                          # facet has topo_dim vertices
    df = topo_dim - 1
    return _mass_pattern(nloc) / ((df + 1) * (df + 2))


def assemble_interface(mesh: Mesh, geo: MeshGeometry, layout: DofLayout,
                       interface: InterfaceFacetSet, kappa: float) -> sp.csr_matrix:
    """kappa-scaled jump-jump coupling kappa <[[u]], [[v]]> over the interface.

    With [[a]] = a0 - a1 the four field blocks carry signs (+, -, -, +)
    around the facet P1 mass; equal fields are annihilated exactly.
    """
    if layout.mode != "pufem":
        raise ValueError("interface assembly requires the two-field layout")
    if kappa < 0.0:
        raise ValueError("permeability must be non-negative")
    pat = _facet_mass_pattern(mesh.topo_dim)
    signs = np.array([[1.0, -1.0], [-1.0, 1.0]])
    rows, cols, vals = [], [], []
    for f in interface.facet_ids:
        fverts = mesh.facets[f]
        mloc = kappa * geo.facet_measures[f] * pat
        dofs = [layout.vertex_dofs[k][fverts] for k in (0, 1)]
        for a in (0, 1):
            if np.any(dofs[a] < 0):
                raise ValueError(f"interface facet {f}: field {a} lacks support")
        for a in (0, 1):
            for b in (0, 1):
                block = signs[a, b] * mloc
                rows.append(np.repeat(dofs[a], len(fverts)))
                cols.append(np.tile(dofs[b], len(fverts)))
                vals.append(block.ravel())
    if not rows:
        return sp.csr_matrix((layout.ndof, layout.ndof), dtype=complex)
    return _accumulate(layout, rows, cols, vals)


def assemble_interface_gradient(mesh: Mesh, geo: MeshGeometry, layout: DofLayout,
                                interface: InterfaceFacetSet, D_cells: np.ndarray,
                                direction) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Interface matrices K1 = <[[u D q . n]], [[v]]> and K2 = <{u D q . n}, {v}>.

    Inside the brackets each side carries its own outward normal, so with
    w_k = D_k q . n0 (n0 pointing phase 0 -> phase 1) the side terms are
    s0 = w0 u0 and s1 = -w1 u1, giving [[s]] = w0 u0 + w1 u1 and
    {s} = (w0 u0 - w1 u1)/2. This is the convention under which the
    transformed interface conditions are exactly the image of the physical
    flux-continuity/membrane pair (their weighted sum collapses to the
    block-diagonal form w0 <u0, v0> - w1 <u1, v1>); applying a single fixed
    normal on both sides instead breaks the equivalence with the
    untransformed formulation. Time-dependent scalars are applied at step
    time.
    """
    if layout.mode != "pufem":
        raise ValueError("interface assembly requires the two-field layout")
    q = np.asarray(direction, dtype=float)[: mesh.embed_dim]
    pat = _facet_mass_pattern(mesh.topo_dim)
    rows1, cols1, vals1 = [], [], []
    rows2, cols2, vals2 = [], [], []
    for f, cell0, cell1, n0 in zip(interface.facet_ids, interface.cells0,
                                   interface.cells1, interface.normals):
        fverts = mesh.facets[f]
        mloc = geo.facet_measures[f] * pat
        w0 = float(n0 @ (D_cells[cell0] @ q))
        w1 = float(n0 @ (D_cells[cell1] @ q))
        dofs = [layout.vertex_dofs[k][fverts] for k in (0, 1)]
        for a in (0, 1):
            if np.any(dofs[a] < 0):
                raise ValueError(f"interface facet {f}: field {a} lacks support")
        # rows: test-field jump/average signs; cols: side weights of u D q . n
        k1_coef = np.array([[w0, w1], [-w0, -w1]])
        k2_coef = 0.25 * np.array([[w0, -w1], [w0, -w1]])
        for a in (0, 1):
            for b in (0, 1):
                rr = np.repeat(dofs[a], len(fverts))
                cc = np.tile(dofs[b], len(fverts))
                rows1.append(rr); cols1.append(cc); vals1.append((k1_coef[a, b] * mloc).ravel())
                rows2.append(rr); cols2.append(cc); vals2.append((k2_coef[a, b] * mloc).ravel())
    if not rows1:
        z = sp.csr_matrix((layout.ndof, layout.ndof), dtype=complex)
        return z, z.copy()
    return _accumulate(layout, rows1, cols1, vals1), _accumulate(layout, rows2, cols2, vals2)


def assemble_boundary(mesh: Mesh, geo: MeshGeometry, layout: DofLayout, phase,
                      facet_ids, D_cells: np.ndarray, direction) -> sp.csr_matrix:
    """Exterior facet mass weighted by D q . n (outward): <u D q . n, v>."""
    phase = np.asarray(phase, dtype=np.int64)
    q = np.asarray(direction, dtype=float)[: mesh.embed_dim]
    pat = _facet_mass_pattern(mesh.topo_dim)
    rows, cols, vals = [], [], []
    for f in facet_ids:
        inc = mesh.facet_cells[f]
        if len(inc) != 1:
            raise ValueError(f"facet {f} is not an exterior facet")
        c = int(inc[0])
        w = float(geo.facet_normals[f] @ (D_cells[c] @ q))
        k = int(phase[c]) if layout.mode == "pufem" else 0
        dofs = layout.vertex_dofs[k][mesh.facets[f]]
        if np.any(dofs < 0):
            raise ValueError(f"boundary facet {f}: field {k} lacks support")
        mloc = w * geo.facet_measures[f] * pat
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(mloc.ravel())
    if not rows:
        return sp.csr_matrix((layout.ndof, layout.ndof), dtype=complex)
    return _accumulate(layout, rows, cols, vals)


def assemble_facet_mass(mesh: Mesh, geo: MeshGeometry, layout: DofLayout, phase,
                        facet_ids) -> sp.csr_matrix:
    """Plain P1 facet mass over the given exterior facets (penalty terms)."""
    phase = np.asarray(phase, dtype=np.int64)
    pat = _facet_mass_pattern(mesh.topo_dim)
    rows, cols, vals = [], [], []
    for f in facet_ids:
        c = int(mesh.facet_cells[f][0])
        k = int(phase[c]) if layout.mode == "pufem" else 0
        dofs = layout.vertex_dofs[k][mesh.facets[f]]
        if np.any(dofs < 0):
            raise ValueError(f"facet {f}: field {k} lacks support")
        mloc = geo.facet_measures[f] * pat
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(mloc.ravel())
    if not rows:
        return sp.csr_matrix((layout.ndof, layout.ndof), dtype=complex)
    return _accumulate(layout, rows, cols, vals)


@dataclass
class FemSystem:
    """Constituent matrices for one gradient direction.

    Weak (untransformed) path uses M, S, R, J, I; the transformed path uses
    M, S, R, I plus C, Q, K1, K2, B. The gradient amplitude is not baked in:
    J, C, K1, K2, B carry the unit direction and Q the weight q . D q, so
    per-step scalars supply gamma, g and f/F factors.
    """

    layout: DofLayout
    direction: np.ndarray
    D_cells: np.ndarray
    T2_cells: np.ndarray
    kappa: float
    M: sp.csr_matrix
    S: sp.csr_matrix
    R: sp.csr_matrix
    I: sp.csr_matrix
    J: sp.csr_matrix | None = None
    C: sp.csr_matrix | None = None
    Q: sp.csr_matrix | None = None
    K1: sp.csr_matrix | None = None
    K2: sp.csr_matrix | None = None
    B: sp.csr_matrix | None = None

    @property
    def signal_weights(self) -> np.ndarray:
        """Row sums of M: integrating a nodal vector against 1 gives int u dx."""
        return np.real(np.asarray(self.M.sum(axis=1)).ravel())


def build_system(mesh: Mesh, geo: MeshGeometry, phase, layout: DofLayout,
                 D_cells, T2_cells, kappa: float, direction,
                 interface: InterfaceFacetSet | None = None,
                 mode: str = "weak", neumann_facets=None) -> FemSystem:
    """Assemble every constituent needed by the requested formulation.

    neumann_facets lists the exterior facets that stay natural boundaries on
    the transformed path (defaults to all boundary facets; pass an empty
    list for a fully periodic box).
    """
    if mode not in ("weak", "strong"):
        raise ValueError(f"unknown mode {mode!r}")
    q = np.asarray(direction, dtype=float)
    D_cells = promote_diffusion(D_cells, mesh.num_cells, mesh.embed_dim)
    T2_cells = np.asarray(T2_cells, dtype=float)
    if T2_cells.ndim == 0:
        T2_cells = np.full(mesh.num_cells, float(T2_cells))

    M = assemble_mass(mesh, geo, layout, phase)
    S = assemble_stiffness(mesh, geo, layout, phase, D_cells)
    R = assemble_t2_mass(mesh, geo, layout, phase, T2_cells)
    zero = sp.csr_matrix((layout.ndof, layout.ndof), dtype=complex)
    if layout.mode == "pufem" and interface is not None and len(interface):
        I = assemble_interface(mesh, geo, layout, interface, kappa)
    else:
        I = zero.copy()

    sysm = FemSystem(layout=layout, direction=q, D_cells=D_cells,
                     T2_cells=T2_cells, kappa=float(kappa),
                     M=M, S=S, R=R, I=I)
    if mode == "weak":
        sysm.J = assemble_weighted_mass(mesh, geo, layout, phase, affine=q)
    else:
        qe = q[: mesh.embed_dim]
        sysm.C = assemble_convection(mesh, geo, layout, phase, D_cells, q)
        qDq = np.einsum("e,ced,d->c", qe, D_cells, qe)
        sysm.Q = assemble_weighted_mass(mesh, geo, layout, phase, cell_weights=qDq)
        if layout.mode == "pufem" and interface is not None and len(interface):
            sysm.K1, sysm.K2 = assemble_interface_gradient(
                mesh, geo, layout, interface, D_cells, q)
        else:
            sysm.K1, sysm.K2 = zero.copy(), zero.copy()
        if neumann_facets is None:
            neumann_facets = mesh.boundary_facets
        sysm.B = assemble_boundary(mesh, geo, layout, phase, neumann_facets, D_cells, q)
    return sysm


def write_matrix_market(path, A: sp.spmatrix, comment: str = ""):
    """Dump a constituent matrix in Matrix Market coordinate format."""
    from scipy.io import mmwrite

    mmwrite(path, A.tocoo(), comment=comment)
