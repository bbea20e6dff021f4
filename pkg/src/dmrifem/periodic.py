"""Pseudo-periodic boundary conditions.

Two routes are provided. The strong route works on the transformed unknown
and identifies every slave-face dof with its translated master-face dof
(the face at the lower coordinate is the master); corner dofs shared by
several axes are resolved by applying the axis maps in ascending order
until a fixed point. The weak route keeps the original unknown and couples
opposite faces through an artificial permeability kappa_e = max(D/h), with
the cross-face trace taken explicitly at the previous step so the scheme
stays unconditionally stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .assembly import DofLayout, assemble_facet_mass
from .errors import ConstraintError, ProjectionError
from .mesh import FacetPairing, Mesh, MeshGeometry


@dataclass
class PeriodicConstraint:
    """Slave-to-master dof identification and the induced reduction."""

    pairings: list
    slave_to_master: dict            # full dof -> representative full dof
    kept: np.ndarray                 # sorted kept (representative) dofs
    full_to_reduced: np.ndarray      # (ndof_full,) reduced index of each dof's rep
    P: sp.csr_matrix                 # prolongation (ndof_full, ndof_reduced)

    @property
    def n_reduced(self):
        return len(self.kept)


def _resolve_maps(axis_maps: list[dict], v: int) -> int:
    """Follow the per-axis slave->master maps to a unique representative."""
    for _ in range(len(axis_maps) + 1):
        start = v
        for m in axis_maps:
            if v in m:
                v = m[v]
        if v == start:
            return v
    raise ConstraintError("periodic vertex maps do not reach a fixed point")


def build_strong_constraint(mesh: Mesh, layout: DofLayout,
                            pairings: list[FacetPairing]) -> PeriodicConstraint:
    """Merge slave-face dofs into master-face dofs for matching meshes."""
    ordered = sorted(pairings, key=lambda p: p.axis)
    axis_maps = [{s: m for m, s in p.vertex_map.items()} for p in ordered]
    vrep = {}
    for p_map in axis_maps:
        for v in p_map:
            vrep[v] = None
    for v in list(vrep):
        vrep[v] = _resolve_maps(axis_maps, v)

    slave_to_master = {}
    for k in range(layout.n_fields):
        for v, rep in vrep.items():
            dof = layout.vertex_dofs[k][v]
            if dof < 0:
                continue
            rep_dof = layout.vertex_dofs[k][rep]
            if rep_dof < 0:
                raise ConstraintError(
                    f"field {k}: master vertex {rep} has no dof for slave vertex {v}")
            if rep_dof != dof:
                slave_to_master[int(dof)] = int(rep_dof)

    ndof = layout.ndof
    rep_of = np.arange(ndof, dtype=np.int64)
    for s, m in slave_to_master.items():
        rep_of[s] = m
    kept = np.nonzero(rep_of == np.arange(ndof))[0]
    red_index = -np.ones(ndof, dtype=np.int64)
    red_index[kept] = np.arange(len(kept))
    full_to_reduced = red_index[rep_of]
    P = sp.csr_matrix((np.ones(ndof), (np.arange(ndof), full_to_reduced)),
                      shape=(ndof, len(kept)), dtype=complex)
    return PeriodicConstraint(ordered, slave_to_master, kept, full_to_reduced, P)


def reduce_matrix(A: sp.spmatrix, constraint: PeriodicConstraint) -> sp.csr_matrix:
    if A.shape[0] != constraint.P.shape[0]:
        raise ValueError("matrix size does not match the constraint")
    return (constraint.P.T @ A @ constraint.P).tocsr()


def reduce_vector(x: np.ndarray, constraint: PeriodicConstraint) -> np.ndarray:
    return np.asarray(x)[constraint.kept]


def prolong_vector(xr: np.ndarray, constraint: PeriodicConstraint) -> np.ndarray:
    return constraint.P @ np.asarray(xr)


def compute_kappa_e(mesh: Mesh, geo: MeshGeometry, D_cells: np.ndarray) -> float:
    """Nitsche-consistent artificial permeability max{D/h}.

    D is the largest eigenvalue of the cell tensor, h the cell diameter;
    the maximum runs over boundary-adjacent cells.
    """
    cells = sorted({int(mesh.facet_cells[f][0]) for f in mesh.boundary_facets})
    if not cells:
        raise ValueError("mesh has no boundary facets")
    lam = np.linalg.eigvalsh(D_cells[cells])[:, -1]
    return float(np.max(lam / geo.cell_diameters[cells]))


def _facet_quadrature(topo_dim: int):
    """Reference barycentric rule on a facet, exact for quadratic traces."""
    if topo_dim == 1:
        return np.array([[1.0]]), np.array([1.0])
    if topo_dim == 2:
        a = 0.5 * (1.0 - 1.0 / np.sqrt(3.0))
        pts = np.array([[1.0 - a, a], [a, 1.0 - a]])
        return pts, np.array([0.5, 0.5])
    pts = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    return pts, np.full(3, 1.0 / 3.0)


def _facet_barycentric(fverts: np.ndarray, point: np.ndarray, tol: float):
    """Barycentric coordinates of a point on a facet simplex, or None."""
    if len(fverts) == 1:
        if np.linalg.norm(point - fverts[0]) <= tol:
            return np.array([1.0])
        return None
    edges = (fverts[1:] - fverts[0]).T                      # (e, m-1)
    rhs = point - fverts[0]
    lam, *_ = np.linalg.lstsq(edges, rhs, rcond=None)
    resid = np.linalg.norm(edges @ lam - rhs)
    if resid > tol:
        return None
    bary = np.concatenate(([1.0 - lam.sum()], lam))
    if np.any(bary < -1e-9):
        return None
    return bary


@dataclass
class _AxisCoupling:
    axis: int
    shift_vector: np.ndarray
    boundary_mass: sp.csr_matrix     # own-side facet mass on both faces
    T_master: sp.csr_matrix          # master test dofs x slave trace dofs
    T_slave: sp.csr_matrix           # slave test dofs x master trace dofs
    correspondences: list = field(default_factory=list)


@dataclass
class WeakPeriodicData:
    """Everything the stepper needs for the artificial-permeability terms."""

    kappa_e: float
    axes: list
    boundary_mass_total: sp.csr_matrix

    def phase_angles(self, gvec: np.ndarray, F_value: float) -> np.ndarray:
        """theta_k = gamma g . shift_k F(t) for every periodic axis (theta_ms)."""
        from .sequences import GAMMA

        out = np.empty(len(self.axes))
        for i, ax in enumerate(self.axes):
            e = len(ax.shift_vector)
            out[i] = GAMMA * float(gvec[:e] @ ax.shift_vector) * F_value
        return out


def _cross_matrix(mesh, geo, layout, phase, own_facets, opp_facets, shift,
                  tol, correspondences):
    """T[i, j] = int_own phi_i(x) phi_j(x + shift) ds via facet quadrature."""
    phase = np.asarray(phase, dtype=np.int64)
    ref_pts, ref_w = _facet_quadrature(mesh.topo_dim)
    opp_centroids = np.array([mesh.vertices[mesh.facets[f]].mean(axis=0)
                              for f in opp_facets])
    tree = cKDTree(opp_centroids)
    nq = min(len(opp_facets), 6)
    rows, cols, vals = [], [], []
    for f in own_facets:
        fverts_ids = mesh.facets[f]
        fverts = mesh.vertices[fverts_ids]
        own_cell = int(mesh.facet_cells[f][0])
        k_own = int(phase[own_cell]) if layout.mode == "pufem" else 0
        own_dofs = layout.vertex_dofs[k_own][fverts_ids]
        if np.any(own_dofs < 0):
            raise ProjectionError(f"facet {f}: field {k_own} lacks support")
        meas = geo.facet_measures[f]
        for bary_own, w in zip(ref_pts, ref_w):
            x = bary_own @ fverts
            target = x + shift
            dists, idxs = tree.query(target, k=nq)
            dists = np.atleast_1d(dists)
            idxs = np.atleast_1d(idxs)
            hit = None
            for j in idxs:
                hverts_ids = mesh.facets[opp_facets[j]]
                bary_host = _facet_barycentric(mesh.vertices[hverts_ids], target, tol)
                if bary_host is not None:
                    hit = (int(opp_facets[j]), hverts_ids, bary_host)
                    break
            if hit is None:
                raise ProjectionError(
                    f"no opposite-face host for point {target.tolist()}")
            host_f, hverts_ids, bary_host = hit
            host_cell = int(mesh.facet_cells[host_f][0])
            k_host = int(phase[host_cell]) if layout.mode == "pufem" else 0
            host_dofs = layout.vertex_dofs[k_host][hverts_ids]
            if np.any(host_dofs < 0):
                raise ProjectionError(f"facet {host_f}: field {k_host} lacks support")
            correspondences.append((int(f), host_f, bary_own.copy(), bary_host))
            block = meas * w * np.outer(bary_own, bary_host)
            rows.append(np.repeat(own_dofs, len(host_dofs)))
            cols.append(np.tile(host_dofs, len(own_dofs)))
            vals.append(block.ravel())
    T = sp.coo_matrix((np.concatenate(vals).astype(complex),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(layout.ndof, layout.ndof))
    return T.tocsr()


def build_weak_periodic(mesh: Mesh, geo: MeshGeometry, layout: DofLayout, phase,
                        pairings: list[FacetPairing], kappa_e: float,
                        tol: float | None = None) -> WeakPeriodicData:
    """Precompute the time-independent pieces of the weak-periodic terms.

    Master and slave traces are matched by point location on the translated
    face, so non-matching periodic meshes are supported.
    """
    axes = []
    total = None
    for p in sorted(pairings, key=lambda q: q.axis):
        masters = sorted(p.facet_map)
        slaves = sorted(p.facet_map[m] for m in masters)
        if tol is None:
            ax_tol = 1e-9 * max(1.0, abs(p.shift))
        else:
            ax_tol = tol
        corr = []
        Tm = _cross_matrix(mesh, geo, layout, phase, masters, slaves,
                           p.shift_vector, ax_tol, corr)
        Ts = _cross_matrix(mesh, geo, layout, phase, slaves, masters,
                           -p.shift_vector, ax_tol, corr)
        bmass = assemble_facet_mass(mesh, geo, layout, phase, masters + slaves)
        axes.append(_AxisCoupling(p.axis, p.shift_vector, bmass, Tm, Ts, corr))
        total = bmass if total is None else total + bmass
    if total is None:
        raise ValueError("no periodic pairings given")
    return WeakPeriodicData(float(kappa_e), axes, total.tocsr())


def weak_periodic_step_terms(data: WeakPeriodicData, angles: np.ndarray,
                             theta: float, u_prev: np.ndarray):
    """Per-step additions: implicit own-side mass and explicit cross traces.

    Returns (A_add, rhs_add) with A_add = theta kappa_e <u, v> on both faces
    and rhs_add = (1-theta) kappa_e (e^{i theta_k} T_m + e^{-i theta_k} T_s) u.
    The own-side explicit and cross-side implicit halves are deliberately
    omitted: that one-sided splitting is what makes the scheme stable for
    any time step.
    """
    if data.kappa_e == 0.0:
        zero = sp.csr_matrix(data.boundary_mass_total.shape, dtype=complex)
        return zero, np.zeros(data.boundary_mass_total.shape[0], dtype=complex)
    A_add = (theta * data.kappa_e) * data.boundary_mass_total
    rhs = np.zeros(data.boundary_mass_total.shape[0], dtype=complex)
    for ax, th in zip(data.axes, angles):
        phase_ms = np.exp(1j * th)
        rhs += phase_ms * (ax.T_master @ u_prev)
        rhs += np.conj(phase_ms) * (ax.T_slave @ u_prev)
    return A_add, (1.0 - theta) * data.kappa_e * rhs
