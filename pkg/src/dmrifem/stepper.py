"""Theta-method time integration of both Bloch-Torrey formulations.

Each step solves A u^n = rhs(u^{n-1}) where A and the rhs matrix are scalar
combinations of the precomputed constituent matrices; only the waveform
scalars f(t) / F(t) change between steps, so factorizations are cached by
their scalar signature (PGSE visits only three distinct implicit systems).
Steps are split at waveform discontinuities so f is smooth inside every
step and the theta-method keeps its order across the pulse edges.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DofLayout, FemSystem, T2_INFINITE, build_system, promote_diffusion
from .errors import ConfigError, SolverFailure
from .mesh import (Mesh, MeshGeometry, find_periodic_pairs, geometry_tables,
                   interface_facets, phase_from_marker)
from .periodic import (PeriodicConstraint, WeakPeriodicData, build_strong_constraint,
                       build_weak_periodic, compute_kappa_e, prolong_vector,
                       reduce_matrix, reduce_vector, weak_periodic_step_terms)
from .sequences import GAMMA, GradientSpec, TemporalProfile
from .signals import SignalRecord, compute_signal


@dataclass
class StepperConfig:
    dt: float = 200.0
    theta: float = 0.5
    rtol: float = 1e-12
    maxiter: int = 2000
    solver: str = "auto"            # auto | direct | iterative
    direct_limit: int = 50000       # auto switches to GMRES above this size

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {self.theta}")
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.solver not in ("auto", "direct", "iterative"):
            raise ConfigError(f"unknown solver choice {self.solver!r}")


@dataclass
class MagState:
    u: np.ndarray
    t: float
    n: int


def time_grid(profile: TemporalProfile, dt: float) -> np.ndarray:
    """Uniform grid over [0, T] refined by the waveform's segment joints."""
    T = profile.echo_time
    ts = list(np.arange(0.0, T, dt)) + [T] + list(profile.boundaries())
    ts = sorted(t for t in ts if 0.0 <= t <= T)
    out = [ts[0]]
    for t in ts[1:]:
        if t - out[-1] > 1e-9 * max(dt, 1.0):
            out.append(t)
    out[-1] = T
    return np.array(out)


def _operator_terms(mode: str, gamma_g: float, scalar: float, mats: dict):
    """Constituent combination Op(t) entering A = M/k + theta Op(t).

    Weak path: scalar is f(t); Op = i gamma g f J + R + S + I.
    Strong path: scalar is F(t); with phi = gamma g F,
    Op = i phi C + phi^2 Q + R + S + I - (i phi / 2) K1 - 2 i phi K2 - i phi B,
    the signs following the transformed weak form term by term.
    """
    if mode == "weak":
        return [(1j * gamma_g * scalar, mats["J"]), (1.0, mats["R"]),
                (1.0, mats["S"]), (1.0, mats["I"])]
    phi = gamma_g * scalar
    return [(1j * phi, mats["C"]), (phi * phi, mats["Q"]), (1.0, mats["R"]),
            (1.0, mats["S"]), (1.0, mats["I"]),
            (-0.5j * phi, mats["K1"]), (-2.0j * phi, mats["K2"]),
            (-1j * phi, mats["B"])]


def _combine(terms, base=None):
    A = base.copy() if base is not None else None
    for coef, mat in terms:
        if mat is None or coef == 0.0:
            continue
        part = coef * mat
        A = part if A is None else A + part
    return A.tocsr()


def form_step_system(sys: FemSystem, mode: str, theta: float, k: float,
                     gamma_g: float, scalar_next: float, scalar_prev: float,
                     penalty: sp.spmatrix | None = None):
    """Implicit matrix A and explicit rhs matrix for one step of length k.

    rhs for the step is (returned rhs matrix) @ u_prev, plus the explicit
    weak-periodic cross terms when those are enabled.
    """
    names = ("M", "J", "R", "S", "I") if mode == "weak" else \
            ("M", "C", "Q", "R", "S", "I", "K1", "K2", "B")
    mats = {nm: getattr(sys, nm) for nm in names}
    missing = [nm for nm, m in mats.items() if m is None]
    if missing:
        raise ConfigError(f"system lacks constituents {missing} for mode {mode!r}")
    A = _combine([(theta * c, m) for c, m in
                  _operator_terms(mode, gamma_g, scalar_next, mats)],
                 base=mats["M"].multiply(1.0 / k))
    if penalty is not None:
        A = (A + theta * penalty).tocsr()
    Rm = _combine([(-(1.0 - theta) * c, m) for c, m in
                   _operator_terms(mode, gamma_g, scalar_prev, mats)],
                  base=mats["M"].multiply(1.0 / k))
    return A, Rm


def solve_linear(A: sp.spmatrix, b: np.ndarray, cfg: StepperConfig,
                 x0=None, lu=None):
    """Solve the complex sparse system to the configured relative residual."""
    n = A.shape[0]
    direct = cfg.solver == "direct" or (cfg.solver == "auto" and n <= cfg.direct_limit)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n, dtype=complex), lu
    if direct:
        if lu is None:
            lu = spla.splu(A.tocsc())
        x = lu.solve(b)
        resid = np.linalg.norm(A @ x - b) / bnorm
        if not np.isfinite(resid) or resid > max(cfg.rtol, 1e-10):
            raise SolverFailure(f"direct solve residual {resid:.3e} above tolerance",
                                residuals=[resid])
        return x, lu
    diag = A.diagonal()
    if np.any(diag == 0.0):
        precond = None
    else:
        inv = 1.0 / diag
        precond = spla.LinearOperator(A.shape, matvec=lambda v: inv * v, dtype=complex)
    history = []

    def callback(rk):
        history.append(float(rk))

    x, info = spla.gmres(A, b, x0=x0, rtol=cfg.rtol, atol=0.0, restart=50,
                         maxiter=cfg.maxiter, M=precond, callback=callback,
                         callback_type="pr_norm")
    resid = np.linalg.norm(A @ x - b) / bnorm
    if info != 0 or resid > cfg.rtol * 10.0:
        raise SolverFailure(f"GMRES failed to converge (info={info}, "
                            f"residual {resid:.3e})", residuals=history)
    return x, None


@dataclass
class Problem:
    """Mesh artifacts plus physics bound to one simulation setup."""

    mesh: Mesh
    geo: MeshGeometry
    marker: np.ndarray
    phase: np.ndarray
    layout: DofLayout
    interface: object
    D_cells: np.ndarray
    T2_cells: np.ndarray
    ic_cells: np.ndarray
    kappa: float
    bc: str = "neumann"
    pairings: list = field(default_factory=list)
    constraint: PeriodicConstraint | None = None
    weak_data: WeakPeriodicData | None = None


def build_problem(mesh: Mesh, marker, compartments: dict, kappa: float = 0.0,
                  bc: str = "neumann", geo: MeshGeometry | None = None,
                  periodic_axes=None) -> Problem:
    """Assemble the mesh-side state shared by every gradient run.

    compartments maps marker id -> dict with keys D (um^2/us; scalar or
    tensor), T2 (us, default effectively infinite) and ic (default 1).
    """
    if bc not in ("neumann", "periodic_strong", "periodic_weak"):
        raise ConfigError(f"unknown bc {bc!r}")
    marker = np.asarray(marker, dtype=np.int64)
    if len(marker) != mesh.num_cells:
        raise ConfigError("marker length does not match cell count")
    if geo is None:
        geo = geometry_tables(mesh)
    phase = phase_from_marker(marker)
    present = np.unique(marker)
    missing = [int(m) for m in present if m not in compartments]
    if missing:
        raise ConfigError(f"no compartment table entry for marker(s) {missing}")

    nc, e = mesh.num_cells, mesh.embed_dim
    D_cells = np.empty((nc, e, e))
    T2_cells = np.empty(nc)
    ic_cells = np.empty(nc)
    for m in present:
        entry = compartments[int(m)]
        sel = marker == m
        D_cells[sel] = promote_diffusion(entry["D"], int(sel.sum()), e)
        T2_cells[sel] = float(entry.get("T2", T2_INFINITE))
        ic_cells[sel] = float(entry.get("ic", 1.0))

    multi = bool(np.any(phase != phase[0])) if len(phase) else False
    layout = DofLayout.pufem(mesh, phase) if multi else DofLayout.single(mesh)
    iface = interface_facets(mesh, phase, geo)

    prob = Problem(mesh, geo, marker, phase, layout, iface, D_cells, T2_cells,
                   ic_cells, float(kappa), bc)
    if bc in ("periodic_strong", "periodic_weak"):
        axes = list(range(mesh.embed_dim)) if periodic_axes is None else list(periodic_axes)
        prob.pairings = [find_periodic_pairs(mesh, ax) for ax in axes]
        if bc == "periodic_strong":
            prob.constraint = build_strong_constraint(mesh, layout, prob.pairings)
        else:
            ke = compute_kappa_e(mesh, geo, D_cells)
            prob.weak_data = build_weak_periodic(mesh, geo, layout, phase,
                                                 prob.pairings, ke)
    return prob


def nodal_initial_values(problem: Problem) -> np.ndarray:
    """Per-field nodal interpolant of the cell-wise initial condition.

    Vertices shared by several same-phase compartments get the measure-
    weighted average of the incident cell values; for per-compartment
    constants this reproduces every compartment integral exactly.
    """
    layout = problem.layout
    wsum = np.zeros(layout.ndof)
    msum = np.zeros(layout.ndof)
    for c in range(problem.mesh.num_cells):
        k = int(problem.phase[c]) if layout.mode == "pufem" else 0
        dofs = layout.vertex_dofs[k][problem.mesh.cells[c]]
        meas = problem.geo.cell_measures[c]
        wsum[dofs] += meas * problem.ic_cells[c]
        msum[dofs] += meas
    out = np.zeros(layout.ndof, dtype=complex)
    nz = msum > 0.0
    out[nz] = wsum[nz] / msum[nz]
    return out


def fem_system_for(problem: Problem, direction, mode: str) -> FemSystem:
    """Assemble the constituents for one gradient direction."""
    if mode == "strong":
        periodic_facets = set()
        for p in problem.pairings:
            periodic_facets.update(p.facet_map.keys())
            periodic_facets.update(p.facet_map.values())
        neumann = [f for f in problem.mesh.boundary_facets if int(f) not in periodic_facets]
    else:
        neumann = None
    return build_system(problem.mesh, problem.geo, problem.phase, problem.layout,
                        problem.D_cells, problem.T2_cells, problem.kappa, direction,
                        interface=problem.interface, mode=mode,
                        neumann_facets=neumann)


def _march(problem: Problem, sys: FemSystem, profile: TemporalProfile,
           g: float, cfg: StepperConfig, mode: str, u0_full: np.ndarray,
           trace=None):
    """Advance one gradient amplitude from t=0 to the echo time."""
    reducedbc = problem.bc == "periodic_strong"
    if reducedbc and problem.constraint is None:
        raise ConfigError("periodic_strong requires a matching periodic constraint")
    if problem.bc == "periodic_weak" and problem.weak_data is None:
        raise ConfigError("periodic_weak requires precomputed coupling data")
    if mode == "weak" and reducedbc:
        raise ConfigError("the untransformed path cannot use strong periodicity")
    if mode == "strong" and problem.bc == "periodic_weak":
        raise ConfigError("the transformed path does not take weak-periodic terms")

    names = ("M", "J", "R", "S", "I") if mode == "weak" else \
            ("M", "C", "Q", "R", "S", "I", "K1", "K2", "B")
    mats = {nm: getattr(sys, nm) for nm in names}
    if reducedbc:
        mats = {nm: reduce_matrix(m, problem.constraint) for nm, m in mats.items()}
        u = reduce_vector(u0_full, problem.constraint)
    else:
        u = u0_full.copy()
    M = mats["M"]

    penalty = None
    if problem.bc == "periodic_weak":
        penalty = problem.weak_data.kappa_e * problem.weak_data.boundary_mass_total

    gvec = g * sys.direction
    times = time_grid(profile, cfg.dt)
    cacheA: dict = {}
    cacheR: dict = {}
    state = MagState(u, 0.0, 0)
    if trace is not None:
        trace.append((0.0, _signal_of(problem, sys, state.u, profile, g, 0.0, mode)))
    for n in range(1, len(times)):
        t0, t1 = times[n - 1], times[n]
        k = t1 - t0
        seg = profile.segment_containing(t0, t1)
        if mode == "weak":
            s_next, s_prev = profile.f_on(seg, t1), profile.f_on(seg, t0)
        else:
            s_next, s_prev = profile.F(t1), profile.F(t0)
        keyA = (k, s_next)
        keyR = (k, s_prev)
        if keyA not in cacheA:
            A = _combine([(cfg.theta * c, m) for c, m in
                          _operator_terms(mode, GAMMA * g, s_next, mats)],
                         base=M.multiply(1.0 / k))
            if penalty is not None:
                A = (A + cfg.theta * penalty).tocsr()
            cacheA[keyA] = [A, None]
        if keyR not in cacheR:
            cacheR[keyR] = _combine(
                [(-(1.0 - cfg.theta) * c, m) for c, m in
                 _operator_terms(mode, GAMMA * g, s_prev, mats)],
                base=M.multiply(1.0 / k))
        A, lu = cacheA[keyA]
        rhs = cacheR[keyR] @ state.u
        if problem.bc == "periodic_weak":
            angles = problem.weak_data.phase_angles(gvec, profile.F(t1))
            _, rhs_add = weak_periodic_step_terms(problem.weak_data, angles,
                                                  cfg.theta, state.u)
            rhs = rhs + rhs_add
        try:
            x, lu = solve_linear(A, rhs, cfg, x0=state.u, lu=lu)
        except SolverFailure as exc:
            raise SolverFailure(str(exc), residuals=exc.residuals, step=n) from None
        cacheA[keyA][1] = lu
        if not np.all(np.isfinite(x.view(float))):
            raise SolverFailure("non-finite magnetization", step=n)
        state = MagState(x, t1, n)
        if trace is not None:
            trace.append((t1, _signal_of(problem, sys, state.u, profile, g, t1, mode)))
    return state


def _signal_of(problem: Problem, sys: FemSystem, u, profile, g, t, mode) -> complex:
    """Magnetization integral, undoing the strong-path transform if needed."""
    if problem.bc == "periodic_strong":
        u = prolong_vector(u, problem.constraint)
    if mode == "strong":
        Ft = profile.F(t)
        if Ft != 0.0:
            x = problem.mesh.vertices[problem.layout.dof_vertex]
            qx = x @ (g * sys.direction[: problem.mesh.embed_dim])
            u = u * np.exp(-1j * GAMMA * Ft * qx)
    return compute_signal(u, sys.signal_weights)


def run_simulation(problem: Problem, sys: FemSystem, profile: TemporalProfile,
                   gradients, cfg: StepperConfig, mode: str = "weak",
                   u0: np.ndarray | None = None) -> list[SignalRecord]:
    """March every requested gradient and report signal records.

    gradients is a list of GradientSpec sharing the system's direction.
    The attenuation reference S(0) comes from the b=0 entry when present,
    otherwise from an implicit extra baseline run.
    """
    if not profile.is_refocused():
        if mode == "weak":
            warnings.warn("profile does not refocus (F(T) != 0); the reported raw "
                          "magnetization retains the encoding phase", stacklevel=2)
        else:
            warnings.warn("profile does not refocus (F(T) != 0); applying the "
                          "e^{-i gamma F(T) g.x} readout recovery", stacklevel=2)
    u_start = nodal_initial_values(problem) if u0 is None else np.asarray(u0, dtype=complex)
    resolved = []
    for spec in gradients:
        if np.linalg.norm(spec.direction - sys.direction) > 1e-12:
            raise ConfigError("gradient direction differs from the assembled system")
        resolved.append(spec.resolve(profile))

    results = []
    for b, g in resolved:
        state = _march(problem, sys, profile, g, cfg, mode, u_start)
        S = _signal_of(problem, sys, state.u, profile, g, state.t, mode)
        results.append((b, g, S))

    S0 = next((S for b, g, S in results if g == 0.0), None)
    if S0 is None:
        state = _march(problem, sys, profile, 0.0, cfg, mode, u_start)
        S0 = _signal_of(problem, sys, state.u, profile, 0.0, state.t, mode)
    records = []
    for b, g, S in results:
        att = abs(S) / abs(S0) if abs(S0) > 0.0 else float("nan")
        records.append(SignalRecord(b=b, g=g, direction=tuple(sys.direction),
                                    S=S, attenuation=att))
    return records


def signal_trace(problem: Problem, sys: FemSystem, profile: TemporalProfile,
                 g: float, cfg: StepperConfig, mode: str = "weak"):
    """March once, recording (t, S(t)) after every step (diagnostics)."""
    u0 = nodal_initial_values(problem)
    trace = []
    _march(problem, sys, profile, g, cfg, mode, u0, trace=trace)
    return trace
