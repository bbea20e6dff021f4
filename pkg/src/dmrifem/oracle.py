"""Independent reference solutions used by tests and acceptance criteria.

The interval solver discretizes the untransformed Bloch-Torrey equation
with second-order central differences and Crank-Nicolson in time. Each
sub-interval carries its own uniform grid; at an interface the two endpoint
unknowns are coupled through ghost values enforcing flux continuity and
flux = kappa (U_right - U_left) (the permeable-membrane condition with the
left-to-right normal). This code deliberately shares nothing with the
finite-element path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from .errors import SolverFailure
from .sequences import GAMMA, TemporalProfile, b_from_g
from .signals import SignalRecord


@dataclass
class FdConfig:
    """Two-point-boundary interval problem for the reference solver."""

    x0: float
    x1: float
    n: int                              # total grid points (>= 100)
    dt: float
    D: list                             # per sub-interval, um^2/us
    profile: TemporalProfile = None
    g: float = 0.0                      # gradient amplitude along the axis, T/um
    T2: list | None = None              # per sub-interval, us (None = no relaxation)
    interfaces: list = field(default_factory=list)   # [(position, kappa)] sorted
    ic: list | None = None              # per sub-interval initial value

    def __post_init__(self):
        if self.x1 <= self.x0:
            raise ValueError("empty interval")
        if self.n < 100:
            raise ValueError("grid count must be at least 100")
        pos = [p for p, _ in self.interfaces]
        if any(not (self.x0 < p < self.x1) for p in pos):
            raise ValueError("interfaces must lie strictly inside the interval")
        if sorted(pos) != pos:
            raise ValueError("interfaces must be sorted")
        nsub = len(self.interfaces) + 1
        if len(self.D) != nsub:
            raise ValueError(f"need {nsub} diffusivities, got {len(self.D)}")
        if self.T2 is None:
            self.T2 = [math.inf] * nsub
        if self.ic is None:
            self.ic = [1.0] * nsub


def _build_grids(cfg: FdConfig):
    edges = [cfg.x0] + [p for p, _ in cfg.interfaces] + [cfg.x1]
    lengths = np.diff(edges)
    total = lengths.sum()
    counts = [max(2, int(round(cfg.n * L / total))) for L in lengths]
    grids = [np.linspace(edges[j], edges[j + 1], counts[j]) for j in range(len(lengths))]
    return grids


def _assemble_operator(cfg: FdConfig, grids):
    """Time-independent tridiagonal pieces: L0 (diffusion + T2) and the
    diagonal position phase P so that dU/dt = (L0 + f(t) P) U."""
    sizes = [len(g) for g in grids]
    ntot = sum(sizes)
    main = np.zeros(ntot, dtype=complex)
    lower = np.zeros(ntot, dtype=complex)   # entry i couples U[i] to U[i-1]
    upper = np.zeros(ntot, dtype=complex)   # entry i couples U[i] to U[i+1]
    offsets = np.cumsum([0] + sizes[:-1])
    x_all = np.concatenate(grids)

    for j, grid in enumerate(grids):
        off = offsets[j]
        h = grid[1] - grid[0]
        D = float(cfg.D[j])
        r = D / (h * h)
        t2 = float(cfg.T2[j])
        relax = 0.0 if math.isinf(t2) else 1.0 / t2
        for i in range(len(grid)):
            gi = off + i
            if 0 < i < len(grid) - 1:
                main[gi] += -2.0 * r
                lower[gi] += r
                upper[gi] += r
            else:
                # endpoint: reflecting ghost by default (Neumann); interface
                # endpoints get their coupling corrected below
                main[gi] += -2.0 * r
                if i == 0:
                    upper[gi] += 2.0 * r
                else:
                    lower[gi] += 2.0 * r
            main[gi] += -relax

    # interface corrections: flux continuity with flux = kappa (U_R - U_L)
    # left endpoint contributes +2 kappa (U_R - U_L)/h_L to its Laplacian row,
    # right endpoint -2 kappa (U_R - U_L)/h_R (mass conserving under trapezoid)
    couplings = []
    for j, (pos, kappa) in enumerate(cfg.interfaces):
        gl = offsets[j] + sizes[j] - 1          # last node of left subdomain
        gr = offsets[j + 1]                     # first node of right subdomain
        h_l = grids[j][1] - grids[j][0]
        h_r = grids[j + 1][1] - grids[j + 1][0]
        main[gl] += -2.0 * kappa / h_l
        main[gr] += -2.0 * kappa / h_r
        couplings.append((gl, gr, 2.0 * kappa / h_l))
        couplings.append((gr, gl, 2.0 * kappa / h_r))
    return main, lower, upper, couplings, x_all, offsets, sizes


def _banded_solve(main, lower, upper, couplings, scale, shift, rhs):
    """Solve (shift I + scale L) U = rhs where L is the assembled operator.

    The interface couplings link the adjacent endpoints of neighbouring
    subdomains, which are consecutive global indices, so the full system
    stays tridiagonal.
    """
    n = len(main)
    ab = np.zeros((3, n), dtype=complex)
    ab[1, :] = shift + scale * main
    ab[0, 1:] = scale * upper[:-1]
    ab[2, :-1] = scale * lower[1:]
    for a, b, w in couplings:
        if b == a + 1:
            ab[0, b] += scale * w
        elif b == a - 1:
            ab[2, b] += scale * w
        else:
            raise AssertionError("interface coupling is not tridiagonal")
    return solve_banded((1, 1), ab, rhs)


def _apply_operator(main, lower, upper, couplings, u):
    out = main * u
    out[1:] += lower[1:] * u[:-1]
    out[:-1] += upper[:-1] * u[1:]
    for a, b, w in couplings:
        out[a] += w * u[b]
    return out


def _trapezoid_weights(grids):
    parts = []
    for grid in grids:
        h = grid[1] - grid[0]
        w = np.full(len(grid), h)
        w[0] = w[-1] = 0.5 * h
        parts.append(w)
    return np.concatenate(parts)


def fd_reference_signal(cfg: FdConfig) -> SignalRecord:
    """Crank-Nicolson reference signal for the interval problem.

    The attenuation entry is normalized by an internal g = 0 run of the
    same discretization.
    """
    S = _fd_signal(cfg)
    S0 = S if cfg.g == 0.0 else _fd_signal(replace(cfg, g=0.0))
    b = b_from_g(cfg.profile, cfg.g)
    att = abs(S) / abs(S0) if abs(S0) > 0 else float("nan")
    return SignalRecord(b=b, g=cfg.g, direction=(1.0, 0.0, 0.0), S=S, attenuation=att)


def _fd_signal(cfg: FdConfig) -> complex:
    grids = _build_grids(cfg)
    main, lower, upper, couplings, x_all, offsets, sizes = _assemble_operator(cfg, grids)
    weights = _trapezoid_weights(grids)
    u = np.concatenate([np.full(sizes[j], complex(cfg.ic[j])) for j in range(len(sizes))])
    limit = 1e3 * (np.abs(u).max() + 1.0)

    profile = cfg.profile
    T = profile.echo_time
    ts = list(np.arange(0.0, T, cfg.dt)) + [T] + list(profile.boundaries())
    ts = sorted(t for t in ts if 0.0 <= t <= T)
    dedup = [ts[0]]
    for t in ts[1:]:
        if t - dedup[-1] > 1e-9 * max(cfg.dt, 1.0):
            dedup.append(t)
    dedup[-1] = T

    phase = -1j * GAMMA * cfg.g * x_all
    for n in range(1, len(dedup)):
        t0, t1 = dedup[n - 1], dedup[n]
        k = t1 - t0
        seg = profile.segment_containing(t0, t1)
        f0, f1 = profile.f_on(seg, t0), profile.f_on(seg, t1)
        rhs = u / k + 0.5 * (_apply_operator(main, lower, upper, couplings, u)
                             + f0 * phase * u)
        full_main = main + f1 * phase
        u = _banded_solve(full_main, lower, upper, couplings, -0.5, 1.0 / k, rhs)
        if np.abs(u).max() > limit:
            raise SolverFailure("finite-difference reference became unstable", step=n)
    return complex(weights @ u)


def analytic_free_signal(b: float, D, q=(1.0, 0.0, 0.0)) -> float:
    """Free-diffusion attenuation exp(-b q.Dq) for unit direction q."""
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    D = np.asarray(D, dtype=float)
    if D.ndim == 0:
        qdq = float(D)
    else:
        qdq = float(q[: D.shape[0]] @ D @ q[: D.shape[0]])
    return math.exp(-b * qdq)


def analytic_t2_factor(T: float, T2: float) -> float:
    """Pure relaxation factor exp(-T/T2); T2 = inf gives 1."""
    if T2 <= 0.0:
        raise ValueError("T2 must be positive")
    if math.isinf(T2):
        return 1.0
    return math.exp(-T / T2)
