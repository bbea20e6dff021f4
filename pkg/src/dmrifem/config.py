"""Run configuration: strict JSON schema, unit handling, flag overrides.

External quantities use the customary units of the diffusion MRI
literature: D in mm^2/s, permeabilities in m/s, b-values in s/mm^2 and
times in us (numbers) or with an explicit suffix ("40 ms", "0.05 s").
Those first three convert to the internal um/us/T system with factor one,
so values can be pasted verbatim; only times need parsing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import T2_INFINITE
from .errors import ConfigError
from .mesh import Mesh, build_structured_mesh, marker_from_axis_breaks
from .msh import load_native, read_msh
from .sequences import PROFILE_BUILDERS, GradientSpec, TemporalProfile
from .stepper import StepperConfig

_TIME_SUFFIXES = {"us": 1.0, "ms": 1e3, "s": 1e6}


def parse_time(value, what="time") -> float:
    """A time in us: plain numbers pass through, strings carry a suffix."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        text = value.strip()
        for suffix, factor in sorted(_TIME_SUFFIXES.items(), key=lambda kv: -len(kv[0])):
            if text.endswith(suffix):
                num = text[: -len(suffix)].strip()
                try:
                    return float(num) * factor
                except ValueError:
                    break
        try:
            return float(text)
        except ValueError:
            pass
    raise ConfigError(f"cannot parse {what} {value!r} (use a number in us or e.g. '40 ms')")


def _require_keys(section: dict, allowed: set, required: set, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"missing key(s) {sorted(missing)} in {where}")


@dataclass
class RunConfig:
    """Validated, unit-normalized configuration for one simulation run."""

    mesh: Mesh
    marker: np.ndarray
    compartments: dict                  # marker id -> {"D":..., "T2":..., "ic":...}
    kappa: float                        # um/us (== m/s numerically)
    profile: TemporalProfile
    direction: np.ndarray
    b_values: list | None
    g_values: list | None
    stepper: StepperConfig
    bc: str
    outputs: dict = field(default_factory=dict)
    expects_multi: bool | None = None   # the script-style -M cross-check

    def gradient_specs(self) -> list[GradientSpec]:
        if self.b_values is not None:
            return [GradientSpec(direction=self.direction, b=float(b))
                    for b in self.b_values]
        return [GradientSpec(direction=self.direction, g=float(g))
                for g in self.g_values]


def _load_mesh_section(section) -> tuple[Mesh, np.ndarray]:
    _require_keys(section, {"builtin", "msh", "native"}, set(), "mesh")
    given = [k for k in ("builtin", "msh", "native") if k in section]
    if len(given) != 1:
        raise ConfigError("mesh needs exactly one of builtin/msh/native")
    kind = given[0]
    if kind == "msh":
        res = read_msh(section["msh"])
        return res.mesh, res.marker
    if kind == "native":
        mesh, marker = load_native(section["native"])
        if marker is None:
            marker = np.zeros(mesh.num_cells, dtype=np.int64)
        return mesh, marker
    builtin = section["builtin"]
    _require_keys(builtin, {"type", "p0", "p1", "n", "markers"}, {"type", "p0", "p1", "n"},
                  "mesh.builtin")
    if builtin["type"] != "box":
        raise ConfigError(f"unknown builtin mesh type {builtin['type']!r}")
    mesh = build_structured_mesh(builtin["p0"], builtin["p1"], builtin["n"])
    if "markers" in builtin:
        mk = builtin["markers"]
        _require_keys(mk, {"axis", "breaks"}, {"axis", "breaks"}, "mesh.builtin.markers")
        marker = marker_from_axis_breaks(mesh, int(mk["axis"]), mk["breaks"])
    else:
        marker = np.zeros(mesh.num_cells, dtype=np.int64)
    return mesh, marker


def _load_compartments(section) -> dict:
    if not isinstance(section, dict) or not section:
        raise ConfigError("compartments must map marker ids to property tables")
    out = {}
    for key, entry in section.items():
        try:
            mid = int(key)
        except (TypeError, ValueError):
            raise ConfigError(f"compartment key {key!r} is not an integer marker") from None
        _require_keys(entry, {"D", "T2", "ic"}, {"D"}, f"compartments[{key}]")
        D = np.asarray(entry["D"], dtype=float)
        if D.ndim not in (0, 2):
            raise ConfigError(f"compartments[{key}].D must be a scalar or a matrix")
        T2 = entry.get("T2", T2_INFINITE)
        if isinstance(T2, str) and T2.strip().lower() in ("inf", "infinity"):
            T2 = T2_INFINITE
        else:
            T2 = parse_time(T2, what=f"compartments[{key}].T2")
        if not math.isfinite(T2):
            T2 = T2_INFINITE
        out[mid] = {"D": D if D.ndim else float(D), "T2": float(T2),
                    "ic": float(entry.get("ic", 1.0))}
    return out


def _load_sequence(section) -> TemporalProfile:
    _require_keys(section, {"type", "delta", "Delta", "n", "ramp"},
                  {"type", "delta", "Delta"}, "sequence")
    kind = section["type"]
    if kind not in PROFILE_BUILDERS:
        raise ConfigError(f"unknown sequence type {kind!r} "
                          f"(choose from {sorted(PROFILE_BUILDERS)})")
    delta = parse_time(section["delta"], "sequence.delta")
    Delta = parse_time(section["Delta"], "sequence.Delta")
    try:
        if kind in ("cos_ogse", "sin_ogse"):
            if "n" not in section:
                raise ConfigError(f"sequence type {kind} needs the oscillation count n")
            return PROFILE_BUILDERS[kind](delta, Delta, int(section["n"]))
        if kind in ("trap_pgse", "double_trap_pgse"):
            if "ramp" not in section:
                raise ConfigError(f"sequence type {kind} needs a ramp duration")
            ramp = parse_time(section["ramp"], "sequence.ramp")
            return PROFILE_BUILDERS[kind](delta, Delta, ramp)
        return PROFILE_BUILDERS[kind](delta, Delta)
    except ValueError as exc:
        raise ConfigError(f"invalid sequence parameters: {exc}") from None


def load_config(path=None, data=None) -> RunConfig:
    """Load and validate a JSON run configuration (strict schema)."""
    if (path is None) == (data is None):
        raise ConfigError("provide exactly one of path or data")
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    _require_keys(data, {"mesh", "compartments", "kappa", "sequence", "gradient",
                         "time", "bc", "solver", "output"},
                  {"mesh", "compartments", "sequence", "gradient"}, "config")

    mesh, marker = _load_mesh_section(data["mesh"])
    compartments = _load_compartments(data["compartments"])
    kappa = float(data.get("kappa", 0.0))
    if kappa < 0.0:
        raise ConfigError("kappa must be non-negative")
    profile = _load_sequence(data["sequence"])

    grad = data["gradient"]
    _require_keys(grad, {"direction", "b", "g"}, {"direction"}, "gradient")
    direction = np.asarray(grad["direction"], dtype=float)
    if direction.size not in (1, 2, 3) or not np.any(direction):
        raise ConfigError("gradient.direction must be a nonzero vector")
    if ("b" in grad) == ("g" in grad):
        raise ConfigError("gradient needs exactly one of b or g lists")
    b_values = [float(x) for x in np.atleast_1d(grad.get("b"))] if "b" in grad else None
    g_values = [float(x) for x in np.atleast_1d(grad.get("g"))] if "g" in grad else None
    for vals, name in ((b_values, "b"), (g_values, "g")):
        if vals is not None and any(v < 0 for v in vals):
            raise ConfigError(f"gradient.{name} values must be non-negative")

    tsec = data.get("time", {})
    _require_keys(tsec, {"dt", "theta"}, set(), "time")
    ssec = data.get("solver", {})
    _require_keys(ssec, {"mode", "rtol", "maxiter"}, set(), "solver")
    try:
        stepper = StepperConfig(dt=parse_time(tsec.get("dt", 200.0), "time.dt"),
                                theta=float(tsec.get("theta", 0.5)),
                                rtol=float(ssec.get("rtol", 1e-12)),
                                maxiter=int(ssec.get("maxiter", 2000)),
                                solver=ssec.get("mode", "auto"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    bc = data.get("bc", "neumann")
    if bc not in ("neumann", "periodic_strong", "periodic_weak"):
        raise ConfigError(f"unknown bc {bc!r}")

    outputs = data.get("output", {})
    _require_keys(outputs, {"csv", "svg", "logy", "waveform_svg"}, set(), "output")

    return RunConfig(mesh=mesh, marker=marker, compartments=compartments,
                     kappa=kappa, profile=profile, direction=direction,
                     b_values=b_values, g_values=g_values, stepper=stepper,
                     bc=bc, outputs=dict(outputs))
