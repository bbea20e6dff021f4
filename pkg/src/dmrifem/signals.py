"""Signal records and the delimited output format."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SignalRecord:
    """One simulated point on the attenuation curve.

    b in s/mm^2, g in T/um, S the complex total magnetization at echo time,
    attenuation |S| / |S(b=0)|.
    """

    b: float
    g: float
    direction: tuple
    S: complex
    attenuation: float


def compute_signal(u: np.ndarray, weights: np.ndarray) -> complex:
    """Total transverse magnetization: the M-weighted sum against all ones.

    weights are the mass-matrix row sums, so this is the exact P1 integral
    of the nodal field over both indicator-weighted compartments.
    """
    return complex(np.dot(weights, u))


def write_csv(records, path):
    """CSV columns b,g,S_re,S_im,attenuation in input order, full precision."""
    lines = ["b,g,S_re,S_im,attenuation"]
    for r in records:
        lines.append(",".join(repr(float(x)) for x in
                              (r.b, r.g, r.S.real, r.S.imag, r.attenuation)))
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(text)
    return text
