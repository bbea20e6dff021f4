"""Static report figures rendered to files (SVG by default)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def attenuation_figure(records, path, logy=False, title=None):
    """Attenuation versus b-value, one marker per simulated record."""
    b = np.array([r.b for r in records])
    att = np.array([r.attenuation for r in records])
    order = np.argsort(b)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(b[order], att[order], "o-", color="tab:blue", ms=4)
    ax.set_xlabel(r"b (s/mm$^2$)")
    ax.set_ylabel(r"signal attenuation $|S|/|S_0|$")
    if logy:
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def waveform_figure(profile, path, samples=2000):
    """Temporal profile f(t) and its running integral F(t)."""
    ts = np.linspace(0.0, profile.echo_time, samples)
    f = np.array([profile.f(t) for t in ts])
    F = np.array([profile.F(t) for t in ts])
    fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 4.2))
    ax0.plot(ts, f, color="tab:blue")
    ax0.set_ylabel("f(t)")
    ax0.grid(True, alpha=0.3)
    ax1.plot(ts, F, color="tab:orange")
    ax1.set_ylabel("F(t) (us)")
    ax1.set_xlabel("t (us)")
    ax1.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
