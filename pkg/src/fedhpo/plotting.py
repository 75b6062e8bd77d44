"""Static SVG figures rendered from run records and cost probes.

Output is byte-stable: the SVG id salt is pinned and no date is embedded.
"""

from __future__ import annotations

import re
from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import PolicyMissingError  # noqa: E402

_AW = re.compile(r"^(?P<group>\w+)\[(?P<k>\d+)\]$")

RC = {
    "svg.hashsalt": "fedhpo",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
}


@contextmanager
def figure_style():
    with matplotlib.rc_context(RC):
        yield


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def hyperparam_series(records) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """``{dim name: (mu per round, sigma per round)}`` in raw units."""
    if not records or not records[0].has_policy:
        raise PolicyMissingError("baseline run has no policy to plot")
    names = list(records[0].mu)
    return {
        n: (np.array([r.mu[n] for r in records]), np.array([r.sigma[n] for r in records]))
        for n in names
    }


def _panels(names):
    """Group simplex members (``aw[0]``, ``aw[1]``, ...) into one panel each."""
    panels: dict[str, list[str]] = {}
    for n in names:
        m = _AW.match(n)
        panels.setdefault(m.group("group") if m else n, []).append(n)
    return panels


def plot_hyperparam_evolution(records, path) -> Path:
    """Policy mean per hyperparameter over rounds, with a +/- sigma band."""
    series = hyperparam_series(records)
    rounds = np.array([r.q for r in records])
    panels = _panels(series)
    for key, members in panels.items():
        if len(members) > 1:
            total = np.sum([series[n][0] for n in members], axis=0)
            if not np.allclose(total, 1.0, atol=1e-9):
                raise ValueError(f"{key} weights do not sum to 1 (max error {np.abs(total - 1).max():.3g})")
    with figure_style():
        fig, axes = plt.subplots(len(panels), 1, sharex=True, figsize=(6, 1.6 * len(panels) + 0.6),
                                 squeeze=False)
        for ax, (key, members) in zip(axes[:, 0], panels.items()):
            for n in members:
                mu, sig = series[n]
                (line,) = ax.plot(rounds, mu, label=n, gid=f"mu-{n}")
                ax.fill_between(rounds, mu - sig, mu + sig, color=line.get_color(), alpha=0.2, linewidth=0)
            ax.set_ylabel(key)
            if len(members) > 1:
                ax.legend(ncol=min(len(members), 4), frameon=False)
        axes[-1, 0].set_xlabel("round")
        fig.tight_layout()
        return save(fig, path)


def plot_aggregation_weights(records, path, group: str = "aw") -> Path:
    """Applied aggregation weight of every client over rounds."""
    keys = [k for k in records[0].h if (m := _AW.match(k)) and m.group("group") == group]
    rounds = [r.q for r in records]
    with figure_style():
        fig, ax = plt.subplots(figsize=(6, 2.6))
        for k in keys:
            ax.plot(rounds, [r.h[k] for r in records], label=k.replace(f"{group}[", "C").rstrip("]"))
        ax.set_xlabel("round")
        ax.set_ylabel("aggregation weight")
        ax.legend(ncol=min(len(keys), 8), frameon=False)
        fig.tight_layout()
        return save(fig, path)


def plot_search_cost(probes, path) -> Path:
    """Per-sample search time and peak sampling memory against grid cardinality (log axes)."""
    with figure_style():
        fig, (ax_t, ax_m) = plt.subplots(1, 2, figsize=(8, 3))
        for mode, marker in (("discrete", "o"), ("continuous", "s")):
            pts = sorted((p for p in probes if p.mode == mode and p.sweep == "grid"), key=lambda p: p.cardinality)
            if not pts:
                continue
            x = [p.cardinality for p in pts]
            ax_t.plot(x, [p.seconds for p in pts], marker=marker, label=mode)
            ax_m.plot(x, [max(p.peak_bytes, 1) for p in pts], marker=marker, label=mode)
        for ax, label in ((ax_t, "time per sample (s)"), (ax_m, "peak sampling memory (bytes)")):
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel("grid cardinality")
            ax.set_ylabel(label)
            ax.legend(frameon=False)
        fig.tight_layout()
        return save(fig, path)
