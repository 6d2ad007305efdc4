"""SVG charts rendered from already-written tables (no physics here)."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigError  # noqa: E402

_RC = {"svg.hashsalt": "szilard-battery", "svg.fonttype": "path", "path.simplify": False}


def read_table(path: Path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _svg(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def _series(rows, key, x, y, where=None):
    out = defaultdict(list)
    for r in rows:
        if where and not where(r):
            continue
        out[r[key]].append((float(r[x]), float(r[y])))
    return {k: sorted(v) for k, v in out.items()}


def plot_simulate(rows):
    backends = sorted({r["backend"] for r in rows})
    fig, axes = plt.subplots(1, len(backends), figsize=(4.5 * len(backends), 3.6), squeeze=False)
    for ax, b in zip(axes[0], backends):
        for p, pts in _series(rows, "p_up", "cycle", "mean_phonon", lambda r: r["backend"] == b).items():
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", ms=3, label=f"p = {p}")
        ax.set_title(b)
        ax.set_xlabel("cycle")
        ax.set_ylabel("mean phonon number")
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _svg(fig)


def plot_ergotropy(rows):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    keyed = [dict(r, key=(r["source"], r["p_up"])) for r in rows]
    for (src, p), pts in sorted(_series(keyed, "key", "cycle", "ergotropy").items()):
        xs, ys = zip(*pts)
        ax.plot(xs, ys, ls="--" if src == "ideal" else "-", label=f"{src} p = {p}")
    ax.set_xlabel("cycle")
    ax.set_ylabel("ergotropy (quanta)")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    return _svg(fig)


def plot_efficiency(rows):
    p = [float(r["p_up"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for col, style in (("ideal_info_work_eff", "--"), ("sim_info_work_eff", "-"),
                       ("ideal_charging_eff", "--"), ("sim_charging_eff", "-")):
        ax.plot(p, [float(r[col]) for r in rows], ls=style, label=col)
    ax.set_xlabel("p_up")
    ax.set_ylabel("efficiency")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _svg(fig)


def plot_jarzynski(rows):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for b in sorted({r["backend"] for r in rows}):
        sub = sorted((float(r["p_up"]), float(r["lhs"]), float(r["gamma"]), float(r["gamma_stderr"]))
                     for r in rows if r["backend"] == b)
        ps, lhs, gam, err = zip(*sub)
        ax.plot(ps, lhs, marker="o", ls="none", label=f"{b} lhs")
        ax.errorbar(ps, gam, yerr=err, marker="s", ls="none", label=f"{b} gamma")
    ideal = sorted({(float(r["p_up"]), float(r["ideal"])) for r in rows})
    ax.plot(*zip(*ideal), color="k", lw=1, label="2(1 - p)")
    ax.set_xlabel("p_up")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _svg(fig)


def plot_matrix(rows, title):
    cols = [c for c in rows[0] if c != "result"]
    mat = [[float(r[c]) for c in cols] for r in rows]
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(mat, origin="lower", cmap="viridis", vmin=0.0, vmax=1.0)
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("prepared n")
    ax.set_ylabel("result")
    ax.set_title(title)
    fig.tight_layout()
    return _svg(fig)


RENDERERS = {
    "simulate.csv": ("fig3_mean_phonon.svg", plot_simulate),
    "ergotropy.csv": ("fig4_ergotropy.svg", plot_ergotropy),
    "efficiency.csv": ("fig4_efficiency.svg", plot_efficiency),
    "jarzynski.csv": ("jarzynski.svg", plot_jarzynski),
    "m1.csv": ("m1.svg", lambda rows: plot_matrix(rows, "M1")),
    "m2.csv": ("m2.svg", lambda rows: plot_matrix(rows, "M2")),
}


def render_all(data_dir: Path) -> dict:
    """Render every known table in ``data_dir``; returns {file name: SVG bytes}."""
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    present = [name for name in RENDERERS if (data_dir / name).is_file()]
    if not present:
        raise ConfigError(f"no tables found in {data_dir}; expected one of {sorted(RENDERERS)}")
    out = {}
    with plt.rc_context(_RC):
        for name in present:
            rows = read_table(data_dir / name)
            if not rows:
                raise ConfigError(f"table {data_dir / name} is empty")
            target, fn = RENDERERS[name]
            out[target] = fn(rows)
    return out
