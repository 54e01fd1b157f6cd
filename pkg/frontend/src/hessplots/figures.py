"""Figure builders: Hessian heatmaps, concentration scatter with reference
curves, decay fits, and training structure traces.

Output is deterministic: fixed figure geometry, pinned SVG hash salt, no
date metadata. render() writes both PNG and SVG next to the requested stem.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import formats  # noqa: E402

plt.rcParams["svg.hashsalt"] = "hessplots"

KINDS = ("heatmap", "concentration", "decay", "trace")

MEAN_COLOR = "#d62728"   # theoretical mean curve ("red")
LIMIT_COLOR = "#2ca02c"  # large-C limit line ("green")


@dataclass
class FigureSpec:
    kind: str
    inputs: dict
    output: str
    style: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "FigureSpec":
        raw = formats.read_json(path)
        missing = {"kind", "inputs", "output"} - set(raw)
        if missing:
            raise formats.SchemaMismatchError(f"figure spec lacks {sorted(missing)}")
        return cls(kind=raw["kind"], inputs=raw["inputs"], output=raw["output"],
                   style=raw.get("style", {}))


def _new_figure(style, default_size):
    size = style.get("figsize", default_size)
    return plt.figure(figsize=tuple(size), dpi=style.get("dpi", 100))


def build_heatmap(spec: FigureSpec):
    M = formats.read_hmat(spec.inputs["matrix"])
    fig = _new_figure(spec.style, (6.0, 5.0))
    ax = fig.add_subplot(111)
    im = ax.imshow(M, cmap=spec.style.get("cmap", "viridis"), interpolation="nearest")
    fig.colorbar(im, ax=ax)
    title = spec.style.get("title", "absolute Hessian entries")
    ax.set_title(title)
    if "layout" in spec.inputs:
        lay = formats.read_json(spec.inputs["layout"])
        side = lay.get("side")
        if side is not None and side != M.shape[0]:
            raise formats.SchemaMismatchError("layout side disagrees with matrix")
        if lay.get("kind") == "mlp":
            split = lay["m"] * lay["d"]
            ax.axhline(split - 0.5, color="w", lw=0.6)
            ax.axvline(split - 0.5, color="w", lw=0.6)
    return fig


def _column(rows, name):
    return [r[name] for r in rows]


def build_concentration(spec: FigureSpec):
    rows = formats.read_concentration_csv(spec.inputs["csv"])
    theory = formats.read_json(spec.inputs["theory"])
    case = rows[0]["case"] if rows else ""
    pair = ("H11", "H12") if not math.isnan(rows[0]["H11"]) else ("Htilde11", "Htilde12")
    fig = _new_figure(spec.style, (11.0, 4.0))
    for k, col in enumerate(pair):
        ax = fig.add_subplot(1, 3, k + 1)
        ax.scatter(_column(rows, "C"), _column(rows, col), s=6, alpha=0.35,
                   color="#1f77b4", label="realizations")
        th = theory["H11" if k == 0 else "H12"]  # theory keys are case-agnostic
        curve = sorted(th["curve"], key=lambda c: c["C"])
        ax.plot([c["C"] for c in curve], [c["value"] for c in curve], color=MEAN_COLOR,
                lw=1.6, marker="o", ms=3, label="theoretical mean")
        ax.axhline(th["limit"], color=LIMIT_COLOR, lw=1.4, ls="--", label="large-C limit")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("C")
        ax.set_title(col)
        if k == 0:
            ax.legend(fontsize=8)
    ax = fig.add_subplot(1, 3, 3)
    rcol = "r" if pair[0] == "H11" else "rtilde"
    ax.scatter(_column(rows, "C"), _column(rows, rcol), s=6, alpha=0.35, color="#1f77b4")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("C")
    ax.set_title("off/diag ratio")
    fig.suptitle(spec.style.get("title", case))
    fig.tight_layout()
    return fig


def build_decay(spec: FigureSpec):
    rows = formats.read_decay_csv(spec.inputs["csv"])
    fit = formats.read_json(spec.inputs["fit"])
    Cs = _column(rows, "C")
    means = _column(rows, "mean_ratio")
    fig = _new_figure(spec.style, (5.0, 4.0))
    ax = fig.add_subplot(111)
    ax.errorbar(Cs, means, yerr=_column(rows, "std_ratio"), fmt="o", ms=4,
                color="#1f77b4", label="mean ratio")
    xs = [min(Cs), max(Cs)]
    ys = [math.exp(fit["intercept"] + fit["slope"] * math.log(x)) for x in xs]
    ax.plot(xs, ys, color=MEAN_COLOR, lw=1.5,
            label=f"fit slope = {fit['slope']:.3f} ± {fit['slope_stderr']:.3f}")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("C")
    ax.set_ylabel("off/diag block norm ratio")
    ax.set_title(spec.style.get("title", fit.get("case", "")))
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def build_trace(spec: FigureSpec):
    rows = formats.read_trace_csv(spec.inputs["csv"])
    steps = _column(rows, "step")
    fig = _new_figure(spec.style, (6.0, 4.0))
    ax = fig.add_subplot(111)
    ax.plot(steps, _column(rows, "diag_ww"), marker="o", ms=3, label="diag_ww")
    ax.plot(steps, _column(rows, "diag_vv"), marker="s", ms=3, label="diag_vv")
    ax.plot(steps, _column(rows, "circ_wv"), marker="^", ms=3, label="circ_wv")
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("step")
    ax.set_ylabel("structure score")
    ax2 = ax.twinx()
    ax2.plot(steps, _column(rows, "loss"), color="#7f7f7f", ls=":", label="loss")
    ax2.set_ylabel("loss")
    ax.legend(loc="center right", fontsize=8)
    ax.set_title(spec.style.get("title", "training structure trace"))
    fig.tight_layout()
    return fig


_BUILDERS = {
    "heatmap": build_heatmap,
    "concentration": build_concentration,
    "decay": build_decay,
    "trace": build_trace,
}


def render(spec: FigureSpec):
    """Build the figure and write <stem>.png and <stem>.svg; returns the paths."""
    if spec.kind not in _BUILDERS:
        raise formats.SchemaMismatchError(f"unknown figure kind {spec.kind!r}")
    fig = _BUILDERS[spec.kind](spec)
    stem = Path(spec.output)
    if stem.suffix:
        stem = stem.with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    png = stem.with_suffix(".png")
    svg = stem.with_suffix(".svg")
    try:
        fig.savefig(png, metadata={"Software": "hessplots"})
        fig.savefig(svg, metadata={"Date": None})
    finally:
        plt.close(fig)
    return [str(png), str(svg)]
