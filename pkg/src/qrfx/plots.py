"""Deterministic SVG figures, each written next to a CSV of the plotted data."""

from __future__ import annotations

import csv
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .utils.validation import QrfxError, ValidationError  # noqa: E402

KINDS = ("path", "ice", "pdp2", "bar", "waterfall", "hist")

_RC = {
    "svg.hashsalt": "qrfx",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


class PlotError(QrfxError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _path_plot(ax, data):
    rows = data.to_rows() if hasattr(data, "to_rows") else list(data)
    if not rows:
        raise ValidationError("selection path is empty")
    s = np.array([r["s"] for r in rows], dtype=float)
    loss = np.array([r["mean_loss"] for r in rows], dtype=float)
    nz = np.array([r["nonzero_count"] for r in rows], dtype=float)
    ax.plot(s, loss, color="tab:blue", marker="o", ms=2.5, lw=1.2)
    ax.set_xlabel("L1 budget s")
    ax.set_ylabel("mean CV loss", color="tab:blue")
    best = getattr(data, "best", None)
    if best is not None:
        ax.axvline(best.s, color="grey", ls="--", lw=0.8)
    ax2 = ax.twinx()
    ax2.step(s, nz, where="post", color="tab:red", lw=1.0)
    ax2.set_ylabel("nonzero coefficients", color="tab:red")
    ax2.spines["right"].set_visible(True)
    header = list(rows[0].keys())
    return header, [[r[k] for k in header] for r in rows]


def _ice_plot(ax, g):
    if g.curves.size == 0:
        raise ValidationError("ICE grid is empty")
    for c in g.curves:
        ax.plot(g.grid, c, color="0.7", lw=0.6)
    ax.plot(g.grid, g.pdp, color="black", lw=2.0, label="PDP")
    ax.scatter(g.sample_x, g.sample_pred, s=10, color="red", zorder=3, label="samples")
    ax.set_xlabel(g.feature)
    ax.set_ylabel(f"prediction ({g.target})")
    ax.legend(frameon=False)
    rows = [["pdp", gv, pv] for gv, pv in zip(g.grid, g.pdp)]
    for i, c in enumerate(g.curves):
        rows += [[i, gv, cv] for gv, cv in zip(g.grid, c)]
    return ["curve", g.feature, "prediction"], rows


def _pdp2_plot(ax, s):
    if s.surface.size == 0:
        raise ValidationError("PDP surface is empty")
    if s.grid_a.shape[0] > 1 and s.grid_b.shape[0] > 1:
        cs = ax.contourf(s.grid_a, s.grid_b, s.surface.T, levels=12, cmap="viridis")
        ax.figure.colorbar(cs, ax=ax, label=f"PDP ({s.target})")
    ax.scatter(s.sample_a, s.sample_b, s=10, color="red", zorder=3)
    ax.set_xlabel(s.features[0])
    ax.set_ylabel(s.features[1])
    rows = [[a, b, s.surface[g, h]] for g, a in enumerate(s.grid_a) for h, b in enumerate(s.grid_b)]
    return [s.features[0], s.features[1], "pdp"], rows


def _bar_plot(ax, data):
    names, values = data.bar_data() if hasattr(data, "bar_data") else data
    names = list(names)
    values = np.asarray(values, dtype=float)
    if not names:
        raise ValidationError("bar data is empty")
    y = np.arange(len(names))[::-1]
    ax.barh(y, values, color="tab:blue")
    ax.set_yticks(y)
    ax.set_yticklabels(names)
    ax.set_xlabel("mean |SHAP value|")
    return ["feature", "mean_abs_phi"], list(zip(names, values))


def _waterfall_plot(ax, w):
    if len(w.features) == 0:
        raise ValidationError("waterfall record is empty")
    pos = w.base_value
    y = np.arange(len(w.features))[::-1]
    for yi, val in zip(y, w.phi):
        ax.barh(yi, val, left=pos, color="tab:red" if val > 0 else "tab:blue")
        pos += val
    ax.axvline(w.base_value, color="grey", ls="--", lw=0.8)
    ax.axvline(w.prediction, color="black", lw=0.8)
    ax.set_yticks(y)
    ax.set_yticklabels([f"{n} = {v:.4g}" for n, v in zip(w.features, w.values)])
    ax.set_xlabel(f"prediction (base {w.base_value:.4f}, f(x) {w.prediction:.4f})")
    rows = [["base", "", w.base_value]] + [[n, v, p] for n, v, p in zip(w.features, w.values, w.phi)]
    rows.append(["prediction", "", w.prediction])
    return ["feature", "value", "phi"], rows


def _hist_plot(ax, data):
    values = np.asarray(data["values"], dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise ValidationError("histogram data is empty")
    qs = [float(q) for q in data.get("quantiles", (0.1, 0.5, 0.9))]
    ax.hist(values, bins=data.get("bins", 12), color="0.75", edgecolor="white")
    marks = np.quantile(values, qs, method="inverted_cdf")
    for q, m in zip(qs, marks):
        ax.axvline(m, color="tab:red", lw=1.0)
        ax.text(m, ax.get_ylim()[1] * 0.95, f"{q:g}", ha="center", va="top", fontsize=7)
    ax.set_xlabel(data.get("label", "value"))
    ax.set_ylabel("count")
    rows = [["value", "", v] for v in values] + [["quantile", q, m] for q, m in zip(qs, marks)]
    return ["kind", "level", "value"], rows


_DRAW = {"path": _path_plot, "ice": _ice_plot, "pdp2": _pdp2_plot, "bar": _bar_plot,
         "waterfall": _waterfall_plot, "hist": _hist_plot}


def emit_plot(kind: str, data, out) -> Path:
    """Render ``data`` as the SVG ``out`` and its numbers as ``<stem>_data.csv`` beside it.

    ``hist`` takes a mapping with ``values`` and optional ``quantiles``,
    ``bins`` and ``label``.  Nothing is written when the data is empty.
    """
    if kind not in _DRAW:
        raise ValidationError(f"unknown plot kind {kind!r}; expected one of {', '.join(KINDS)}")
    out = Path(out)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.2 if kind != "bar" else 0.9 + 0.22 * _bar_len(data)))
        try:
            header, rows = _DRAW[kind](ax, data)
            fig.tight_layout()
            tmp = out.with_name(out.name + ".tmp")
            try:
                fig.savefig(tmp, format="svg", metadata={"Date": None, "Creator": None})
            except OSError as exc:
                raise PlotError(f"cannot write {out}: {exc.strerror}") from exc
        finally:
            plt.close(fig)
    os.replace(tmp, out)
    _write_csv(data_path(out), header, rows)
    return out


def data_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + "_data.csv")


def _bar_len(data) -> int:
    names = data.bar_data()[0] if hasattr(data, "bar_data") else data[0]
    return max(len(names), 1)


__all__ = ["KINDS", "PlotError", "data_path", "emit_plot"]
