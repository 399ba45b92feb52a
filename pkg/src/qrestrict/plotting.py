"""SVG figures for scaling runs and admissible exponent regions."""

from __future__ import annotations

import csv
from fractions import Fraction
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "qrestrict"  # stable element ids across runs


class PlotInputError(ValueError):
    pass


def read_rows(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        header = reader.fieldnames or []
    if not rows or "value" not in header or "R" not in header:
        raise PlotInputError("expected a non-empty CSV with R and value columns")
    return header, rows


def scaling_figure(rows: Sequence[dict], out_path, predicted: dict | None = None, title: str = "") -> None:
    """Log-log plot of value against the sweep variable, one series per exponent.

    ``predicted`` maps an exponent (as text) to a reference slope.
    """
    mu_cols = [k for k in rows[0] if k.startswith("mu")]
    xs_key = "R"
    # a sweep at fixed R runs over mu instead
    if len({r["R"] for r in rows}) == 1 and mu_cols:
        xs_key = max(mu_cols, key=lambda k: len({r[k] for r in rows}))
    groups: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        try:
            x, y = float(r[xs_key]), float(r["value"])
        except (TypeError, ValueError) as exc:
            raise PlotInputError(f"malformed row: {r}") from exc
        groups.setdefault(r.get("p_or_q") or "", []).append((x, y))
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for key, pts in sorted(groups.items()):
        pts.sort()
        x = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        label = f"exponent {key}" if key else "value"
        ax.loglog(x, y, "o", label=label)
        if len(pts) >= 2 and np.all(y > 0):
            slope, icpt = np.polyfit(np.log(x), np.log(y), 1)
            ax.loglog(x, np.exp(icpt) * x**slope, "-", label=f"fit slope {slope:.3f}")
            if predicted and key in predicted and predicted[key] is not None:
                ref = predicted[key]
                ax.loglog(x, y[0] * (x / x[0]) ** ref, "--", label=f"reference slope {ref:.3f}")
    ax.set_xlabel(xs_key)
    ax.set_ylabel("value")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def region_figure(vertices: Sequence[Sequence], out_path, title: str = "") -> None:
    """The admissible polygon in the (1/p, 1/q) square."""
    if len(vertices) < 3:
        raise PlotInputError("a region needs at least three vertices")
    pts = [(float(Fraction(u)), float(Fraction(v))) for u, v in vertices]
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    xs = [p[0] for p in pts] + [pts[0][0]]
    ys = [p[1] for p in pts] + [pts[0][1]]
    ax.fill(xs, ys, alpha=0.3)
    ax.plot(xs, ys, "-o")
    for (u, v), raw in zip(pts, vertices):
        ax.annotate(f"({raw[0]}, {raw[1]})", (u, v), fontsize=7, textcoords="offset points", xytext=(4, 4))
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, max(0.5, max(ys) * 1.2))
    ax.set_xlabel("1/p")
    ax.set_ylabel("1/q")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def predicted_slopes_from_summary(summary: dict) -> dict:
    out = {}
    for fit in summary.get("fits", []):
        if fit.get("predicted_upper") is not None:
            out[format(float(fit["p"]), ".17g")] = float(fit["predicted_upper"])
    return out

