"""SVG plots of survival curves and tails with a predicted-law overlay.

Output is a pure function of the inputs: the SVG carries no date and uses a
fixed id salt.
"""

from __future__ import annotations

import csv
import math

import numpy as np

OVERLAYS = ("none", "sqrt", "inverse", "log", "power")


class PlotInputError(ValueError):
    pass


def read_curve_csv(path) -> tuple[str, np.ndarray, dict[str, np.ndarray]]:
    """Return ``(kind, x, columns)`` for a survival-curve or tail CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotInputError("empty CSV")
    header, body = rows[0], rows[1:]
    if header[:2] == ["n", "p_z"]:
        kind, xcol = "survival", "n"
    elif header[:2] == ["x", "tail_prob"]:
        kind, xcol = "tail", "x"
    else:
        raise PlotInputError(f"unrecognised header {header!r}")
    if not body:
        raise PlotInputError("curve has no rows")
    cols: dict[str, list[float]] = {h: [] for h in header}
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise PlotInputError(f"row {i}: expected {len(header)} fields, got {len(row)}")
        for h, v in zip(header, row):
            try:
                cols[h].append(float(v))
            except ValueError:
                raise PlotInputError(f"row {i}: field {h!r} is not numeric: {v!r}") from None
    arr = {h: np.array(v) for h, v in cols.items()}
    return kind, arr.pop(xcol), arr


def overlay_shape(x, model: str, kappa: float | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if model == "sqrt":
        return x**-0.5
    if model == "inverse":
        return 1.0 / x
    if model == "log":
        return 1.0 / np.log(x)
    if model == "power":
        if kappa is None:
            raise PlotInputError("power overlay needs kappa")
        return x**-kappa
    raise PlotInputError(f"unknown overlay {model!r}")


def fit_constant(x, y, model: str, kappa: float | None = None) -> float:
    """Least-squares constant ``c`` of ``y ~ c * shape(x)`` on the log scale."""
    shape = overlay_shape(x, model, kappa)
    ok = (y > 0) & np.isfinite(y)
    if not ok.any():
        raise PlotInputError("no positive values to fit the overlay to")
    return float(math.exp(np.mean(np.log(y[ok]) - np.log(shape[ok]))))


def emit_plot(
    csv_path,
    svg_path,
    overlay: str = "none",
    column: str = "p_x",
    constant: float | None = None,
    kappa: float | None = None,
    title: str = "",
) -> float | None:
    """Write an SVG of one curve column with an optional predicted-law overlay.

    Survival curves get log-log axes (semilog-x for the ``log`` overlay), tails
    get log-log axes.  The overlay constant is fitted when not given.  Returns
    the constant used, or None without overlay.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kind, x, cols = read_curve_csv(csv_path)
    if kind == "tail":
        column = "tail_prob"
    if column not in cols:
        raise PlotInputError(f"column {column!r} not in CSV")
    y = cols[column]
    se_col = "se_" + column[2:] if column.startswith("p_") else None
    with matplotlib.rc_context({"svg.hashsalt": "decobp", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4.2))
        pos = y > 0
        if se_col in cols:
            ax.errorbar(x[pos], y[pos], yerr=2 * cols[se_col][pos], fmt="o", ms=4, label=column)
        else:
            ax.plot(x[pos], y[pos], "o-", ms=3, label=column)
        used = None
        if overlay != "none":
            used = constant if constant is not None else fit_constant(x, y, overlay, kappa)
            grid = np.geomspace(x.min(), x.max(), 200)
            labels = {
                "sqrt": "c / sqrt(n)",
                "inverse": "c / n",
                "log": "K / log n",
                "power": f"C n^-{kappa:.3g}" if kappa is not None else "",
            }
            ax.plot(grid, used * overlay_shape(grid, overlay, kappa), "-", lw=1.2, label=f"{labels[overlay]}, c={used:.4g}")
        ax.set_xscale("log")
        if overlay != "log":
            ax.set_yscale("log")
        ax.set_xlabel("n" if kind == "survival" else "x")
        ax.set_ylabel("probability")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return used
