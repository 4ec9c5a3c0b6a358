"""PNG figures rendered from the plot CSV files.

matplotlib is imported lazily so the library and the harness work without it.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .exceptions import UnknownKind

_LABELS = {
    "cl_vs_l": ("interface length l", "c_l"),
    "density_histogram": ("x / l", "dislocations per unit length"),
    "gap_convergence": ("seed", "max gap error"),
    "lambda_limit": ("Lambda", "|cut-off energy gap|"),
}


def _read(path):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in (rows[0].keys() if rows else [])}


def render(csv_path, kind: str, png_path=None) -> Path:
    """Draw ``kind`` from ``csv_path``; the PNG lands next to the CSV by default."""
    if kind not in _LABELS:
        raise UnknownKind(f"unknown plot kind {kind!r}")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cols = _read(csv_path)
    png_path = Path(png_path) if png_path else Path(csv_path).with_suffix(".png")
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    if cols:
        if kind == "cl_vs_l":
            ax.plot(cols["l"], cols["c_l"], "o-")
            ax.set_xscale("log")
        elif kind == "density_histogram":
            x = cols["bin_center"]
            width = (x[1] - x[0]) * 0.9 if len(x) > 1 else 0.1
            ax.bar(x, cols["density"], width=width, alpha=0.7)
            ax.axhline(cols["n_star_lambda"][0], color="k", ls="--", label="n* (lambda)")
            ax.axhline(cols["n_star_Lambda"][0], color="r", ls=":", label="n* (Lambda)")
            ax.legend()
        elif kind == "gap_convergence":
            ax.semilogy(cols["seed"], [max(v, 1e-18) for v in cols["max_gap_error"]], ".")
        else:
            ax.loglog(cols["Lambda"], cols["gap"], "o-")
    ax.set_xlabel(_LABELS[kind][0])
    ax.set_ylabel(_LABELS[kind][1])
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def render_all(csv_paths) -> list[Path]:
    """Render every ``<kind>.csv`` whose stem names a known kind."""
    return [render(p, Path(p).stem) for p in csv_paths if Path(p).stem in _LABELS]
