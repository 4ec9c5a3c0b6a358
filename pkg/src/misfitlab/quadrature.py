"""Adaptive tensor Gauss-Legendre cubature over axis-aligned cells.

Cells are refined by bisection in both directions, largest error first,
until the summed error estimate drops below the requested tolerance.  The
integrand is evaluated in batches so that a whole refinement round costs a
handful of numpy calls.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BudgetExceeded


def _gauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass
class CubatureResult:
    value: float
    error: float
    cells: int


def _rule_on_cells(f, cells, params, nodes, weights):
    """Tensor rule on every cell of ``cells`` (shape ``(m, 4)``: x0, x1, y0, y1)."""
    x0, x1, y0, y1 = cells.T
    hx = x1 - x0
    hy = y1 - y0
    X = x0[:, None, None] + hx[:, None, None] * nodes[None, :, None]
    Y = y0[:, None, None] + hy[:, None, None] * nodes[None, None, :]
    X, Y = np.broadcast_arrays(X, Y)
    P = params[:, None, None, :]
    vals = f(X, Y, P)
    W = weights[:, None] * weights[None, :]
    return np.einsum("mij,ij->m", vals, W) * hx * hy


def _split(cells):
    x0, x1, y0, y1 = cells.T
    xm = 0.5 * (x0 + x1)
    ym = 0.5 * (y0 + y1)
    return np.stack(
        [
            np.column_stack((x0, xm, y0, ym)),
            np.column_stack((xm, x1, y0, ym)),
            np.column_stack((x0, xm, ym, y1)),
            np.column_stack((xm, x1, ym, y1)),
        ],
        axis=1,
    )


def adaptive_cells(f, cells, params, tol, order=8, max_cells=200_000) -> CubatureResult:
    """Integrate ``f(X, Y, P)`` over a union of rectangles.

    ``params`` holds one row of per-cell data that is passed to ``f`` with
    the evaluation points; it is inherited by children on refinement.  The
    error of a cell is the gap between its own rule and the sum of the rules
    on its four children; the children's sum is what gets accumulated.
    """
    nodes, weights = _gauss(order)
    cells = np.asarray(cells, dtype=float).reshape(-1, 4)
    params = np.asarray(params, dtype=float).reshape(cells.shape[0], -1)
    if cells.shape[0] == 0:
        return CubatureResult(0.0, 0.0, 0)

    def evaluate(batch, pbatch):
        coarse = _rule_on_cells(f, batch, pbatch, nodes, weights)
        kids = _split(batch).reshape(-1, 4)
        kp = np.repeat(pbatch, 4, axis=0)
        fine = _rule_on_cells(f, kids, kp, nodes, weights).reshape(-1, 4).sum(axis=1)
        return fine, np.abs(fine - coarse)

    value, err = evaluate(cells, params)
    # heap of (-err, id); leaves indexed in parallel lists
    leaves_cells = list(cells)
    leaves_params = list(params)
    leaves_val = list(value)
    leaves_err = list(err)
    heap = [(-e, i) for i, e in enumerate(err)]
    heapq.heapify(heap)
    total_err = math.fsum(leaves_err)
    n_cells = len(leaves_cells)

    while total_err > tol:
        if n_cells > max_cells:
            raise BudgetExceeded(
                f"cubature used {n_cells} cells, error estimate {total_err:.3e} > tol {tol:.3e}"
            )
        # refine every leaf carrying a large share of the remaining error
        threshold = max(-heap[0][0] * 0.25, tol / (4 * len(heap)))
        picked = []
        while heap and -heap[0][0] >= threshold:
            picked.append(heapq.heappop(heap)[1])
        if not picked:
            picked.append(heapq.heappop(heap)[1])
        batch = np.array([leaves_cells[i] for i in picked])
        pbatch = np.array([leaves_params[i] for i in picked])
        kids = _split(batch).reshape(-1, 4)
        kp = np.repeat(pbatch, 4, axis=0)
        kval, kerr = evaluate(kids, kp)
        for i in picked:
            leaves_val[i] = 0.0
            leaves_err[i] = 0.0
        for c, p, v, e in zip(kids, kp, kval, kerr):
            leaves_cells.append(c)
            leaves_params.append(p)
            leaves_val.append(v)
            leaves_err.append(e)
            heapq.heappush(heap, (-e, len(leaves_val) - 1))
        n_cells += 4 * len(picked)
        total_err = math.fsum(leaves_err)

    return CubatureResult(math.fsum(leaves_val), total_err, n_cells)
