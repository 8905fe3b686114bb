"""Derivative-free minimization over a parameter box.

Nelder-Mead runs in unit-cube coordinates ``u = (x - lower) / width`` and
every trial point is clipped back into the cube before it is evaluated.
Restarts come from the 3-point-per-axis lattice of box quartiles.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NoConvergence
from .models import ParamBox

QUARTILES = (0.25, 0.5, 0.75)
DEFAULT_MAX_STARTS = 27


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    iterations: int
    nfev: int
    restarts: int
    converged: bool


def _nm_coefficients(d: int):
    if d <= 2:
        return 1.0, 2.0, 0.5, 0.5
    # Gao & Han adaptive parameters keep the simplex from degenerating in higher dimension.
    return 1.0, 1.0 + 2.0 / d, 0.75 - 1.0 / (2.0 * d), 1.0 - 1.0 / d


def nelder_mead_box(
    fun: Callable[[np.ndarray], float],
    start,
    box: ParamBox,
    max_iter: int | None = None,
    xtol: float = 1e-8,
    ftol: float = 1e-12,
    init_step: float = 0.1,
):
    """Minimize ``fun`` inside ``box`` from ``start``.

    Converged when the simplex diameter drops below ``xtol * (1 + |x|)`` or
    the spread of simplex values below ``ftol``. Returns
    ``(x, f, iterations, nfev, converged)``.
    """
    d = box.dim
    lo, width = box.lower, box.width
    max_iter = max_iter or 1000 * d
    alpha_r, chi, gamma, shrink = _nm_coefficients(d)
    nfev = 0

    def f_u(u):
        nonlocal nfev
        nfev += 1
        val = fun(lo + width * u)
        return val if np.isfinite(val) else np.inf

    u0 = np.clip((np.asarray(start, dtype=float) - lo) / width, 0.0, 1.0)
    simplex = [u0]
    for i in range(d):
        v = u0.copy()
        v[i] = v[i] + init_step if v[i] + init_step <= 1.0 else v[i] - init_step
        simplex.append(v)
    simplex = np.array(simplex)
    fvals = np.array([f_u(v) for v in simplex])

    converged = False
    it = 0
    while it < max_iter:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        xs = lo + width * simplex
        diam = np.max(np.linalg.norm(xs[1:] - xs[0], axis=1))
        if diam < xtol * (1.0 + np.linalg.norm(xs[0])):
            converged = True
            break
        it += 1
        if np.isfinite(fvals[-1]) and fvals[-1] - fvals[0] < ftol:
            # equal values can mean the simplex straddles the minimum; probe its centroid
            um = simplex.mean(axis=0)
            fm = f_u(um)
            if not fm < fvals[0] - ftol:
                converged = True
                break
            simplex[-1], fvals[-1] = um, fm
            continue
        centroid = simplex[:-1].mean(axis=0)
        ur = np.clip(centroid + alpha_r * (centroid - simplex[-1]), 0.0, 1.0)
        fr = f_u(ur)
        if fr < fvals[0]:
            ue = np.clip(centroid + chi * (ur - centroid), 0.0, 1.0)
            fe = f_u(ue)
            if fe < fr:
                simplex[-1], fvals[-1] = ue, fe
            else:
                simplex[-1], fvals[-1] = ur, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = ur, fr
            continue
        if fr < fvals[-1]:
            uc = np.clip(centroid + gamma * (ur - centroid), 0.0, 1.0)
            fc = f_u(uc)
            if fc <= fr:
                simplex[-1], fvals[-1] = uc, fc
                continue
        else:
            uc = np.clip(centroid + gamma * (simplex[-1] - centroid), 0.0, 1.0)
            fc = f_u(uc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = uc, fc
                continue
        for j in range(1, d + 1):
            simplex[j] = simplex[0] + shrink * (simplex[j] - simplex[0])
            fvals[j] = f_u(simplex[j])

    best = int(np.argmin(fvals))
    return lo + width * simplex[best], float(fvals[best]), it, nfev, converged


def lattice_starts(box: ParamBox, max_starts: int = DEFAULT_MAX_STARTS, seed: int = 0) -> np.ndarray:
    """Quartile lattice start points, box center first.

    When the lattice has more than ``max_starts`` points the center is kept
    and the rest are a seeded sample without replacement, in lattice order.
    """
    grid = [np.array(pt) for pt in itertools.product(QUARTILES, repeat=box.dim)]
    center_idx = len(grid) // 2
    others = [i for i in range(len(grid)) if i != center_idx]
    if len(grid) > max_starts:
        rng = np.random.default_rng(seed)
        picked = np.sort(rng.choice(len(others), size=max(max_starts - 1, 0), replace=False))
        others = [others[i] for i in picked]
    order = [center_idx] + others
    return np.array([box.lower + box.width * grid[i] for i in order])


def multistart_minimize(
    fun: Callable[[np.ndarray], float],
    box: ParamBox,
    max_starts: int = DEFAULT_MAX_STARTS,
    seed: int = 0,
    max_iter: int | None = None,
    xtol: float = 1e-8,
    ftol: float = 1e-12,
    starts=None,
) -> OptimResult:
    """Run Nelder-Mead from each lattice start and keep the best (ties: first start)."""
    if starts is None:
        starts = lattice_starts(box, max_starts, seed)
    best = None
    total_it = total_fev = 0
    any_converged = False
    for x0 in starts:
        x, fx, it, fev, conv = nelder_mead_box(fun, x0, box, max_iter=max_iter, xtol=xtol, ftol=ftol)
        total_it += it
        total_fev += fev
        any_converged |= conv
        if best is None or fx < best[1]:
            best = (x, fx, conv)
    if not any_converged:
        raise NoConvergence(f"Nelder-Mead hit the iteration cap from all {len(starts)} starts")
    return OptimResult(
        x=best[0], fun=best[1], iterations=total_it, nfev=total_fev,
        restarts=len(starts), converged=bool(best[2]),
    )
