"""Reference governors: admissible-reference selection in front of the loop.

Both governors guarantee (x_t, v_t) stays in the safe set: the scalar
governor moves from the previous reference toward the desired one by the
largest admissible fraction (bisection), the command governor projects the
desired reference onto the admissible slice at the current state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .safeset import SafeSet

BISECTION_ITERS = 50  # beta resolution ~1e-15, far below the 1e-10 contract

ALPHA_PASS_THROUGH = math.nan  # sentinel for steps where the governor was inactive


class InvarianceViolationError(RuntimeError):
    """(x, v_prev) left the safe set; indicates a bug or a mis-calibrated set."""


class GovernorInfeasibleError(RuntimeError):
    """No admissible reference exists at the current state."""


class InitializationInfeasibleError(ValueError):
    """Initial (x0, r0) is not in the safe set."""


@dataclass
class GovernorState:
    """Mutable per-run state: previous reference and step diagnostics.

    ``alphas`` logs the admissible move size per step, with NaN marking
    pass-through steps (the sentinel branch of the bookkeeping definition).
    """

    v_prev: float
    betas: list = field(default_factory=list)
    alphas: list = field(default_factory=list)


def initialize_governor(x0, r0, safe_set: SafeSet) -> GovernorState:
    """Start the governor at v_0 = r_0, requiring (x0, r0) to be safe."""
    V0 = float(safe_set.lyapunov(x0, r0))
    lev = float(safe_set.level(r0))
    if V0 > lev:
        raise InitializationInfeasibleError(
            f"initial reference infeasible: V(x0, r0) = {V0:.6g} exceeds level {lev:.6g}"
        )
    return GovernorState(v_prev=float(r0))


def scalar_rg(x, r, state: GovernorState, safe_set: SafeSet):
    """Largest admissible step along the segment from v_prev toward r.

    Returns v = v_prev + beta (r - v_prev) with beta the largest value in
    [0, 1] keeping (x, v) safe: beta = 1 exactly when r itself is
    admissible, otherwise bisection to |beta - beta*| <= 1e-10.
    """
    r = float(r)
    v_prev = state.v_prev
    if bool(safe_set.contains(x, r)):
        state.v_prev = r
        state.betas.append(1.0)
        state.alphas.append(ALPHA_PASS_THROUGH)
        return r
    if not bool(safe_set.contains(x, v_prev)):
        raise InvarianceViolationError(
            f"(x, v_prev = {v_prev:.6g}) left the safe set; "
            f"V = {float(safe_set.lyapunov(x, v_prev)):.6g} > "
            f"level = {float(safe_set.level(v_prev)):.6g}"
        )
    lo, hi = 0.0, 1.0
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        if bool(safe_set.contains(x, v_prev + mid * (r - v_prev))):
            lo = mid
        else:
            hi = mid
    v = v_prev + lo * (r - v_prev)
    state.betas.append(lo)
    state.alphas.append(abs(v - v_prev))
    state.v_prev = v
    return v


def command_governor(x, r, safe_set: SafeSet, scan_points=2001, tol=1e-10):
    """Admissible reference closest to r (scalar references).

    Projects r onto the admissible slice at x: scans the window, refines
    the nearest feasible boundary on each side by bisection, and returns
    the closer candidate (smaller value on ties).
    """
    r = float(r)
    if bool(safe_set.contains(x, r)):
        return r
    lo, hi = safe_set.window
    grid = np.linspace(lo, hi, scan_points)
    feas = np.asarray(
        safe_set.contains(np.broadcast_to(np.asarray(x, dtype=float), grid.shape + np.shape(x)), grid)
    )
    idx = np.flatnonzero(feas)
    if idx.size == 0:
        raise GovernorInfeasibleError("no admissible reference at the current state")

    def refine(inside):
        # pull the feasible endpoint toward r (infeasible) across the boundary
        outside = r
        for _ in range(200):
            if abs(outside - inside) <= tol:
                break
            mid = 0.5 * (inside + outside)
            if bool(safe_set.contains(x, mid)):
                inside = mid
            else:
                outside = mid
        return inside

    candidates = []
    below = idx[grid[idx] <= r]
    if below.size:
        candidates.append(refine(grid[below[-1]]))
    above = idx[grid[idx] >= r]
    if above.size:
        candidates.append(refine(grid[above[0]]))
    best = min(candidates, key=lambda v: (abs(v - r), v))
    return float(best)
