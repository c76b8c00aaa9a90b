"""Forward-invariant safe sets from quadratic Lyapunov sublevel conditions.

A pair (x, v) is safe when V(x, v) = ||x - h(v)||^2_{P(v)} lies below a
level that guarantees every constraint row for the whole constant-reference
evolution.  Two level choices ship: a reference-dependent level computed in
closed form row by row, and the largest uniform level contained in it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plant import ConstraintPolytope
from .tracking import TrackingController


class ReferenceWindowError(ValueError):
    """Reference outside the admissible window."""


class ReferenceInfeasibleError(ValueError):
    """A constraint row is violated at steady state for this reference."""


def compute_gamma(v, poly: ConstraintPolytope, ctrl: TrackingController):
    """Largest sublevel of V(., v) whose ellipsoid satisfies every row.

    For each row i of the closed-loop polytope G(v) (x - h(v)) <= m(v), the
    widest admissible level is (m_i / ||G_i P(v)^{-1/2}||)^2; rows without
    x-dependence are skipped (the reference window enforces them).  Returns
    min over rows, broadcasting over v.

    Raises ReferenceInfeasibleError when some steady-state margin m_i <= 0.
    """
    v = np.asarray(v, dtype=float)
    h_v = ctrl.ss.h(v)
    u_v = np.atleast_1d(np.asarray(ctrl.ss.u_ss(v), dtype=float))
    if u_v.shape[-1] != poly.Au.shape[1]:
        u_v = u_v[..., None]
    K_v = ctrl.gain(v)
    G = poly.Ax + np.einsum("zm,...mn->...zn", poly.Au, K_v)
    margins = poly.b - np.einsum("zn,...n->...z", poly.Ax, h_v) - np.einsum(
        "zm,...m->...z", poly.Au, u_v
    )
    if np.any(margins <= 0.0):
        bad = int(np.argmin(margins.reshape(-1, poly.n_rows).min(axis=0)))
        label = poly.row_labels[bad] if poly.row_labels else str(bad)
        raise ReferenceInfeasibleError(
            f"constraint row {label} has non-positive steady-state margin"
        )
    P_inv = np.linalg.inv(ctrl.lyap_weight(v))
    den = np.einsum("...zn,...nm,...zm->...z", G, P_inv, G)
    # rows with G_i = 0 impose no x-dependence; exclude them from the min
    levels = np.where(den > 0.0, margins**2 / np.where(den > 0.0, den, 1.0), np.inf)
    return np.min(levels, axis=-1)


@dataclass(frozen=True)
class LevelCertificate:
    """Calibration record for a uniform safe level."""

    V_min: float
    V_max: float
    k_star: int | None
    delta: float
    gamma_max: float


class SafeSet:
    """Sublevel safe set {(x, v) : V(x, v) <= level(v)} on a reference window.

    kind is "fixed" (constant level) or "variable" (closed-form level per
    reference).  ``level_scale`` multiplies the calibrated level; it exists
    for fault-injection experiments and defaults to 1.  Queries are pure and
    broadcast over leading axes.
    """

    def __init__(self, kind, ctrl: TrackingController, poly: ConstraintPolytope,
                 level_value=None, level_scale=1.0, certificate=None):
        if kind not in ("fixed", "variable"):
            raise ValueError(f"unknown safe-set kind {kind!r}")
        self.kind = kind
        self.ctrl = ctrl
        self.poly = poly
        self.level_scale = float(level_scale)
        self._level_value = level_value
        self.certificate = certificate

    @property
    def window(self):
        return self.ctrl.ss.window

    def _check_window(self, v):
        lo, hi = self.window
        if np.any(np.asarray(v) < lo - 1e-9) or np.any(np.asarray(v) > hi + 1e-9):
            raise ReferenceWindowError(f"reference {v} outside window [{lo}, {hi}]")

    def level(self, v):
        self._check_window(v)
        if self.kind == "fixed":
            return self.level_scale * self._level_value * np.ones_like(np.asarray(v, dtype=float))
        return self.level_scale * compute_gamma(v, self.poly, self.ctrl)

    def lyapunov(self, x, v):
        return self.ctrl.lyapunov(x, v)

    def contains(self, x, v):
        """Membership V(x, v) <= level(v); boolean, broadcast over batches."""
        self._check_window(v)
        return self.ctrl.lyapunov(x, v) <= self.level(v)

    def cross_section_x(self, v):
        """Membership predicate for the state slice at fixed v."""
        self._check_window(v)
        lev = self.level(v)
        return lambda x: self.ctrl.lyapunov(x, v) <= lev

    def cross_section_v(self, x, scan_points=2001, tol=1e-10):
        """Admissible reference interval at state x, or None when empty.

        Scans the window, then bisects each side of the feasible grid range
        to the boundary; assumes the slice is an interval (continuity of the
        level and of V in v), which holds for the shipped scenarios.
        """
        lo, hi = self.window
        grid = np.linspace(lo, hi, scan_points)
        feas = self.contains(np.broadcast_to(np.asarray(x, dtype=float), grid.shape + np.shape(x)), grid)
        idx = np.flatnonzero(feas)
        if idx.size == 0:
            return None
        left = grid[idx[0]]
        right = grid[idx[-1]]

        def bisect(inside, outside):
            for _ in range(200):
                if abs(outside - inside) <= tol:
                    break
                mid = 0.5 * (inside + outside)
                if bool(self.contains(x, mid)):
                    inside = mid
                else:
                    outside = mid
            return inside

        a = left if idx[0] == 0 else bisect(left, grid[idx[0] - 1])
        b = right if idx[-1] == scan_points - 1 else bisect(right, grid[idx[-1] + 1])
        return (a, b)

    def level_on_grid(self, points=181):
        vgrid = self.ctrl.ss.grid(points)
        return vgrid, self.level(vgrid)


def _ball_radius(level, ctrl, vgrid):
    lam_max = np.linalg.eigvalsh(ctrl.lyap_weight(vgrid)).max(axis=-1)
    return float(np.min(np.sqrt(level / lam_max)))


def calibrate_fixed_level(poly: ConstraintPolytope, ctrl: TrackingController, grid):
    """Uniform level V_max = min over the grid of the per-reference level.

    Also certifies the radius delta of a state ball around h(v) that is
    contained in every slice, and a diagnostic settling horizon k_star
    (steps for the worst observed quadratic contraction to pull the largest
    per-reference level under the uniform one).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("calibration grid is empty")
    gamma = compute_gamma(grid, poly, ctrl)
    V_max = float(np.min(gamma))
    if not np.isfinite(V_max):
        cert = LevelCertificate(V_min=V_max, V_max=V_max, k_star=None,
                                delta=np.inf, gamma_max=float(np.max(gamma)))
        return V_max, cert
    if V_max <= 0.0:
        raise ReferenceInfeasibleError("non-positive level on the calibration grid")
    delta = _ball_radius(V_max, ctrl, grid)

    # worst one-step contraction of V on level-set boundary samples
    angles = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
    factor = 0.0
    sub = grid[:: max(1, len(grid) // 45)]
    for v in sub:
        P = ctrl.lyap_weight(v)
        evals, evecs = np.linalg.eigh(P)
        P_inv_half = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
        ring = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        if ring.shape[-1] != P.shape[-1]:  # only 2-state plants sampled here
            continue
        x = ctrl.ss.h(v) + np.sqrt(compute_gamma(v, poly, ctrl)) * ring @ P_inv_half.T
        V0 = ctrl.lyapunov(x, v)
        V1 = ctrl.lyapunov(ctrl.closed_loop(x, v), v)
        factor = max(factor, float(np.max(V1 / V0)))
    gamma_max = float(np.max(gamma))
    if 0.0 < factor < 1.0:
        k_star = int(np.ceil(np.log(V_max / gamma_max) / np.log(factor))) if gamma_max > V_max else 0
    else:
        k_star = None
    cert = LevelCertificate(V_min=V_max, V_max=V_max, k_star=k_star,
                            delta=delta, gamma_max=gamma_max)
    return V_max, cert


def fixed_level_set(poly, ctrl, grid_points=181, level_scale=1.0):
    grid = ctrl.ss.grid(grid_points)
    V_max, cert = calibrate_fixed_level(poly, ctrl, grid)
    return SafeSet("fixed", ctrl, poly, level_value=V_max,
                   level_scale=level_scale, certificate=cert)


def variable_level_set(poly, ctrl, grid_points=181, level_scale=1.0):
    grid = ctrl.ss.grid(grid_points)
    gamma = compute_gamma(grid, poly, ctrl)
    V_max = float(np.min(gamma))
    delta = _ball_radius(V_max, ctrl, grid) if np.isfinite(V_max) else np.inf
    cert = LevelCertificate(V_min=V_max, V_max=V_max, k_star=None,
                            delta=delta, gamma_max=float(np.max(gamma)))
    return SafeSet("variable", ctrl, poly, level_scale=level_scale, certificate=cert)
