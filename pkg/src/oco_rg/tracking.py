"""Steady-state parameterization and reference-scheduled stabilizing feedback.

The reactor's steady states are parameterized by temperature: for each
admissible v the map h(v) gives the equilibrium state and u_ss(v) the input
holding it there, both in closed form.  The feedback u = u_ss(v) + K(v)(x -
h(v)) uses gains synthesized pointwise by discrete-time LQR on the Jacobian
linearization at (h(v), u_ss(v)), with K and the quadratic Lyapunov weight
P interpolated linearly between grid points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .plant import CstrParams, Plant, register_steady_stack


class SingularParameterizationError(ValueError):
    """Steady-state map evaluated where its defining equations degenerate."""


class SynthesisError(RuntimeError):
    """Gain synthesis failed (Riccati iteration did not converge)."""


class StabilityEstimationError(RuntimeError):
    """No contractive exponential envelope could be fitted."""


@dataclass(frozen=True)
class SteadyStateMap:
    """Equilibrium parameterization v -> (h(v), u_ss(v)) on a reference window.

    ``fast``, when present, provides plain-float equilibrium evaluations for
    hot scalar paths (per-step line searches); results agree with the array
    path to round-off.
    """

    h: Callable
    u_ss: Callable
    o: int
    v_lo: float
    v_hi: float
    dh: Callable | None = None
    du_ss: Callable | None = None
    fast: object | None = None

    @property
    def window(self):
        return (self.v_lo, self.v_hi)

    def grid(self, points: int) -> np.ndarray:
        return np.linspace(self.v_lo, self.v_hi, points)


class CstrScalarOps:
    """Plain-float equilibrium quantities of the reactor (hot-path helper)."""

    __slots__ = ("theta_f", "k_rate", "M_act", "x_f", "x_c", "alpha_f")

    def __init__(self, params: CstrParams):
        self.theta_f = params.theta_f
        self.k_rate = params.k_rate
        self.M_act = params.M_act
        self.x_f = params.x_f
        self.x_c = params.x_c
        self.alpha_f = params.alpha_f

    def pair(self, v):
        """(equilibrium concentration, holding input) at temperature v."""
        s = self.k_rate * math.exp(-self.M_act / v)
        c = 1.0 / (1.0 + self.theta_f * s)
        u = ((self.x_f - v) / self.theta_f + c * s) / (self.alpha_f * (v - self.x_c))
        return c, u

    def pair_grad(self, v):
        """d/dv of the equilibrium concentration and holding input."""
        s = self.k_rate * math.exp(-self.M_act / v)
        w = self.theta_f * s
        c = 1.0 / (1.0 + w)
        dc = -w * self.M_act / (v * v * (1.0 + w) ** 2)
        ds = s * self.M_act / (v * v)
        num = (self.x_f - v) / self.theta_f + c * s
        den = self.alpha_f * (v - self.x_c)
        dnum = -1.0 / self.theta_f + dc * s + c * ds
        du = (dnum * den - num * self.alpha_f) / (den * den)
        return c, num / den, dc, du


def cstr_equilibrium_concentration(v, params: CstrParams):
    """Closed-form c at steady state: (1 - c)/theta_f = k c exp(-M/v)."""
    v = np.asarray(v, dtype=float)
    w = params.theta_f * params.k_rate * np.exp(-params.M_act / v)
    return 1.0 / (1.0 + w)


def solve_steady_state(v, params: CstrParams):
    """Equilibrium state and input of the reactor at temperature v.

    The concentration follows from the concentration balance alone; the
    coolant rate then solves the temperature balance, whose cooling term
    has denominator alpha_f (v - x_c).

    Returns (h(v), u_ss(v)); raises SingularParameterizationError at v = x_c.
    """
    varr = np.asarray(v, dtype=float)
    if np.any(np.abs(varr - params.x_c) < 1e-12):
        raise SingularParameterizationError(
            f"steady-state input undefined at v = x_c = {params.x_c}"
        )
    c = cstr_equilibrium_concentration(varr, params)
    num = (params.x_f - varr) / params.theta_f + params.k_rate * c * np.exp(
        -params.M_act / varr
    )
    u = num / (params.alpha_f * (varr - params.x_c))
    return np.stack([c, varr], axis=-1), u


def cstr_steady_state_map(params: CstrParams, v_lo=0.4, v_hi=0.85) -> SteadyStateMap:
    """Reactor steady-state map with analytic reference derivatives."""

    def h(v):
        v = np.asarray(v, dtype=float)
        return np.stack([cstr_equilibrium_concentration(v, params), v], axis=-1)

    def u_ss(v):
        return solve_steady_state(v, params)[1]

    def dh(v):
        v = np.asarray(v, dtype=float)
        w = params.theta_f * params.k_rate * np.exp(-params.M_act / v)
        dc = -w * params.M_act / (v * v * (1.0 + w) ** 2)
        return np.stack([dc, np.ones_like(v)], axis=-1)

    def du_ss(v):
        v = np.asarray(v, dtype=float)
        w = params.theta_f * params.k_rate * np.exp(-params.M_act / v)
        c = 1.0 / (1.0 + w)
        dc = -w * params.M_act / (v * v * (1.0 + w) ** 2)
        s = params.k_rate * np.exp(-params.M_act / v)
        ds = s * params.M_act / (v * v)
        num = (params.x_f - v) / params.theta_f + c * s
        den = params.alpha_f * (v - params.x_c)
        dnum = -1.0 / params.theta_f + dc * s + c * ds
        return (dnum * den - num * params.alpha_f) / (den * den)

    return SteadyStateMap(h=h, u_ss=u_ss, o=1, v_lo=v_lo, v_hi=v_hi, dh=dh,
                          du_ss=du_ss, fast=CstrScalarOps(params))


def register_steady_state_map(m: int, p: int, v_lo, v_hi) -> SteadyStateMap:
    """Shift-register steady states h(v) = H v (p-fold stack), u_ss(v) = v."""
    H = register_steady_stack(m, p)

    def h(v):
        v = np.asarray(v, dtype=float)
        if m == 1:
            return np.repeat(v[..., None], p, axis=-1)
        return v @ H.T

    def u_ss(v):
        return np.asarray(v, dtype=float)

    def dh(v):
        v = np.asarray(v, dtype=float)
        return np.ones(v.shape + (m * p,))

    def du_ss(v):
        return np.ones_like(np.asarray(v, dtype=float))

    return SteadyStateMap(h=h, u_ss=u_ss, o=m, v_lo=v_lo, v_hi=v_hi, dh=dh, du_ss=du_ss)


def dare_value_iteration(A, B, Q, R, tol=1e-12, max_iter=10_000):
    """Fixed-point value iteration for the discrete-time Riccati equation.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA from P = Q until the
    max-norm change drops below tol.  Returns (P, K) with closed loop
    A + B K.  Slow but dependable at the 2x2 sizes used here.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if R.ndim == 0:
        R = R[None, None]
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        K = -np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A + A.T @ P @ B @ K
        if np.max(np.abs(P_next - P)) < tol:
            P = 0.5 * (P_next + P_next.T)
            K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return P, K
        P = P_next
    raise SynthesisError(
        f"Riccati value iteration did not converge within {max_iter} iterations"
    )


def linearize(plant: Plant, x_bar, u_bar, eps=1e-6):
    """Jacobians (A, B) of the discrete step at (x_bar, u_bar) by central differences."""
    x_bar = np.asarray(x_bar, dtype=float)
    u_bar = float(np.asarray(u_bar).reshape(()))
    A = np.zeros((plant.n, plant.n))
    for j in range(plant.n):
        d = np.zeros(plant.n)
        d[j] = eps
        A[:, j] = (plant.step(x_bar + d, u_bar) - plant.step(x_bar - d, u_bar)) / (2 * eps)
    B = (plant.step(x_bar, u_bar + eps) - plant.step(x_bar, u_bar - eps)) / (2 * eps)
    return A, B.reshape(plant.n, 1)


def synthesize_gain(v, plant: Plant, ss: SteadyStateMap, Q, R):
    """LQR gain and Riccati weight at one reference point.

    Linearizes the plant at (h(v), u_ss(v)) and solves the Riccati equation
    by value iteration.  Raises SynthesisError (naming v) on non-convergence.
    """
    x_bar = ss.h(v)
    u_bar = ss.u_ss(v)
    A, B = linearize(plant, x_bar, u_bar)
    try:
        P, K = dare_value_iteration(A, B, np.asarray(Q, dtype=float), np.asarray(R, dtype=float))
    except SynthesisError as exc:
        raise SynthesisError(f"gain synthesis failed at v = {float(v):.6g}: {exc}") from exc
    return K, P


@dataclass(frozen=True)
class GainSchedule:
    """Gains and Lyapunov weights on a reference grid, interpolated linearly."""

    vgrid: np.ndarray
    Ks: np.ndarray  # (G, m, n)
    Ps: np.ndarray  # (G, n, n)

    def _blend(self, v):
        lo, hi = self.vgrid[0], self.vgrid[-1]
        v = np.asarray(v, dtype=float)
        if np.any(v < lo - 1e-9) or np.any(v > hi + 1e-9):
            raise ValueError(f"reference outside schedule window [{lo}, {hi}]")
        cell = (hi - lo) / (len(self.vgrid) - 1)
        pos = np.clip((v - lo) / cell, 0.0, len(self.vgrid) - 1 - 1e-12)
        i = pos.astype(int)
        return i, pos - i

    def gain(self, v):
        i, w = self._blend(v)
        w = w[..., None, None]
        return (1.0 - w) * self.Ks[i] + w * self.Ks[i + 1]

    def lyap_weight(self, v):
        i, w = self._blend(v)
        w = w[..., None, None]
        P = (1.0 - w) * self.Ps[i] + w * self.Ps[i + 1]
        return 0.5 * (P + np.swapaxes(P, -1, -2))


def build_gain_schedule(plant: Plant, ss: SteadyStateMap, Q, R, grid_points=181) -> GainSchedule:
    vgrid = ss.grid(grid_points)
    Ks = np.zeros((grid_points, plant.m, plant.n))
    Ps = np.zeros((grid_points, plant.n, plant.n))
    for idx, v in enumerate(vgrid):
        K, P = synthesize_gain(v, plant, ss, Q, R)
        Ks[idx] = K
        Ps[idx] = 0.5 * (P + P.T)
    return GainSchedule(vgrid=vgrid, Ks=Ks, Ps=Ps)


class TrackingController:
    """Reference-scheduled feedback u = u_ss(v) + K(v)(x - h(v)).

    Bundles the plant, the steady-state map, and schedules for the gain
    K(v) and the quadratic Lyapunov weight P(v).  Immutable after
    construction; every method broadcasts over leading batch axes and
    returns scalar u for single-input plants.
    """

    def __init__(self, plant: Plant, ss: SteadyStateMap, gain_of, lyap_of):
        self.plant = plant
        self.ss = ss
        self._gain_of = gain_of
        self._lyap_of = lyap_of

    def gain(self, v):
        return self._gain_of(v)

    def lyap_weight(self, v):
        return self._lyap_of(v)

    def feedback(self, x, v):
        """Control input g(x, v); shape (...,) for single-input plants."""
        x = np.asarray(x, dtype=float)
        err = x - self.ss.h(v)
        u = self.u_ss(v) + np.einsum("...ij,...j->...i", self.gain(v), err)[..., 0]
        return u

    def u_ss(self, v):
        return np.asarray(self.ss.u_ss(v), dtype=float)

    def h(self, v):
        return self.ss.h(v)

    def closed_loop(self, x, v):
        """One step of x+ = f(x, g(x, v))."""
        return self.plant.step(x, self.feedback(x, v))

    def lyapunov(self, x, v):
        """Quadratic Lyapunov value (x - h(v))' P(v) (x - h(v))."""
        e = np.asarray(x, dtype=float) - self.ss.h(v)
        return np.einsum("...i,...ij,...j->...", e, self.lyap_weight(v), e)

    def rollout(self, x, v, steps: int):
        """States of the constant-reference closed loop, 0..steps inclusive.

        Returns an array with a new time axis at position -2, so a single
        (n,) state yields (steps+1, n).  Domain errors from the plant carry
        the failing step index.
        """
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (steps + 1, x.shape[-1]))
        out[..., 0, :] = x
        cur = x
        for t in range(steps):
            try:
                cur = self.closed_loop(cur, v)
            except Exception as exc:
                raise type(exc)(f"rollout failed at step {t + 1}: {exc}") from exc
            out[..., t + 1, :] = cur
        return out


def rollout_constant_reference(ctrl: TrackingController, x, v, steps: int):
    return ctrl.rollout(x, v, steps)


def build_cstr_controller(
    plant: Plant,
    params: CstrParams,
    v_lo=0.4,
    v_hi=0.85,
    lqr_q=1.0,
    lqr_r=0.01,
    grid_points=181,
):
    """Gain-scheduled LQR tracking controller for the reactor."""
    ss = cstr_steady_state_map(params, v_lo, v_hi)
    Q = lqr_q * np.eye(plant.n)
    R = np.array([[lqr_r]])
    sched = build_gain_schedule(plant, ss, Q, R, grid_points)
    return TrackingController(plant, ss, sched.gain, sched.lyap_weight), sched


def register_controller(plant: Plant, m: int, p: int, v_lo, v_hi) -> TrackingController:
    """Pass-through feedback u = v for the shift register (K = 0, P = I)."""
    ss = register_steady_state_map(m, p, v_lo, v_hi)
    n = plant.n
    K0 = np.zeros((m, n))
    P0 = np.eye(n)

    def gain_of(v):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(K0, v.shape + (m, n))

    def lyap_of(v):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(P0, v.shape + (n, n))

    return TrackingController(plant, ss, gain_of, lyap_of)


@dataclass(frozen=True)
class ConverseLyapunov:
    """Finite trajectory-sum Lyapunov function for the stabilized loop.

    evaluate(x, v) = sum_{i=0}^{N-1} ||Phi(x, v, i) - h(v)|| where N is the
    smallest integer with c_phi * lam^N < 1/2 (the 1/2 leaves numerical
    headroom).  The construction sandwiches ||x - h(v)|| with factors
    lam1 = 1 and lam2 = c_phi / (1 - lam), and decreases by at least
    lam3 = 1 - c_phi lam^N per step.
    """

    ctrl: TrackingController
    N: int
    c_phi: float
    lam: float

    @property
    def lam1(self):
        return 1.0

    @property
    def lam2(self):
        return self.c_phi / (1.0 - self.lam)

    @property
    def lam3(self):
        return 1.0 - self.c_phi * self.lam**self.N

    def evaluate(self, x, v):
        x = np.asarray(x, dtype=float)
        h_v = self.ctrl.ss.h(v)
        total = np.linalg.norm(x - h_v, axis=-1)
        cur = x
        for _ in range(self.N - 1):
            cur = self.ctrl.closed_loop(cur, v)
            total = total + np.linalg.norm(cur - h_v, axis=-1)
        return total


def build_converse_lyapunov(ctrl: TrackingController, c_phi: float, lam: float) -> ConverseLyapunov:
    """Construct the trajectory-sum Lyapunov function from envelope constants."""
    if not (0.0 <= lam < 1.0):
        raise StabilityEstimationError(f"envelope rate lam = {lam} is not in [0, 1)")
    if c_phi < 1.0:
        raise StabilityEstimationError(f"envelope gain c_phi = {c_phi} must be >= 1")
    N = 1
    while c_phi * lam**N >= 0.5:
        N += 1
    return ConverseLyapunov(ctrl=ctrl, N=N, c_phi=c_phi, lam=lam)
