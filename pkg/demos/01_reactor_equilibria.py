#!/usr/bin/env python3
"""Tour of the reactor model: dynamics, equilibria, and scheduled gains.

The reactor has two states (concentration, temperature) and one input (the
coolant flow rate).  Its steady states are parameterized by temperature:
the concentration balance fixes c in closed form and the temperature
balance then yields the holding input.  A discrete-time LQR gain is
synthesized on a temperature grid and interpolated in between.
"""

import numpy as np

from oco_rg import (
    CstrParams,
    build_cstr_controller,
    cstr_continuous_rhs,
    cstr_plant,
    solve_steady_state,
)
from oco_rg.tracking import linearize

params = CstrParams()
plant = cstr_plant(params)

print("=== Reactor model ===")
print(f"parameters: theta_f={params.theta_f}, k={params.k_rate}, M={params.M_act},")
print(f"            x_f={params.x_f}, x_c={params.x_c}, alpha_f={params.alpha_f}")
print(f"sampling time tau = {params.tau} s, start x0 = {plant.x0}")

print("\n=== Steady states across the admissible window ===")
print(f"{'theta':>7s} {'c_ss':>9s} {'u_ss':>9s} {'|rhs|':>10s}")
for v in np.linspace(0.4, 0.85, 10):
    h, u = solve_steady_state(v, params)
    res = np.linalg.norm(cstr_continuous_rhs(h, u, params))
    print(f"{v:7.3f} {h[0]:9.4f} {u:9.4f} {res:10.2e}")

print("\nThe benchmark start (0.2632, 0.6519) is the steady state at 0.6519:")
h, u = solve_steady_state(0.6519, params)
print(f"  h(0.6519) = ({h[0]:.6f}, {h[1]:.4f}), holding input u = {u:.6f}")

print("\n=== Scheduled LQR gains ===")
ctrl, gains = build_cstr_controller(plant, params)
print(f"grid: {len(gains.vgrid)} temperatures in [0.4, 0.85]")
print(f"{'theta':>7s} {'K1':>9s} {'K2':>9s} {'rho(A+BK)':>10s} {'lam_max(P)':>11s}")
for v in np.linspace(0.4, 0.85, 7):
    A, B = linearize(plant, ctrl.ss.h(v), ctrl.ss.u_ss(v))
    K = ctrl.gain(v)
    rho = np.abs(np.linalg.eigvals(A + B @ K)).max()
    lam = np.linalg.eigvalsh(ctrl.lyap_weight(v)).max()
    print(f"{v:7.3f} {K[0, 0]:9.3f} {K[0, 1]:9.3f} {rho:10.5f} {lam:11.1f}")

print("\nNote the open-loop instability at intermediate temperatures:")
for v in (0.5, 0.6519):
    A, _ = linearize(plant, ctrl.ss.h(v), ctrl.ss.u_ss(v))
    print(f"  theta = {v}: open-loop spectral radius {np.abs(np.linalg.eigvals(A)).max():.5f}")

print("\nA 100-step rollout from a perturbed start settles back:")
x = ctrl.ss.h(0.62) + np.array([0.01, -0.005])
traj = ctrl.rollout(x, 0.62, 100)
gaps = np.linalg.norm(traj - ctrl.ss.h(0.62), axis=-1)
print(f"  gap: start {gaps[0]:.4f} -> 50 steps {gaps[50]:.6f} -> 100 steps {gaps[100]:.8f}")
