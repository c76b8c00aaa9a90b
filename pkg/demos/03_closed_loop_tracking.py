#!/usr/bin/env python3
"""One full closed-loop experiment: drifting costs, governor, tracking.

The stage cost q_t (c - cbar_t)^2 + u^2 is revealed only after each input
is committed.  The previous-optimum update re-optimizes the last revealed
induced cost; the scalar governor clips each proposed reference to the safe
set; the scheduled feedback tracks the governed reference.
"""

import numpy as np

from oco_rg import (
    CstrCostSchedule,
    CstrParams,
    build_cstr_controller,
    cstr_constraints,
    cstr_plant,
    run_closed_loop,
    variable_level_set,
)

params = CstrParams()
plant = cstr_plant(params)
ctrl, _ = build_cstr_controller(plant, params)
safe_set = variable_level_set(cstr_constraints(), ctrl)
schedule = CstrCostSchedule(horizon=2400, tau=params.tau)

print("cost schedule: weight 150 - 100 sin(2 pi t / 2400),")
print("target ramps 0.27 -> 0.65 (90 s), holds (90 s), ramps down to 0.30 (60 s)")

ledger = run_closed_loop(plant, ctrl, safe_set, "scalar", "prev_opt",
                         schedule, T=2400, r0=0.6519)
arr = ledger.arrays()

print("\n=== Outcome ===")
print(f"steps: {ledger.steps}, constraint violations: {ledger.violations}")
print(f"closed-loop regret : {ledger.regret:10.4f}")
print(f"online regret      : {ledger.regret_oco:10.4f}")
print(f"reference path len : {ledger.path_length:10.4f}")

print("\n=== Trajectory snapshots ===")
print(f"{'t':>5s} {'c':>8s} {'theta':>8s} {'u':>8s} {'r':>8s} {'v':>8s} "
      f"{'eta':>8s} {'beta':>6s}")
for t in (0, 300, 900, 1500, 1800, 2100, 2399):
    print(f"{t:5d} {arr['x'][t, 0]:8.4f} {arr['x'][t, 1]:8.4f} {arr['u'][t]:8.4f} "
          f"{arr['r'][t]:8.4f} {arr['v'][t]:8.4f} {arr['eta'][t]:8.4f} "
          f"{arr['beta'][t]:6.3f}")

binding = float(np.mean(arr["beta"] < 1.0))
print(f"\ngovernor active on {100 * binding:.1f}% of steps: the per-reference")
print("level is generous enough to pass the slowly-moving optimum through")

plateau = slice(1600, 1800)
lag = np.abs(arr["v"][plateau] - arr["eta"][plateau]).mean()
print(f"steady tracking on the target plateau: mean |v - eta| = {lag:.2e}")

worst_margin = arr["margin_worst"].min()
print(f"worst constraint margin along the run: {worst_margin:.4f} (>= 0)")

print("\n=== Same experiment on the uniform level ===")
from oco_rg import fixed_level_set

tight = run_closed_loop(plant, ctrl, fixed_level_set(cstr_constraints(), ctrl),
                        "scalar", "prev_opt", schedule, T=2400, r0=0.6519)
tight_arr = tight.arrays()
tight_binding = float(np.mean(tight_arr["beta"] < 1.0))
print(f"governor active on {100 * tight_binding:.1f}% of steps; the tighter set")
print(f"throttles the reference, regret {tight.regret:.1f} vs {ledger.regret:.1f}")

ledger.to_csv("closed_loop_trajectory.csv")
print("\nwrote closed_loop_trajectory.csv (t, states, u, r, v, eta, beta,")
print("stage and induced costs, Lyapunov value, level, worst margin)")
