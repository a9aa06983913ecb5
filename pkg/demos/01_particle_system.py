"""Simulate an interacting particle system and watch its moments relax.

The linear mean-field model dX = (a X + c E[X]) dt + sigma dW has closed-form
moment dynamics, which makes it the natural first look at the solver: the
ensemble mean follows m' = (a + c) m and the variance relaxes towards
sigma^2 / (2|a|).
"""

import numpy as np

import mfsde

model = mfsde.linear_mf_ou(a=-1.0, c=0.5, sigma=0.2)
grid = mfsde.TimeGrid(horizon=2.0, steps=512)
rng = mfsde.RngSpec(master_seed=42)
init = mfsde.GaussianLaw(mean=(1.5,), std=0.7)

traj = mfsde.simulate(model, init, mfsde.constant_perturbation([1.0]),
                      grid, n_particles=2048, rng=rng, replication=0)

print(f"model: {traj.model},  N = {traj.particles},  K = {grid.steps}")
print(f"{'t':>6} {'mean(X)':>10} {'exact':>10} {'var(X)':>10} {'exact':>10}")
for k in range(0, grid.steps + 1, 64):
    t = k * grid.dt
    mean_exact = 1.5 * np.exp(-0.5 * t)
    var_exact = 0.49 * np.exp(-2 * t) + 0.02 * (1 - np.exp(-2 * t))
    x = traj.positions[k][:, 0]
    print(f"{t:6.3f} {x.mean():10.4f} {mean_exact:10.4f} "
          f"{x.var():10.4f} {var_exact:10.4f}")

# The co-simulated tangent flow responds to a constant initial shift; for
# this model it is deterministic and collapses to exp((a+c) t).
print("\ntangent mean at T:", traj.tangents[-1].mean(),
      " vs exp((a+c)T) =", np.exp(-0.5 * 2.0))

# Measures serialize to plain CSV (one atom per row).
terminal = mfsde.EmpiricalMeasure(traj.terminal_positions())
terminal.to_csv("terminal_cloud.csv")
print("terminal cloud written to terminal_cloud.csv "
      f"(second moment {terminal.second_moment():.4f})")
