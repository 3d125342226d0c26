"""Simulate the default wrist subject and check it against the training residual.

Run with ``python3 demos/simulate_and_check.py``.  Prints the motion range,
peak forces, and the worst equation-of-motion residual when the residual is
fed the simulator's own states and the true parameters (it should sit at
round-off level).
"""
import dataclasses

import numpy as np

from myodyn.config import default_config
from myodyn.joint import simulate
from myodyn.training import dynamics_residual, hill_forces

cfg = default_config()
prof = dataclasses.replace(cfg.profile(), duration=4.0)
truth = cfg.true_params()
model = cfg.joint_model()

traj = simulate(prof.excitation, model, truth, cfg.data.true_A, prof.q0, 0.0, cfg.data.dt, prof.duration)
print(f"{len(traj.times)} samples, q in [{traj.q.min():.3f}, {traj.q.max():.3f}] rad")
for name, f in zip(cfg.names, traj.forces.max(axis=0)):
    print(f"  peak {name:5s} {f:7.1f} N")

# the residual sees exactly what the simulator integrated
mapped = {"F0m": np.array([p.F0m for p in truth]), "l0m": np.array([p.l0m for p in truth]),
          "A": np.array([cfg.data.true_A])}
F, r = hill_forces(traj.excitations, traj.q, traj.qdot, cfg.physics(), mapped)
rho = dynamics_residual(traj.q, traj.qdot, traj.qddot, np.sum(F * r, axis=1), model)
print(f"max |residual| with true parameters: {np.max(np.abs(rho)):.2e} (units of m g L)")

# and with the initial guess, which is what training starts from
F0, r0 = hill_forces(traj.excitations, traj.q, traj.qdot, cfg.physics(), cfg.trainable_params().values())
rho0 = dynamics_residual(traj.q, traj.qdot, traj.qddot, np.sum(F0 * r0, axis=1), model)
print(f"rms residual with the initial guess:  {np.sqrt(np.mean(rho0 ** 2)):.3f}")
