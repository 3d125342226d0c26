"""Recover F0m and l0m of a flexor/extensor pair by training the PINN.

Run with ``python3 demos/identify_two_muscles.py [seed]`` (about two minutes).
The first 100 epochs fit the angle only; after that the physics terms pull
the muscle parameters from the table values toward the simulator's truth.
"""
import dataclasses
import sys

import numpy as np

from myodyn.config import two_muscle_config
from myodyn.data import synthesize_trial
from myodyn.evaluation import r_squared
from myodyn.network import forward
from myodyn.training import TrainConfig, train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = two_muscle_config()
trial, _ = synthesize_trial(cfg.profile(), cfg.joint_model(), cfg.true_params(), cfg.data.true_A)
F_true = np.array([p.F0m for p in cfg.true_params()])
l_true = np.array([p.l0m for p in cfg.true_params()])

tc = TrainConfig(lr=1e-3, param_lr=1e-2, epochs=400, batch_size=32, stride=5, w1=0.01, w2=0.01,
                 warmup_epochs=100, seed=seed)


def log(rec):
    if rec["epoch"] % 50 == 0:
        p = rec["params"]
        print(f"epoch {rec['epoch']:4d}  L_q {rec['L_q']:.1e}  L_r1 {rec['L_r1']:.1e}  "
              f"F0m/true {np.round(p['F0m'] / F_true, 3)}  A {p['A'][0]:+.2f}")


net = dataclasses.replace(cfg.network, dropout_rate=0.0)
weights, tp, report = train([trial], cfg.physics(), cfg.trainable_params(), net, tc, log=log)

v = tp.values()
print(f"\nbest epoch {report.best_epoch}")
for j, name in enumerate(cfg.names):
    print(f"{name:5s} F0m {v['F0m'][j]:6.1f} (true {F_true[j]:6.1f}, {100 * (v['F0m'][j] / F_true[j] - 1):+.1f}%)"
          f"  l0m {v['l0m'][j]:.4f} (true {l_true[j]:.4f})")
print(f"A {v['A'][0]:+.3f} (true {cfg.data.true_A})")
tail = np.arange(int(0.8 * len(trial)), len(trial))
q_hat = forward(weights, trial.t, trial.e).q_hat
print(f"held-out angle R2 {r_squared(trial.q[tail], q_hat[tail]):.4f}")
