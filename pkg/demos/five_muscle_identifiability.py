"""Why five-muscle force recovery stalls: a direct least-squares probe.

Run with ``python3 demos/five_muscle_identifiability.py`` (a few seconds).

The network is taken out of the loop entirely.  The dynamics residual is
evaluated on the *true* angle (derivatives by finite differences) and the
physiological parameters are fitted with a bounded trust-region solver.  If
the parameters were identifiable from the residual alone, starting from the
table values would land on the truth.  It does not: the solver settles in a
local minimum whose residual is about 50 times the one at the truth, and the
Hill forces it implies track the true forces poorly for the co-contracting
pairs.  Started at the truth, the same solver stays there.
"""
import numpy as np
from scipy.optimize import least_squares

from myodyn.config import default_config
from myodyn.data import synthesize_trial
from myodyn.evaluation import r_squared
from myodyn.training import dynamics_residual, hill_forces

cfg = default_config()
cfg.data.duration = 4.0
trial, _ = synthesize_trial(cfg.profile(), cfg.joint_model(), cfg.true_params(), cfg.data.true_A)
idx = np.arange(0, int(0.8 * len(trial)), 5)
qd = np.gradient(trial.q, trial.t)
qdd = np.gradient(qd, trial.t)

physics, tp, n = cfg.physics(), cfg.trainable_params(), len(cfg.names)
lo = np.concatenate([tp.lo[k] for k in tp.KEYS])
hi = np.concatenate([tp.hi[k] for k in tp.KEYS])
truth = cfg.true_params()
x_true = np.concatenate([[p.F0m for p in truth], [p.l0m for p in truth], [cfg.data.true_A]])
x_init = np.concatenate([tp.values()[k] for k in tp.KEYS])


def unpack(x):
    return {"F0m": x[:n], "l0m": x[n:2 * n], "A": x[2 * n:]}


def residual(x):
    F, r = hill_forces(trial.e[idx], trial.q[idx], qd[idx], physics, unpack(x))
    return dynamics_residual(trial.q[idx], qd[idx], qdd[idx], (F * r).sum(1), physics.model, physics.tau_scale)


for label, x0 in (("from initial guess", x_init), ("from truth", x_true)):
    sol = least_squares(residual, np.clip(x0, lo + 1e-9, hi - 1e-9), bounds=(lo, hi), x_scale=hi - lo,
                        xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=4000)
    F_hat, _ = hill_forces(trial.e, trial.q, qd, physics, unpack(sol.x))
    r2 = [r_squared(trial.forces[:, j], F_hat[:, j]) for j in range(n)]
    sv = np.linalg.svd(sol.jac * (hi - lo), compute_uv=False)
    print(f"{label}: mean sq residual {np.mean(sol.fun ** 2):.2e}")
    print(f"  F0m / true {np.round(sol.x[:n] / x_true[:n], 3)}   A {sol.x[-1]:+.3f}")
    print(f"  force R2   {np.round(r2, 3)}   Jacobian condition {sv[0] / sv[-1]:.1e}")
