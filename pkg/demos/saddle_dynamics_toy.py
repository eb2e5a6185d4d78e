"""Scalar saddle dynamics of the two constrained training modes.

Minimizes (gamma - 1)^2 subject to gamma = 0. The strict update drives
gamma to the constraint and the multiplier integrates up to the shadow
price lambda* = 2; running averages wash out the early transient. The
resilient variant relaxes the constraint to |gamma| <= u with a
(rho/2) u^2 penalty and lands on the analytic point
gamma* = u* = lambda*/rho = 2/(2 + rho), no averaging needed.
"""

import numpy as np

from ace.constraints import (
    DualState,
    StepConfig,
    dual_step_resilient,
    dual_step_strict,
    lagrangian_resilient,
    lagrangian_strict,
    primal_step,
)
from ace.tensor import Tensor, zero_grad

A = 1.0
STEPS = 10_000
PRINT_AT = (1, 10, 100, 1000, 10_000)
CFG = StepConfig(eta_p=1e-2, eta_d=1e-2)


def run_strict():
    gamma = Tensor(1.0, requires_grad=True)
    state = DualState.fresh(1, mode="strict")
    gamma_hist, lam_hist = [], []
    print("strict: gamma = 0 enforced exactly")
    print(f"{'step':>6} {'gamma':>9} {'lambda':>9} {'gamma_bar':>10} {'lambda_bar':>10}")
    for step in range(1, STEPS + 1):
        zero_grad([gamma])
        loss = lagrangian_strict((gamma - A).square(), [gamma], state)
        loss.backward()
        pre = np.array([float(gamma.data)])
        dual_step_strict(state, pre, CFG.eta_d)
        primal_step([gamma], CFG)
        gamma_hist.append(float(gamma.data))
        lam_hist.append(float(state.lam[0]))
        if step in PRINT_AT:
            print(f"{step:>6} {gamma_hist[-1]:>9.4f} {lam_hist[-1]:>9.4f} "
                  f"{np.mean(gamma_hist):>10.4f} {np.mean(lam_hist):>10.4f}")
    print(f"KKT point (0, 2); last-half averages "
          f"({np.mean(gamma_hist[STEPS // 2:]):.4f}, {np.mean(lam_hist[STEPS // 2:]):.4f})")


def run_resilient(rho=1.0):
    gamma = Tensor(1.0, requires_grad=True)
    state = DualState.fresh(1, mode="resilient", rho=rho)
    print(f"\nresilient: |gamma| <= u with (rho/2) u^2 penalty, rho = {rho}")
    print(f"{'step':>6} {'gamma':>9} {'u':>9} {'lambda':>9}")
    for step in range(1, STEPS + 1):
        zero_grad([gamma])
        loss = lagrangian_resilient((gamma - A).square(), [gamma], state)
        loss.backward()
        pre = np.array([float(gamma.data)])
        dual_step_resilient(state, pre, CFG.eta_p, CFG.eta_d)
        primal_step([gamma], CFG)
        if step in PRINT_AT:
            print(f"{step:>6} {float(gamma.data):>9.4f} "
                  f"{float(state.u[0]):>9.4f} {float(state.lam[0]):>9.4f}")
    expected = 2.0 * A / (2.0 + rho)
    print(f"analytic point gamma* = u* = lambda*/rho = {expected:.4f}")


if __name__ == "__main__":
    run_strict()
    run_resilient()
