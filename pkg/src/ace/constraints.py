"""Primal-dual state and single-step updates for constrained training.

Two modes share one surface:

* strict: equality constraints gamma_i = 0. The Lagrangian is
  J0 + sum_i lambda_i * gamma_i and multipliers integrate the raw gamma
  trajectory, so they are unbounded in sign.
* resilient: inequality constraints |gamma_i| <= u_i with a quadratic
  slack price (rho/2)||u||^2. Multipliers and slacks are projected to
  stay non-negative, and at a fixed point u = lambda / rho.

Multipliers (and slacks) are constants during the primal backward pass;
their own updates below are closed-form, so nothing differentiates
through the dual variables.

The slack moves by descent, u <- [u - eta_p (rho u - lambda)]_+, which
follows the gradient of the resilient Lagrangian and has u = lambda/rho
as its fixed point. The opposite sign (ascent) is available behind
``u_ascent=True`` for side-by-side study; it diverges in general and is
never the default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = [
    "ModeError",
    "DualState",
    "StepConfig",
    "lagrangian_strict",
    "lagrangian_resilient",
    "primal_step",
    "dual_step_strict",
    "dual_step_resilient",
    "PlainStep",
    "MomentumStep",
]

MODES = ("strict", "resilient")


class ModeError(ValueError):
    """An operation was called with a state in the wrong mode."""


@dataclass
class DualState:
    """Multipliers, slacks, and the bookkeeping the updates need.

    ``gamma_step_sum`` accumulates the gamma vector read at every strict
    dual step, so the integration identity
    ``lam == lam0 + eta_d * gamma_step_sum`` can be checked exactly at
    any point of a run.
    """

    mode: str
    lam: np.ndarray
    u: np.ndarray | None
    rho: float = 1.0
    lam0: np.ndarray = None
    gamma_step_sum: np.ndarray = None
    n_dual_steps: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModeError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.lam = np.asarray(self.lam, dtype=np.float64).reshape(-1).copy()
        if self.mode == "strict":
            self.u = None
        else:
            if self.rho <= 0.0:
                raise ValueError(f"rho must be positive, got {self.rho}")
            if self.u is None:
                self.u = np.zeros_like(self.lam)
            self.u = np.asarray(self.u, dtype=np.float64).reshape(-1).copy()
            if self.u.shape != self.lam.shape:
                raise ShapeError(f"u has {self.u.size} entries, lambda has {self.lam.size}")
        if self.lam0 is None:
            self.lam0 = self.lam.copy()
        else:
            self.lam0 = np.asarray(self.lam0, dtype=np.float64).reshape(-1).copy()
        if self.gamma_step_sum is None:
            self.gamma_step_sum = np.zeros_like(self.lam)
        else:
            self.gamma_step_sum = np.asarray(self.gamma_step_sum, dtype=np.float64).copy()
        self.check_invariants()

    @classmethod
    def fresh(cls, n_constraints: int, mode: str, rho: float = 1.0) -> "DualState":
        return cls(mode=mode, lam=np.zeros(n_constraints), u=None, rho=rho)

    @property
    def n_constraints(self) -> int:
        return self.lam.size

    def check_invariants(self) -> None:
        if self.mode == "resilient":
            if np.any(self.lam < 0.0):
                raise ValueError(f"resilient multipliers went negative: {self.lam}")
            if np.any(self.u < 0.0):
                raise ValueError(f"resilient slacks went negative: {self.u}")

    def integration_gap(self, eta_d: float) -> float:
        """Worst |lam - (lam0 + eta_d * sum of stepped gammas)|; strict only."""
        if self.mode != "strict":
            raise ModeError("integration identity only holds in strict mode")
        return float(np.max(np.abs(self.lam - (self.lam0 + eta_d * self.gamma_step_sum))))


@dataclass
class StepConfig:
    """Learning rates and mode for one training run.

    ``eta_d`` defaults to ``eta_p``; nearby rates keep the dual ascent
    stable relative to the primal descent.
    """

    eta_p: float = 1e-2
    eta_d: float = None
    mode: str = "strict"
    gamma_init: float = 1.0
    u_ascent: bool = False

    def __post_init__(self):
        if self.eta_d is None:
            self.eta_d = self.eta_p
        if self.eta_p <= 0.0 or self.eta_d < 0.0:
            raise ValueError(
                f"need eta_p > 0 and eta_d >= 0, got eta_p={self.eta_p}, eta_d={self.eta_d}"
            )
        if self.mode not in MODES:
            raise ModeError(f"mode must be one of {MODES}, got {self.mode!r}")


# ---------------------------------------------------------------- Lagrangians


def _check_lengths(gammas, state: DualState) -> None:
    if len(gammas) != state.n_constraints:
        raise ShapeError(f"{len(gammas)} gammas for {state.n_constraints} multipliers")


def lagrangian_strict(J0: Tensor, gammas, state: DualState) -> Tensor:
    """J0 + sum_i lam_i * gamma_i with the multipliers held constant."""
    if state.mode != "strict":
        raise ModeError("strict Lagrangian needs a strict-mode state")
    _check_lengths(gammas, state)
    total = J0
    for lam_i, g in zip(state.lam, gammas):
        total = total + float(lam_i) * g
    return total


def lagrangian_resilient(J0: Tensor, gammas, state: DualState) -> Tensor:
    """J0 + (rho/2)||u||^2 + sum_i lam_i * (|gamma_i| - u_i).

    Gradients flow into the gammas only (d|g|/dg = sign(g), sign(0)=0);
    lam and u enter as constants. The u-derivative of the returned value
    is rho*u - lam, which ``dual_step_resilient`` applies in closed form.
    """
    if state.mode != "resilient":
        raise ModeError("resilient Lagrangian needs a resilient-mode state")
    state.check_invariants()
    _check_lengths(gammas, state)
    total = J0 + 0.5 * state.rho * float(np.sum(state.u**2))
    for lam_i, u_i, g in zip(state.lam, state.u, gammas):
        total = total + float(lam_i) * (g.abs() - float(u_i))
    return total


# ---------------------------------------------------------------- primal step


class PlainStep:
    """The reference primal update: p <- p - eta_p * grad."""

    def step(self, params, eta_p: float) -> None:
        for p in params:
            p.data = p.data - eta_p * p.grad

    def state_arrays(self) -> dict:
        return {}

    def load_state_arrays(self, arrays: dict, params) -> None:
        pass


class MomentumStep:
    """Heavy-ball variant: v <- beta*v + grad; p <- p - eta_p * v."""

    def __init__(self, beta: float = 0.9):
        if not 0.0 <= beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {beta}")
        self.beta = beta
        self._velocity = {}

    def step(self, params, eta_p: float) -> None:
        for i, p in enumerate(params):
            v = self._velocity.get(i)
            if v is None:
                v = np.zeros_like(p.data)
            v = self.beta * v + p.grad
            self._velocity[i] = v
            p.data = p.data - eta_p * v

    def state_arrays(self) -> dict:
        return {f"velocity{i}": v for i, v in self._velocity.items()}

    def load_state_arrays(self, arrays: dict, params) -> None:
        self._velocity = {
            i: arrays[f"velocity{i}"].copy()
            for i in range(len(params))
            if f"velocity{i}" in arrays
        }


def primal_step(params, config: StepConfig, optimizer=None) -> None:
    """Descend every parameter along its populated gradient.

    The backward pass ran on the mode's Lagrangian, so gamma gradients
    already include the multiplier term (lam_i in strict mode,
    lam_i * sign(gamma_i) in resilient mode).
    """
    missing = [p for p in params if p.requires_grad and p.grad is None]
    if missing:
        raise ValueError(f"{len(missing)} parameters have no gradient; run backward first")
    (optimizer or _PLAIN).step(params, config.eta_p)


_PLAIN = PlainStep()


# ---------------------------------------------------------------- dual steps


def dual_step_strict(state: DualState, gamma_values, eta_d: float) -> DualState:
    """lam_i += eta_d * gamma_i, no projection.

    Call with the gamma values from the start of the iteration (before
    the primal step touches them).
    """
    if state.mode != "strict":
        raise ModeError("dual_step_strict needs a strict-mode state")
    gamma_values = np.asarray(gamma_values, dtype=np.float64).reshape(-1)
    if gamma_values.shape != state.lam.shape:
        raise ShapeError(f"{gamma_values.size} gammas for {state.lam.size} multipliers")
    state.lam = state.lam + eta_d * gamma_values
    state.gamma_step_sum = state.gamma_step_sum + gamma_values
    state.n_dual_steps += 1
    return state


def dual_step_resilient(state: DualState, gamma_values, eta_p: float, eta_d: float,
                        u_ascent: bool = False) -> DualState:
    """Slack descent then projected multiplier ascent.

    u_i  <- [u_i - eta_p (rho u_i - lam_i)]_+
    lam_i <- [lam_i + eta_d (|gamma_i| - u_i_old)]_+

    Both lines read the state as it stood at the start of the call. With
    ``u_ascent=True`` the slack moves along +eta_p(rho u - lam) instead,
    which has no stable fixed point; it exists only for comparison runs.
    """
    if state.mode != "resilient":
        raise ModeError("dual_step_resilient needs a resilient-mode state")
    gamma_values = np.asarray(gamma_values, dtype=np.float64).reshape(-1)
    if gamma_values.shape != state.lam.shape:
        raise ShapeError(f"{gamma_values.size} gammas for {state.lam.size} multipliers")
    u_old = state.u
    drift = eta_p * (state.rho * u_old - state.lam)
    moved = u_old + drift if u_ascent else u_old - drift
    state.u = np.maximum(moved, 0.0)
    state.lam = np.maximum(state.lam + eta_d * (np.abs(gamma_values) - u_old), 0.0)
    state.n_dual_steps += 1
    state.check_invariants()
    return state
