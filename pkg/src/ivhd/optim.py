"""Position-update schemes: the force-directed integrator with its
self-adapting force scale, and five gradient optimizers driven by the same
stress gradient (gradient = -2 * force).
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError

OPTIMIZER_KINDS = ("force-directed", "sgd", "momentum", "nesterov", "adam", "adadelta")


@dataclass
class IntegratorParams:
    """Velocity-update constants: delta <- a * delta + b * force.

    a is the friction retention in [0, 1]; b scales forces. tau (self-adaption
    threshold) defaults to 1e-3 per particle when left None. gamma1 > 1 grows
    b when kinetic energy drains too fast, gamma2 < 1 shrinks it on blow-up.
    """

    a: float = 0.99
    b: float = 0.002
    tau: float | None = None
    gamma1: float = 1.1
    gamma2: float = 0.9
    auto_adapt: bool = True
    lam: float | None = None
    dt: float | None = None
    k_nn: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.a <= 1.0):
            raise InvalidArgumentError(f"a must be in [0, 1], got {self.a}")
        if self.b <= 0.0:
            raise InvalidArgumentError(f"b must be positive, got {self.b}")
        if not (self.gamma1 > 1.0 and 0.0 < self.gamma2 < 1.0):
            raise InvalidArgumentError("need gamma1 > 1 and gamma2 in (0, 1)")

    @classmethod
    def from_physics(cls, lam, dt, k_nn, **kwargs):
        """Derive (a, b) from friction, timestep and spring constant.

        Satisfies a/b = (1 - lam*dt/2) / (2*k_nn*dt).
        """
        if dt <= 0 or k_nn <= 0:
            raise InvalidArgumentError("dt and k_nn must be positive")
        denom = 1.0 + lam * dt / 2.0
        a = (1.0 - lam * dt / 2.0) / denom
        b = 2.0 * k_nn * dt / denom
        return cls(a=a, b=b, lam=lam, dt=dt, k_nn=k_nn, **kwargs)

    def tau_for(self, m):
        return self.tau if self.tau is not None else 1e-3 * m


@dataclass
class OptimizerParams:
    """Shared knob bundle for the gradient optimizers."""

    alpha: float | None = None  # None picks the per-kind default
    beta: float = 0.9
    gamma_v: float = 0.9
    gamma_s: float = 0.999
    rho: float = 0.95
    eps: float = 1e-8


_ALPHA_DEFAULTS = {
    "sgd": 0.1,
    "momentum": 0.02,
    "nesterov": 0.02,
    "adam": 0.05,
    "adadelta": 1.0,
}


def auto_adapt_b(new_deltas, old_deltas, params, tau):
    """Self-adaption of b from the kinetic energy change.

    dT = sum(|new|^2 - |old|^2). Beyond +/-tau the step is rejected
    (positions roll back) and b is scaled: gamma1 when dT < -tau, gamma2 when
    dT > tau. Returns (new_b, rollback).
    """
    d_t = float(np.sum(new_deltas * new_deltas) - np.sum(old_deltas * old_deltas))
    if d_t > tau:
        return params.b * params.gamma2, True
    if d_t < -tau:
        return params.b * params.gamma1, True
    return params.b, False


class ForceDirected:
    """delta <- a * delta + b * f; y <- y + delta, with optional b adaption."""

    uses_gradient = False

    def __init__(self, m, dim, params: IntegratorParams):
        self.params = replace(params)
        self.deltas = np.zeros((m, dim))
        self.tau = params.tau_for(m)
        self.rolled_back = False

    @property
    def step_size(self):
        return self.params.b

    def lookahead(self, positions):
        return positions

    def step(self, positions, forces):
        old = self.deltas
        new = self.params.a * old + self.params.b * forces
        if self.params.auto_adapt:
            new_b, rollback = auto_adapt_b(new, old, self.params, self.tau)
            self.params.b = new_b
            self.rolled_back = rollback
            if rollback:
                self.deltas = new
                return positions
        self.deltas = new
        return positions + new


class Sgd:
    uses_gradient = True

    def __init__(self, m, dim, params: OptimizerParams):
        self.alpha = params.alpha if params.alpha is not None else _ALPHA_DEFAULTS["sgd"]

    @property
    def step_size(self):
        return self.alpha

    def lookahead(self, positions):
        return positions

    def step(self, positions, grad):
        return positions - self.alpha * grad


class Momentum:
    """v <- beta * v - alpha * g; y <- y + v. beta = 0 reduces to SGD."""

    uses_gradient = True

    def __init__(self, m, dim, params: OptimizerParams):
        self.alpha = params.alpha if params.alpha is not None else _ALPHA_DEFAULTS["momentum"]
        self.beta = params.beta
        self.velocity = np.zeros((m, dim))

    @property
    def step_size(self):
        return self.alpha

    def lookahead(self, positions):
        return positions

    def step(self, positions, grad):
        self.velocity = self.beta * self.velocity - self.alpha * grad
        return positions + self.velocity


class Nesterov(Momentum):
    """Momentum with the gradient taken at the looked-ahead position."""

    def __init__(self, m, dim, params: OptimizerParams):
        super().__init__(m, dim, params)
        if params.alpha is None:
            self.alpha = _ALPHA_DEFAULTS["nesterov"]

    def lookahead(self, positions):
        return positions + self.beta * self.velocity


class Adam:
    """Bias-corrected first/second-moment adaptive step."""

    uses_gradient = True

    def __init__(self, m, dim, params: OptimizerParams):
        self.alpha = params.alpha if params.alpha is not None else _ALPHA_DEFAULTS["adam"]
        self.gamma_v = params.gamma_v
        self.gamma_s = params.gamma_s
        self.eps = params.eps
        self.v = np.zeros((m, dim))
        self.s = np.zeros((m, dim))
        self.t = 0

    @property
    def step_size(self):
        return self.alpha

    def lookahead(self, positions):
        return positions

    def step(self, positions, grad):
        self.t += 1
        self.v = self.gamma_v * self.v + (1.0 - self.gamma_v) * grad
        self.s = self.gamma_s * self.s + (1.0 - self.gamma_s) * grad * grad
        v_hat = self.v / (1.0 - self.gamma_v**self.t)
        s_hat = self.s / (1.0 - self.gamma_s**self.t)
        return positions - self.alpha * v_hat / (self.eps + np.sqrt(s_hat))


class Adadelta:
    """Learning rate derived from decayed RMS of past steps and gradients."""

    uses_gradient = True

    def __init__(self, m, dim, params: OptimizerParams):
        self.rho = params.rho
        self.eps = params.eps
        self.scale = params.alpha if params.alpha is not None else _ALPHA_DEFAULTS["adadelta"]
        self.sq_grad = np.zeros((m, dim))
        self.sq_step = np.zeros((m, dim))

    @property
    def step_size(self):
        return self.scale

    def lookahead(self, positions):
        return positions

    def step(self, positions, grad):
        self.sq_grad = self.rho * self.sq_grad + (1.0 - self.rho) * grad * grad
        delta = (
            -self.scale
            * np.sqrt(self.sq_step + self.eps)
            / np.sqrt(self.sq_grad + self.eps)
            * grad
        )
        self.sq_step = self.rho * self.sq_step + (1.0 - self.rho) * delta * delta
        return positions + delta


_OPTIMIZERS = {
    "force-directed": ForceDirected,
    "sgd": Sgd,
    "momentum": Momentum,
    "nesterov": Nesterov,
    "adam": Adam,
    "adadelta": Adadelta,
}


def make_optimizer(kind, m, dim, integrator=None, opt_params=None):
    if kind not in _OPTIMIZERS:
        raise InvalidArgumentError(
            f"unknown optimizer {kind!r}; choose from {OPTIMIZER_KINDS}"
        )
    if kind == "force-directed":
        return ForceDirected(m, dim, integrator or IntegratorParams())
    return _OPTIMIZERS[kind](m, dim, opt_params or OptimizerParams())


def step_optimizer(optimizer, positions, forces):
    """Apply one update. Gradient optimizers consume grad E = -2 * forces."""
    if optimizer.uses_gradient:
        return optimizer.step(positions, -2.0 * forces)
    return optimizer.step(positions, forces)
