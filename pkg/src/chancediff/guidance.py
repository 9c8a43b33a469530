"""Gradient-guidance terms that steer reverse sampling toward low objective
values.

First order adds -beta * grad f evaluated at the current iterate. Second
order linearizes f to second order around the iterate and combines it with
the posterior mean of the clean sample (Tweedie estimate) under a fixed
posterior-variance hyperparameter. For linear f the second-order term
collapses to the first-order one exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, SingularityError
from .network import cond_score
from .schedule import NoiseSchedule

SOLVE_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class GuidanceConfig:
    beta: float
    order: str = "first"          # "first" | "second"
    sigma2: float = 0.1           # posterior-variance hyperparameter (second order)
    w: float = 0.0                # classifier-free combination weight

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.sigma2 <= 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be 'first' or 'second', got {self.order!r}")


def first_order_guidance(objective, x_t, beta: float):
    """-beta * grad f(x_t); batched over rows of x_t."""
    if beta < 0.0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    return -beta * objective.gradient(x_t)


def tweedie_posterior_mean(net, schedule: NoiseSchedule, x_t, t, rho, w: float = 0.0):
    """Posterior-mean estimate (x_t + (1 - ab_t) s) / sqrt(ab_t) from the
    classifier-free combined score."""
    ab = schedule.alpha_bar_at(t)
    s = cond_score(net, schedule, x_t, t, rho, w)
    return (np.asarray(x_t, dtype=float) + (1.0 - ab) * s) / np.sqrt(ab)


def second_order_guidance(objective, x_t, beta: float, sigma2: float, mu0t):
    """Second-order guidance from the local quadratic model of f.

    With H = hess f(x_t) + I/(beta*sigma2):

        G = -(1/sigma2) [ H^{-1}((-hess f x_t + grad f) - mu0t/(beta sigma2)) + mu0t ]

    H must be positive definite; the linear system is solved by a Cholesky
    factorization and verified to residual <= 1e-10.
    """
    if beta <= 0.0 or sigma2 <= 0.0:
        raise ValueError("beta and sigma2 must be positive")
    x_t = np.asarray(x_t, dtype=float)
    mu0t = np.asarray(mu0t, dtype=float)
    single = x_t.ndim == 1
    xb = np.atleast_2d(x_t)
    mub = np.broadcast_to(np.atleast_2d(mu0t), xb.shape)

    hess = objective.hessian(xb[0])
    n = hess.shape[0]
    H = hess + np.eye(n) / (beta * sigma2)
    try:
        cho = scipy.linalg.cho_factor(H)
    except scipy.linalg.LinAlgError:
        eigmin = float(np.linalg.eigvalsh(H).min())
        raise SingularityError(
            f"guidance matrix hess f + I/(beta*sigma2) is not positive definite "
            f"(smallest eigenvalue {eigmin:.3e}); decrease beta*sigma2 below "
            f"{1.0 / max(-float(np.linalg.eigvalsh(hess).min()), 1e-300):.3e}") from None

    rhs = (objective.gradient(xb) - xb @ hess) - mub / (beta * sigma2)
    sol = scipy.linalg.cho_solve(cho, rhs.T).T
    residual = float(np.max(np.abs(sol @ H - rhs), initial=0.0))
    if residual > SOLVE_RESIDUAL_TOL * max(1.0, float(np.max(np.abs(rhs), initial=0.0))):
        raise NumericalError(f"guidance solve residual {residual:.3e} exceeds tolerance")
    G = -(sol + mub) / sigma2
    return G[0] if single else G


def guidance_term(objective, config: GuidanceConfig, x_t, t, net=None,
                  schedule: NoiseSchedule | None = None, rho=None):
    """Dispatch on the configured order; second order derives the posterior
    mean from the network via Tweedie's estimate."""
    if config.order == "first":
        return first_order_guidance(objective, x_t, config.beta)
    if net is None or schedule is None:
        raise ValueError("second-order guidance needs a score model and schedule")
    mu = tweedie_posterior_mean(net, schedule, x_t, t, rho, config.w)
    return second_order_guidance(objective, x_t, config.beta, config.sigma2, mu)
