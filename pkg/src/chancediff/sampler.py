"""Stage 3: discretized reverse process with gradient guidance.

Two stepping modes over a uniformly strided time grid:

* deterministic — noise-free accelerated update through the clean-sample
  estimate (the default; a pure function of seed and parameters),
* ancestral — Euler-Maruyama discretization of the reverse SDE with fresh
  noise at every step except the last.

The guidance term G_t is added to the learned conditional score with a
sqrt(alpha_bar_t) factor. This factor is the sensitivity of the posterior
mean to the noisy iterate: the diffused guidance correction at step t is
G evaluated in clean-sample coordinates carried back through the forward
scaling, and for unit-variance Gaussian data the damped sum reproduces the
diffused product score exactly. Undamped injection over-counts guidance
early in the reverse pass by orders of magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import solve_cone_program
from .errors import DivergenceError, InfeasibleInstanceError
from .guidance import GuidanceConfig, first_order_guidance, second_order_guidance
from .network import cond_score
from .normal import norm_quantile
from .problems import CCPInstance
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 100
    mode: str = "deterministic"            # "deterministic" | "ancestral"
    guidance: GuidanceConfig | None = None
    rho: float | None = None               # None samples the unconditional branch
    batch: int = 1
    seed: int = 0
    record_trajectories: bool = False
    guard_factor: float = 1e3              # divergence guard: ||x|| <= guard_factor * data radius

    def __post_init__(self):
        if self.mode not in ("deterministic", "ancestral"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.batch < 1 or self.steps < 1:
            raise ValueError("batch and steps must be >= 1")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States visited by one sample, newest last, with f(posterior mean)."""

    times: np.ndarray            # (steps+1,) step indices, descending to 0
    states: np.ndarray           # (steps+1, n)
    objective_trace: np.ndarray  # (steps+1,)


def time_grid(total_steps: int, steps: int) -> np.ndarray:
    """Uniform stride from total_steps down to 0 (steps+1 nodes)."""
    if steps > total_steps:
        raise ValueError(f"cannot subsample {steps} reverse steps from {total_steps}")
    grid = np.unique(np.round(np.linspace(0, total_steps, steps + 1)).astype(int))
    return grid[::-1]


def _guided_score(net, schedule, x, t_cur, config, objective, guidance_fn):
    ab = schedule.alpha_bar_at(t_cur)
    s = cond_score(net, schedule, x, t_cur, config.rho,
                   config.guidance.w if config.guidance else 0.0)
    mu = (x + (1.0 - ab) * s) / np.sqrt(ab)
    if guidance_fn is not None:
        G = guidance_fn(x, t_cur, mu)
    elif config.guidance is not None:
        if objective is None:
            raise ValueError("guided sampling needs the objective")
        if config.guidance.order == "first":
            G = first_order_guidance(objective, x, config.guidance.beta)
        else:
            G = second_order_guidance(objective, x, config.guidance.beta,
                                      config.guidance.sigma2, mu)
    else:
        G = None
    if G is not None:
        s = s + np.sqrt(ab) * G
    return s, mu


def reverse_step(net, schedule: NoiseSchedule, x, t_cur: int, t_next: int,
                 config: SamplerConfig, objective=None, noise=None,
                 guidance_fn=None, return_posterior_mean: bool = False):
    """Advance states from step t_cur to t_next < t_cur.

    Deterministic mode maps through the clean-sample estimate:
    eps = -sqrt(1-ab_t) s, x0 = (x - sqrt(1-ab_t) eps)/sqrt(ab_t), then
    renoises to t_next (exactly x0 at t_next = 0). Ancestral mode applies
    the Euler-Maruyama reverse update with effective rate
    1 - ab(t_cur)/ab(t_next) and adds no noise on the final step.
    """
    if t_next >= t_cur:
        raise ValueError("t_next must be smaller than t_cur")
    x = np.asarray(x, dtype=float)
    ab_cur = schedule.alpha_bar_at(t_cur)
    ab_next = schedule.alpha_bar_at(t_next)
    s, mu = _guided_score(net, schedule, x, t_cur, config, objective, guidance_fn)

    if config.mode == "deterministic":
        eps_hat = -np.sqrt(1.0 - ab_cur) * s
        x0_hat = (x - np.sqrt(1.0 - ab_cur) * eps_hat) / np.sqrt(ab_cur)
        x_next = np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * eps_hat
    else:
        eta_eff = 1.0 - ab_cur / ab_next
        x_next = x + eta_eff * (0.5 * x + s)
        if t_next > 0:
            if noise is None:
                noise = np.random.default_rng(config.seed).standard_normal(x.shape)
            x_next = x_next + np.sqrt(eta_eff) * noise

    beta = config.guidance.beta if config.guidance else None
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"non-finite state at step t={t_cur}", step=t_cur, beta=beta)
    guard = config.guard_factor * max(getattr(net, "data_radius", 1.0), 1.0)
    if np.max(np.linalg.norm(np.atleast_2d(x_next), axis=1)) > guard:
        raise DivergenceError(
            f"state norm exceeded {guard:.3g} at step t={t_cur} (beta={beta})",
            step=t_cur, beta=beta)
    if return_posterior_mean:
        return x_next, mu
    return x_next


def sample(net, schedule: NoiseSchedule, config: SamplerConfig, objective=None,
           guidance_fn=None):
    """Draw config.batch samples by running the reverse process.

    Returns (samples, trajectories); trajectories is empty unless recording
    is enabled. Each sample owns an RNG derived from (seed, sample index),
    so results are independent of batch composition, and deterministic mode
    is a pure function of (seed, parameters, config).
    """
    grid = time_grid(schedule.steps, config.steps)
    n = net.n
    gens = [np.random.default_rng([config.seed, i]) for i in range(config.batch)]
    x = np.stack([g.standard_normal(n) for g in gens])
    noises = None
    if config.mode == "ancestral":
        noises = np.stack([g.standard_normal((len(grid) - 1, n)) for g in gens])

    record = config.record_trajectories
    states = [x.copy()] if record else None
    trace = [] if record else None

    for k in range(len(grid) - 1):
        t_cur, t_next = int(grid[k]), int(grid[k + 1])
        noise = noises[:, k, :] if noises is not None else None
        x, mu = reverse_step(net, schedule, x, t_cur, t_next, config, objective,
                             noise=noise, guidance_fn=guidance_fn,
                             return_posterior_mean=True)
        if record:
            states.append(x.copy())
            trace.append(objective.value(mu) if objective is not None else np.zeros(config.batch))

    trajectories = []
    if record:
        if objective is not None:
            trace.append(objective.value(x))
        else:
            trace.append(np.zeros(config.batch))
        all_states = np.stack(states)            # (steps+1, batch, n)
        all_trace = np.stack(trace)              # (steps+1, batch)
        for i in range(config.batch):
            trajectories.append(Trajectory(times=grid.copy(),
                                           states=all_states[:, i, :],
                                           objective_trace=all_trace[:, i]))
    return x, trajectories


def feasibility_repair(instance: CCPInstance, x) -> np.ndarray:
    """Project onto the analytic feasible set {x : kappa ||S^1/2 x|| <= cbar'x + d}.

    Feasible inputs are returned unchanged; infeasible ones move to the
    nearest point of the set (which lies on its boundary). Accepts a single
    vector or a batch of rows.
    """
    con = instance.constraint
    kappa = -norm_quantile(con.rho)
    single = np.ndim(x) == 1
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    n = pts.shape[1]
    cov = con.covariance
    identity_cov = np.array_equal(cov, np.eye(n))
    if not identity_cov:
        L = np.linalg.cholesky(cov)
        Linv = np.linalg.inv(L)
        cbar_w = Linv @ con.cbar
        if con.d < 0.0 and np.linalg.norm(cbar_w) <= kappa:
            raise InfeasibleInstanceError("the analytic feasible set is empty")
    elif con.d < 0.0 and np.linalg.norm(con.cbar) <= kappa:
        raise InfeasibleInstanceError("the analytic feasible set is empty")

    out = pts.copy()
    for i, p in enumerate(pts):
        margin = con.cbar @ p + con.d - kappa * np.sqrt(max(p @ cov @ p, 0.0))
        if margin >= 0.0:
            continue
        if identity_cov:
            sol = solve_cone_program(np.eye(n), -p, con.cbar, con.d, kappa)
            out[i] = sol.x_star
        else:
            # Whitened variables z = L'x turn the Mahalanobis-norm cone into
            # the plain one; the distance becomes 1/2 z'(L^-1 L^-T)z - (L^-1 p)'z.
            A_w = Linv @ Linv.T
            A_w = 0.5 * (A_w + A_w.T)
            sol = solve_cone_program(A_w, -Linv @ p, cbar_w, con.d, kappa)
            out[i] = Linv.T @ sol.x_star
    return out[0] if single else out
