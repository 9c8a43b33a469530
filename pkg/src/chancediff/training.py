"""Noise-prediction training loop with classifier-free condition dropout.

Each step draws a minibatch, a uniform step index t in 1..T per element,
perturbs to x_t, drops the risk condition with probability p_uncond, and
takes an Adam step on the mean squared noise-prediction error. The loss
for a batch is the mean over elements of ||eps_hat - eps||^2 (summed over
coordinates), so an all-zero predictor scores ~n in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import FeasibleDataset
from .errors import TrainingDivergedError
from .network import ScoreNetwork
from .schedule import NoiseSchedule, forward_perturb


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 6000
    batch_size: int = 64
    learning_rate: float = 1e-3
    p_uncond: float = 0.1
    seed: int = 0
    width: int = 256
    depth: int = 4
    embed_dim: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.p_uncond < 1.0:
            raise ValueError(f"p_uncond must be in [0, 1), got {self.p_uncond}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


def _batch_loss_and_grads(net: ScoreNetwork, schedule: NoiseSchedule, x0, rho,
                          null_mask, rng: np.random.Generator):
    batch = x0.shape[0]
    t = rng.integers(1, schedule.steps + 1, size=batch)
    x_t, eps = forward_perturb(schedule, x0, t, rng=rng)
    inp, _, _ = net._assemble_input(x_t, t, rho, null_mask)
    out, cache = net._forward(inp)
    err = out - eps
    loss = float(np.mean(np.sum(err * err, axis=1)))
    grads, d_inp = net._backward(cache, 2.0 * err / batch)
    # The null token only receives gradient through rows where it was used.
    if null_mask is not None and np.any(null_mask):
        grads["null_token"] = d_inp[null_mask, net.n + net.embed_dim:].sum(axis=0)
    return loss, grads


def training_loss(net, schedule: NoiseSchedule, x0, rho, seed: int = 0,
                  p_uncond: float = 0.0) -> float:
    """Monte-Carlo estimate of the denoising objective on one batch.

    Deterministic under the seed; usable as a held-out evaluation by fixing
    the seed across calls.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if x0.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    rng = np.random.default_rng(seed)
    batch = x0.shape[0]
    t = rng.integers(1, schedule.steps + 1, size=batch)
    x_t, eps = forward_perturb(schedule, x0, t, rng=rng)
    null_mask = rng.random(batch) < p_uncond if p_uncond > 0.0 else None
    out = net.epsilon(x_t, t, rho=rho, null_mask=null_mask)
    err = out - eps
    return float(np.mean(np.sum(err * err, axis=1)))


def train(dataset: FeasibleDataset, config: TrainConfig, schedule: NoiseSchedule,
          callback=None) -> ScoreNetwork:
    """Fit a conditional noise predictor to the dataset.

    Deterministic per seed and invariant to dataset row order (rows are
    brought to a canonical order before batching). ``callback(step, loss,
    null_count)`` is invoked after every step when provided. Raises
    TrainingDivergedError on a non-finite loss.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    order = np.lexsort(np.column_stack([dataset.points, dataset.risks]).T[::-1])
    points = dataset.points[order]
    risks = dataset.risks[order]

    rho_lo, rho_hi = float(risks.min()), float(risks.max())
    radius = float(np.max(np.linalg.norm(points, axis=1)))
    net = ScoreNetwork(points.shape[1], config.width, config.depth, config.embed_dim,
                       seed=config.seed, rho_range=(rho_lo, rho_hi),
                       data_radius=max(radius, 1e-12))

    rng = np.random.default_rng(config.seed)
    m = {k: np.zeros_like(v) for k, v in net.params.items()}
    v = {k: np.zeros_like(v) for k, v in net.params.items()}
    b1, b2, eps_adam = config.adam_beta1, config.adam_beta2, config.adam_eps

    for step in range(config.steps):
        idx = rng.integers(0, points.shape[0], size=config.batch_size)
        null_mask = rng.random(config.batch_size) < config.p_uncond
        loss, grads = _batch_loss_and_grads(net, schedule, points[idx], risks[idx],
                                            null_mask, rng)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss at step {step} (learning rate {config.learning_rate})",
                step=step, learning_rate=config.learning_rate)
        tt = step + 1
        for k, g in grads.items():
            m[k] = b1 * m[k] + (1.0 - b1) * g
            v[k] = b2 * v[k] + (1.0 - b2) * g * g
            m_hat = m[k] / (1.0 - b1**tt)
            v_hat = v[k] / (1.0 - b2**tt)
            net.params[k] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + eps_adam)
        if callback is not None:
            callback(step, loss, int(np.count_nonzero(null_mask)))
    return net
