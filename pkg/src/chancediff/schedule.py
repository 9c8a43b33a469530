"""Discrete forward-noising schedule and perturbation kernel.

Steps are indexed t = 1..T; alpha_bar(0) = 1 by convention so that the
terminal reverse step reproduces the clean sample exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step noise rates eta_t and cumulative products alpha_bar_t."""

    eta: np.ndarray        # (T,), eta[i] is the rate at step t = i + 1
    alpha_bar: np.ndarray  # (T,), alpha_bar[i] = prod_{j<=i} (1 - eta[j])

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        ab = np.array(self.alpha_bar, dtype=float)
        if eta.ndim != 1 or ab.shape != eta.shape:
            raise ValueError("eta and alpha_bar must be vectors of equal length")
        if np.any((eta <= 0.0) | (eta >= 1.0)):
            raise ValueError("noise rates must lie in (0, 1)")
        if np.any((ab <= 0.0) | (ab >= 1.0)):
            raise ValueError("alpha_bar must lie in (0, 1)")
        if np.any(np.diff(ab) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        eta.setflags(write=False)
        ab.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "alpha_bar", ab)

    @classmethod
    def linear(cls, steps: int = 1000, eta_start: float = 1e-4,
               eta_end: float = 0.02) -> "NoiseSchedule":
        eta = np.linspace(eta_start, eta_end, steps)
        return cls(eta=eta, alpha_bar=np.cumprod(1.0 - eta))

    @property
    def steps(self) -> int:
        return self.eta.shape[0]

    def eta_at(self, t):
        """Noise rate at step t in 1..T (scalar or integer array)."""
        t = np.asarray(t)
        if np.any((t < 1) | (t > self.steps)):
            raise ValueError(f"step index out of range 1..{self.steps}")
        out = self.eta[t - 1]
        return float(out) if out.ndim == 0 else out

    def alpha_bar_at(self, t):
        """Cumulative product at step t in 0..T; alpha_bar(0) = 1."""
        t = np.asarray(t)
        if np.any((t < 0) | (t > self.steps)):
            raise ValueError(f"step index out of range 0..{self.steps}")
        padded = np.concatenate([[1.0], self.alpha_bar])
        out = padded[t]
        return float(out) if out.ndim == 0 else out


def forward_perturb(schedule: NoiseSchedule, x0, t, seed: int | None = None,
                    eps=None, rng: np.random.Generator | None = None):
    """Noise clean samples to step t: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    x0 may be a single vector or a batch (B, n); t a scalar step or a batch
    of steps. Returns (x_t, eps). Pass ``eps`` to force a specific noise
    realization (e.g. zero for the noiseless branch).
    """
    x0 = np.asarray(x0, dtype=float)
    ab = schedule.alpha_bar_at(t)
    t_arr = np.asarray(t)
    if np.any(t_arr < 1):
        raise ValueError("forward perturbation needs t >= 1")
    if eps is None:
        if rng is None:
            rng = np.random.default_rng(seed)
        eps = rng.standard_normal(x0.shape)
    else:
        eps = np.asarray(eps, dtype=float)
        if eps.shape != x0.shape:
            raise ValueError("eps shape must match x0")
    ab = ab[..., None] if np.ndim(ab) == 1 and x0.ndim == 2 else ab
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return x_t, eps
