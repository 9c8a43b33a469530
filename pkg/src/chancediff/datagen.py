"""Stage 1: build the feasible training set.

For a grid of restrictions z_i we solve the deterministic surrogate

    min f(x)  s.t.  hbar'x + d >= z_i

at the empirical mean hbar of one shared draw batch, then label each
solution with its empirical violation frequency over the same batch.
The module also hosts the variance-based feasibility lower bound and the
Gaussian quadratic-form probability used to sanity-check risk labels.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import IllPosedError, InfeasibleRestrictionError
from .normal import norm_cdf
from .problems import CCPInstance, draw_uncertainty

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RestrictionGrid:
    """Non-decreasing restriction levels z_i >= 0."""

    z_values: np.ndarray

    def __post_init__(self):
        z = np.array(self.z_values, dtype=float)
        if z.ndim != 1 or z.size == 0:
            raise ValueError("z_values must be a nonempty vector")
        if np.any(z < 0.0):
            raise ValueError("restrictions must be nonnegative")
        if np.any(np.diff(z) < 0.0):
            raise ValueError("restrictions must be sorted ascending")
        z.setflags(write=False)
        object.__setattr__(self, "z_values", z)

    @classmethod
    def linspace(cls, low: float = 0.0, high: float = 0.5, count: int = 1000) -> "RestrictionGrid":
        return cls(np.linspace(low, high, count))

    @property
    def count(self) -> int:
        return self.z_values.shape[0]


@dataclass(frozen=True, eq=False)
class FeasibleDataset:
    """Training pairs (x_i, rho_i) plus provenance."""

    points: np.ndarray          # (N, n)
    risks: np.ndarray           # (N,) in [0, 1], integer multiples of 1/L
    fingerprint: str            # hash of the generating instance
    z_values: np.ndarray | None = None
    sample_count: int = 0       # L used for the risk labels
    seed: int = 0
    skipped: tuple = field(default_factory=tuple)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        risks = np.array(self.risks, dtype=float)
        if pts.ndim != 2 or risks.ndim != 1 or pts.shape[0] != risks.shape[0]:
            raise ValueError("points must be (N, n) with matching risks (N,)")
        if np.any((risks < 0.0) | (risks > 1.0)):
            raise ValueError("risk labels must lie in [0, 1]")
        pts.setflags(write=False)
        risks.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "risks", risks)
        if self.z_values is not None:
            z = np.array(self.z_values, dtype=float)
            z.setflags(write=False)
            object.__setattr__(self, "z_values", z)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def save(self, csv_path) -> None:
        """Write points as CSV (columns x_1..x_n, rho) plus a metadata sidecar."""
        csv_path = Path(csv_path)
        n = self.dimension
        header = ",".join([f"x_{i + 1}" for i in range(n)] + ["rho"])
        body = np.column_stack([self.points, self.risks])
        np.savetxt(csv_path, body, delimiter=",", header=header, comments="")
        meta = {
            "n": n,
            "N": len(self),
            "L": self.sample_count,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "skipped": list(self.skipped),
        }
        csv_path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, csv_path) -> "FeasibleDataset":
        csv_path = Path(csv_path)
        body = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        meta_path = csv_path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(points=body[:, :-1], risks=body[:, -1],
                   fingerprint=meta.get("fingerprint", ""),
                   sample_count=int(meta.get("L", 0)), seed=int(meta.get("seed", 0)),
                   skipped=tuple(tuple(s) for s in meta.get("skipped", [])))


def solve_restricted(instance: CCPInstance, hbar, z: float) -> np.ndarray:
    """Exact minimizer of f subject to hbar'x + d >= z (strictly convex f).

    Closed-form KKT solution: x = -A^{-1}(b - lam*hbar) with
    lam = max(0, (z - d + hbar'A^{-1}b) / (hbar'A^{-1}hbar)).
    """
    if z < 0.0:
        raise ValueError(f"restriction must be nonnegative, got {z}")
    hbar = np.asarray(hbar, dtype=float)
    obj = instance.objective
    d = instance.constraint.d
    if hbar.shape != (instance.dimension,):
        raise ValueError("hbar dimension does not match the instance")
    try:
        cho = scipy.linalg.cho_factor(obj.A)
    except scipy.linalg.LinAlgError:
        raise IllPosedError("objective Hessian is not positive definite") from None
    if not np.any(hbar):
        if z > d:
            raise InfeasibleRestrictionError(
                f"hbar = 0 makes the restriction g >= {z} unsatisfiable (d = {d})")
        return scipy.linalg.cho_solve(cho, -obj.b)
    Ainv_b = scipy.linalg.cho_solve(cho, obj.b)
    Ainv_h = scipy.linalg.cho_solve(cho, hbar)
    lam = max(0.0, (z - d + hbar @ Ainv_b) / (hbar @ Ainv_h))
    return -Ainv_b + lam * Ainv_h


def empirical_rho(instance: CCPInstance, x, draws) -> float:
    """Fraction of draws violating g(x, h) >= 0; an exact multiple of 1/L.

    Ties g = 0 count as satisfied.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    values = instance.constraint.g(x, draws)
    return float(1.0 - np.count_nonzero(values >= 0.0) / draws.shape[0])


def generate_dataset(instance: CCPInstance, grid: RestrictionGrid, sample_count: int,
                     seed: int = 0) -> FeasibleDataset:
    """Run the full stage-1 loop over the restriction grid.

    One shared batch of ``sample_count`` draws supplies both the empirical
    mean hbar and every risk label, keeping generation O(N * L). Grid points
    whose restricted problem is infeasible are skipped and recorded rather
    than aborting the run.
    """
    draws = draw_uncertainty(instance.uncertainty, sample_count, seed=seed)
    hbar = draws.mean(axis=0)
    points, risks, z_kept, skipped = [], [], [], []
    for i, z in enumerate(grid.z_values):
        try:
            x = solve_restricted(instance, hbar, float(z))
        except (InfeasibleRestrictionError, IllPosedError) as exc:
            log.warning("skipping grid point %d (z=%g): %s", i, z, exc)
            skipped.append((i, str(exc)))
            continue
        points.append(x)
        risks.append(empirical_rho(instance, x, draws))
        z_kept.append(float(z))
    if not points:
        raise InfeasibleRestrictionError("every grid point was infeasible")
    return FeasibleDataset(points=np.array(points), risks=np.array(risks),
                           fingerprint=instance.fingerprint(),
                           z_values=np.array(z_kept), sample_count=sample_count,
                           seed=seed, skipped=tuple(skipped))


def chebyshev_bound(z_min: float, lipschitz: float, variance: float,
                    mean_bias: float = 0.0) -> float:
    """Variance-based lower bound on the satisfaction probability.

    Returns max(0, 1 - variance / (z_min/lipschitz - mean_bias)^2) when the
    margin z_min/lipschitz exceeds the mean bias, else 0 (vacuous).
    """
    if lipschitz <= 0.0:
        raise ValueError(f"lipschitz constant must be positive, got {lipschitz}")
    if variance < 0.0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    if mean_bias < 0.0:
        raise ValueError(f"mean bias must be nonnegative, got {mean_bias}")
    margin = z_min / lipschitz - mean_bias
    if margin <= 0.0:
        return 0.0
    if variance == 0.0:
        return 1.0
    return max(0.0, 1.0 - variance / margin**2)


def quadform_probability_gaussian(Q, r, s: float) -> float:
    """CLT approximation of Prob{1/2 u'Qu + r'u + s >= 0}, u ~ N(0, I).

    Y = 1/2 u'Qu + r'u + s has mean 1/2 tr(Q) + s and variance
    1/2 ||Q||_F^2 + ||r||^2; the linear case (Q = 0) is exact.
    """
    Q = np.asarray(Q, dtype=float)
    r = np.asarray(r, dtype=float)
    mu = 0.5 * np.trace(Q) + s
    sigma2 = 0.5 * np.sum(Q * Q) + r @ r
    if sigma2 <= 0.0:
        return 1.0 if mu >= 0.0 else 0.0
    return float(1.0 - norm_cdf(-mu / np.sqrt(sigma2)))


def quadform_probability_mc(Q, r, s: float, draws: int, seed: int = 0,
                            _chunk: int = 65536) -> float:
    """Monte-Carlo estimate of Prob{1/2 u'Qu + r'u + s >= 0}, u ~ N(0, I).

    Deterministic under the seed (fixed internal chunking).
    """
    if draws < 1:
        raise ValueError(f"draws must be >= 1, got {draws}")
    Q = np.asarray(Q, dtype=float)
    r = np.asarray(r, dtype=float)
    n = r.shape[0]
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = draws
    while remaining > 0:
        m = min(_chunk, remaining)
        u = rng.standard_normal((m, n))
        y = 0.5 * np.einsum("bi,ij,bj->b", u, Q, u) + u @ r + s
        hits += int(np.count_nonzero(y >= 0.0))
        remaining -= m
    return hits / draws
