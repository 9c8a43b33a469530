"""Problem definitions: quadratic objectives, linear chance constraints,
uncertainty sources, and whole problem instances.

All types are immutable after construction (arrays are copied and marked
read-only), so instances can be shared freely across threads.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import StateError
from .normal import norm_cdf

ANALYTIC_GAUSSIAN = "analytic-gaussian"
EMPIRICAL_SAMPLES = "empirical-samples"


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class QuadraticObjective:
    """f(x) = 1/2 x'Ax + b'x + c0 with a symmetric Hessian A."""

    A: np.ndarray
    b: np.ndarray
    c0: float = 0.0

    def __post_init__(self):
        A = _frozen(self.A)
        b = _frozen(self.b)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if b.ndim != 1 or b.shape[0] != A.shape[0]:
            raise ValueError(f"b must be a vector of length {A.shape[0]}, got shape {b.shape}")
        if np.max(np.abs(A - A.T), initial=0.0) != 0.0:
            raise ValueError("A must be exactly symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c0", float(self.c0))

    @property
    def dimension(self) -> int:
        return self.b.shape[0]

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise ValueError(f"x has dimension {x.shape[-1]}, expected {self.dimension}")
        return x

    def value(self, x):
        """Objective value; accepts a single vector or a batch (B, n)."""
        x = self._check(x)
        quad = 0.5 * np.einsum("...i,ij,...j->...", x, self.A, x)
        out = quad + x @ self.b + self.c0
        return float(out) if out.ndim == 0 else out

    def gradient(self, x):
        x = self._check(x)
        return x @ self.A + self.b  # A symmetric, so x@A == A@x rowwise

    def hessian(self, x):
        self._check(x)
        return self.A


@dataclass(frozen=True, eq=False)
class LinearChanceConstraint:
    """Prob{h'x + d >= 0} >= 1 - rho with h Gaussian around cbar.

    rho must lie in (0, 0.5): the conic reformulation needs a negative
    Gaussian quantile. The covariance defaults to the identity.
    """

    cbar: np.ndarray
    d: float
    rho: float
    covariance: np.ndarray | None = None

    def __post_init__(self):
        cbar = _frozen(self.cbar)
        if cbar.ndim != 1:
            raise ValueError("cbar must be a vector")
        if not 0.0 < self.rho < 0.5:
            raise ValueError(f"rho must be in (0, 0.5), got {self.rho}")
        cov = self.covariance
        if cov is None:
            cov = np.eye(cbar.shape[0])
        cov = _frozen(cov)
        if cov.shape != (cbar.shape[0], cbar.shape[0]):
            raise ValueError(f"covariance shape {cov.shape} does not match dimension {cbar.shape[0]}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=0.0):
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None
        object.__setattr__(self, "cbar", cbar)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def dimension(self) -> int:
        return self.cbar.shape[0]

    def g(self, x, h):
        """Constraint function g(x, h) = h'x + d.

        h may be a single draw or a batch (L, n); x likewise broadcasts.
        """
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        if x.shape[-1] != self.dimension or h.shape[-1] != self.dimension:
            raise ValueError("dimension mismatch between x, h and the constraint")
        out = h @ x.T if (h.ndim == 2 and x.ndim == 2) else np.sum(h * x, axis=-1)
        out = out + self.d
        return float(out) if np.ndim(out) == 0 else out

    def exact_feasibility(self, x):
        """Gaussian satisfaction probability Phi((cbar'x + d) / ||S^1/2 x||).

        At x = 0 the constraint is deterministic: probability is 1 when
        d >= 0 and 0 otherwise.
        """
        single = np.ndim(x) == 1
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mean = x @ self.cbar + self.d
        var = np.einsum("bi,ij,bj->b", x, self.covariance, x)
        out = np.where(var > 0.0, norm_cdf(mean / np.sqrt(np.maximum(var, 1e-300))),
                       (mean >= 0.0).astype(float))
        return float(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class UncertaintySource:
    """Where constraint-coefficient draws come from.

    ``analytic-gaussian`` draws i.i.d. N(mean, covariance); the
    ``empirical-samples`` mode resamples stored rows uniformly with
    replacement and never touches an analytic density.
    """

    kind: str
    mean: np.ndarray | None = None
    covariance: np.ndarray | None = None
    samples: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (ANALYTIC_GAUSSIAN, EMPIRICAL_SAMPLES):
            raise ValueError(f"unknown uncertainty kind {self.kind!r}")
        if self.kind == ANALYTIC_GAUSSIAN:
            if self.mean is None:
                raise ValueError("analytic-gaussian mode requires a mean")
            mean = _frozen(self.mean)
            cov = np.eye(mean.shape[0]) if self.covariance is None else self.covariance
            cov = _frozen(cov)
            if cov.shape != (mean.shape[0], mean.shape[0]):
                raise ValueError("covariance shape does not match the mean")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "covariance", cov)
        if self.samples is not None:
            s = _frozen(np.atleast_2d(self.samples))
            object.__setattr__(self, "samples", s)

    @property
    def dimension(self) -> int:
        if self.kind == ANALYTIC_GAUSSIAN:
            return self.mean.shape[0]
        if self.samples is None:
            raise StateError("empirical uncertainty source has no stored samples")
        return self.samples.shape[1]


def draw_uncertainty(source: UncertaintySource, count: int, seed: int | None = None) -> np.ndarray:
    """Draw ``count`` realizations as a (count, d) matrix.

    A pure function of (source, count, seed): repeated calls with the same
    seed return identical matrices. ``seed=None`` uses the source's own seed.
    """
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    rng = np.random.default_rng(source.seed if seed is None else seed)
    if source.kind == ANALYTIC_GAUSSIAN:
        chol = np.linalg.cholesky(source.covariance)
        z = rng.standard_normal((count, source.mean.shape[0]))
        return source.mean + z @ chol.T
    if source.samples is None or source.samples.shape[0] == 0:
        raise StateError("empirical uncertainty source has no stored samples")
    idx = rng.integers(0, source.samples.shape[0], size=count)
    return source.samples[idx].copy()


@dataclass(frozen=True, eq=False)
class CCPInstance:
    """A chance constrained program: objective, constraint, uncertainty."""

    objective: QuadraticObjective
    constraint: LinearChanceConstraint
    uncertainty: UncertaintySource
    dimension: int = field(default=0)

    def __post_init__(self):
        n = self.objective.dimension
        if self.dimension == 0:
            object.__setattr__(self, "dimension", n)
        if self.dimension != n:
            raise ValueError(f"declared dimension {self.dimension} != objective dimension {n}")
        if self.constraint.dimension != n:
            raise ValueError("constraint dimension does not match the objective")
        if self.uncertainty.dimension != n:
            raise ValueError("uncertainty dimension does not match the objective")

    @classmethod
    def linear_gaussian(cls, n: int, b=1.0, cbar=1.0, d: float = 1.0,
                        rho: float = 0.1, seed: int = 0) -> "CCPInstance":
        """The linear-Gaussian test family: f = 1/2 x'x + b'x, identity noise."""
        b = np.full(n, float(b)) if np.ndim(b) == 0 else np.asarray(b, dtype=float)
        cbar = np.full(n, float(cbar)) if np.ndim(cbar) == 0 else np.asarray(cbar, dtype=float)
        obj = QuadraticObjective(np.eye(n), b)
        con = LinearChanceConstraint(cbar, d, rho)
        unc = UncertaintySource(ANALYTIC_GAUSSIAN, mean=cbar, seed=seed)
        return cls(obj, con, unc)

    def fingerprint(self) -> str:
        """Stable content hash of the instance definition."""
        h = hashlib.sha256()
        for a in (self.objective.A, self.objective.b, np.array([self.objective.c0]),
                  self.constraint.cbar, np.array([self.constraint.d, self.constraint.rho]),
                  self.constraint.covariance):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        h.update(self.uncertainty.kind.encode())
        h.update(str(self.uncertainty.seed).encode())
        if self.uncertainty.samples is not None:
            h.update(np.ascontiguousarray(self.uncertainty.samples, dtype=float).tobytes())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# Instance definition files: a flat "key = value" text document.
#
#   n = 8
#   A = identity           # or a scalar (multiple of I), or n*n comma-separated entries
#   b = 1                  # scalar broadcast or n comma/space-separated values
#   c0 = 0                 # optional
#   cbar = 1
#   d = 1
#   rho = 0.1
#   covariance = identity  # optional; scalar or n*n entries
#   uncertainty = analytic-gaussian   # or empirical-samples
#   samples = draws.csv    # empirical mode only: d columns, one draw per row, no header
#   seed = 0
# ---------------------------------------------------------------------------

def _parse_vector(text: str, n: int) -> np.ndarray:
    parts = text.replace(",", " ").split()
    vals = [float(p) for p in parts]
    if len(vals) == 1:
        return np.full(n, vals[0])
    if len(vals) != n:
        raise ValueError(f"expected 1 or {n} values, got {len(vals)}")
    return np.array(vals)


def _parse_matrix(text: str, n: int) -> np.ndarray:
    text = text.strip()
    if text.lower() == "identity":
        return np.eye(n)
    parts = text.replace(",", " ").split()
    vals = [float(p) for p in parts]
    if len(vals) == 1:
        return vals[0] * np.eye(n)
    if len(vals) != n * n:
        raise ValueError(f"expected 1 or {n * n} matrix entries, got {len(vals)}")
    return np.array(vals).reshape(n, n)


def load_instance(path) -> CCPInstance:
    """Read an instance definition file (schema in the module source)."""
    path = Path(path)
    fields: dict[str, str] = {}
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed instance line: {raw!r}")
        key, value = line.split("=", 1)
        fields[key.strip().lower()] = value.strip()

    try:
        n = int(fields["n"])
    except KeyError:
        raise ValueError("instance file must set n") from None
    A = _parse_matrix(fields.get("a", "identity"), n)
    b = _parse_vector(fields.get("b", "0"), n)
    c0 = float(fields.get("c0", "0"))
    cbar = _parse_vector(fields.get("cbar", "0"), n)
    d = float(fields.get("d", "0"))
    rho = float(fields.get("rho", "0.1"))
    cov = _parse_matrix(fields.get("covariance", "identity"), n)
    kind = fields.get("uncertainty", ANALYTIC_GAUSSIAN)
    seed = int(fields.get("seed", "0"))

    objective = QuadraticObjective(A, b, c0)
    constraint = LinearChanceConstraint(cbar, d, rho, cov)
    if kind == EMPIRICAL_SAMPLES:
        if "samples" not in fields:
            raise ValueError("empirical-samples mode requires a samples CSV path")
        sample_path = Path(fields["samples"])
        if not sample_path.is_absolute():
            sample_path = path.parent / sample_path
        samples = np.loadtxt(sample_path, delimiter=",", ndmin=2)
        uncertainty = UncertaintySource(EMPIRICAL_SAMPLES, samples=samples, seed=seed)
    else:
        uncertainty = UncertaintySource(ANALYTIC_GAUSSIAN, mean=cbar, covariance=cov, seed=seed)
    return CCPInstance(objective, constraint, uncertainty)


def save_instance(instance: CCPInstance, path, samples_filename: str | None = None) -> None:
    """Write an instance definition file (and a samples CSV in empirical mode)."""
    path = Path(path)
    n = instance.dimension
    out = io.StringIO()
    out.write(f"n = {n}\n")

    def fmt_matrix(m):
        if np.array_equal(m, np.eye(n)):
            return "identity"
        return ", ".join(repr(v) for v in np.asarray(m).ravel())

    def fmt_vector(v):
        return ", ".join(repr(float(x)) for x in v)

    out.write(f"A = {fmt_matrix(instance.objective.A)}\n")
    out.write(f"b = {fmt_vector(instance.objective.b)}\n")
    out.write(f"c0 = {instance.objective.c0!r}\n")
    out.write(f"cbar = {fmt_vector(instance.constraint.cbar)}\n")
    out.write(f"d = {instance.constraint.d!r}\n")
    out.write(f"rho = {instance.constraint.rho!r}\n")
    out.write(f"covariance = {fmt_matrix(instance.constraint.covariance)}\n")
    out.write(f"uncertainty = {instance.uncertainty.kind}\n")
    out.write(f"seed = {instance.uncertainty.seed}\n")
    if instance.uncertainty.kind == EMPIRICAL_SAMPLES:
        name = samples_filename or (path.stem + "_samples.csv")
        np.savetxt(path.parent / name, instance.uncertainty.samples, delimiter=",")
        out.write(f"samples = {name}\n")
    path.write_text(out.getvalue())
