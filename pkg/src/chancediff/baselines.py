"""Analytic benchmarks: the exact conic reformulation of the Gaussian linear
chance constraint and the empirical-mean restricted solution.

For rho < 0.5 the constraint Prob{c'x + d >= 0} >= 1 - rho with Gaussian c
is exactly kappa ||S^{1/2} x|| <= cbar'x + d, kappa = -Phi^{-1}(rho). The
solver tests the unconstrained minimizer first and otherwise runs a
monotone 1D root-find on the KKT multiplier (no general conic solver).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from .datagen import solve_restricted
from .errors import InfeasibleInstanceError, NumericalError
from .normal import norm_quantile
from .problems import CCPInstance

quantile_gaussian = norm_quantile

_BRENTQ_KW = dict(xtol=1e-15, rtol=8.9e-16, maxiter=200)


@dataclass(frozen=True, eq=False)
class SocpSolution:
    x_star: np.ndarray
    f_star: float
    multiplier: float
    active: bool
    kkt_residual: float


def _inner_minimizer(A, b_eff, lam_kappa):
    """argmin_x 1/2 x'Ax + b_eff'x + lam_kappa ||x|| for A positive definite."""
    if lam_kappa == 0.0:
        return -np.linalg.solve(A, b_eff)
    norm_b = float(np.linalg.norm(b_eff))
    if norm_b <= lam_kappa:
        return np.zeros_like(b_eff)
    eye = np.eye(A.shape[0])

    def phi(nu):
        return float(np.linalg.norm(np.linalg.solve(A + nu * eye, b_eff)))

    def psi(nu):
        return nu * phi(nu) - lam_kappa

    hi = 1.0
    for _ in range(200):
        if psi(hi) > 0.0:
            break
        hi *= 2.0
    else:
        raise NumericalError("inner norm equation failed to bracket")
    nu = brentq(psi, 0.0, hi, **_BRENTQ_KW)
    return -np.linalg.solve(A + nu * eye, b_eff)


def _cone_kkt_residual(A, b, cbar, d, kappa, x, lam):
    norm_x = float(np.linalg.norm(x))
    primal = max(0.0, kappa * norm_x - float(cbar @ x) - d)
    if norm_x > 0.0:
        stationarity = float(np.max(np.abs(A @ x + b + lam * (kappa * x / norm_x - cbar))))
    else:
        # Subgradient condition at the origin: ||b - lam cbar|| <= lam kappa.
        stationarity = max(0.0, float(np.linalg.norm(b - lam * cbar)) - lam * kappa)
    slack = abs(lam * (kappa * norm_x - float(cbar @ x) - d))
    return max(primal, stationarity, slack)


def solve_cone_program(A, b, cbar, d: float, kappa: float) -> SocpSolution:
    """Minimize 1/2 x'Ax + b'x subject to kappa ||x||_2 <= cbar'x + d.

    A must be positive definite and kappa >= 0. kappa = 0 degenerates to the
    linear constraint cbar'x + d >= 0 and is handled by the same route.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    cbar = np.asarray(cbar, dtype=float)
    d = float(d)
    if kappa < 0.0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    if d < 0.0 and float(np.linalg.norm(cbar)) <= kappa:
        raise InfeasibleInstanceError(
            f"the cone kappa||x|| <= cbar'x + d is empty (d={d} < 0, ||cbar|| <= kappa)")

    x_unc = -np.linalg.solve(A, b)
    if kappa * np.linalg.norm(x_unc) - cbar @ x_unc - d <= 0.0:
        res = _cone_kkt_residual(A, b, cbar, d, kappa, x_unc, 0.0)
        f = float(0.5 * x_unc @ A @ x_unc + b @ x_unc)
        return SocpSolution(x_unc, f, 0.0, False, res)

    def constraint_value(lam):
        x = _inner_minimizer(A, b - lam * cbar, lam * kappa)
        return kappa * float(np.linalg.norm(x)) - float(cbar @ x) - d

    hi = 1.0
    c_hi = constraint_value(hi)
    for _ in range(200):
        if c_hi <= 0.0:
            break
        hi *= 2.0
        c_hi = constraint_value(hi)
    else:
        if abs(c_hi) <= 1e-13:
            pass
        else:
            raise NumericalError(
                f"multiplier bracket expansion failed (constraint value {c_hi:.3e} at "
                f"lambda={hi:.3e}); the feasible set may have empty interior")
    lam = brentq(constraint_value, 0.0, hi, **_BRENTQ_KW) if c_hi < 0.0 else hi
    x = _inner_minimizer(A, b - lam * cbar, lam * kappa)
    res = _cone_kkt_residual(A, b, cbar, d, kappa, x, lam)
    f = float(0.5 * x @ A @ x + b @ x)
    return SocpSolution(x, f, float(lam), True, res)


def socp_solve(instance: CCPInstance) -> SocpSolution:
    """Exact solution of the Gaussian linear chance constrained instance.

    Non-identity covariance is whitened (y = L'x for covariance LL') so one
    canonical cone routine covers the general SPD case; the reported KKT
    residual is recomputed in the original coordinates.
    """
    con = instance.constraint
    obj = instance.objective
    kappa = -norm_quantile(con.rho)
    n = instance.dimension
    cov = con.covariance
    if np.array_equal(cov, np.eye(n)):
        sol = solve_cone_program(obj.A, obj.b, con.cbar, con.d, kappa)
        x = sol.x_star
        lam = sol.multiplier
    else:
        L = np.linalg.cholesky(cov)
        Linv = scipy.linalg.solve_triangular(L, np.eye(n), lower=True)
        A_w = Linv @ obj.A @ Linv.T
        A_w = 0.5 * (A_w + A_w.T)
        sol = solve_cone_program(A_w, Linv @ obj.b, Linv @ con.cbar, con.d, kappa)
        x = Linv.T @ sol.x_star
        lam = sol.multiplier

    # Residual in original coordinates.
    sx = cov @ x
    norm_sx = float(np.sqrt(max(x @ sx, 0.0)))
    primal = max(0.0, kappa * norm_sx - float(con.cbar @ x) - con.d)
    grad_lag = obj.A @ x + obj.b
    if sol.active and norm_sx > 0.0:
        grad_lag = grad_lag + lam * (kappa * sx / norm_sx - con.cbar)
    slack = abs(lam * (kappa * norm_sx - float(con.cbar @ x) - con.d))
    residual = max(primal, float(np.max(np.abs(grad_lag))), slack)
    f = float(0.5 * x @ obj.A @ x + obj.b @ x + obj.c0)
    return SocpSolution(x, f, lam, sol.active, residual)


def project_to_cone(point, cbar, d: float, kappa: float) -> np.ndarray:
    """Euclidean projection onto {x : kappa ||x|| <= cbar'x + d}.

    Reuses the cone KKT machinery: the projection minimizes
    1/2 x'x - point'x over the same set.
    """
    point = np.asarray(point, dtype=float)
    sol = solve_cone_program(np.eye(point.shape[0]), -point, cbar, d, kappa)
    return sol.x_star


def empirical_mean_baseline(instance: CCPInstance, draws):
    """Solve the restricted problem at the draw mean with zero restriction."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    hbar = draws.mean(axis=0)
    x = solve_restricted(instance, hbar, 0.0)
    return x, float(instance.objective.value(x))
