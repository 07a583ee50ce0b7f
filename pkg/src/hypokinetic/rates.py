"""Explicit hypocoercive decay rates and their Knudsen-number scalings.

The rate problem is the max-min

    lambda = max_{eps, delta} min{ (a - 2 eps d - eps d / delta) / (1 + eps),
                                   eps (c - d delta) / (1 + eps) }

with ``a = alpha``, ``c = beta / (1 + beta)`` and ``d = (1 + gamma) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

SCALINGS = ("kinetic", "parabolic", "highfield")


@dataclass(frozen=True)
class CoercivityConstants:
    alpha: float
    beta: float
    gamma: float

    @property
    def a(self) -> float:
        return self.alpha

    @property
    def c(self) -> float:
        return self.beta / (1.0 + self.beta)

    @property
    def d(self) -> float:
        return 0.5 * (1.0 + self.gamma)

    @property
    def acd(self) -> tuple[float, float, float]:
        return self.a, self.c, self.d


@dataclass(frozen=True)
class ScaledConstants:
    alpha_kn: float
    beta_kn: float
    gamma_kn: float
    kn: float
    scaling: str

    @property
    def constants(self) -> CoercivityConstants:
        return CoercivityConstants(self.alpha_kn, self.beta_kn, self.gamma_kn)


@dataclass(frozen=True)
class RatePlan:
    """A decay certificate: ``||f(t)|| <= c_eps exp(-lambda_lower t) ||f0||``."""

    eps0: float
    delta: float
    lambda_lower: float
    lambda_numeric: float
    c_eps: float
    branch: str
    eps_star: float = float("nan")


def _check_acd(a: float, c: float, d: float) -> None:
    if not (a > 0 and c > 0 and d > 0):
        raise ValueError(f"a, c, d must be positive, got {(a, c, d)}")


def lambda_of_eps(a: float, c: float, d: float, eps: float) -> tuple[float, float]:
    """Closed-form ``max_delta`` of the rate at fixed ``eps``.

    Returns ``(lambda, delta)``; ``delta`` is the optimizing split (``nan`` at
    ``eps = 0``).  A non-positive ``lambda`` means no certificate at this eps.
    """
    _check_acd(a, c, d)
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    b = eps * d
    p = a - 2.0 * b - eps * c
    root = math.sqrt(p * p + 4.0 * b * d * eps)
    lam = 0.5 * ((a - 2.0 * b + eps * c) - root) / (1.0 + eps)
    delta = (root - p) / (2.0 * eps * d) if eps > 0 else float("nan")
    return lam, delta


def _lam(a, c, d, eps):
    return lambda_of_eps(a, c, d, eps)[0]


def _lam_array(a, c, d, eps: np.ndarray) -> np.ndarray:
    b = eps * d
    p = a - 2.0 * b - eps * c
    return 0.5 * ((a - 2.0 * b + eps * c) - np.sqrt(p * p + 4.0 * b * d * eps)) / (1.0 + eps)


def lambda_numeric(a: float, c: float, d: float, n_grid: int = 1000, xtol: float = 1e-10) -> tuple[float, float]:
    """Maximize :func:`lambda_of_eps` over ``eps in [0, 1 - 1e-6]``.

    Coarse grid first, then bounded golden-section refinement around the best
    grid point.  Returns ``(lambda, eps_star)``.
    """
    _check_acd(a, c, d)
    hi = 1.0 - 1e-6
    grid = np.linspace(0.0, hi, n_grid)
    values = _lam_array(a, c, d, grid)
    k = int(np.argmax(values))
    best, best_eps = float(values[k]), float(grid[k])
    lo_b, hi_b = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    if hi_b > lo_b:
        res = minimize_scalar(
            lambda e: -_lam(a, c, d, e), bounds=(lo_b, hi_b), method="bounded", options={"xatol": xtol}
        )
        if -res.fun > best:
            best, best_eps = float(-res.fun), float(res.x)
    return best, best_eps


def lower_bound_parabolic(a: float, c: float, d: float) -> tuple[float, float]:
    """Lower bound built for the diffusive scaling; returns ``(bound, eps0)``."""
    _check_acd(a, c, d)
    k0 = max(2.0, 2.0 * d * d / (a * c))
    a_tilde = k0 * a * a * c / (k0 * a * c + 2.0 * d * c)
    bound = a_tilde * d * d / ((k0 * a + a_tilde) * (k0 * a + c))
    k = k0 * a * c / (d * d)
    eps0 = a * c / (2.0 * d * c + k * d * d)
    return bound, eps0


def lower_bound_highfield(a: float, c: float, d: float) -> tuple[float, float, str]:
    """Two-branch lower bound built for the high-field scaling.

    Returns ``(bound, eps0, branch)`` with branch ``highfield_bound_1`` when
    ``a_tilde c / d^2 <= 1`` and ``highfield_bound_2`` otherwise.
    """
    _check_acd(a, c, d)
    a_tilde = a * d / (c + d)
    eps0 = min(0.5, a * c / (2.0 * d * (c + d)))
    r = c * c / (d * d)
    if a_tilde * c / (d * d) <= 1.0:
        bound = (a_tilde / (1.0 + a_tilde * c / (2.0 * d * d))) * r / (
            2.0 * ((1.0 + 0.5 * r) + math.sqrt(1.0 + 0.25 * r * r))
        )
        return bound, eps0, "highfield_bound_1"
    bound = (d * d / 3.0) / ((a - d + 0.5 * c) + math.sqrt((a - d - 0.5 * c) ** 2 + d * d))
    return bound, eps0, "highfield_bound_2"


def c_const(eps: float) -> float:
    """Norm-equivalence constant ``sqrt((1 + eps) / (1 - eps))``."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    return math.sqrt((1.0 + eps) / (1.0 - eps))


def rescale(constants: CoercivityConstants, kn: float, scaling: str) -> ScaledConstants:
    """Knudsen rescaling of ``(alpha, beta, gamma)``.

    parabolic: ``(alpha/Kn^2, beta/Kn^2, gamma/Kn)``;
    highfield: ``(alpha/Kn, beta/Kn^2, gamma)``; kinetic: identity.
    """
    if not (kn > 0 and kn <= 1):
        raise ValueError(f"kn must lie in (0, 1], got {kn}")
    al, be, ga = constants.alpha, constants.beta, constants.gamma
    if scaling == "parabolic":
        return ScaledConstants(al / kn**2, be / kn**2, ga / kn, kn, scaling)
    if scaling == "highfield":
        return ScaledConstants(al / kn, be / kn**2, ga, kn, scaling)
    if scaling == "kinetic":
        return ScaledConstants(al, be, ga, kn, scaling)
    raise ValueError(f"unknown scaling {scaling!r}; expected one of {SCALINGS}")


def rate_plan(constants: CoercivityConstants, *, numeric: bool = True) -> RatePlan:
    """Combine both lower bounds and keep the larger one with its own eps0."""
    a, c, d = constants.acd
    lb_p, eps_p = lower_bound_parabolic(a, c, d)
    lb_h, eps_h, branch_h = lower_bound_highfield(a, c, d)
    if lb_p >= lb_h:
        lam, eps0, branch = lb_p, eps_p, "parabolic_bound"
    else:
        lam, eps0, branch = lb_h, eps_h, branch_h
    delta = lambda_of_eps(a, c, d, eps0)[1]
    lam_num, eps_star = lambda_numeric(a, c, d) if numeric else (float("nan"), float("nan"))
    return RatePlan(eps0, delta, lam, lam_num, c_const(eps0), branch, eps_star)


def uniform_rate_over_z(
    constants_at_nodes: Sequence[CoercivityConstants] | Iterable[CoercivityConstants],
    kn: float = 1.0,
    scaling: str = "kinetic",
) -> float:
    """Smallest per-node certificate ``min_z max(parabolic bound, highfield bound)``."""
    nodes = list(constants_at_nodes)
    if not nodes:
        raise ValueError("need at least one z-node")
    rates = []
    for cst in nodes:
        if not all(np.isfinite(v) and v > 0 for v in (cst.alpha, cst.beta, cst.gamma)):
            raise ValueError("assumption (bounds in z) violated: non-positive coercivity constant")
        a, c, d = rescale(cst, kn, scaling).constants.acd
        rates.append(max(lower_bound_parabolic(a, c, d)[0], lower_bound_highfield(a, c, d)[0]))
    return float(min(rates))
