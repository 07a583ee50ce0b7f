"""Random scattering coefficients, the z-derivative hierarchy and its bounds.

With ``L_z = sigma(x, z) L`` the derivatives ``g_l = d^l f / dz^l`` obey a
lower-triangular system in which ``g_l`` is driven by binomially weighted
z-derivatives of ``sigma`` acting on ``L g_k``, ``k < l``.  The hierarchy is
obtained by expanding the discrete time step itself in ``z``, so at every
step ``g_l`` is the exact z-derivative of the discrete solution and spectral
collocation in z reproduces it to its own accuracy.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import toeplitz

from . import operators as ops
from .phase_space import Field, PhaseGrid, admissible_part, norm
from .rates import CoercivityConstants, RatePlan
from .solver import Scenario, Stepper, certify, collision_exponent, integrate_raw, measure_constants

SIGMA_KINDS = ("affine", "analytic")
LMAX_GUARD = 10
CASCADE_GUARD = 20


# ---------------------------------------------------------------------------
# binomials


@lru_cache(maxsize=None)
def pascal(n: int) -> np.ndarray:
    """Real Pascal triangle ``P[i, j] = C(i, j)`` for ``0 <= j <= i <= n``."""
    P = np.zeros((n + 1, n + 1))
    P[:, 0] = 1.0
    for i in range(1, n + 1):
        P[i, 1 : i + 1] = P[i - 1, : i] + P[i - 1, 1 : i + 1]
    P.setflags(write=False)
    return P


def binom(n: int, k: int) -> float:
    if k < 0 or k > n:
        return 0.0
    return float(pascal(max(n, 1))[n, k])


# ---------------------------------------------------------------------------
# sigma models


@dataclass(frozen=True, eq=False)
class SigmaModel:
    """Scattering coefficient ``sigma(x, z)`` on a declared z-interval.

    ``affine``: ``sigma0(x) + z sigma1(x)``.
    ``analytic``: ``sigma0(x) + sigma1(x) sin(z - z_ref)``; every Taylor
    coefficient of order ``n >= 1`` is bounded by ``sup |sigma1|``.
    ``sigma0`` and ``sigma1`` are scalars or callables of ``x``.
    """

    kind: str = "affine"
    sigma0: object = 1.0
    sigma1: object = 0.0
    z_interval: tuple[float, float] = (-1.0, 1.0)
    z_ref: float = 0.0

    def __post_init__(self):
        if self.kind not in SIGMA_KINDS:
            raise ValueError(f"unknown sigma kind {self.kind!r}; expected one of {SIGMA_KINDS}")
        lo, hi = self.z_interval
        if not lo < hi:
            raise ValueError(f"z_interval must be increasing, got {self.z_interval}")

    @staticmethod
    def _profile(p, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(p(x) if callable(p) else p, dtype=float), x.shape)

    def derivative(self, x, z: float, n: int = 0) -> np.ndarray:
        """``d^n sigma / dz^n`` at the nodes ``x``."""
        s0, s1 = self._profile(self.sigma0, x), self._profile(self.sigma1, x)
        if self.kind == "affine":
            return s0 + z * s1 if n == 0 else (s1.copy() if n == 1 else np.zeros_like(s0))
        shifted = np.sin(z - self.z_ref + 0.5 * n * np.pi)
        return (s0 if n == 0 else 0.0) + s1 * shifted

    def values(self, x, z: float) -> np.ndarray:
        return self.derivative(x, z, 0)

    def c1(self, x) -> float:
        """``sup_x |d sigma / dz|`` (constant in z for the affine kind)."""
        return float(np.max(np.abs(self._profile(self.sigma1, x))))

    def c2(self, x) -> float:
        """Bound on ``|d^n sigma / dz^n| / n!`` over ``n >= 1``."""
        return self.c1(x)

    def min_over_interval(self, x, n_samples: int = 2001) -> float:
        lo, hi = self.z_interval
        zs = np.linspace(lo, hi, n_samples)
        if self.kind == "analytic":
            # add interior extrema of sin(z - z_ref)
            k = np.arange(np.floor((lo - self.z_ref) / np.pi) - 1, np.ceil((hi - self.z_ref) / np.pi) + 2)
            ext = self.z_ref + (k + 0.5) * np.pi
            zs = np.concatenate([zs, ext[(ext >= lo) & (ext <= hi)]])
        return float(min(np.min(self.values(x, z)) for z in zs))

    def check_positive(self, x) -> None:
        m = self.min_over_interval(x)
        if not m > 0:
            raise ValueError(f"sigma is not positive on the z-interval {self.z_interval} (min {m:.6g})")


# ---------------------------------------------------------------------------
# hierarchy


@dataclass
class Hierarchy:
    """Derivative fields ``g[t, l]`` (shape ``(n_out, lmax + 1, nx, nv)``) at ``z0``.

    ``norms[t, l]`` is the weighted norm of the fluctuation part of ``g_l``.
    """

    times: np.ndarray
    g: np.ndarray = field(repr=False)
    norms: np.ndarray
    lmax: int
    z0: float
    kn: float
    scaling: str
    grid: PhaseGrid = field(repr=False)

    def field(self, t_index: int, l: int) -> Field:
        return Field(self.g[t_index, l], self.grid)


def _x_local_blocks(matrix: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    nx, nv = grid.nx, grid.nv
    M = matrix.reshape(nx, nv, nx, nv)
    blocks = np.einsum("ijil->ijl", M).copy()
    mask = np.eye(nx, dtype=bool)[:, None, :, None]
    if np.any(np.where(mask, 0.0, M)):
        raise ValueError("the collision operator must be local in x")
    return blocks


def _initial_pattern(scenario: Scenario) -> np.ndarray:
    f0 = admissible_part(scenario.initial_field())
    return f0.flat / norm(f0)


def initial_derivatives(scenario: Scenario, lmax: int, H: float) -> np.ndarray:
    """``g_l(0) = H^l p`` for ``f0(z) = exp(H (z - z0)) p`` with a unit-norm pattern ``p``."""
    p = _initial_pattern(scenario)
    return np.stack([H**l * p for l in range(lmax + 1)])


def step_series_coefficients(mu: np.ndarray, a: np.ndarray, rule: str) -> np.ndarray:
    """Taylor coefficients ``b_n`` of ``r(mu * sum_n a_n s^n)`` in ``s``.

    ``r`` is ``exp`` for the exponential collision rule and ``1 / (1 - .)``
    for the implicit one.  ``mu`` has any shape, ``a`` has shape
    ``(order + 1,) + mu.shape`` (or broadcastable); the result stacks ``b_n``
    along the first axis.
    """
    order = a.shape[0] - 1
    b = np.empty((order + 1,) + np.broadcast(mu, a[0]).shape)
    if rule == "exponential":
        b[0] = np.exp(mu * a[0])
        for n in range(1, order + 1):
            b[n] = sum(k * a[k] * b[n - k] for k in range(1, n + 1)) * mu / n
    elif rule == "implicit":
        denom = 1.0 - mu * a[0]
        b[0] = 1.0 / denom
        for n in range(1, order + 1):
            b[n] = mu * sum(a[k] * b[n - k] for k in range(1, n + 1)) / denom
    else:
        raise ValueError(f"unknown collision rule {rule!r}")
    return b


def collision_step_series(scenario: Scenario, sigma: SigmaModel, z0: float, lmax: int, dt: float) -> np.ndarray:
    """Blocks ``R_m`` (shape ``(lmax + 1, nx, nv, nv)``) of the collision substep expanded in ``z - z0``.

    The unit collision block in each cell is self-adjoint for the weights
    ``w_j / M_j``, so ``S L S^{-1}`` with ``S = diag(sqrt(w / M))`` is
    symmetric and one eigendecomposition per cell yields every order.
    """
    grid = scenario.grid
    unit = _x_local_blocks(scenario.unit_collision.matrix, grid)
    s = np.sqrt(grid.v_weights / grid.maxwellian)
    sym = s[None, :, None] * unit / s[None, None, :]
    asym = np.max(np.abs(sym - sym.transpose(0, 2, 1)))
    if asym > 1e-10 * max(1.0, np.max(np.abs(sym))):
        raise ValueError(f"collision blocks are not self-adjoint (asymmetry {asym:.3g})")
    mu, Q = np.linalg.eigh(0.5 * (sym + sym.transpose(0, 2, 1)))
    c = dt / scenario.kn ** collision_exponent(scenario.scaling)
    a = np.stack([c * sigma.derivative(grid.x_nodes, z0, n) / math.factorial(n) for n in range(lmax + 1)])
    b = step_series_coefficients(mu, a[:, :, None], scenario.collision_rule)
    R = np.einsum("xjk,mxk,xlk->mxjl", Q, b, Q)
    return R * (s[None, :] / s[:, None])[None, None]


def _run_hierarchy(scenario: Scenario, series: np.ndarray, g_init: np.ndarray, lmax: int, dt: float, save_every: int):
    system = scenario.system(scenario.z)
    grid = scenario.grid
    stepper = Stepper(system, dt)
    fact = np.array([math.factorial(l) for l in range(lmax + 1)], dtype=float)
    active = [m for m in range(1, lmax + 1) if np.any(series[m])]

    def apply(block, vec):
        return np.matmul(block, vec.reshape(grid.shape)[:, :, None])[:, :, 0].ravel()

    n_steps = int(round(scenario.t_end / dt))
    F = g_init / fact[:, None]
    times, snaps = [0.0], [g_init.copy()]
    for n in range(1, n_steps + 1):
        moved = np.stack([stepper.transport(F[l]) for l in range(lmax + 1)])
        new = np.empty_like(F)
        for l in range(lmax + 1):
            acc = stepper.collide(moved[l])
            for m in active:
                if m <= l:
                    acc = acc + apply(series[m], moved[l - m])
            new[l] = acc
        F = new
        if n % save_every == 0 or n == n_steps:
            times.append(n * dt)
            snaps.append(F * fact[:, None])
    return np.array(times), np.stack(snaps)


def _norms(snaps: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    out = np.empty(snaps.shape[:2])
    for i in range(snaps.shape[0]):
        for l in range(snaps.shape[1]):
            out[i, l] = norm(admissible_part(Field(snaps[i, l].reshape(grid.shape), grid)))
    return out


def solve_hierarchy(scenario: Scenario, sigma: SigmaModel, lmax: int, z0: float = 0.0, *, H: float = 0.0) -> Hierarchy:
    """Solve for ``g_0 .. g_lmax`` at ``z0`` with the scenario's stepper.

    With Taylor coefficients ``F_l = g_l / l!`` and ``R_m`` the coefficients
    of the collision substep expanded in ``z - z0``, one step reads

        F_l^{n+1} = sum_{m <= l} R_m E F_{l-m}^n

    with ``E`` the exact transport propagator.  ``g_0`` is therefore the
    deterministic solution at ``z0`` and every ``g_l`` is the exact
    z-derivative of the discrete solution.
    """
    if not 0 <= lmax <= LMAX_GUARD:
        raise ValueError(f"lmax must lie in [0, {LMAX_GUARD}], got {lmax}")
    if H < 0:
        raise ValueError("H must be nonnegative")
    sigma.check_positive(scenario.grid.x_nodes)
    lo, hi = sigma.z_interval
    if not lo <= z0 <= hi:
        raise ValueError(f"z0 = {z0} lies outside the z-interval {sigma.z_interval}")
    scen = replace(scenario, sigma=sigma, z=z0)
    dt = scen.time_step()
    series = collision_step_series(scen, sigma, z0, lmax, dt)
    times, snaps = _run_hierarchy(scen, series, initial_derivatives(scen, lmax, H), lmax, dt, scen.save_every)
    grid = scen.grid
    g = snaps.reshape(len(times), lmax + 1, grid.nx, grid.nv)
    return Hierarchy(times, g, _norms(snaps, grid), lmax, z0, scen.kn, scen.scaling, grid)


# ---------------------------------------------------------------------------
# collocation oracle


def chebyshev_lobatto(n: int, interval: tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    """``n`` Chebyshev-Gauss-Lobatto points on ``interval``, increasing."""
    lo, hi = interval
    s = -np.cos(np.pi * np.arange(n) / (n - 1))
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * s


def barycentric_diff_matrix(nodes: np.ndarray) -> np.ndarray:
    """First-derivative matrix of the polynomial interpolant through ``nodes``."""
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def _collocation_run(args):
    scenario, z, H, z0, dt = args
    f0 = np.exp(H * (z - z0)) * _initial_pattern(scenario)
    return integrate_raw(scenario.system(z), f0, dt, scenario.t_end, scenario.save_every)


def collocation_derivatives(
    scenario: Scenario,
    sigma: SigmaModel,
    z_nodes: np.ndarray,
    lmax: int,
    z0: float = 0.0,
    *,
    H: float = 0.0,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Independent estimate of ``||g_l(t)||`` from deterministic runs at ``z_nodes``.

    Returns ``(times, norms)`` with ``norms[t, l]``.  ``z0`` must be one of the
    nodes (Chebyshev-Lobatto sets with an odd count contain the midpoint).
    """
    z_nodes = np.asarray(z_nodes, dtype=float)
    if len(z_nodes) < 2 * lmax + 1:
        raise ValueError(f"need at least {2 * lmax + 1} z-nodes for lmax = {lmax}, got {len(z_nodes)}")
    hits = np.flatnonzero(np.isclose(z_nodes, z0, rtol=0, atol=1e-12))
    if len(hits) != 1:
        raise ValueError(f"z0 = {z0} must be one of the collocation nodes")
    sigma.check_positive(scenario.grid.x_nodes)
    scen = replace(scenario, sigma=sigma, z=z0)
    dt = scen.time_step()
    jobs = [(replace(scen, z=float(z)), float(z), H, z0, dt) for z in z_nodes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_collocation_run, jobs))
    else:
        runs = [_collocation_run(j) for j in jobs]
    times = runs[0][0]
    data = np.stack([r[1] for r in runs])  # (nz, n_out, N)
    D = barycentric_diff_matrix(z_nodes)
    row = np.zeros(len(z_nodes))
    row[hits[0]] = 1.0
    grid = scen.grid
    out = np.empty((len(times), lmax + 1))
    for l in range(lmax + 1):
        deriv = np.einsum("k,ktn->tn", row, data)
        for i in range(len(times)):
            out[i, l] = norm(admissible_part(Field(deriv[i].reshape(grid.shape), grid)))
        row = row @ D
    return times, out


# ---------------------------------------------------------------------------
# bounds


def bound_gl1(t, l: int, H: float, c1_tilde: float, lambda_z: float, c_z: float):
    """Affine case: ``C_z exp(-lambda t) (H + t C1~)^l``."""
    t = np.asarray(t, dtype=float)
    return c_z * np.exp(-lambda_z * t) * (H + t * c1_tilde) ** l


def bound_gl2(t, l: int, H: float, c2_tilde: float, lambda_z: float, eps_z: float):
    """Analytic case bound on ``||g_l|| / l!``; returns ``(poly_branch, exp_branch)``.

    Both are the full displayed expression with one of the two arguments of
    the min; the bound itself is their elementwise minimum.
    """
    if not 0 <= eps_z < 1:
        raise ValueError("eps_z must lie in [0, 1)")
    t = np.asarray(t, dtype=float)
    pre = math.sqrt(2.0 / (1.0 - eps_z))
    head = pre * H**l / math.factorial(l) * np.exp(-lambda_z * t)
    tail = pre * (1.0 + H) ** (l + 1)
    with np.errstate(over="ignore"):  # an infinite branch is a vacuous bound
        poly = head + tail * np.exp(-lambda_z * t) * (1.0 + c2_tilde * t) ** l
        expo = head + tail * np.exp((c2_tilde - lambda_z) * t) * 2.0 ** (l - 1)
    return poly, expo


@dataclass(frozen=True)
class BoundConstants:
    """Everything the derivative bounds need at one z-node."""

    case: str  # "affine" or "analytic"
    H: float
    c_z: float
    eps_z: float
    lambda_z: float
    c1_tilde: float
    c2_tilde: float
    kn: float = 1.0
    scaling: str = "kinetic"

    @property
    def amplification(self) -> float:
        return 1.0 / self.kn ** collision_exponent(self.scaling)


def bound_kn(t, l: int, H: float, constants: BoundConstants, kn: float | None = None, scaling: str | None = None):
    """Knudsen-amplified bound: ``C~ -> C~ / Kn^p`` with the rescaled rate in ``constants``.

    Affine: bound on ``||g_l||``; analytic: bound on ``||g_l|| / l!`` (min branch).
    """
    kn = constants.kn if kn is None else kn
    scaling = constants.scaling if scaling is None else scaling
    if not 0 < kn <= 1:
        raise ValueError("kn must lie in (0, 1]")
    amp = 1.0 / kn ** collision_exponent(scaling)
    if constants.case == "affine":
        return bound_gl1(t, l, H, constants.c1_tilde * amp, constants.lambda_z, constants.c_z)
    poly, expo = bound_gl2(t, l, H, constants.c2_tilde * amp, constants.lambda_z, constants.eps_z)
    return np.minimum(poly, expo)


def bound_constants(
    scenario: Scenario,
    sigma: SigmaModel,
    z0: float,
    H: float,
    *,
    constants: CoercivityConstants | None = None,
) -> tuple[BoundConstants, CoercivityConstants, RatePlan]:
    """Certificate at ``z0`` and the derived ``C_z``, ``C1~``, ``C2~``.

    ``C1`` and ``C2`` bound the z-derivatives of ``sigma``; they are multiplied
    by ``max(1, ||L||)`` so that the source estimate also holds for collision
    operators whose unit-coefficient norm exceeds one.
    """
    scen = replace(scenario, sigma=sigma, z=z0)
    system = scen.system(z0)
    if constants is None:
        constants = measure_constants(system.T, system.L)
    _, plan = certify(system, constants)
    eps = plan.eps0
    c_z = (1.0 + eps) / (1.0 - eps)
    lnorm = max(1.0, scen.unit_collision.operator_norm())
    x = scen.grid.x_nodes
    bc = BoundConstants(
        case=sigma.kind,
        H=H,
        c_z=c_z,
        eps_z=eps,
        lambda_z=plan.lambda_lower,
        c1_tilde=sigma.c1(x) * lnorm * c_z**2,
        c2_tilde=sigma.c2(x) * lnorm * c_z**2,
        kn=scen.kn,
        scaling=scen.scaling,
    )
    return bc, constants, plan


@dataclass
class BoundSeries:
    times: np.ndarray
    bound_gl1: np.ndarray  # (n_out, lmax+1); nan where the affine bound does not apply
    bound_gl2_poly: np.ndarray
    bound_gl2_exp: np.ndarray
    bound_kn: np.ndarray
    constants: BoundConstants

    @property
    def bound_gl2(self) -> np.ndarray:
        return np.minimum(self.bound_gl2_poly, self.bound_gl2_exp)


def bound_series(times, lmax: int, bc: BoundConstants) -> BoundSeries:
    shape = (len(times), lmax + 1)
    gl1, poly, expo, kn = (np.empty(shape) for _ in range(4))
    for l in range(lmax + 1):
        gl1[:, l] = bound_gl1(times, l, bc.H, bc.c1_tilde, bc.lambda_z, bc.c_z) if bc.case == "affine" else np.nan
        poly[:, l], expo[:, l] = bound_gl2(times, l, bc.H, bc.c2_tilde, bc.lambda_z, bc.eps_z)
        kn[:, l] = bound_kn(times, l, bc.H, bc)
    return BoundSeries(np.asarray(times), gl1, poly, expo, kn, bc)


def measured_for_bound(hier: Hierarchy, case: str) -> np.ndarray:
    """``||g_l||`` (affine) or ``||g_l|| / l!`` (analytic), matching :func:`bound_kn`."""
    if case == "affine":
        return hier.norms
    fact = np.array([math.factorial(l) for l in range(hier.lmax + 1)], dtype=float)
    return hier.norms / fact


def count_violations(hier: Hierarchy, series: BoundSeries, rtol: float = 1e-12) -> int:
    measured = measured_for_bound(hier, series.constants.case)
    return int(np.sum(measured > series.bound_kn * (1.0 + rtol)))


def write_hierarchy_csv(path: str | Path, hier: Hierarchy, series: BoundSeries) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fact = [math.factorial(l) for l in range(hier.lmax + 1)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "l", "norm_gl", "norm_gl_over_lfact", "bound_gl1", "bound_gl2_poly", "bound_gl2_exp", "bound_kn"])
        for i, t in enumerate(hier.times):
            for l in range(hier.lmax + 1):
                vals = [
                    t,
                    hier.norms[i, l],
                    hier.norms[i, l] / fact[l],
                    series.bound_gl1[i, l],
                    series.bound_gl2_poly[i, l],
                    series.bound_gl2_exp[i, l],
                    series.bound_kn[i, l],
                ]
                w.writerow([format(float(vals[0]), ".17g"), l] + [format(float(v), ".17g") for v in vals[1:]])


# ---------------------------------------------------------------------------
# scalar cascades


def cascade_hl_bound(t, l: int, c1_tilde: float, lambda_z: float, h0) -> float:
    """``exp(-lambda t) sum_k C(l, k) (C1~ t)^k h_{l-k}(0)``."""
    h0 = np.asarray(h0, dtype=float)
    if len(h0) < l + 1:
        raise ValueError(f"need h0[0..{l}]")
    if np.any(h0 < 0):
        raise ValueError("h0 must be nonnegative")
    s = c1_tilde * t
    total = sum(binom(l, k) * s**k * h0[l - k] for k in range(l + 1))
    return float(math.exp(-lambda_z * t) * total)


def cascade_matrix(l: int) -> np.ndarray:
    """Strictly upper-triangular all-ones ``(l+1) x (l+1)`` matrix (order ``eta_l .. eta_0``)."""
    return np.triu(np.ones((l + 1, l + 1)), 1)


def jordan_data(l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(S, S^{-1}, J)`` with ``A S = S J``, ``J`` the nilpotent Jordan block.

    In 1-based indices ``S_11 = 1`` and, for ``n >= m >= 2``,
    ``S_mn = (-1)^(n-m) C(n-2, n-m)`` and ``S^{-1}_mn = C(n-2, n-m)``.
    """
    n = l + 1
    S = np.zeros((n, n))
    Si = np.zeros((n, n))
    S[0, 0] = Si[0, 0] = 1.0
    for m in range(2, n + 1):
        for k in range(m, n + 1):
            c = binom(k - 2, k - m)
            S[m - 1, k - 1] = (-1) ** (k - m) * c
            Si[m - 1, k - 1] = c
    J = np.eye(n, k=1)
    return S, Si, J


def jordan_residual(l: int) -> float:
    S, _, J = jordan_data(l)
    return float(np.max(np.abs(cascade_matrix(l) @ S - S @ J)))


def cascade_eta_exact(t: float, l: int, c2_tilde: float, eta0) -> np.ndarray:
    """Exact solution of ``d eta_m / dt = C2~ sum_{k<m} eta_k``, returned by order ``0..l``."""
    if not 0 <= l <= CASCADE_GUARD:
        raise ValueError(f"l must lie in [0, {CASCADE_GUARD}], got {l}")
    eta0 = np.asarray(eta0, dtype=float)
    if len(eta0) != l + 1:
        raise ValueError(f"eta0 must have length {l + 1}")
    S, Si, J = jordan_data(l)
    res = float(np.max(np.abs(cascade_matrix(l) @ S - S @ J)))
    assert res <= 1e-9 * max(1.0, float(np.abs(S).max())), f"Jordan data inconsistent (residual {res:.3e})"
    s = c2_tilde * t
    col = np.array([s**k / math.factorial(k) for k in range(l + 1)])
    expJ = toeplitz(np.r_[1.0, np.zeros(l)], col)
    vec = eta0[::-1]
    return (S @ expJ @ Si @ vec)[::-1]


def cascade_eta_bound(t: float, l: int, c2_tilde: float, H: float) -> tuple[float, float, float]:
    """``(sharp, relaxed_poly, relaxed_exp)`` bounds on ``eta_l(t)`` for ``eta_k(0) <= H^k / k!``."""
    if H < 0:
        raise ValueError("H must be nonnegative")
    s = c2_tilde * t
    head = H**l / math.factorial(l)
    amp = (1.0 + H) ** (l + 1)
    total = sum(
        s**k / (math.factorial(k) * math.factorial(k - 1)) * math.factorial(l - 1) / math.factorial(l - k)
        for k in range(1, l + 1)
    )
    sharp = head + amp * total
    poly = head + amp * (1.0 + s) ** l
    expo = head + amp * math.exp(s) * 2.0 ** (l - 1)
    return sharp, poly, expo


def rk4(rhs, y0, t_end: float, n_steps: int) -> np.ndarray:
    """Classical fixed-step Runge-Kutta; returns ``y(t_end)``."""
    y = np.asarray(y0, dtype=float).copy()
    if t_end == 0:
        return y
    h = t_end / n_steps
    t = 0.0
    for _ in range(n_steps):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def hl_cascade_rk4(t: float, l: int, c1_tilde: float, lambda_z: float, h0, n_steps: int = 2000) -> np.ndarray:
    """Equality cascade ``h_l' = -lambda h_l + C1~ l h_{l-1}`` integrated numerically."""
    orders = np.arange(l + 1)

    def rhs(_, h):
        out = -lambda_z * h
        out[1:] += c1_tilde * orders[1:] * h[:-1]
        return out

    return rk4(rhs, np.asarray(h0, dtype=float)[: l + 1], t, n_steps)


def eta_cascade_rk4(t: float, l: int, c2_tilde: float, eta0, n_steps: int = 2000) -> np.ndarray:
    """Equality cascade ``eta_m' = C2~ sum_{k<m} eta_k`` integrated numerically."""

    def rhs(_, eta):
        return c2_tilde * np.concatenate([[0.0], np.cumsum(eta)[:-1]])

    return rk4(rhs, eta0, t, n_steps)


# ---------------------------------------------------------------------------
# radius and generalized sources


def estimate_radius(norms_gl, lmax: int) -> float:
    """Truncated ``1 / limsup (||g_l|| / l!)^(1/l)`` over ``l`` in ``[lmax/2, lmax]``."""
    if lmax < 5:
        raise ValueError(f"lmax must be at least 5, got {lmax}")
    a = np.asarray(norms_gl, dtype=float)
    if len(a) < lmax + 1:
        raise ValueError(f"need norms for l = 0..{lmax}")
    if np.any(a < 0):
        raise ValueError("norms must be nonnegative")
    ls = np.arange(math.ceil(lmax / 2), lmax + 1)
    tail = a[ls]
    if np.all(tail < 1e-300):
        return math.inf
    with np.errstate(divide="ignore"):
        logs = (np.log(tail) - np.array([math.lgamma(l + 1) for l in ls])) / ls
    return float(math.exp(-np.max(logs)))


def lq_operator(grid: PhaseGrid, kernel_derivatives, q: int) -> ops.KineticOperator:
    """``L^q_z``: gain-minus-loss with the kernel ``d^q k / dz^q``, applied in every x-cell."""
    if q < 0 or q >= len(kernel_derivatives) or kernel_derivatives[q] is None:
        raise ValueError(f"kernel derivative of order {q} not supplied")
    block = ops.scattering_block(grid, kernel_derivatives[q])
    return ops.KineticOperator(np.kron(np.eye(grid.nx), block), "collision", grid)


def apply_Lq(kernel_derivatives, q: int, f: Field) -> Field:
    """Apply the order-``q`` generalized source operator to ``f``."""
    return lq_operator(f.grid, kernel_derivatives, q)(f)
