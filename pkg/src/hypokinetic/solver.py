"""Time integration of ``df/dt + T f / Kn = L f / Kn^p`` with entropy bookkeeping.

The scheme is a first-order transport/collision splitting.  The transport
substep applies the exact propagator ``exp(-dt T / Kn)`` (explicit, norm
preserving, no linear solve).  The collision substep is stiffly stable and
comes in two flavours: ``exponential`` applies ``exp(dt L / Kn^p)`` cell by
cell, ``implicit`` is backward Euler ``(I - dt L / Kn^p)^{-1}``.  Both
substeps conserve mass to rounding.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as la

from . import operators as ops
from .phase_space import Field, PhaseGrid, admissible_part, build_grid, inner_product, mass, norm
from .rates import CoercivityConstants, RatePlan, rate_plan, rescale

log = logging.getLogger(__name__)

MODELS = ("bgk", "anisotropic")
COLLISION_RULES = ("exponential", "implicit")
INITIAL_KINDS = ("default", "random")


class StabilityError(ValueError):
    """The requested time step violates the transport step restriction."""


def collision_exponent(scaling: str) -> int:
    return 2 if scaling == "parabolic" else 1


@dataclass(frozen=True, eq=False)
class KineticSystem:
    """Unscaled operators plus the Knudsen scaling that multiplies them."""

    T: ops.KineticOperator
    L: ops.KineticOperator
    kn: float = 1.0
    scaling: str = "kinetic"
    collision_rule: str = "exponential"

    def __post_init__(self):
        if self.collision_rule not in COLLISION_RULES:
            raise ValueError(f"unknown collision rule {self.collision_rule!r}; expected one of {COLLISION_RULES}")
        if not (0 < self.kn <= 1):
            raise ValueError(f"kn must lie in (0, 1], got {self.kn}")
        if self.scaling not in ("kinetic", "parabolic", "highfield"):
            raise ValueError(f"unknown scaling {self.scaling!r}")
        if self.scaling == "kinetic" and self.kn != 1:
            raise ValueError("the kinetic scaling has kn = 1; use parabolic or highfield for kn < 1")

    @property
    def grid(self) -> PhaseGrid:
        return self.T.grid

    @property
    def p(self) -> int:
        return collision_exponent(self.scaling)

    @cached_property
    def T_eff(self) -> ops.KineticOperator:
        return self.T.scaled(1.0 / self.kn)

    @cached_property
    def L_eff(self) -> ops.KineticOperator:
        return self.L.scaled(1.0 / self.kn**self.p)

    @cached_property
    def A_eff(self) -> ops.KineticOperator:
        return ops.build_auxiliary_A(self.T_eff)

    @cached_property
    def P(self) -> ops.KineticOperator:
        return ops.projection_operator(self.grid)

    def max_dt(self) -> float:
        """Transport step restriction ``0.5 dx Kn / max|v|``."""
        return 0.5 * self.grid.dx * self.kn / float(np.max(np.abs(self.grid.v_nodes)))


def velocity_blocks(matrix: np.ndarray, grid: PhaseGrid) -> np.ndarray | None:
    """``(nv, nx, nx)`` diagonal blocks if ``matrix`` couples only equal velocities, else ``None``."""
    nx, nv = grid.nx, grid.nv
    M = matrix.reshape(nx, nv, nx, nv)
    blocks = np.einsum("ijkj->jik", M).copy()
    mask = np.eye(nv, dtype=bool)[None, :, None, :]
    if np.any(np.where(mask, 0.0, M)):
        return None
    return blocks


def space_blocks(matrix: np.ndarray, grid: PhaseGrid) -> np.ndarray | None:
    """``(nx, nv, nv)`` diagonal blocks if ``matrix`` is local in x, else ``None``."""
    nx, nv = grid.nx, grid.nv
    M = matrix.reshape(nx, nv, nx, nv)
    blocks = np.einsum("ijil->ijl", M).copy()
    mask = np.eye(nx, dtype=bool)[:, None, :, None]
    if np.any(np.where(mask, 0.0, M)):
        return None
    return blocks


def transport_propagator(T: ops.KineticOperator, s: float) -> np.ndarray:
    """``exp(-s T)`` in natural coordinates.

    Free transport decouples across velocities, so when the matrix is block
    diagonal in v the exponential is taken one ``nx x nx`` block at a time.
    """
    grid = T.grid
    nx, nv = grid.nx, grid.nv
    blocks = velocity_blocks(T.matrix, grid)
    if blocks is None:
        return la.expm(-s * T.matrix)
    E = np.zeros((nx, nv, nx, nv))
    for j in range(nv):
        E[:, j, :, j] = la.expm(-s * blocks[j])
    return E.reshape(grid.size, grid.size)


def collision_propagator(block: np.ndarray, dt: float, rule: str) -> np.ndarray:
    """``exp(dt L)`` or ``(I - dt L)^{-1}`` for one collision block (or a dense matrix)."""
    if rule == "exponential":
        return la.expm(dt * block)
    return la.inv(np.eye(block.shape[0]) - dt * block)


class Stepper:
    """One-step map for a fixed ``(system, dt)``.

    Transport blocks (per velocity) and collision blocks (per x-cell) are
    precomputed; dense propagators are the fallback for operators without
    that structure.
    """

    def __init__(self, system: KineticSystem, dt: float, *, check_stability: bool = True):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        bound = system.max_dt()
        if check_stability and dt > bound * (1 + 1e-12):
            raise StabilityError(f"dt = {dt:.6g} exceeds the transport step bound {bound:.6g}")
        self.system = system
        self.dt = dt
        grid = system.grid
        self._shape = grid.shape
        rule = system.collision_rule
        t_blocks = velocity_blocks(system.T_eff.matrix, grid)
        l_blocks = space_blocks(system.L_eff.matrix, grid)
        self._structured = t_blocks is not None and l_blocks is not None
        if self._structured:
            self._E = np.stack([la.expm(-dt * b) for b in t_blocks])
            self._R = np.stack([collision_propagator(b, dt, rule) for b in l_blocks])
        else:
            self._E = transport_propagator(system.T_eff, dt)
            self._R = collision_propagator(system.L_eff.matrix, dt, rule)

    def transport(self, f: np.ndarray) -> np.ndarray:
        if not self._structured:
            return self._E @ f
        F = f.reshape(self._shape)
        return np.matmul(self._E, F.T[:, :, None])[:, :, 0].T.ravel()

    def collide(self, f: np.ndarray) -> np.ndarray:
        """Collision substep: ``exp(dt L) f`` or ``(I - dt L)^{-1} f``."""
        if not self._structured:
            return self._R @ f
        F = f.reshape(self._shape)
        return np.matmul(self._R, F[:, :, None])[:, :, 0].ravel()

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return self.collide(self.transport(f))

    @property
    def matrix(self) -> np.ndarray:
        """Dense one-step matrix (diagnostics only)."""
        return np.column_stack([self(e) for e in np.eye(self.system.grid.size)])


def step(f: Field, system: KineticSystem, dt: float) -> Field:
    """Advance ``f`` by one splitting step."""
    out = Stepper(system, dt)(f.flat)
    return Field(out.reshape(f.grid.shape), f.grid)


def entropy(f: Field, A: ops.KineticOperator, eps: float) -> float:
    """Modified entropy ``||f||^2 / 2 + eps <A f, f>``."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    return 0.5 * inner_product(f, f) + eps * inner_product(A(f), f)


def entropy_form(system: KineticSystem, eps: float):
    """Fast ``vec -> H[f]`` on flat arrays using the low-rank factors of ``A``."""
    sw = system.grid.sqrt_weights
    U, R = system.A_eff.factors

    def h(vec: np.ndarray) -> float:
        y = sw * vec
        return 0.5 * float(y @ y) + eps * float((U.T @ y) @ (R @ y))

    return h


def dissipation(f: Field, system: KineticSystem, eps: float) -> float:
    """Entropy dissipation of the scaled system:

    ``-<Lf,f> + eps(<A T Pi f,f> + <A T (I-Pi) f,f> - <A L f,f> - <T A f,f>)``.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    T, L, A, P = system.T_eff, system.L_eff, system.A_eff, system.P
    Lf = L(f)
    Pf = P(f)
    value = -inner_product(Lf, f)
    if eps:
        value += eps * (
            inner_product(A(T(Pf)), f)
            + inner_product(A(T(f - Pf)), f)
            - inner_product(A(Lf), f)
            - inner_product(T(A(f)), f)
        )
    return value


@dataclass
class Trajectory:
    times: np.ndarray
    norms: np.ndarray
    entropies: np.ndarray
    dissipations: np.ndarray
    masses: np.ndarray
    max_entropy_increase: float
    fields_saved: list[np.ndarray] = field(default_factory=list, repr=False)

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "norm", "entropy", "dissipation", "mass"])
            for row in zip(self.times, self.norms, self.entropies, self.dissipations, self.masses):
                writer.writerow([format(float(v), ".17g") for v in row])


def integrate(
    system: KineticSystem,
    f0: Field,
    dt: float,
    t_end: float,
    eps: float = 0.0,
    *,
    save_every: int = 1,
    keep_fields: bool = False,
) -> Trajectory:
    """Run the stepper to ``t_end`` and record diagnostics every ``save_every`` steps.

    ``norms`` are norms of the fluctuation, i.e. of ``f`` with both discrete
    global equilibria removed; the conserved equilibrium content (zero up to
    rounding for admissible data) never decays and would otherwise floor the
    curve.  The entropy is evaluated after every step so that monotonicity is
    checked at full resolution regardless of ``save_every``.
    """
    if t_end < dt:
        raise ValueError("t_end must be at least one time step")
    stepper = Stepper(system, dt)
    grid = system.grid
    n_steps = int(round(t_end / dt))
    _entropy = entropy_form(system, eps)

    times, norms, ents, diss, masses, saved = [], [], [], [], [], []

    def record(k, vec, h):
        fld = Field(vec.reshape(grid.shape), grid)
        times.append(k * dt)
        norms.append(norm(admissible_part(fld)))
        ents.append(h)
        diss.append(dissipation(fld, system, eps))
        masses.append(mass(fld))
        if keep_fields:
            saved.append(vec.copy())

    f = f0.flat.copy()
    h_prev = _entropy(f)
    record(0, f, h_prev)
    max_increase = -np.inf
    for k in range(1, n_steps + 1):
        f = stepper(f)
        h = _entropy(f)
        max_increase = max(max_increase, h - h_prev)
        h_prev = h
        if k % save_every == 0 or k == n_steps:
            record(k, f, h)
    return Trajectory(
        np.array(times), np.array(norms), np.array(ents), np.array(diss), np.array(masses), float(max_increase), saved
    )


def integrate_raw(system: KineticSystem, f0: np.ndarray, dt: float, t_end: float, save_every: int = 1):
    """Bare stepping of a flat field; returns ``(times, snapshots)`` with one row per output."""
    stepper = Stepper(system, dt)
    n_steps = int(round(t_end / dt))
    f = np.asarray(f0, dtype=float).copy()
    times, snaps = [0.0], [f.copy()]
    for k in range(1, n_steps + 1):
        f = stepper(f)
        if k % save_every == 0 or k == n_steps:
            times.append(k * dt)
            snaps.append(f.copy())
    return np.array(times), np.stack(snaps)


def fit_decay_rate(times, norms, window: float = 0.5, *, floor: float = 0.0) -> float:
    """Least-squares slope of ``-log ||f(t)||`` over the trailing ``window`` fraction.

    ``floor > 0`` first discards samples below ``floor * max(norms)`` (the
    rounding plateau of fast-decaying runs), so the window covers the part of
    the curve that still carries signal.
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if not 0 < window <= 1:
        raise ValueError("window must lie in (0, 1]")
    if floor > 0:
        keep = norms >= floor * norms.max()
        times, norms = times[keep], norms[keep]
    n = len(times)
    start = n - int(np.ceil(window * n))
    t, nw = times[start:], norms[start:]
    if len(t) < 4:
        raise ValueError(f"need at least 4 samples in the fit window, got {len(t)}")
    if np.any(nw <= 0):
        raise ValueError("norms in the fit window must be positive")
    y = -np.log(nw)
    return float(np.polyfit(t, y, 1)[0])


def measure_constants(T: ops.KineticOperator, L: ops.KineticOperator) -> CoercivityConstants:
    alpha = ops.estimate_alpha(L)
    beta = ops.estimate_beta(T)
    gamma = ops.estimate_gamma(ops.build_auxiliary_A(T), T, L)
    return CoercivityConstants(alpha, beta, gamma)


def certify(system: KineticSystem, constants: CoercivityConstants | None = None) -> tuple[CoercivityConstants, RatePlan]:
    """Measure constants on the unscaled operators, rescale, and build the rate plan."""
    if constants is None:
        constants = measure_constants(system.T, system.L)
    scaled = rescale(constants, system.kn, system.scaling).constants
    return constants, rate_plan(scaled)


def slowest_decay(system: KineticSystem, tol: float = 1e-8) -> float:
    """``|Re|`` of the slowest nonzero eigenvalue of ``L/Kn^p - T/Kn``."""
    ev = la.eigvals(system.L_eff.matrix - system.T_eff.matrix)
    scale = max(1.0, float(np.max(np.abs(ev))))
    ev = ev[np.abs(ev) > tol * scale]
    return float(np.min(np.abs(ev.real)))


def initial_field(grid: PhaseGrid, kind: str = "default", seed: int = 0) -> Field:
    """Mass-zero initial fluctuations.

    ``default``: ``sin(2 pi x / lx) M(v) + 0.3 sin(4 pi x / lx) v M(v)``;
    ``random``: seeded Gaussian noise times ``F``, projected off both discrete equilibria.
    """
    x, v, m = grid.x_nodes, grid.v_nodes, grid.maxwellian
    if kind == "default":
        k = 2.0 * np.pi / grid.lx
        vals = np.sin(k * x)[:, None] * m[None, :] + 0.3 * np.sin(2 * k * x)[:, None] * (v * m)[None, :]
        return Field(vals, grid)
    if kind == "random":
        rng = np.random.default_rng(seed)
        return admissible_part(grid.random_field(rng))
    raise ValueError(f"unknown initial data {kind!r}; expected one of {INITIAL_KINDS}")


@dataclass(frozen=True)
class Scenario:
    """A fully specified deterministic run.

    ``sigma`` is any object with ``values(x, z) -> array`` (see
    :class:`hypokinetic.uq.SigmaModel`); ``None`` means ``sigma = 1``.
    """

    model: str = "bgk"
    scaling: str = "kinetic"
    kn: float = 1.0
    nx: int = 32
    lx: float = 2.0 * np.pi
    nv: int = 16
    velocity_rule: str = "gauss_hermite"
    v_shift: float = 0.0
    derivative_rule: str = "spectral"
    collision_rule: str = "exponential"
    kernel_strength: float = 0.5
    sigma: object = None
    z: float = 0.0
    t_end: float = 10.0
    dt: float | None = None
    save_every: int = 1
    initial: str = "default"
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if not (0 < self.kn <= 1):
            raise ValueError(f"kn must lie in (0, 1], got {self.kn}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scaling not in ("kinetic", "parabolic", "highfield"):
            raise ValueError(f"unknown scaling {self.scaling!r}")
        if self.scaling == "kinetic" and self.kn != 1:
            raise ValueError("the kinetic scaling has kn = 1; use parabolic or highfield for kn < 1")
        if self.collision_rule not in COLLISION_RULES:
            raise ValueError(f"unknown collision rule {self.collision_rule!r}; expected one of {COLLISION_RULES}")
        if self.dt is not None and self.t_end < self.dt:
            raise ValueError("t_end must be at least dt")
        if int(self.save_every) != self.save_every or self.save_every < 1:
            raise ValueError("save_every must be a positive integer")

    @cached_property
    def grid(self) -> PhaseGrid:
        return build_grid(self.nx, self.lx, self.nv, self.velocity_rule, v_shift=self.v_shift)

    @cached_property
    def transport(self) -> ops.KineticOperator:
        return ops.build_transport(self.grid, self.derivative_rule)

    @cached_property
    def unit_collision(self) -> ops.KineticOperator:
        """Collision operator with ``sigma = 1``; the random operator is ``sigma(x, z)`` times this."""
        if self.model == "bgk":
            return ops.build_bgk(self.grid, 1.0)
        return ops.build_anisotropic(self.grid, ops.default_kernel(self.grid, self.kernel_strength))

    def sigma_values(self, z: float | None = None) -> np.ndarray:
        z = self.z if z is None else z
        if self.sigma is None:
            return np.ones(self.grid.nx)
        vals = np.broadcast_to(np.asarray(self.sigma.values(self.grid.x_nodes, z), dtype=float), (self.grid.nx,))
        if np.any(vals <= 0):
            raise ValueError(f"sigma is not positive at z = {z}")
        return vals.copy()

    def collision(self, z: float | None = None) -> ops.KineticOperator:
        sig = self.sigma_values(z)
        return ops.KineticOperator(np.repeat(sig, self.grid.nv)[:, None] * self.unit_collision.matrix, "collision", self.grid)

    def system(self, z: float | None = None) -> KineticSystem:
        return KineticSystem(self.transport, self.collision(z), self.kn, self.scaling, self.collision_rule)

    def time_step(self) -> float:
        """Configured ``dt``, or the largest step that lands exactly on ``t_end`` within the bound."""
        bound = self.system().max_dt() if self.dt is None else None
        if self.dt is not None:
            return self.dt
        n = int(np.ceil(self.t_end / bound))
        return self.t_end / n

    def initial_field(self) -> Field:
        return initial_field(self.grid, self.initial, self.seed)
