"""Dense kinetic operators on a :class:`~hypokinetic.phase_space.PhaseGrid`.

Matrices act on flattened fields (index ``i * nv + j``).  Adjoints, symmetry
checks and spectral estimates are taken in the weighted inner product; the
similarity ``K -> S K S^{-1}`` with ``S = diag(sqrt(dx w_j / F_ij))`` turns
weighted adjoints into plain transposes, and all eigen/SVD work happens there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la

from .phase_space import Field, PhaseGrid, sawtooth_mode

ROLES = ("transport", "collision", "projection", "auxiliary")
DERIVATIVE_RULES = ("spectral", "central2")


class CoercivityError(ArithmeticError):
    """A coercivity constant is (numerically) zero."""


@dataclass(frozen=True, eq=False)
class KineticOperator:
    matrix: np.ndarray
    role: str
    grid: PhaseGrid = field(repr=False)
    # optional low-rank factors (U, R) of the Euclidean matrix, U orthonormal
    factors: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.grid.size
        if self.matrix.shape != (n, n):
            raise ValueError(f"operator shape {self.matrix.shape} does not match grid size {n}")
        if self.role not in ROLES:
            raise ValueError(f"unknown operator role {self.role!r}")

    def __call__(self, f: Field) -> Field:
        if f.grid is not self.grid:
            raise ValueError("operator and field live on different grids")
        return Field((self.matrix @ f.flat).reshape(self.grid.shape), self.grid)

    def __matmul__(self, other: KineticOperator) -> np.ndarray:
        return self.matrix @ other.matrix

    def scaled(self, factor: float) -> KineticOperator:
        return KineticOperator(self.matrix * factor, self.role, self.grid)

    @cached_property
    def euclidean(self) -> np.ndarray:
        """``S K S^{-1}``; the weighted adjoint becomes the transpose."""
        s = self.grid.sqrt_weights
        return s[:, None] * self.matrix / s[None, :]

    @property
    def adjoint(self) -> np.ndarray:
        """Weighted adjoint ``W^{-1} K^T W`` in natural coordinates."""
        w = self.grid.node_weights.ravel()
        return self.matrix.T * w[None, :] / w[:, None]

    def operator_norm(self) -> float:
        """Operator norm induced by the weighted inner product."""
        return float(la.norm(self.euclidean, 2))


def from_euclidean(mat: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    s = grid.sqrt_weights
    return mat * s[None, :] / s[:, None]


def derivative_matrix(nx: int, lx: float, rule: str = "spectral") -> np.ndarray:
    """Periodic first-derivative matrix on ``nx`` equispaced nodes of ``[0, lx)``.

    Both rules are real and skew-symmetric.
    """
    if rule == "spectral":
        if nx % 2:
            raise ValueError("spectral rule implemented for even nx")
        k = np.arange(nx)
        diff = k[:, None] - k[None, :]
        with np.errstate(divide="ignore"):
            D = 0.5 * (-1.0) ** diff / np.tan(np.pi * diff / nx)
        np.fill_diagonal(D, 0.0)
        return D * (2.0 * np.pi / lx)
    if rule == "central2":
        h = lx / nx
        D = np.zeros((nx, nx))
        idx = np.arange(nx)
        D[idx, (idx + 1) % nx] = 0.5 / h
        D[idx, (idx - 1) % nx] = -0.5 / h
        return D
    raise ValueError(f"unknown derivative rule {rule!r}; expected one of {DERIVATIVE_RULES}")


def build_transport(grid: PhaseGrid, derivative_rule: str = "spectral") -> KineticOperator:
    """Free transport ``(T f)_ij = v_j (D_x f)_ij``."""
    D = derivative_matrix(grid.nx, grid.lx, derivative_rule)
    return KineticOperator(np.kron(D, np.diag(grid.v_nodes)), "transport", grid)


def projection_operator(grid: PhaseGrid) -> KineticOperator:
    block = np.outer(grid.maxwellian, grid.v_weights)
    return KineticOperator(np.kron(np.eye(grid.nx), block), "projection", grid)


def _sigma_array(grid: PhaseGrid, sigma_values) -> np.ndarray:
    sigma = np.broadcast_to(np.asarray(sigma_values, dtype=float), (grid.nx,)).copy()
    if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
        raise ValueError("scattering coefficient sigma must be strictly positive")
    return sigma


def build_bgk(grid: PhaseGrid, sigma_values=1.0) -> KineticOperator:
    """Relaxation operator ``L f = sigma(x) (Pi f - f)``."""
    sigma = _sigma_array(grid, sigma_values)
    block = np.outer(grid.maxwellian, grid.v_weights) - np.eye(grid.nv)
    return KineticOperator(np.kron(np.diag(sigma), block), "collision", grid)


def scattering_block(grid: PhaseGrid, kernel: np.ndarray) -> np.ndarray:
    """Velocity block of the gain-minus-loss operator for ``kernel[j, k] = k(v_j -> v_k)``.

    ``(L f)_j = sum_k w_k [k(v_k -> v_j) f_k M_j - k(v_j -> v_k) f_j M_k]``.
    No positivity or symmetry is required here (kernel z-derivatives may change sign).
    """
    kernel = np.asarray(kernel, dtype=float)
    if kernel.shape != (grid.nv, grid.nv):
        raise ValueError(f"kernel must have shape {(grid.nv, grid.nv)}, got {kernel.shape}")
    w, m = grid.v_weights, grid.maxwellian
    gain = m[:, None] * kernel.T * w[None, :]
    loss = np.diag(kernel @ (w * m))
    return gain - loss


def build_anisotropic(grid: PhaseGrid, kernel: np.ndarray, sigma_values=1.0) -> KineticOperator:
    """Anisotropic scattering with a symmetric positive kernel, optionally scaled by ``sigma(x)``.

    With ``kernel == 1`` this is exactly the BGK operator with the same ``sigma``.
    """
    kernel = np.asarray(kernel, dtype=float)
    if np.any(~np.isfinite(kernel)) or np.any(kernel <= 0):
        raise ValueError("scattering kernel must be strictly positive")
    if not np.allclose(kernel, kernel.T, rtol=1e-12, atol=0):
        raise ValueError("scattering kernel must be symmetric (detailed balance)")
    sigma = _sigma_array(grid, sigma_values)
    return KineticOperator(np.kron(np.diag(sigma), scattering_block(grid, kernel)), "collision", grid)


def default_kernel(grid: PhaseGrid, strength: float = 0.5) -> np.ndarray:
    """Symmetric positive kernel ``1 + strength * exp(-(v - v*)^2 / 2)``."""
    v = grid.v_nodes
    return 1.0 + strength * np.exp(-0.5 * (v[:, None] - v[None, :]) ** 2)


def _complement_block(grid: PhaseGrid) -> np.ndarray:
    """Orthonormal basis (nv x nv-1) of the complement of M in one x-cell, Euclidean coordinates."""
    return la.null_space(grid.local_equilibrium_vector[None, :])


def _times_complement(M: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """``M @ Q`` with ``Q = I_nx (x) B`` an orthonormal basis of range(I - Pi)."""
    B = _complement_block(grid)
    return (M.reshape(-1, grid.nx, grid.nv) @ B).reshape(M.shape[0], -1)


def _local_equilibrium_basis(grid: PhaseGrid) -> np.ndarray:
    """Orthonormal basis ``I_nx (x) u`` of range(Pi), Euclidean coordinates."""
    return np.kron(np.eye(grid.nx), grid.local_equilibrium_vector[:, None])


def _macroscopic_basis(grid: PhaseGrid, exclude_sawtooth: bool = True) -> np.ndarray:
    """Orthonormal basis of the mass-zero part of range(Pi) (Euclidean coordinates)."""
    constraints = [np.ones(grid.nx)]
    if exclude_sawtooth:
        constraints.append(sawtooth_mode(grid))
    Z = la.null_space(np.vstack(constraints))
    return np.kron(Z, grid.local_equilibrium_vector[:, None])


def build_auxiliary_A(T: KineticOperator, grid: PhaseGrid | None = None) -> KineticOperator:
    """``A = (I + (T Pi)^* (T Pi))^{-1} (T Pi)^*`` in the weighted inner product.

    With ``U`` an orthonormal basis of range(Pi) and ``K = T U`` this equals
    ``U (I + K^T K)^{-1} K^T``, so only an ``nx x nx`` system is solved.  The
    factors are kept on the returned operator.
    """
    grid = T.grid if grid is None else grid
    U = _local_equilibrium_basis(grid)
    K = T.euclidean @ U
    G = np.eye(grid.nx) + K.T @ K
    R = la.solve(G, K.T, assume_a="pos")
    assert np.all(np.isfinite(R)), "auxiliary solve failed"
    return KineticOperator(from_euclidean(U @ R, grid), "auxiliary", grid, factors=(U, R))


def estimate_alpha(L: KineticOperator) -> float:
    """Largest ``alpha`` with ``-<L f, f> >= alpha ||(I - Pi) f||^2``."""
    grid = L.grid
    Lh = L.euclidean
    LQ = _times_complement(0.5 * (Lh + Lh.T), grid)
    G = -_times_complement(LQ.T, grid)
    alpha = float(la.eigh(0.5 * (G + G.T), eigvals_only=True, subset_by_index=[0, 0])[0])
    if alpha <= 1e-12:
        raise CoercivityError(f"no spectral gap (alpha = {alpha:.3e})")
    return alpha


def estimate_beta(T: KineticOperator, exclude_sawtooth: bool = True) -> float:
    """Largest ``beta`` with ``||T Pi f||^2 >= beta ||Pi f||^2`` on admissible ``Pi f``.

    Admissible means zero mass and, by default, zero sawtooth density: the
    sawtooth local equilibrium lies in the kernel of every real skew-symmetric
    periodic derivative on an even grid and is conserved by the discrete flow.
    """
    R = _macroscopic_basis(T.grid, exclude_sawtooth)
    smin = la.svdvals(T.euclidean @ R)[-1]
    beta = float(smin**2)
    if beta <= 1e-12:
        raise CoercivityError(f"macroscopic coercivity fails (beta = {beta:.3e})")
    return beta


def estimate_gamma(A: KineticOperator, T: KineticOperator, L: KineticOperator, combine: str = "product") -> float:
    """Bound ``gamma`` for ``f -> (A T (I - Pi) f, A L f)`` on range(I - Pi).

    ``combine="product"`` is the operator norm into the Euclidean product
    space; ``combine="sum"`` returns ``||A T (I-Pi)|| + ||A L (I-Pi)||``, an upper
    bound valid for the sum-of-norms form of the inequality.
    """
    grid = T.grid
    # A = U R with orthonormal U: norms only see R
    left = A.factors[1] if A.factors is not None else A.euclidean
    X = _times_complement(left @ T.euclidean, grid)
    Y = _times_complement(left @ L.euclidean, grid)
    if combine == "product":
        return float(la.svdvals(np.vstack([X, Y]))[0])
    if combine == "sum":
        return float(la.svdvals(X)[0] + la.svdvals(Y)[0])
    raise ValueError(f"unknown combine mode {combine!r}")


@dataclass
class AssumptionReport:
    transport_skew: float
    collision_symmetry: float
    collision_mass: float
    orthogonality: float
    alpha: float
    beta: float
    gamma: float
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        return [
            f"||T + T*||     = {self.transport_skew:.3e}",
            f"||L - L*||     = {self.collision_symmetry:.3e}",
            f"mass(L f) res  = {self.collision_mass:.3e}",
            f"||Pi T Pi||    = {self.orthogonality:.3e}",
            f"alpha, beta, gamma = {self.alpha:.6g}, {self.beta:.6g}, {self.gamma:.6g}",
        ] + [f"FAILED: {name}" for name in self.failures]


def check_assumptions(
    T: KineticOperator,
    L: KineticOperator,
    P: KineticOperator | None = None,
    *,
    skew_tol: float = 1e-10,
    sym_tol: float = 1e-10,
    orth_tol: float = 1e-11,
) -> AssumptionReport:
    """Residuals of the structural assumptions plus the measured constants."""
    grid = T.grid
    P = projection_operator(grid) if P is None else P
    Th, Lh, Ph = T.euclidean, L.euclidean, P.euclidean
    # Frobenius norms bound the operator norms from above
    skew = float(la.norm(Th + Th.T))
    sym = float(la.norm(Lh - Lh.T))
    orth = float(la.norm(Ph @ Th @ Ph))
    colmass = float(np.max(np.abs(np.kron(np.ones(grid.nx), grid.v_weights) @ L.matrix)))

    failures = []
    if skew > skew_tol:
        failures.append("T not skew-symmetric")
    if sym > sym_tol:
        failures.append("L not symmetric")
    if colmass > 1e-12 * max(1.0, float(np.abs(L.matrix).max())):
        failures.append("L does not conserve mass")
    if orth > orth_tol:
        failures.append("ΠTΠ ≠ 0")

    alpha = beta = gamma = 0.0
    try:
        alpha = estimate_alpha(L)
    except CoercivityError:
        failures.append("alpha <= 0 (no spectral gap)")
    try:
        beta = estimate_beta(T)
    except CoercivityError:
        failures.append("beta <= 0 (macroscopic coercivity fails)")
    gamma = estimate_gamma(build_auxiliary_A(T, grid), T, L)
    if not gamma > 0:
        failures.append("gamma <= 0")
    return AssumptionReport(skew, sym, colmass, orth, alpha, beta, gamma, failures)
