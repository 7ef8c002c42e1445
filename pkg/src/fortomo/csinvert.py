"""Compressed-sensing inversion in an orthonormal Haar wavelet basis.

The profile is parameterized as p = Psi alpha and fitted to the sample
covariance by the l1-regularized least squares

    h(alpha) = || A diag(Psi alpha) A^H - Sigma ||_F^2 + lam * ||alpha||_1.

Expanding the Frobenius norm collapses the data term to a real quadratic:
with G_ik = |a_i^H a_k|^2 and b_i = Re(a_i^H Sigma a_i),

    h(alpha) = alpha^T (Psi^T G Psi) alpha - 2 (Psi^T b)^T alpha
               + ||Sigma||_F^2 + lam * ||alpha||_1,

which a monotone FISTA iteration minimizes with step 1/L, L = 2 lambda_max(G)
(Psi orthonormal, so conjugation by it preserves the spectrum).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import (FISTA_CONVERGED, FISTA_DIVERGED, fista_quadratic,
                       quadratic_forms)
from .errors import NumericalError
from .spectral import _check_hermitian, _matrix_of

_SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True, eq=False)
class WaveletBasis:
    """Orthonormal synthesis matrix; columns are the basis profiles."""

    psi: np.ndarray
    family: str
    level: int

    def __post_init__(self):
        psi = np.ascontiguousarray(self.psi, dtype=np.float64)
        if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
            raise ValueError("synthesis matrix must be square")
        gram = psi.T @ psi
        if np.abs(gram - np.eye(psi.shape[0])).max() > 1e-10:
            raise ValueError("synthesis matrix must be orthonormal")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @property
    def n_z(self):
        return self.psi.shape[0]


def wavelet_basis(n_z, family="haar", level=None):
    """Multi-level Haar synthesis basis on n_z = 2^k points.

    The analysis operator is the product of single-level transforms, each
    mapping adjacent pairs to scaled averages and differences (1/sqrt(2)
    weights) on the current approximation block; Psi is its transpose. At
    full depth the first column is the constant vector 1/sqrt(n_z).
    """
    if str(family).lower() != "haar":
        raise ValueError(f"unsupported wavelet family: {family!r}")
    n_z = int(n_z)
    if n_z < 2 or n_z & (n_z - 1):
        raise ValueError(f"haar basis needs a power-of-two size, got {n_z}")
    max_level = n_z.bit_length() - 1
    if level is None:
        level = max_level
    if not 1 <= level <= max_level:
        raise ValueError(f"level must lie in [1, {max_level}], got {level}")
    analysis = np.eye(n_z)
    size = n_z
    for _ in range(level):
        half = size // 2
        step = np.eye(n_z)
        step[:size, :size] = 0.0
        for j in range(half):
            step[j, 2 * j] = step[j, 2 * j + 1] = _SQRT_HALF
            step[half + j, 2 * j] = _SQRT_HALF
            step[half + j, 2 * j + 1] = -_SQRT_HALF
        analysis = step @ analysis
        size = half
    return WaveletBasis(psi=analysis.T, family="haar", level=int(level))


def soft_threshold(v, t):
    """Elementwise prox of t*|.|: sign(v) * max(|v| - t, 0)."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


@dataclass(frozen=True)
class CsConfig:
    """Solver knobs; lam=None picks the scale-free default at solve time."""

    lam: float | None = None
    max_iter: int = 500
    rel_tol: float = 1e-6
    nonneg_projection: bool = True

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


def steering_power_gram(steer):
    """G_ik = |a_i^H a_k|^2; real symmetric with diagonal N^2."""
    gram = steer.a.conj().T @ steer.a
    return gram.real ** 2 + gram.imag ** 2


def data_quadforms(sigma, steer):
    """b_i = Re(a_i^H Sigma a_i); the beamforming numerators of Sigma."""
    sigma = _matrix_of(sigma)
    _check_hermitian(sigma, steer)
    return quadratic_forms(steer.a, sigma)


def default_lam(sigma, steer, basis):
    """Scale-tracking default: 1e-2 * ||Sigma||_F^2 / max|Psi^T b|.

    Both numerator and denominator are linear^2 / linear in Sigma, so the
    regularization strength follows the data scale (solutions of (c Sigma,
    lam(c Sigma)) are c times those of (Sigma, lam(Sigma))).
    """
    sigma_m = _matrix_of(sigma)
    b = data_quadforms(sigma_m, steer)
    denom = np.abs(basis.psi.T @ b).max()
    if denom <= 0:
        return 0.0
    return 1e-2 * float(np.vdot(sigma_m, sigma_m).real) / denom


def cs_objective(alpha, sigma, steer, basis, lam):
    """Direct (unexpanded) evaluation of the fit-plus-l1 objective."""
    alpha = np.asarray(alpha, dtype=np.float64)
    sigma = _matrix_of(sigma)
    p = basis.psi @ alpha
    resid = (steer.a * p) @ steer.a.conj().T - sigma
    return float(np.vdot(resid, resid).real + lam * np.abs(alpha).sum())


def cs_gradient(alpha, sigma, steer, basis):
    """Gradient of the smooth part: 2 Psi^T q(A diag(Psi alpha) A^H - Sigma)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    sigma = _matrix_of(sigma)
    p = basis.psi @ alpha
    resid = (steer.a * p) @ steer.a.conj().T - sigma
    return 2.0 * (basis.psi.T @ quadratic_forms(steer.a, resid))


def lipschitz_estimate(steer, iters=50):
    """2 * lambda_max(G) by power iteration with the all-ones start.

    G is entrywise positive, so the Perron vector overlaps the ones vector
    and convergence is guaranteed. The returned value is the gradient
    Lipschitz constant of the smooth term (basis conjugation is isometric).
    """
    g = steering_power_gram(steer)
    v = np.full(g.shape[0], 1.0 / np.sqrt(g.shape[0]))
    for _ in range(int(iters)):
        w = g @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
    return 2.0 * float(v @ (g @ v))


@dataclass(frozen=True, eq=False)
class FistaResult:
    """Solution plus the (non-increasing) objective trace."""

    profile: np.ndarray
    alpha: np.ndarray
    objectives: np.ndarray
    iterations: int
    converged: bool
    lam: float


def fista_solve(sigma, steer, basis, config=None):
    """Minimize the wavelet-domain objective for one covariance matrix.

    The quadratic coefficients are formed once (M = Psi^T G Psi, c = Psi^T b)
    and handed to the monotone FISTA kernel with step safety factor 1.01 on
    the power-iteration Lipschitz estimate. objectives[0] is h(0) = ||Sigma||_F^2;
    subsequent entries never increase (restart on overshoot). The returned
    profile is Psi alpha, clamped at zero unless nonneg_projection is off.
    """
    if config is None:
        config = CsConfig()
    if basis.n_z != steer.n_z:
        raise ValueError("basis size does not match steering grid size")
    sigma_m = _matrix_of(sigma)
    lam = config.lam if config.lam is not None else default_lam(sigma_m, steer, basis)
    g = steering_power_gram(steer)
    b = data_quadforms(sigma_m, steer)
    m = basis.psi.T @ g @ basis.psi
    m = 0.5 * (m + m.T)
    c = basis.psi.T @ b
    const = float(np.vdot(sigma_m, sigma_m).real)
    lstep = lipschitz_estimate(steer) * 1.01
    if lstep <= 0:
        raise NumericalError("degenerate steering matrix: zero Lipschitz bound")
    alpha, objectives, status = fista_quadratic(
        m, c, const, lam, lstep, config.max_iter, config.rel_tol)
    if status == FISTA_DIVERGED:
        raise NumericalError("FISTA objective became non-finite")
    profile = basis.psi @ alpha
    if config.nonneg_projection:
        profile = np.maximum(profile, 0.0)
    return FistaResult(profile=profile, alpha=alpha, objectives=objectives,
                       iterations=objectives.size - 1,
                       converged=status == FISTA_CONVERGED, lam=float(lam))
