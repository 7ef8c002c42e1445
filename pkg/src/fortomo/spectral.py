"""Classical spectral estimators: beamforming and diagonally loaded Capon.

Both map an N x N Hermitian covariance (or correlation) matrix to a
nonnegative power estimate per grid height. Beamforming evaluates the matched
filter a_i^H R a_i / N^2; Capon adapts the filter to minimize interference,
1 / (a_i^H R_dl^{-1} a_i), with diagonal loading for invertibility at low
look counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import quadratic_forms, whitened_norms
from .simulator import SampleCorrelation, SampleCovariance


@dataclass(frozen=True, eq=False)
class EstimatorOutput:
    """Nonnegative power profile plus the producing method's name."""

    profile: np.ndarray
    method: str
    clamped: int = 0  # count of negative round-off entries zeroed out

    def __post_init__(self):
        profile = np.asarray(self.profile, dtype=np.float64)
        if profile.ndim != 1:
            raise ValueError("profile must be a vector")
        if np.any(profile < 0):
            raise ValueError("profile must be nonnegative")
        profile.setflags(write=False)
        object.__setattr__(self, "profile", profile)


def _matrix_of(r):
    if isinstance(r, SampleCovariance):
        return r.sigma
    if isinstance(r, SampleCorrelation):
        return r.r
    return np.ascontiguousarray(r, dtype=np.complex128)


def _check_hermitian(r, steer):
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("covariance must be square")
    if r.shape[0] != steer.n_tracks:
        raise ValueError(f"covariance size {r.shape[0]} does not match "
                         f"steering track count {steer.n_tracks}")
    scale = max(np.abs(r).max(), np.finfo(np.float64).tiny)
    if np.abs(r - r.conj().T).max() > 1e-10 * scale:
        raise ValueError("covariance must be Hermitian")


def beamforming(r, steer):
    """Matched-filter spectrum p_i = a_i^H R a_i / N^2.

    Exact on matched inputs: for R = A diag(p) A^H with orthogonal steering
    columns this returns p itself. Tiny negative excursions (round-off on a
    Hermitian input) are clamped to zero and counted; anything below
    -1e-8 * Tr(R)/N signals a non-Hermitian or corrupted input and raises.
    """
    r = _matrix_of(r)
    _check_hermitian(r, steer)
    n = steer.n_tracks
    profile = quadratic_forms(steer.a, r) / float(n * n)
    floor = -1e-8 * r.diagonal().real.sum() / n
    if profile.min() < floor:
        raise ValueError("beamforming produced a large negative power; "
                         "input covariance is not Hermitian PSD")
    clamped = int((profile < 0).sum())
    return EstimatorOutput(profile=np.maximum(profile, 0.0),
                           method="beamforming", clamped=clamped)


def capon(r, steer, loading=1e-2):
    """Minimum-variance spectrum p_i = 1 / (a_i^H R_dl^{-1} a_i).

    R_dl = R + loading * (Tr(R)/N) * I. The inverse quadratic forms are
    computed as whitened norms ||L^{-1} a_i||^2 from a Cholesky factorization,
    which keeps them nonnegative by construction. Relative loading makes the
    estimate scale with R exactly like beamforming does (capon(cR) = c capon(R)).
    """
    if loading < 0:
        raise ValueError("diagonal loading must be nonnegative")
    r = _matrix_of(r)
    _check_hermitian(r, steer)
    n = steer.n_tracks
    r_dl = r + (loading * r.diagonal().real.sum() / n) * np.eye(n)
    try:
        chol = np.linalg.cholesky(r_dl)
    except np.linalg.LinAlgError:
        raise ValueError("loaded covariance is not positive definite; "
                         "increase the diagonal loading") from None
    denom = whitened_norms(chol, steer.a)
    tiny = np.finfo(np.float64).tiny
    return EstimatorOutput(profile=1.0 / np.maximum(denom, tiny), method="capon")
