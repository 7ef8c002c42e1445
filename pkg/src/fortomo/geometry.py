"""Acquisition geometry: height grids, vertical wavenumbers, steering matrices.

A multi-baseline stack is described by its vertical wavenumbers kz (rad/m),
one per track, with the master track pinned at kz = 0. The steering vector at
height z is a(z)_n = exp(j * kz_n * z); stacking a(z) over a uniform height
grid gives the N x N_z steering matrix used by every estimator downstream.
The nominal vertical (Rayleigh) resolution of such a stack is
2*pi / (max(kz) - min(kz)).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi


def _freeze(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HeightGrid:
    """Uniformly spaced, strictly increasing heights (meters)."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 1 or z.size < 2:
            raise ValueError("height grid needs a 1-d array of at least 2 heights")
        dz = np.diff(z)
        if not np.all(dz > 0):
            raise ValueError("grid heights must be strictly increasing")
        if not np.allclose(dz, dz[0], rtol=1e-9, atol=0.0):
            raise ValueError("grid heights must be uniformly spaced")
        object.__setattr__(self, "z", _freeze(z))

    @property
    def n_z(self):
        return self.z.size

    @property
    def z_min(self):
        return float(self.z[0])

    @property
    def z_max(self):
        return float(self.z[-1])

    @property
    def spacing(self):
        return float((self.z[-1] - self.z[0]) / (self.z.size - 1))


def make_height_grid(z_min, z_max, n_z):
    """Uniform grid of n_z heights spanning [z_min, z_max]."""
    if not z_min < z_max:
        raise ValueError(f"need z_min < z_max, got [{z_min}, {z_max}]")
    if n_z < 2:
        raise ValueError(f"need at least 2 grid heights, got {n_z}")
    return HeightGrid(np.linspace(z_min, z_max, int(n_z)))


@dataclass(frozen=True, eq=False)
class AcquisitionGeometry:
    """Vertical wavenumbers of one multi-baseline stack (master first, kz=0)."""

    kz: np.ndarray
    seed: int = -1  # RNG seed used by synthesize_geometry; -1 when built by hand

    def __post_init__(self):
        kz = np.asarray(self.kz, dtype=np.float64)
        if kz.ndim != 1 or kz.size < 2:
            raise ValueError("need at least 2 tracks")
        if kz[0] != 0.0:
            raise ValueError("master track must come first with kz = 0")
        if np.unique(kz).size != kz.size:
            raise ValueError("kz values must be pairwise distinct")
        if not kz.max() - kz.min() > 0.0:
            raise ValueError("kz span must be positive")
        object.__setattr__(self, "kz", _freeze(kz))

    @property
    def n_tracks(self):
        return self.kz.size

    @property
    def span(self):
        return float(self.kz.max() - self.kz.min())

    @property
    def vertical_resolution(self):
        """Rayleigh resolution 2*pi / span(kz), meters."""
        return TWO_PI / self.span


def synthesize_geometry(n_tracks, vertical_resolution, perturbation=0.0, seed=0):
    """Nominally uniform kz ladder hitting a target vertical resolution.

    kz_n = n * span / (n_tracks - 1) with span = 2*pi / vertical_resolution.
    With perturbation > 0 the interior tracks (all but the first and last)
    are jittered by uniform +-perturbation * spacing, which keeps the span,
    the master track and — for perturbation < 0.5 — the track ordering intact.
    """
    if n_tracks < 2:
        raise ValueError(f"need at least 2 tracks, got {n_tracks}")
    if not vertical_resolution > 0:
        raise ValueError(f"vertical resolution must be positive, got {vertical_resolution}")
    if not 0.0 <= perturbation < 0.5:
        raise ValueError(f"perturbation must lie in [0, 0.5), got {perturbation}")
    span = TWO_PI / vertical_resolution
    step = span / (n_tracks - 1)
    kz = step * np.arange(n_tracks, dtype=np.float64)
    if perturbation > 0.0 and n_tracks > 2:
        rng = np.random.default_rng(seed)
        kz[1:-1] += rng.uniform(-1.0, 1.0, n_tracks - 2) * perturbation * step
    return AcquisitionGeometry(kz=kz, seed=seed)


def resolution_ramp(count, resolution_near, resolution_far, n_tracks=6,
                    perturbation=0.0, seed=0):
    """Bank of geometries whose resolutions sweep linearly near -> far.

    Geometry i gets RNG seed `seed + i` so banks are reproducible while the
    jitter still differs across members.
    """
    if count < 1:
        raise ValueError("need at least one geometry")
    if not (resolution_near > 0 and resolution_far > 0):
        raise ValueError("resolutions must be positive")
    resolutions = np.linspace(resolution_near, resolution_far, count)
    return [synthesize_geometry(n_tracks, float(res), perturbation, seed + i)
            for i, res in enumerate(resolutions)]


def steering_vector(geometry, z):
    """a(z)_n = exp(j * kz_n * z); unit modulus per entry."""
    return np.exp(1j * geometry.kz * float(z))


@dataclass(frozen=True, eq=False)
class SteeringMatrix:
    """N x N_z matrix whose i-th column is the steering vector at grid height z_i."""

    a: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.complex128)
        if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] < 1:
            raise ValueError("steering matrix must be N x N_z with N >= 2")
        if not np.allclose(np.abs(a), 1.0, rtol=0.0, atol=1e-12):
            raise ValueError("steering entries must have unit modulus")
        if not np.allclose(a[0], 1.0, rtol=0.0, atol=1e-12):
            raise ValueError("master-track row (kz = 0) must be all ones")
        object.__setattr__(self, "a", _freeze(a))

    @property
    def n_tracks(self):
        return self.a.shape[0]

    @property
    def n_z(self):
        return self.a.shape[1]


def steering_matrix(geometry, grid):
    """Steering vectors for every grid height, stacked as columns."""
    return SteeringMatrix(np.exp(1j * np.outer(geometry.kz, grid.z)))


def save_geometry(geometry, path):
    """Plain-text key=value snapshot; kz at 17 significant digits (round-trip exact)."""
    path = Path(path)
    kz_txt = ", ".join(f"{v:.17g}" for v in geometry.kz)
    path.write_text(
        f"n_tracks = {geometry.n_tracks}\n"
        f"kz = {kz_txt}\n"
        f"seed = {geometry.seed}\n")


def load_geometry(path):
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed geometry line: {line!r}")
        fields[key.strip()] = value.strip()
    missing = {"n_tracks", "kz", "seed"} - fields.keys()
    if missing:
        raise ValueError(f"geometry file misses keys: {sorted(missing)}")
    kz = np.array([float(tok) for tok in fields["kz"].split(",")])
    if kz.size != int(fields["n_tracks"]):
        raise ValueError("n_tracks does not match the kz list length")
    return AcquisitionGeometry(kz=kz, seed=int(fields["seed"]))
