"""Synthetic forest scatterers: two-Gaussian profiles, speckle, covariances.

A vertical backscatter profile is modeled as the sum of a ground and a canopy
Gaussian, normalized to unit total power on the height grid. Multi-look SAR
measurements are fully developed speckle: per look, y = A diag(sqrt(p)) w + eps
with circular complex Gaussian w and noise eps, so E y y^H = A diag(p) A^H +
noise_power * I. Sample covariance / correlation estimates of that expectation
are what every inversion method in this package consumes.
"""

from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from .geometry import HeightGrid, steering_matrix

_DATASET_MAGIC = b"FTDSET01"
_DATASET_VERSION = 1
_SPECKLE_CHUNK = 8192  # looks simulated per block; fixed so outputs never depend on memory


@dataclass(frozen=True, eq=False)
class ReflectivityProfile:
    """Nonnegative backscattered power per height bin."""

    p: np.ndarray
    grid: HeightGrid

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (self.grid.n_z,):
            raise ValueError(f"profile shape {p.shape} does not match grid size {self.grid.n_z}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("profile values must be finite and nonnegative")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def total_power(self):
        return float(self.p.sum())


@dataclass(frozen=True)
class GaussianMixtureParams:
    """Ground + canopy Gaussian bumps; heights in meters, powers linear."""

    amp_ground: float
    amp_canopy: float
    mu_ground: float
    mu_canopy: float
    sigma_ground: float
    sigma_canopy: float

    def __post_init__(self):
        if self.amp_ground < 0 or self.amp_canopy < 0:
            raise ValueError("amplitudes must be nonnegative")
        if self.sigma_ground <= 0 or self.sigma_canopy <= 0:
            raise ValueError("spreads must be positive")
        if not self.mu_ground < self.mu_canopy:
            raise ValueError("ground center must lie below canopy center")


def _check_range(name, lo, hi):
    if not np.isfinite(lo) or not np.isfinite(hi) or lo > hi:
        raise ValueError(f"bad range for {name}: [{lo}, {hi}]")


@dataclass(frozen=True)
class ProfilePrior:
    """Uniform ranges the mixture parameters are drawn from."""

    amp_ground: tuple = (1.0, 1.0)
    amp_canopy: tuple = (0.1, 10.0)
    mu_ground: tuple = (-3.0, 3.0)
    mu_canopy: tuple = (8.0, 30.0)
    sigma_ground: tuple = (0.5, 5.0)
    sigma_canopy: tuple = (0.5, 5.0)
    noise_power: float = 0.1
    forest_preset: str = "custom"

    def __post_init__(self):
        for name in ("amp_ground", "amp_canopy", "mu_ground", "mu_canopy",
                     "sigma_ground", "sigma_canopy"):
            lo, hi = getattr(self, name)
            _check_range(name, lo, hi)
        if self.amp_ground[0] < 0 or self.amp_canopy[0] < 0:
            raise ValueError("amplitude ranges must be nonnegative")
        if self.sigma_ground[0] <= 0 or self.sigma_canopy[0] <= 0:
            raise ValueError("spread ranges must be positive")
        if self.noise_power < 0:
            raise ValueError("noise power must be nonnegative")
        if not self.mu_ground[0] < self.mu_canopy[1]:
            raise ValueError("prior admits no ordered ground/canopy pair")


def boreal_prior(noise_power=0.1):
    """Low, sparse forest: canopy between 8 and 30 m."""
    return ProfilePrior(noise_power=noise_power, forest_preset="boreal")


def tropical_prior(noise_power=0.1):
    """Tall, dense forest: higher and broader canopy layer."""
    return ProfilePrior(mu_canopy=(15.0, 45.0), sigma_ground=(1.0, 8.0),
                        sigma_canopy=(1.0, 8.0), noise_power=noise_power,
                        forest_preset="tropical")


def sample_profile_params(prior, rng, max_tries=100000):
    """Draw mixture parameters from `prior`, enforcing mu_ground < mu_canopy.

    Draws all six fields per attempt (fixed stream order) and rejects
    unordered center pairs, so overlapping center ranges stay unbiased.
    """
    for _ in range(max_tries):
        amp_g = rng.uniform(*prior.amp_ground)
        amp_c = rng.uniform(*prior.amp_canopy)
        mu_g = rng.uniform(*prior.mu_ground)
        mu_c = rng.uniform(*prior.mu_canopy)
        sig_g = rng.uniform(*prior.sigma_ground)
        sig_c = rng.uniform(*prior.sigma_canopy)
        if mu_g < mu_c:
            return GaussianMixtureParams(amp_g, amp_c, mu_g, mu_c, sig_g, sig_c)
    raise ValueError("could not draw ordered ground/canopy centers from this prior")


def render_profile(params, grid):
    """Evaluate the two-Gaussian mixture on the grid, normalized to unit power.

    Spreads are floored at half a grid step so that near-delta scatterers
    stay representable instead of vanishing between bins.
    """
    floor = 0.5 * grid.spacing
    sig_g = max(params.sigma_ground, floor)
    sig_c = max(params.sigma_canopy, floor)
    z = grid.z
    p = (params.amp_ground * np.exp(-0.5 * ((z - params.mu_ground) / sig_g) ** 2)
         + params.amp_canopy * np.exp(-0.5 * ((z - params.mu_canopy) / sig_c) ** 2))
    total = p.sum()
    if not total > 0:
        raise ValueError("mixture has no power on the grid; cannot normalize")
    return ReflectivityProfile(p / total, grid)


def _profile_vector(p, n_z):
    vec = np.asarray(p.p if isinstance(p, ReflectivityProfile) else p, dtype=np.float64)
    if vec.shape != (n_z,):
        raise ValueError(f"profile length {vec.shape} does not match steering N_z {n_z}")
    if np.any(vec < 0):
        raise ValueError("profile must be nonnegative")
    return vec


def true_covariance(steer, p, noise_power=0.0):
    """Noise-free model covariance A diag(p) A^H + noise_power * I, exactly Hermitian."""
    if noise_power < 0:
        raise ValueError("noise power must be nonnegative")
    vec = _profile_vector(p, steer.n_z)
    sigma = (steer.a * vec) @ steer.a.conj().T
    sigma = 0.5 * (sigma + sigma.conj().T)
    sigma[np.diag_indices_from(sigma)] = sigma.diagonal().real + noise_power
    return sigma


def draw_speckle_stack(steer, p, noise_power, looks, rng):
    """Simulate `looks` independent speckled acquisitions; returns (looks, N).

    Per look: y = A diag(sqrt(p)) w + eps, with w and eps circular complex
    Gaussian (unit and noise_power variance per entry). Looks are generated
    in fixed-size blocks so memory stays bounded for large stacks without
    changing the drawn values.
    """
    if looks < 1:
        raise ValueError(f"need at least one look, got {looks}")
    if noise_power < 0:
        raise ValueError("noise power must be nonnegative")
    vec = _profile_vector(p, steer.n_z)
    amp = np.sqrt(vec)
    mix = (steer.a * amp).T  # (N_z, N): y_block = w_block @ mix
    n = steer.n_tracks
    out = np.empty((looks, n), dtype=np.complex128)
    done = 0
    while done < looks:
        m = min(_SPECKLE_CHUNK, looks - done)
        w = (rng.standard_normal((m, steer.n_z)) + 1j * rng.standard_normal((m, steer.n_z)))
        y = (w @ mix) * np.sqrt(0.5)
        if noise_power > 0:
            eps = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
            y += np.sqrt(0.5 * noise_power) * eps
        out[done:done + m] = y
        done += m
    return out


@dataclass(frozen=True, eq=False)
class SampleCovariance:
    """Multi-look sample covariance; Hermitian PSD with real nonnegative diagonal."""

    sigma: np.ndarray
    looks: int

    def __post_init__(self):
        sigma = np.ascontiguousarray(self.sigma, dtype=np.complex128)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("covariance must be square")
        if self.looks < 1:
            raise ValueError("look count must be positive")
        scale = max(np.abs(sigma).max(), np.finfo(np.float64).tiny)
        if np.abs(sigma - sigma.conj().T).max() > 1e-12 * scale:
            raise ValueError("covariance must be Hermitian to machine precision")
        diag = sigma.diagonal().real
        if np.any(diag < -1e-12 * scale):
            raise ValueError("covariance diagonal must be nonnegative")
        if np.linalg.eigvalsh(sigma).min() < -1e-10 * scale:
            raise ValueError("covariance must be positive semidefinite")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_tracks(self):
        return self.sigma.shape[0]

    @property
    def trace_scale(self):
        """Mean per-channel power Tr(Sigma)/N; used to undo correlation scaling."""
        return float(self.sigma.diagonal().real.sum() / self.sigma.shape[0])


def sample_covariance(stack):
    """(1/L) sum_l y_l y_l^H from a (looks, N) stack, symmetrized exactly."""
    y = np.asarray(stack, dtype=np.complex128)
    if y.ndim != 2 or y.shape[0] < 1:
        raise ValueError("need a nonempty (looks, N) stack")
    looks = y.shape[0]
    sigma = (y.T @ y.conj()) / looks
    sigma = 0.5 * (sigma + sigma.conj().T)
    sigma[np.diag_indices_from(sigma)] = sigma.diagonal().real
    return SampleCovariance(sigma=sigma, looks=looks)


@dataclass(frozen=True, eq=False)
class SampleCorrelation:
    """Diagonal-normalized covariance: unit diagonal, off-diagonal moduli <= 1."""

    r: np.ndarray
    looks: int

    def __post_init__(self):
        r = np.ascontiguousarray(self.r, dtype=np.complex128)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("correlation must be square")
        if np.abs(r - r.conj().T).max() > 1e-12:
            raise ValueError("correlation must be Hermitian")
        if np.abs(r.diagonal() - 1.0).max() > 1e-12:
            raise ValueError("correlation diagonal must be 1")
        if np.abs(r).max() > 1.0 + 1e-12:
            raise ValueError("correlation moduli must not exceed 1")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def n_tracks(self):
        return self.r.shape[0]


def correlation_normalize(cov):
    """R = diag(q) Sigma diag(q) with q_i = 1/sqrt(Sigma_ii); scale invariant."""
    sigma = cov.sigma if isinstance(cov, SampleCovariance) else np.asarray(cov)
    looks = cov.looks if isinstance(cov, SampleCovariance) else 1
    diag = sigma.diagonal().real
    if np.any(diag <= 0):
        raise ValueError("zero-power channel; correlation undefined")
    q = 1.0 / np.sqrt(diag)
    r = sigma * np.outer(q, q)
    r = 0.5 * (r + r.conj().T)
    r[np.diag_indices_from(r)] = 1.0
    return SampleCorrelation(r=r, looks=looks)


# ---------------------------------------------------------------------------
# Training datasets
# ---------------------------------------------------------------------------

def split_indices(count, split, seed):
    """Deterministic shuffled train/validation index split (both sorted)."""
    if count < 2:
        raise ValueError("need at least 2 examples to split")
    if not 0.0 < split < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {split}")
    n_train = int(round(count * split))
    n_train = min(max(n_train, 1), count - 1)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    perm = rng.permutation(count)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass(eq=False)
class Dataset:
    """Paired (beamforming input, true profile) examples plus rescale metadata.

    `trace_scales` holds Tr(sample covariance)/N per example: inputs are
    computed from the unit-diagonal correlation, and multiplying a network
    output by this scale returns it to absolute power units. The train/val
    index arrays are a convenience view from build time; training re-derives
    its split from the training seed, so they are not persisted in files.
    """

    inputs: np.ndarray
    targets: np.ndarray
    trace_scales: np.ndarray
    geometry_indices: np.ndarray
    looks: int
    seed: int = -1
    train_indices: np.ndarray | None = None
    val_indices: np.ndarray | None = None

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape != self.targets.shape:
            raise ValueError("inputs and targets must be matching (count, N_z) arrays")
        count = self.inputs.shape[0]
        if self.trace_scales.shape != (count,) or self.geometry_indices.shape != (count,):
            raise ValueError("per-example metadata length mismatch")

    @property
    def count(self):
        return self.inputs.shape[0]

    @property
    def n_z(self):
        return self.inputs.shape[1]

    def save(self, path, n_tracks=0):
        """Binary container: magic, 5 little-endian u32, then per-example
        float64 records (input, target, trace scale, geometry index)."""
        count, n_z = self.inputs.shape
        rec = np.empty((count, 2 * n_z + 2), dtype="<f8")
        rec[:, :n_z] = self.inputs
        rec[:, n_z:2 * n_z] = self.targets
        rec[:, 2 * n_z] = self.trace_scales
        rec[:, 2 * n_z + 1] = self.geometry_indices
        header = _DATASET_MAGIC + struct.pack(
            "<5I", _DATASET_VERSION, count, int(n_tracks), n_z, self.looks)
        Path(path).write_bytes(header + rec.tobytes())

    @classmethod
    def load(cls, path):
        blob = Path(path).read_bytes()
        if blob[:8] != _DATASET_MAGIC:
            raise ValueError(f"{path}: not a dataset file (bad magic)")
        version, count, _n_tracks, n_z, looks = struct.unpack_from("<5I", blob, 8)
        if version != _DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        body = np.frombuffer(blob, dtype="<f8", offset=28)
        width = 2 * n_z + 2
        if body.size != count * width:
            raise ValueError(f"{path}: truncated dataset payload")
        rec = body.reshape(count, width)
        return cls(inputs=rec[:, :n_z].copy(),
                   targets=rec[:, n_z:2 * n_z].copy(),
                   trace_scales=rec[:, 2 * n_z].copy(),
                   geometry_indices=rec[:, 2 * n_z + 1].astype(np.int64),
                   looks=int(looks))

    def to_csv(self, path):
        """Long-format dump for external inspection/plotting."""
        with open(path, "w") as fh:
            fh.write("example,bin,input,target,trace_scale,geometry_index\n")
            for i in range(self.count):
                trace = self.trace_scales[i]
                geom = int(self.geometry_indices[i])
                for j in range(self.n_z):
                    fh.write(f"{i},{j},{self.inputs[i, j]:.17g},"
                             f"{self.targets[i, j]:.17g},{trace:.17g},{geom}\n")


def _example_seed(seed, index):
    return np.random.SeedSequence(entropy=seed, spawn_key=(0, index))


def _simulate_block(indices, seed, prior, steers, grid, looks):
    from .spectral import beamforming  # deferred: spectral imports nothing from here

    n_z = grid.n_z
    inputs = np.empty((len(indices), n_z))
    targets = np.empty((len(indices), n_z))
    traces = np.empty(len(indices))
    geoms = np.empty(len(indices), dtype=np.int64)
    for row, i in enumerate(indices):
        rng = np.random.default_rng(_example_seed(seed, i))
        gi = int(rng.integers(len(steers)))
        params = sample_profile_params(prior, rng)
        profile = render_profile(params, grid)
        steer = steers[gi]
        stack = draw_speckle_stack(steer, profile, prior.noise_power, looks, rng)
        cov = sample_covariance(stack)
        corr = correlation_normalize(cov)
        inputs[row] = beamforming(corr, steer).profile
        targets[row] = profile.p
        traces[row] = cov.trace_scale
        geoms[row] = gi
    return inputs, targets, traces, geoms


def build_dataset(count, prior, geometries, grid, looks=100, seed=0, split=0.75,
                  workers=1):
    """Simulate a supervised dataset of speckled beamforming inputs.

    Per example, with an RNG stream derived from (seed, example index):
    pick a geometry uniformly at random, draw mixture parameters, render the
    normalized profile, simulate `looks` speckled acquisitions, and store the
    beamforming estimate of the sample correlation as the input. Per-example
    streams make the result independent of `workers` (bit-identical).
    """
    if count < 2:
        raise ValueError("need at least 2 examples")
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    if not geometries:
        raise ValueError("need at least one geometry")
    steers = [steering_matrix(g, grid) for g in geometries]
    indices = np.arange(count)
    sim = partial(_simulate_block, seed=seed, prior=prior, steers=steers,
                  grid=grid, looks=looks)
    if workers > 1:
        blocks = np.array_split(indices, min(workers * 4, count))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(sim, blocks))
    else:
        parts = [sim(indices)]
    inputs = np.concatenate([p[0] for p in parts])
    targets = np.concatenate([p[1] for p in parts])
    traces = np.concatenate([p[2] for p in parts])
    geoms = np.concatenate([p[3] for p in parts])
    train_idx, val_idx = split_indices(count, split, seed)
    return Dataset(inputs=inputs, targets=targets, trace_scales=traces,
                   geometry_indices=geoms, looks=looks, seed=seed,
                   train_indices=train_idx, val_indices=val_idx)
