"""Evaluation harness: synthetic scenes, tomograms, sweeps and timings.

A scene is a row of azimuth columns with smoothly varying forest parameters
and a per-column acquisition geometry whose resolution degrades from near to
far range. Every inversion method turns the per-column covariances into a
(columns x heights) tomogram; the harness also provides the latent-size sweep,
a single-thread timing benchmark, and the plain-text exports (CSV, PGM) that
external plotting works from.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .csinvert import CsConfig, fista_solve, wavelet_basis
from .geometry import steering_matrix, synthesize_geometry
from .neuralnet import TrainingConfig, default_layer_sizes, predict_profile, train
from .simulator import (GaussianMixtureParams, SampleCovariance, boreal_prior,
                        correlation_normalize, draw_speckle_stack,
                        render_profile, sample_covariance, true_covariance)
from .spectral import beamforming, capon

METHODS = ("beamforming", "capon", "cs", "network")


@dataclass(frozen=True, eq=False)
class Tomogram:
    """Stack of nonnegative power profiles, one per azimuth column."""

    values: np.ndarray
    method: str
    grid: object

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.grid.n_z:
            raise ValueError("tomogram must be (columns, grid size)")
        if np.any(values < 0):
            raise ValueError("tomogram powers must be nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_columns(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class SceneDescription:
    """Per-column mixture parameters plus acquisition settings."""

    params: tuple
    resolutions: np.ndarray
    looks: int
    n_tracks: int
    noise_power: float

    def __post_init__(self):
        if len(self.params) != len(self.resolutions):
            raise ValueError("need one resolution per column")
        if self.looks < 1:
            raise ValueError("look count must be positive")

    @property
    def n_columns(self):
        return len(self.params)


def make_scene(n_columns=200, looks=64, resolution_near=6.0, resolution_far=25.0,
               prior=None, n_tracks=6, variation=0.8):
    """Smooth synthetic transect inside a prior's parameter ranges.

    Each mixture parameter follows a sinusoid around its range midpoint with
    relative swing `variation` (0 freezes everything at mid-range); canopy
    centers are kept above ground centers when ranges overlap. Column
    resolution degrades linearly near -> far, mimicking range-dependent
    baseline geometry.
    """
    if prior is None:
        prior = boreal_prior()
    if n_columns < 1:
        raise ValueError("need at least one column")
    if not 0.0 <= variation <= 1.0:
        raise ValueError("variation must lie in [0, 1]")
    f = np.linspace(0.0, 1.0, n_columns) if n_columns > 1 else np.zeros(1)

    def sweep(lo_hi, cycles, phase):
        lo, hi = lo_hi
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        return mid + variation * half * np.sin(2.0 * np.pi * cycles * f + phase)

    amp_g = sweep(prior.amp_ground, 1.0, 0.0)
    amp_c = sweep(prior.amp_canopy, 2.0, 1.0)
    mu_g = sweep(prior.mu_ground, 1.0, 2.0)
    mu_c = sweep(prior.mu_canopy, 0.5, 4.0)
    sig_g = sweep(prior.sigma_ground, 1.5, 5.0)
    sig_c = sweep(prior.sigma_canopy, 0.75, 3.0)
    mu_c = np.maximum(mu_c, mu_g + 0.5)
    params = tuple(GaussianMixtureParams(amp_g[i], amp_c[i], mu_g[i], mu_c[i],
                                         sig_g[i], sig_c[i])
                   for i in range(n_columns))
    return SceneDescription(params=params,
                            resolutions=np.linspace(resolution_near, resolution_far,
                                                    n_columns),
                            looks=looks, n_tracks=n_tracks,
                            noise_power=prior.noise_power)


def scene_geometries(description, perturbation=0.0, seed=0):
    """One geometry per column, following the scene's resolution ramp."""
    return [synthesize_geometry(description.n_tracks, float(res), perturbation,
                                seed + i)
            for i, res in enumerate(description.resolutions)]


@dataclass(eq=False)
class SceneStack:
    """Simulated per-column covariances plus everything needed to invert them."""

    covariances: np.ndarray    # (columns, N, N) sample covariances
    correlations: np.ndarray   # (columns, N, N) unit-diagonal versions
    trace_scales: np.ndarray   # (columns,) Tr(cov)/N
    steering: list             # per-column SteeringMatrix
    geometries: list
    truth: Tomogram
    grid: object
    looks: int

    @property
    def n_columns(self):
        return self.covariances.shape[0]


def simulate_scene(description, geometries, grid, seed=0, exact_covariance=False):
    """Speckled sample covariances for every scene column.

    Column i draws from an RNG substream keyed by (seed, column), so results
    do not depend on evaluation order. With exact_covariance=True the model
    covariance A diag(p) A^H + noise I is stored instead of a speckled
    estimate (useful for speckle-free oracles).
    """
    n_col = description.n_columns
    if len(geometries) != n_col:
        raise ValueError("need one geometry per scene column")
    n = description.n_tracks
    covariances = np.empty((n_col, n, n), dtype=np.complex128)
    correlations = np.empty_like(covariances)
    traces = np.empty(n_col)
    truth = np.empty((n_col, grid.n_z))
    steering = [steering_matrix(g, grid) for g in geometries]
    for i in range(n_col):
        profile = render_profile(description.params[i], grid)
        truth[i] = profile.p
        if exact_covariance:
            sigma = true_covariance(steering[i], profile, description.noise_power)
            cov = SampleCovariance(sigma=sigma, looks=description.looks)
        else:
            rng = np.random.default_rng(np.random.SeedSequence(
                entropy=seed, spawn_key=(4, i)))
            stack = draw_speckle_stack(steering[i], profile,
                                       description.noise_power,
                                       description.looks, rng)
            cov = sample_covariance(stack)
        covariances[i] = cov.sigma
        correlations[i] = correlation_normalize(cov).r
        traces[i] = cov.trace_scale
    return SceneStack(covariances=covariances, correlations=correlations,
                      trace_scales=traces, steering=steering,
                      geometries=list(geometries),
                      truth=Tomogram(values=truth, method="truth", grid=grid),
                      grid=grid, looks=description.looks)


def _invert_columns(indices, method, stack, cs_config, capon_loading):
    out = np.empty((len(indices), stack.grid.n_z))
    for row, i in enumerate(indices):
        steer = stack.steering[i]
        if method == "beamforming":
            out[row] = (beamforming(stack.correlations[i], steer).profile
                        * stack.trace_scales[i])
        elif method == "capon":
            out[row] = (capon(stack.correlations[i], steer,
                              loading=capon_loading).profile
                        * stack.trace_scales[i])
        else:  # cs
            out[row] = fista_solve(stack.covariances[i], steer,
                                   _basis_for(stack.grid.n_z),
                                   cs_config).profile
    return out


_basis_cache = {}


def _basis_for(n_z):
    # tiny cache: the basis only depends on the grid size
    basis = _basis_cache.get(n_z)
    if basis is None:
        basis = _basis_cache[n_z] = wavelet_basis(n_z)
    return basis


def reconstruct_tomogram(stack, method, weights=None, cs_config=None,
                         capon_loading=1e-2, workers=1):
    """Invert every scene column with one method.

    Beamforming and Capon run on the unit-diagonal correlations (their
    filter-native scale) and are rescaled by the mean channel power, matching
    the network's input/output convention; the CS solver consumes the sample
    covariances directly. A non-serial `workers` only changes wall time,
    never the values, thanks to column independence.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; pick one of {METHODS}")
    if method == "network":
        if weights is None:
            raise ValueError("network reconstruction needs trained weights")
        inputs = np.empty((stack.n_columns, stack.grid.n_z))
        for i in range(stack.n_columns):
            inputs[i] = beamforming(stack.correlations[i], stack.steering[i]).profile
        values = predict_profile(weights, inputs, stack.trace_scales)
        return Tomogram(values=values, method=method, grid=stack.grid)
    if cs_config is None:
        cs_config = CsConfig()
    indices = np.arange(stack.n_columns)
    invert = partial(_invert_columns, method=method, stack=stack,
                     cs_config=cs_config, capon_loading=capon_loading)
    if workers > 1:
        blocks = np.array_split(indices, min(workers * 4, stack.n_columns))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(invert, blocks))
        values = np.concatenate(parts)
    else:
        values = invert(indices)
    return Tomogram(values=values, method=method, grid=stack.grid)


def normalized_baseline_error(estimate, reference):
    """Squared error after the best single-scale fit of estimate to reference.

    Returns ||s * estimate - reference||^2 with s = <estimate, reference> /
    <estimate, estimate>: the residual of the reference outside the
    estimate's direction. Zero when the shapes match up to positive scale.
    """
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise ValueError("need two equal-length vectors")
    denom = float(est @ est)
    if denom <= 0:
        raise ValueError("estimate has no power; cannot scale-match")
    s = float(est @ ref) / denom
    resid = s * est - ref
    return float(resid @ resid)


# ---------------------------------------------------------------------------
# Latent-size sweep
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SweepRow:
    latent: int
    val_mses: np.ndarray

    @property
    def mean(self):
        return float(self.val_mses.mean())

    @property
    def std(self):
        if self.val_mses.size < 2:
            return 0.0
        return float(self.val_mses.std(ddof=1))


def latent_sweep(dataset, sizes=(3, 4, 5, 6, 8, 10, 15, 20), repeats=5,
                 config=None):
    """Final validation MSE per latent size, averaged over training repeats.

    Repeat r reuses the base training configuration with seed = base seed + r,
    so repeats differ in initialization, shuffling and split while sizes see
    identical conditions. Single-repeat sweeps get a zero std column (with a
    warning) since no spread is measurable.
    """
    if repeats < 1:
        raise ValueError("need at least one repeat")
    if repeats == 1:
        warnings.warn("latent sweep with a single repeat: std column will be 0",
                      stacklevel=2)
    if config is None:
        config = TrainingConfig()
    rows = []
    for size in sizes:
        layer_sizes = default_layer_sizes(n_z=dataset.n_z, latent=int(size))
        mses = np.empty(repeats)
        for r in range(repeats):
            cfg = replace(config, seed=config.seed + r)
            _, history = train(dataset, cfg, layer_sizes=layer_sizes)
            mses[r] = history.final_val_mse
        rows.append(SweepRow(latent=int(size), val_mses=mses))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("latent,mean_val_mse,std_val_mse,repeats\n")
        for row in rows:
            fh.write(f"{row.latent},{row.mean:.17g},{row.std:.17g},"
                     f"{row.val_mses.size}\n")


# ---------------------------------------------------------------------------
# Timing benchmark
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TimingRow:
    method: str
    median_seconds: float
    per_profile_us: float
    speedup_vs_cs: float = float("nan")


def timing_benchmark(stack, methods=METHODS, repetitions=3, weights=None,
                     cs_config=None, train_timer=None):
    """Median single-thread wall time per method over identical reconstructions.

    BLAS pools are pinned to one thread and every method gets one untimed
    warmup pass (which also absorbs JIT compilation), so the medians compare
    algorithmic cost, not thread counts or compile time. The network row
    includes computing its beamforming input. Training cost, when a
    `train_timer` callable is supplied, is measured once and reported
    separately since it is a one-off cost, not per-scene.
    """
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    rows = []
    with threadpool_limits(limits=1):
        for method in methods:
            run = partial(reconstruct_tomogram, stack, method, weights=weights,
                          cs_config=cs_config, workers=1)
            run()  # warmup
            times = []
            for _ in range(repetitions):
                t0 = time.perf_counter()
                run()
                times.append(time.perf_counter() - t0)
            med = float(np.median(times))
            rows.append(TimingRow(method=method, median_seconds=med,
                                  per_profile_us=med / stack.n_columns * 1e6))
        if train_timer is not None:
            t0 = time.perf_counter()
            train_timer()
            rows.append(TimingRow(method="training",
                                  median_seconds=time.perf_counter() - t0,
                                  per_profile_us=float("nan")))
    cs_time = next((r.median_seconds for r in rows if r.method == "cs"), None)
    if cs_time is not None:
        for row in rows:
            if row.method != "training":
                row.speedup_vs_cs = cs_time / row.median_seconds
    return rows


def write_timing_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("method,median_seconds,per_profile_us,speedup_vs_cs\n")
        for row in rows:
            fh.write(f"{row.method},{row.median_seconds:.6g},"
                     f"{row.per_profile_us:.6g},{row.speedup_vs_cs:.6g}\n")


# ---------------------------------------------------------------------------
# Profile shape metrics
# ---------------------------------------------------------------------------

def zone_peak(profile, grid, z_lo=-np.inf, z_hi=np.inf):
    """Index (into the full grid) of the largest value inside [z_lo, z_hi]."""
    idx = np.flatnonzero((grid.z >= z_lo) & (grid.z <= z_hi))
    if idx.size == 0:
        raise ValueError("height zone contains no grid points")
    return int(idx[np.argmax(profile[idx])])


def half_power_width(profile, grid, peak_index):
    """Meters spanned by the contiguous bins >= half the peak value."""
    peak = profile[peak_index]
    if peak <= 0:
        return float("nan")
    half = 0.5 * peak
    lo = peak_index
    while lo > 0 and profile[lo - 1] >= half:
        lo -= 1
    hi = peak_index
    while hi < profile.size - 1 and profile[hi + 1] >= half:
        hi += 1
    return (hi - lo + 1) * grid.spacing


def canopy_metrics(tomogram, z_split=5.5):
    """Per-column canopy peak index and half-power width (meters).

    The canopy zone is all heights >= z_split, which separates it from the
    ground response for the shipped forest presets.
    """
    peaks = np.empty(tomogram.n_columns, dtype=np.int64)
    widths = np.empty(tomogram.n_columns)
    for i in range(tomogram.n_columns):
        peaks[i] = zone_peak(tomogram.values[i], tomogram.grid, z_lo=z_split)
        widths[i] = half_power_width(tomogram.values[i], tomogram.grid, peaks[i])
    return peaks, widths


# ---------------------------------------------------------------------------
# Speckle-realization study and text exports
# ---------------------------------------------------------------------------

def realization_study(params, grid, geometry, noise_power=0.1, looks=64,
                      realizations=20, seed=0):
    """Beamforming profiles of repeated speckled draws of one forest column.

    Returns a (realizations, n_z) array (absolute power scale); dumping it
    with write_profiles_csv gives the per-realization spread plots their data.
    """
    if realizations < 1:
        raise ValueError("need at least one realization")
    steer = steering_matrix(geometry, grid)
    profile = render_profile(params, grid)
    out = np.empty((realizations, grid.n_z))
    for r in range(realizations):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=seed, spawn_key=(5, r)))
        stack = draw_speckle_stack(steer, profile, noise_power, looks, rng)
        cov = sample_covariance(stack)
        corr = correlation_normalize(cov)
        out[r] = beamforming(corr, steer).profile * cov.trace_scale
    return out


def write_profiles_csv(profiles, grid, path):
    profiles = np.atleast_2d(np.asarray(profiles, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write("realization,bin,height_m,power\n")
        for r in range(profiles.shape[0]):
            for j in range(profiles.shape[1]):
                fh.write(f"{r},{j},{grid.z[j]:.6g},{profiles[r, j]:.17g}\n")


def tomogram_to_csv(tomogram, path):
    with open(path, "w") as fh:
        fh.write("column,bin,height_m,power\n")
        for i in range(tomogram.n_columns):
            for j in range(tomogram.grid.n_z):
                fh.write(f"{i},{j},{tomogram.grid.z[j]:.6g},"
                         f"{tomogram.values[i, j]:.17g}\n")


def write_pgm(tomogram, path):
    """Binary 8-bit PGM preview: rows are heights (top = highest), columns
    azimuth, min-max normalized; the sidecar <path>.txt records the mapping."""
    img = tomogram.values.T[::-1]
    vmin, vmax = float(img.min()), float(img.max())
    span = vmax - vmin if vmax > vmin else 1.0
    pix = np.round(255.0 * (img - vmin) / span).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + pix.tobytes())
    Path(str(path) + ".txt").write_text(
        f"method = {tomogram.method}\n"
        f"columns = {tomogram.n_columns}\n"
        f"heights = {tomogram.grid.n_z}\n"
        f"z_min_m = {tomogram.grid.z_min:.6g}\n"
        f"z_max_m = {tomogram.grid.z_max:.6g}\n"
        f"vmin = {vmin:.17g}\n"
        f"vmax = {vmax:.17g}\n"
        "orientation = top row is z_max, bottom row is z_min\n")
