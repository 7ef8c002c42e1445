"""INI run configuration: strict schema, typed values, early validation.

Every tunable of the pipeline lives in one file with sections [geometry],
[grid], [prior], [simulation], [network], [training], [cs], [scene], [sweep],
[benchmark] and [output]. Unknown sections or keys are hard errors that name
the valid alternatives; numeric fields are range-checked at load time by
constructing the downstream objects once, so a bad value fails before any
compute starts.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path
from types import SimpleNamespace

from .csinvert import CsConfig, wavelet_basis
from .errors import ConfigError
from .geometry import make_height_grid, resolution_ramp
from .neuralnet import TrainingConfig, default_layer_sizes, init_network
from .simulator import ProfilePrior, boreal_prior, tropical_prior

_RANGE_KEYS = ("amp_ground", "amp_canopy", "mu_ground", "mu_canopy",
               "sigma_ground", "sigma_canopy")
_PRESETS = ("boreal", "tropical", "custom")


def _pair(text):
    parts = [float(tok) for tok in text.split(",")]
    if len(parts) != 2:
        raise ValueError("expected 'low, high'")
    return tuple(parts)


def _ints(text):
    parts = tuple(int(tok) for tok in text.replace(",", " ").split())
    if not parts:
        raise ValueError("expected a list of integers")
    return parts


def _bool(text):
    states = configparser.ConfigParser.BOOLEAN_STATES
    key = text.strip().lower()
    if key not in states:
        raise ValueError(f"not a boolean: {text!r}")
    return states[key]


def _lam(text):
    if text.strip().lower() == "auto":
        return None
    value = float(text)
    if value < 0:
        raise ValueError("lam must be nonnegative or 'auto'")
    return value


# section -> key -> (converter, default)
_SCHEMA = {
    "geometry": {"n_tracks": (int, 6), "bank_size": (int, 30),
                 "resolution_near": (float, 6.0), "resolution_far": (float, 25.0),
                 "perturbation": (float, 0.0), "seed": (int, 1)},
    "grid": {"z_min": (float, -20.0), "z_max": (float, 40.0), "n_z": (int, 512)},
    "prior": {"preset": (str, "boreal"), "noise_power": (float, 0.1),
              **{key: (_pair, None) for key in _RANGE_KEYS}},
    "simulation": {"count": (int, 10000), "looks": (int, 100), "seed": (int, 42),
                   "workers": (int, 1)},
    "network": {"latent": (int, 5), "leaky_slope": (float, 0.01),
                "hidden": (_ints, None)},
    "training": {"epochs": (int, 200), "batch_size": (int, 32),
                 "learning_rate": (float, 1e-3), "split": (float, 0.75),
                 "seed": (int, 7)},
    "cs": {"lam": (_lam, None), "max_iter": (int, 500), "rel_tol": (float, 1e-6),
           "nonneg": (_bool, True), "wavelet": (str, "haar")},
    "scene": {"columns": (int, 200), "looks": (int, 64),
              "resolution_near": (float, 6.0), "resolution_far": (float, 25.0),
              "variation": (float, 0.8), "perturbation": (float, 0.0),
              "seed": (int, 99), "capon_loading": (float, 1e-2)},
    "sweep": {"sizes": (_ints, (3, 4, 5, 6, 8, 10, 15, 20)), "repeats": (int, 5)},
    "benchmark": {"repetitions": (int, 3)},
    "output": {"dir": (str, "runs/out")},
}


@dataclasses.dataclass(eq=False)
class RunConfig:
    """Parsed configuration; one namespace attribute per INI section."""

    geometry: SimpleNamespace
    grid: SimpleNamespace
    prior: SimpleNamespace
    simulation: SimpleNamespace
    network: SimpleNamespace
    training: SimpleNamespace
    cs: SimpleNamespace
    scene: SimpleNamespace
    sweep: SimpleNamespace
    benchmark: SimpleNamespace
    output: SimpleNamespace

    # -- builders for the downstream objects ------------------------------

    def height_grid(self):
        return make_height_grid(self.grid.z_min, self.grid.z_max, self.grid.n_z)

    def profile_prior(self):
        if self.prior.preset == "boreal":
            prior = boreal_prior(self.prior.noise_power)
        elif self.prior.preset == "tropical":
            prior = tropical_prior(self.prior.noise_power)
        else:
            prior = ProfilePrior(noise_power=self.prior.noise_power)
        overrides = {key: getattr(self.prior, key) for key in _RANGE_KEYS
                     if getattr(self.prior, key) is not None}
        if overrides:
            prior = dataclasses.replace(prior, **overrides)
        return prior

    def geometry_bank(self):
        g = self.geometry
        return resolution_ramp(g.bank_size, g.resolution_near, g.resolution_far,
                               g.n_tracks, g.perturbation, g.seed)

    def training_config(self):
        t = self.training
        return TrainingConfig(epochs=t.epochs, batch_size=t.batch_size,
                              learning_rate=t.learning_rate, split=t.split,
                              seed=t.seed)

    def cs_config(self):
        return CsConfig(lam=self.cs.lam, max_iter=self.cs.max_iter,
                        rel_tol=self.cs.rel_tol,
                        nonneg_projection=self.cs.nonneg)

    def layer_sizes(self):
        """Full 9-width chain from the [network] section."""
        n_z, latent = self.grid.n_z, self.network.latent
        if self.network.hidden is None:
            return default_layer_sizes(n_z=n_z, latent=latent)
        hidden = tuple(self.network.hidden)
        if len(hidden) != 3:
            raise ConfigError("[network] hidden must list exactly 3 widths")
        return (n_z,) + hidden + (latent,) + hidden[::-1] + (n_z,)

    def output_dir(self):
        return Path(self.output.dir)

    # -- validation --------------------------------------------------------

    def validate(self):
        """Build every downstream object once so bad values fail at load time."""
        try:
            self.height_grid()
            self.profile_prior()
            self.geometry_bank()
            self.training_config()
            self.cs_config()
            init_network(self.layer_sizes(), seed=0,
                         leaky_slope=self.network.leaky_slope)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.prior.preset not in _PRESETS:
            raise ConfigError(f"[prior] preset must be one of {_PRESETS}, "
                              f"got {self.prior.preset!r}")
        if self.cs.wavelet.lower() != "haar":
            raise ConfigError(f"[cs] wavelet: unsupported family "
                              f"{self.cs.wavelet!r} (only 'haar')")
        try:
            wavelet_basis(self.grid.n_z, self.cs.wavelet)
        except ValueError as exc:
            raise ConfigError(f"[grid] n_z: {exc}") from None
        checks = [
            (self.simulation.count >= 2, "[simulation] count must be >= 2"),
            (self.simulation.looks >= 1, "[simulation] looks must be >= 1"),
            (self.simulation.seed >= 0, "[simulation] seed must be >= 0"),
            (self.simulation.workers >= 1, "[simulation] workers must be >= 1"),
            (self.scene.columns >= 1, "[scene] columns must be >= 1"),
            (self.scene.looks >= 1, "[scene] looks must be >= 1"),
            (self.scene.seed >= 0, "[scene] seed must be >= 0"),
            (self.scene.capon_loading >= 0,
             "[scene] capon_loading must be >= 0"),
            (0.0 <= self.scene.variation <= 1.0,
             "[scene] variation must lie in [0, 1]"),
            (len(self.sweep.sizes) >= 1 and min(self.sweep.sizes) >= 1,
             "[sweep] sizes must be positive integers"),
            (self.sweep.repeats >= 1, "[sweep] repeats must be >= 1"),
            (self.benchmark.repetitions >= 1,
             "[benchmark] repetitions must be >= 1"),
            (bool(self.output.dir), "[output] dir must be nonempty"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self


def default_config():
    """RunConfig carrying every default value (equivalent to an empty file)."""
    sections = {name: SimpleNamespace(**{key: default for key, (_, default)
                                         in keys.items()})
                for name, keys in _SCHEMA.items()}
    return RunConfig(**sections).validate()


def load_config(path=None):
    """Parse and validate an INI file; None loads pure defaults."""
    if path is None:
        return default_config()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed INI: {exc}") from None
    for name in parser.sections():
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section [{name}]; valid sections: "
                              f"{', '.join(sorted(_SCHEMA))}")
        for key in parser[name]:
            if key not in _SCHEMA[name]:
                raise ConfigError(
                    f"unknown key {key!r} in [{name}]; valid keys: "
                    f"{', '.join(sorted(_SCHEMA[name]))}")
    sections = {}
    for name, schema in _SCHEMA.items():
        values = {}
        for key, (conv, default) in schema.items():
            if parser.has_option(name, key):
                raw = parser.get(name, key)
                try:
                    values[key] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(
                        f"[{name}] {key} = {raw!r}: {exc}") from None
            else:
                values[key] = default
        sections[name] = SimpleNamespace(**values)
    return RunConfig(**sections).validate()
