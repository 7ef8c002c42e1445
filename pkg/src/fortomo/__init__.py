"""Forest SAR tomography sandbox.

Simulates multi-baseline speckled stacks over two-layer forest profiles and
inverts them four ways: beamforming, diagonally loaded Capon, wavelet-domain
compressed sensing (monotone FISTA), and a small from-scratch encoder-decoder
network trained to undo the beamforming blur. The evaluation harness builds
synthetic tomograms, sweeps the latent size, and times all methods on one
thread.
"""

from .csinvert import CsConfig, FistaResult, fista_solve, wavelet_basis
from .errors import ConfigError, NumericalError
from .geometry import (AcquisitionGeometry, HeightGrid, make_height_grid,
                       resolution_ramp, steering_matrix, steering_vector,
                       synthesize_geometry)
from .neuralnet import (NetworkWeights, TrainingConfig, init_network,
                        load_weights, predict_profile, save_weights, train)
from .simulator import (Dataset, GaussianMixtureParams, ProfilePrior,
                        ReflectivityProfile, boreal_prior, build_dataset,
                        correlation_normalize, draw_speckle_stack,
                        render_profile, sample_covariance,
                        sample_profile_params, tropical_prior, true_covariance)
from .spectral import beamforming, capon

__version__ = "0.1.0"
