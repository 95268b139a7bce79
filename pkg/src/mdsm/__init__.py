"""Energy-based modeling with multiscale denoising score matching.

Train a scalar energy network so that a single denoising step
x - sigma0**2 * grad E(x) inverts Gaussian corruption across a whole
range of noise scales, then sample it with annealed Langevin dynamics
and audit it with AIS likelihood bounds and closed-form mixture oracles.
"""

from .autodiff import Tape, Tensor, finite_diff_check, grad, no_record, tensor
from .energy import EnergyNet, NetConfig, ScaledEnergy
from .errors import (CapacityError, CompatibilityError, ConfigError,
                     CorruptionError, DimensionError, DomainError,
                     FormatError, GraphError, NumericError)
from .noise import NoiseSchedule, make_schedule, perturb_batch, weight
from .training import (AdamState, TrainConfig, adam_step, dsm_single_loss,
                       mdsm_loss, mdsm_loss_from_pairs, mdsm_star_loss, train)
from .sampler import (AnnealSchedule, Trace, anneal_for_schedule,
                      default_anneal, denoise_jump, inpaint, langevin_step,
                      sample)
from .likelihood import (AisConfig, AisResult, ais_logz,
                         beta_schedule_exponential, bits_per_dim, hmc_step,
                         leapfrog, reverse_ais_logz)
from .analysis import (GmmEnergy, GmmOracle, ModeCoverage, ShellSpec,
                       concentration_stats, denoising_residual_score,
                       mode_coverage, mode_threshold, nn_check,
                       ood_energy_score, oracle_smoothed_score, ring_gmm,
                       shell_score_error)
from .config import RunConfig, config_from_dict, dump_config, load_config
from .io import (Checkpoint, load_checkpoint, load_csv, load_dataset,
                 load_idx_images, restore_net, save_checkpoint)
from .estimator import MultiscaleEnergyModel

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "tensor", "grad", "no_record", "finite_diff_check",
    "EnergyNet", "NetConfig", "ScaledEnergy",
    "NoiseSchedule", "make_schedule", "perturb_batch", "weight",
    "TrainConfig", "AdamState", "adam_step", "train",
    "mdsm_loss", "mdsm_loss_from_pairs", "dsm_single_loss", "mdsm_star_loss",
    "AnnealSchedule", "Trace", "default_anneal", "anneal_for_schedule",
    "langevin_step", "denoise_jump", "sample", "inpaint",
    "AisConfig", "AisResult", "ais_logz", "reverse_ais_logz",
    "beta_schedule_exponential", "bits_per_dim", "hmc_step", "leapfrog",
    "GmmOracle", "GmmEnergy", "ring_gmm", "oracle_smoothed_score",
    "ShellSpec", "concentration_stats", "shell_score_error",
    "ModeCoverage", "mode_coverage", "mode_threshold", "nn_check",
    "ood_energy_score", "denoising_residual_score",
    "RunConfig", "load_config", "config_from_dict", "dump_config",
    "Checkpoint", "save_checkpoint", "load_checkpoint", "restore_net",
    "load_dataset", "load_csv", "load_idx_images",
    "MultiscaleEnergyModel",
    "DimensionError", "DomainError", "GraphError", "NumericError",
    "ConfigError", "CapacityError", "FormatError", "CorruptionError",
    "CompatibilityError",
    "__version__",
]
