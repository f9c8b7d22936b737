"""Filtering with loss of lock: simulation, conditional lock statistics, and the
minimum-noise-energy filter."""

from .errors import MTLLError
from .lock import ExitInfo, error_path, first_exit
from .mne import MNEFilter, EnergyLattice, causal_estimate, make_lattice, run_mne_filter, smooth_path, transition_cost, viterbi_step
from .model import DiffusionModel, LockDomain, make_linear_model, make_phase_model
from .particle import ParticleEnsemble, conditional_mtll, log_lik_increment, mtll_from_survival, propagate_ensemble, survival_curve
from .sde_sim import SamplePath, TimeGrid, simulate_error_pair, simulate_pair, zero_noise_pair
from .trackers import ExtendedKalmanFilter, PhaseLockedLoop, TrackerState, ekf_step, pll_step
from .zakai import ZakaiField, init_field, mtll_oracle, step_field, survival_ratio

__all__ = [
    "DiffusionModel", "EnergyLattice", "ExitInfo", "ExtendedKalmanFilter", "LockDomain",
    "MNEFilter", "MTLLError", "ParticleEnsemble", "PhaseLockedLoop", "SamplePath", "TimeGrid",
    "TrackerState", "ZakaiField", "causal_estimate", "conditional_mtll", "ekf_step",
    "error_path", "first_exit", "init_field", "log_lik_increment", "make_lattice",
    "make_linear_model", "make_phase_model", "mtll_from_survival", "mtll_oracle", "pll_step",
    "propagate_ensemble", "run_mne_filter", "simulate_error_pair", "simulate_pair",
    "smooth_path", "step_field", "survival_curve", "survival_ratio", "transition_cost",
    "viterbi_step", "zero_noise_pair",
]

__version__ = "0.1.0"
