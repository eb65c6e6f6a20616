"""Stiffness indices for ODE solvers and residual-network feature trajectories."""

from ._accel import backend_name
from .analysis import (
    CorrelationReport,
    ExperimentRecord,
    correlate,
    kendall_tau,
    nsi_attention_correlation,
    select_proxy_gt,
    spearman_rho,
    tns_accuracy_experiment,
)
from .datasets import Dataset, synth_dataset
from .errors import NumericError, StiffkitError, ValidationError
from .metrics import (
    TnsEstimate,
    TrajectoryBounds,
    delta_estimate,
    lemma1_cap,
    nsi,
    nsi_profile,
    stiffness_aware_index_sai,
    stiffness_index_si,
    stiffness_proportion,
    tns,
    trajectory_bounds,
)
from .network import NetworkConfig, TrainHyper, extract_trajectories, forward, init_network, train
from .ode import (
    IntegratorMethod,
    OdeSystem,
    Trajectory,
    eigen_symmetric,
    get_system,
    integrate_adaptive,
    integrate_fixed,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
