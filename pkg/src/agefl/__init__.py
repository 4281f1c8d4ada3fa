"""Age-aware scheduling for differentially-private federated learning."""

from .bound import BaselineStats, BoundBreakdown, SubExpParams, evaluate_bound, f_se, psi_inverse_generic
from .config import ExperimentConfig, load_config
from .markov import (
    MarkovChain,
    cyclic_chain,
    delta_exact,
    delta_spectral_bound,
    marginal_at,
    mutual_information_age,
    reverse_kernel,
    slem,
    t_step_transition,
    tv_distance,
)
from .model import ClientSpec, Schedule, build_noise_plan, make_clients
from .privacy import (
    NoisePlan,
    PrivacyRequirement,
    age_epsilon,
    l1_sensitivity_mean,
    laplace_scale,
    required_classic_eps,
    sample_laplace,
)
from .scheduler import SCHEMES, Flags, choose_schedule_bound, choose_schedule_sim, enumerate_schedules, run_scheme
from .simulate import baseline_stats, monte_carlo_loss_diff, run_trial

__version__ = "0.1.0"
