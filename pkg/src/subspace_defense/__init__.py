"""Subspace sanitization of backdoored RL policies.

A backdoor policy behaves optimally on the clean state distribution but
misbehaves when an attacker adds a trigger orthogonal to the clean states'
span. Projecting every observed state onto the top eigenspace of the clean
state covariance (the safe subspace) removes the trigger before the policy
sees it.
"""

from .attack import (
    Rollout,
    TriggeredTrajectory,
    TriggerFunction,
    adaptive_trigger,
    constant_trigger,
    estimate_B,
    impulse_trigger,
    rollout,
    run_protocol,
)
from .environments import (
    Mdp,
    PlantedEnv,
    PlantedEnvSpec,
    TabularMdp,
    ToyMdpSpec,
    planted_env,
    toy_mdp,
    toy_safe_projector,
)
from .errors import (
    ConfigError,
    DefenseError,
    DegenerateGap,
    DimensionMismatch,
    EmptySubspace,
    InvalidInput,
    InvalidTrigger,
    NotTabular,
)
from .evaluation import (
    ValueEstimate,
    exact_value_tabular,
    mc_value,
    truncation_horizon,
    verify_performance_difference,
)
from .linalg import (
    CovarianceEstimate,
    EigenModel,
    Projector,
    davis_kahan_bound,
    eigendecompose,
    empirical_covariance,
    principal_cosines,
    projector,
    projector_distance,
    select_dimension,
    sin_theta_frobenius,
    sin_theta_spectral,
)
from .policies import (
    LipschitzCertificate,
    Policy,
    TabularPolicy,
    estimate_lipschitz,
    planted_backdoor_policy,
    toy_backdoor_policy,
    toy_optimal_policy,
)
from .sanitizer import (
    CleanSampleSet,
    SafeSubspace,
    SanitizedPolicy,
    collect_clean_samples,
    fit_safe_subspace,
    sanitize,
)

__version__ = "0.1.0"

__all__ = [
    "Rollout",
    "TriggeredTrajectory",
    "TriggerFunction",
    "adaptive_trigger",
    "constant_trigger",
    "estimate_B",
    "impulse_trigger",
    "rollout",
    "run_protocol",
    "Mdp",
    "PlantedEnv",
    "PlantedEnvSpec",
    "TabularMdp",
    "ToyMdpSpec",
    "planted_env",
    "toy_mdp",
    "toy_safe_projector",
    "ConfigError",
    "DefenseError",
    "DegenerateGap",
    "DimensionMismatch",
    "EmptySubspace",
    "InvalidInput",
    "InvalidTrigger",
    "NotTabular",
    "ValueEstimate",
    "exact_value_tabular",
    "mc_value",
    "truncation_horizon",
    "verify_performance_difference",
    "CovarianceEstimate",
    "EigenModel",
    "Projector",
    "davis_kahan_bound",
    "eigendecompose",
    "empirical_covariance",
    "principal_cosines",
    "projector",
    "projector_distance",
    "select_dimension",
    "sin_theta_frobenius",
    "sin_theta_spectral",
    "LipschitzCertificate",
    "Policy",
    "TabularPolicy",
    "estimate_lipschitz",
    "planted_backdoor_policy",
    "toy_backdoor_policy",
    "toy_optimal_policy",
    "CleanSampleSet",
    "SafeSubspace",
    "SanitizedPolicy",
    "collect_clean_samples",
    "fit_safe_subspace",
    "sanitize",
    "__version__",
]
