"""netgps: treatment and spillover effects on networks via Bayesian GPS.

The package estimates average dose-response surfaces mu(z, g) on a network
with neighborhood interference, using a three-step cut-feedback sampler:
individual propensity score, neighborhood propensity score, then a
penalized-spline outcome model with community random effects.
"""
from .community import CommunityAssignment, detect_communities, modularity
from .data import UnitTable, read_units
from .errors import (
    DegenerateBasisError,
    NetgpsError,
    ParseError,
    SamplerError,
    SingularDesignError,
    StudyError,
    ValidationError,
)
from .estimator import (
    ADRFPosterior,
    Delta,
    DeltaPi,
    EffectPosterior,
    EstimateResult,
    EstimationConfig,
    MatchResult,
    PpcResult,
    Tau,
    TauPi,
    effects,
    estimate,
    match_on_ps,
    ppc,
)
from .exposure import ExposureSpec, compute_exposure, feasible_set
from .graph import (
    LatentClusterConfig,
    Network,
    SbmConfig,
    generate_latent_cluster,
    generate_sbm,
)
from .mcmc import McmcConfig
from .outcome import OutcomeModelSpec, PriorConfig
from .ps import sample_individual_ps, sample_neighborhood_gps

__version__ = "0.1.0"

__all__ = [
    "ADRFPosterior",
    "CommunityAssignment",
    "Delta",
    "DeltaPi",
    "DegenerateBasisError",
    "EffectPosterior",
    "EstimateResult",
    "EstimationConfig",
    "ExposureSpec",
    "LatentClusterConfig",
    "MatchResult",
    "McmcConfig",
    "NetgpsError",
    "Network",
    "OutcomeModelSpec",
    "ParseError",
    "PpcResult",
    "PriorConfig",
    "SamplerError",
    "SbmConfig",
    "SingularDesignError",
    "StudyError",
    "Tau",
    "TauPi",
    "UnitTable",
    "ValidationError",
    "compute_exposure",
    "detect_communities",
    "effects",
    "estimate",
    "feasible_set",
    "generate_latent_cluster",
    "generate_sbm",
    "match_on_ps",
    "modularity",
    "ppc",
    "read_units",
    "sample_individual_ps",
    "sample_neighborhood_gps",
    "__version__",
]
