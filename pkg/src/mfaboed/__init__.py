"""Bayesian experimental design for discriminating material flow network structures."""

from .errors import (
    DegeneratePosteriorError,
    InfeasibleFlowError,
    InputError,
    MFAError,
    NumericalError,
    PatternMismatchError,
    SpecError,
    StructuralCycleError,
)
from .inference import ModelPosterior, kl_prior_to_posterior, log_model_evidence, model_posterior
from .network import (
    SOLVES,
    CandidateSet,
    NetworkStructure,
    Target,
    compute_qoi,
    enumerate_candidates,
    solve_flows_batch,
    solve_nodal_flows,
)
from .stochastics import (
    AllocationPrior,
    Design,
    InputPrior,
    Observation,
    ParameterPriors,
    log_likelihood,
    rng_stream,
    sample_parameters,
    simulate_observation,
)

__version__ = "0.1.0"
