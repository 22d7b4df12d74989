"""Simulation lab for event-driven grant-free random access: joint vs
separate source-channel coding over a shared fading channel, detected with
a Bayesian GAMP receiver and validated against an exact enumeration oracle.
"""

__version__ = "0.1.0"

from .model import (
    Coding,
    EventVector,
    PosteriorBeliefs,
    ReceivedSignal,
    ScenarioConfig,
    TransmitState,
    local_estimates,
    sample_channel,
    sample_events,
)
from .codebooks import (
    CodebookSet,
    SystemMatrix,
    assemble_system_matrix,
    gen_gaussian_codebooks,
    gen_orthogonal_codebooks,
)
from .channel import encode, transmit
from .amp import (
    AmpSettings,
    BlockPrior,
    default_block_priors,
    denoise_jsc_block,
    denoise_ssc_event,
    detect,
    gamp_iterate,
)
from .oracle import exact_event_posteriors, exact_joint_map_detect, exact_map_detect

__all__ = [
    "AmpSettings",
    "BlockPrior",
    "Coding",
    "CodebookSet",
    "EventVector",
    "PosteriorBeliefs",
    "ReceivedSignal",
    "ScenarioConfig",
    "SystemMatrix",
    "TransmitState",
    "assemble_system_matrix",
    "default_block_priors",
    "denoise_jsc_block",
    "denoise_ssc_event",
    "detect",
    "encode",
    "exact_event_posteriors",
    "exact_joint_map_detect",
    "exact_map_detect",
    "gamp_iterate",
    "gen_gaussian_codebooks",
    "gen_orthogonal_codebooks",
    "local_estimates",
    "sample_channel",
    "sample_events",
    "transmit",
]
