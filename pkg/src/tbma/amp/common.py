"""Shared detector plumbing: settings, block priors, and the flattened
block-structure context consumed by both backend implementations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codebooks import MatrixLayout, SystemMatrix, layout_for
from ..errors import ConfigError
from ..model import Coding, EventVector, PosteriorBeliefs, ScenarioConfig


@dataclass(frozen=True)
class AmpSettings:
    """Iteration schedule of the detector.

    ``rescore`` re-ranks the event-vector candidates visited by the
    iterations with their exact marginal likelihoods before deciding; it
    costs one small Cholesky per distinct candidate and recovers most of
    the gap to exact MAP when the recursion oscillates (short codewords).
    Ignored when local estimation is noisy, where those likelihoods have no
    closed form.
    """

    max_iters: int = 50
    damping: float = 0.7
    tol: float = 1e-6
    variance_floor: float = 1e-12
    rescore: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")
        if not self.tol > 0 or not self.variance_floor > 0:
            raise ConfigError("tol and variance_floor must be positive")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AmpSettings":
        known = {"max_iters", "damping", "tol", "variance_floor", "rescore"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown amp settings: {sorted(unknown)}")
        coerce = {"max_iters": int, "rescore": bool}
        return cls(**{k: coerce.get(k, float)(v) for k, v in doc.items()})


@dataclass(frozen=True)
class BlockPrior:
    """Prior of one event block.

    ``activity[r]`` is the prior probability of event value r (r = 0 means
    inactive); ``v`` is the variance of a nonzero coefficient entry: the
    summed fading variance G under JSC, 1 per device under SSC.
    """

    activity: np.ndarray
    v: float

    def __post_init__(self):
        act = np.asarray(self.activity, dtype=np.float64)
        if act.ndim != 1 or act.size < 2:
            raise ConfigError("activity must be a vector over {0, ..., R} with R >= 1")
        if (act < 0).any() or abs(act.sum() - 1.0) > 1e-9:
            raise ConfigError("activity must be a probability vector")
        if not self.v > 0:
            raise ConfigError("coefficient variance v must be positive")
        act.setflags(write=False)
        object.__setattr__(self, "activity", act)
        object.__setattr__(self, "v", float(self.v))

    @property
    def R(self) -> int:
        return self.activity.size - 1

    @classmethod
    def bernoulli_uniform(cls, rho: float, R: int, v: float) -> "BlockPrior":
        act = np.full(R + 1, rho / R)
        act[0] = 1.0 - rho
        return cls(activity=act, v=v)


def default_block_priors(config: ScenarioConfig) -> list[BlockPrior]:
    """Matched priors: inactive w.p. 1 - rho, otherwise uniform; JSC blocks
    carry the summed fading variance of their group."""
    if config.coding is Coding.JSC:
        return [
            BlockPrior.bernoulli_uniform(config.rho, config.R, float(g))
            for g in config.group_sizes
        ]
    return [
        BlockPrior.bernoulli_uniform(config.rho, config.R, 1.0) for _ in range(config.M)
    ]


@dataclass(frozen=True)
class DenoiseContext:
    """Flattened block structure precomputed once per detector call.

    Blocks of R consecutive coefficients ("pairs") couple to their event's
    state variable; ``mix_log`` is the log estimate-given-state confusion
    matrix, or None under perfect local estimation.
    """

    M: int
    R: int
    pair_event: np.ndarray  # (P,) int64
    v_pair: np.ndarray  # (P,) float64
    log_prior: np.ndarray  # (M, R+1) float64
    mix_log: np.ndarray | None  # (R+1, R+1) float64
    prior_second_moment: np.ndarray  # (D,) float64

    def __post_init__(self):
        for name in ("pair_event", "v_pair", "log_prior", "prior_second_moment"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.mix_log is not None:
            mix = np.ascontiguousarray(self.mix_log)
            mix.setflags(write=False)
            object.__setattr__(self, "mix_log", mix)


def error_mixture_log(local_error_prob: float, R: int) -> np.ndarray:
    """log P(estimate = r' | state = r): correct w.p. 1 - q, otherwise
    uniform over the R other values."""
    q = float(local_error_prob)
    mix = np.full((R + 1, R + 1), q / R)
    np.fill_diagonal(mix, 1.0 - q)
    with np.errstate(divide="ignore"):
        return np.log(mix)


def build_context(
    layout: MatrixLayout,
    priors: BlockPrior | list[BlockPrior],
    local_error_prob: float = 0.0,
) -> DenoiseContext:
    M, R = layout.M, layout.R
    if isinstance(priors, BlockPrior):
        priors = [priors] * M
    if len(priors) != M:
        raise ConfigError(f"need one block prior per event ({M}), got {len(priors)}")
    for pr in priors:
        if pr.R != R:
            raise ConfigError(f"prior cardinality {pr.R} does not match R={R}")
    activity = np.stack([pr.activity for pr in priors])  # (M, R+1)
    v_event = np.array([pr.v for pr in priors])
    with np.errstate(divide="ignore"):
        log_prior = np.log(activity)
    mix_log = None
    transmit_prob = activity[:, 1:]  # (M, R): P(entry r is on | prior)
    if local_error_prob > 0:
        if layout.coding is Coding.JSC:
            raise ConfigError("JSC detection requires local_error_prob == 0")
        mix = np.exp(error_mixture_log(local_error_prob, R))
        transmit_prob = activity @ mix[:, 1:]
    v_pair = v_event[layout.pair_event]
    sm = transmit_prob[layout.pair_event] * v_pair[:, None]  # (P, R)
    return DenoiseContext(
        M=M,
        R=R,
        pair_event=layout.pair_event,
        v_pair=v_pair,
        log_prior=log_prior,
        mix_log=error_mixture_log(local_error_prob, R) if local_error_prob > 0 else None,
        prior_second_moment=sm.reshape(-1),
    )


def context_for_config(
    config: ScenarioConfig, priors: BlockPrior | list[BlockPrior] | None = None
) -> DenoiseContext:
    if priors is None:
        priors = default_block_priors(config)
    return build_context(layout_for(config), priors, config.local_error_prob)


def detect(posteriors: PosteriorBeliefs) -> EventVector:
    """Per-event MAP decision; ties break toward the smallest value, so an
    uninformative row is declared inactive."""
    return EventVector(np.argmax(posteriors.event_posteriors, axis=1))
