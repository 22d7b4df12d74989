"""Bayesian GAMP detector with structured strong-edge denoisers.

Two interchangeable implementations exist: a compiled Cython kernel (built
at install time) and a pure-NumPy fallback. The compiled one is selected
automatically when present; set ``TBMA_BACKEND=numpy`` or ``=cython`` to
force a choice, or pass ``backend=`` explicitly.
"""

from __future__ import annotations

import os

import numpy as np

from ..codebooks import SystemMatrix
from ..errors import ConfigError
from ..model import PosteriorBeliefs, ReceivedSignal
from . import numpy_backend
from .common import (
    AmpSettings,
    BlockPrior,
    DenoiseContext,
    build_context,
    context_for_config,
    default_block_priors,
    detect,
    error_mixture_log,
)

try:
    from . import _kernels
except ImportError:  # extension not built; NumPy path remains available
    _kernels = None

_ENV_CHOICE = os.environ.get("TBMA_BACKEND", "").strip().lower() or None


def available_backends() -> tuple[str, ...]:
    return ("cython", "numpy") if _kernels is not None else ("numpy",)


def active_backend() -> str:
    return _resolve_backend(None)


def _resolve_backend(backend: str | None) -> str:
    choice = backend or _ENV_CHOICE
    if choice in (None, "auto"):
        return "cython" if _kernels is not None else "numpy"
    if choice == "numpy":
        return "numpy"
    if choice in ("cython", "compiled"):
        if _kernels is None:
            raise ConfigError("compiled kernel requested but the extension is not built")
        return "cython"
    raise ConfigError(f"unknown backend {choice!r}")


def _as_context(
    prior, system_matrix: SystemMatrix, local_error_prob: float
) -> DenoiseContext:
    if isinstance(prior, DenoiseContext):
        return prior
    return build_context(system_matrix.layout, prior, local_error_prob)


def gamp_iterate(
    received: ReceivedSignal,
    system_matrix: SystemMatrix,
    prior: BlockPrior | list[BlockPrior] | DenoiseContext,
    settings: AmpSettings | None = None,
    local_error_prob: float = 0.0,
    backend: str | None = None,
) -> PosteriorBeliefs:
    """Run the detector on one received signal.

    Raises :class:`tbma.errors.DivergenceError` if the recursion produces
    non-finite values.
    """
    settings = settings or AmpSettings()
    ctx = _as_context(prior, system_matrix, local_error_prob)
    if ctx.prior_second_moment.size != system_matrix.D:
        raise ConfigError("prior block structure does not match the system matrix")
    if received.y.shape[0] != system_matrix.N:
        raise ConfigError("received signal length does not match the system matrix")
    if _resolve_backend(backend) == "cython":
        u, tau, post, iters, converged, visited = _kernels.gamp_run(
            received.y,
            float(received.sigma2),
            system_matrix.matrix,
            ctx.pair_event,
            ctx.v_pair,
            ctx.log_prior,
            ctx.mix_log,
            ctx.prior_second_moment,
            settings.max_iters,
            settings.damping,
            settings.tol,
            settings.variance_floor,
        )
    else:
        u, tau, post, iters, converged, visited = numpy_backend.gamp_run(
            received.y, float(received.sigma2), system_matrix.matrix, ctx, settings
        )
    candidates = np.unique(visited, axis=0)
    if not (candidates == 0).all(axis=1).any():
        candidates = np.vstack([np.zeros((1, ctx.M), dtype=candidates.dtype), candidates])
    return PosteriorBeliefs(
        event_posteriors=post,
        coeff_mean=u,
        coeff_var=tau,
        iterations_used=iters,
        converged=converged,
        visited_candidates=candidates,
    )


def _denoise_dispatch(rvec, taur, ctx: DenoiseContext, backend: str | None):
    if _resolve_backend(backend) == "cython":
        return _kernels.denoise_pass(
            rvec, taur, ctx.pair_event, ctx.v_pair, ctx.log_prior, ctx.mix_log,
            ctx.M, ctx.R,
        )
    return numpy_backend.denoise_arrays(
        np.ascontiguousarray(rvec, dtype=np.complex128),
        np.ascontiguousarray(taur, dtype=np.float64),
        ctx,
    )


def denoise_jsc_block(
    r_block: np.ndarray,
    tau_block: np.ndarray,
    prior: BlockPrior,
    backend: str | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact posterior for one shared event block observed through
    per-entry AWGN pseudo-channels.

    Returns (posterior mean per entry, posterior variance per entry,
    event posterior over {0, ..., R}).
    """
    r_block = np.atleast_1d(np.asarray(r_block, dtype=np.complex128))
    tau_block = np.atleast_1d(np.asarray(tau_block, dtype=np.float64))
    R = prior.R
    if r_block.shape != (R,) or tau_block.shape != (R,):
        raise ConfigError(f"block inputs must have shape ({R},)")
    ctx = _single_event_context(prior, n_pairs=1)
    mean, var, post = _denoise_dispatch(r_block, tau_block, ctx, backend)
    return mean, var, post[0]


def denoise_ssc_event(
    r_blocks: np.ndarray,
    tau_blocks: np.ndarray,
    prior: BlockPrior,
    local_error_prob: float = 0.0,
    backend: str | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Joint posterior for one event observed by several devices.

    ``r_blocks``/``tau_blocks`` have shape (G, R): one R-entry block per
    device of the group. Per-device log evidence adds across the group;
    with ``local_error_prob > 0`` each state hypothesis mixes over the
    estimate a device may actually have transmitted.
    """
    r_blocks = np.atleast_2d(np.asarray(r_blocks, dtype=np.complex128))
    tau_blocks = np.atleast_2d(np.asarray(tau_blocks, dtype=np.float64))
    G, R = r_blocks.shape
    if prior.R != R or tau_blocks.shape != (G, R):
        raise ConfigError("r_blocks/tau_blocks must both be (G, R) matching the prior")
    ctx = _single_event_context(prior, n_pairs=G, local_error_prob=local_error_prob)
    mean, var, post = _denoise_dispatch(r_blocks.reshape(-1), tau_blocks.reshape(-1), ctx, backend)
    return mean.reshape(G, R), var.reshape(G, R), post[0]


def _single_event_context(
    prior: BlockPrior, n_pairs: int, local_error_prob: float = 0.0
) -> DenoiseContext:
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior.activity)[None, :]
    transmit = prior.activity[1:]
    mix_log = None
    if local_error_prob > 0:
        mix_log = error_mixture_log(local_error_prob, prior.R)
        transmit = prior.activity @ np.exp(mix_log)[:, 1:]
    sm = np.tile(transmit * prior.v, n_pairs)
    return DenoiseContext(
        M=1,
        R=prior.R,
        pair_event=np.zeros(n_pairs, dtype=np.int64),
        v_pair=np.full(n_pairs, prior.v),
        log_prior=log_prior,
        mix_log=mix_log,
        prior_second_moment=sm,
    )


__all__ = [
    "AmpSettings",
    "BlockPrior",
    "DenoiseContext",
    "active_backend",
    "available_backends",
    "build_context",
    "context_for_config",
    "default_block_priors",
    "denoise_jsc_block",
    "denoise_ssc_event",
    "detect",
    "gamp_iterate",
]
