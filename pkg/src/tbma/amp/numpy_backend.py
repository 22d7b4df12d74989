"""Reference NumPy implementation of the detector recursion.

The compiled kernel in ``_kernels.pyx`` follows this module line for line;
keep the two in sync when changing the algorithm.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..errors import DivergenceError
from .common import AmpSettings, DenoiseContext


def denoise_arrays(
    rvec: np.ndarray, taur: np.ndarray, ctx: DenoiseContext
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior over each event state from the per-coefficient
    pseudo-observations, plus per-coefficient posterior means/variances.

    Model per block: with the prior activity of its event, exactly one of
    the R entries carries a CN(0, v) coefficient (all devices of the event
    transmit the entry matching their estimate); every entry is seen
    through an independent AWGN pseudo-channel with variance taur.
    """
    P, R = ctx.v_pair.size, ctx.R
    r2 = np.abs(rvec.reshape(P, R)) ** 2
    tau = taur.reshape(P, R)
    v = ctx.v_pair[:, None]
    gain = v / (v + tau)
    # Per-entry log likelihood ratio of "entry on" vs "entry off".
    ell = r2 * v / (tau * (tau + v)) - np.log1p(v / tau)

    if ctx.mix_log is None:
        lam = np.zeros((ctx.M, R))
        np.add.at(lam, ctx.pair_event, ell)
        z = ctx.log_prior.copy()
        z[:, 1:] += lam
        post = _softmax_rows(z)
        pi = post[ctx.pair_event, 1:]  # transmit probability of each entry
    else:
        # Noisy local estimation: each state hypothesis mixes over the
        # estimate the device may actually have transmitted.
        ell_full = np.concatenate([np.zeros((P, 1)), ell], axis=1)  # (P, R+1)
        ellp = logsumexp(ctx.mix_log[None, :, :] + ell_full[:, None, :], axis=2)
        lam = np.zeros((ctx.M, R + 1))
        np.add.at(lam, ctx.pair_event, ellp)
        post = _softmax_rows(ctx.log_prior + lam)
        w = np.exp(ctx.mix_log[None, :, :] + ell_full[:, None, :] - ellp[:, :, None])
        pi = np.einsum("pk,pkr->pr", post[ctx.pair_event], w[:, :, 1:])

    shrunk = gain * rvec.reshape(P, R)
    mean = pi * shrunk
    var = pi * gain * tau + pi * (1.0 - pi) * np.abs(shrunk) ** 2
    return mean.reshape(-1), var.reshape(-1), post


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def gamp_run(
    y: np.ndarray,
    sigma2: float,
    A: np.ndarray,
    ctx: DenoiseContext,
    settings: AmpSettings,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, bool]:
    """Damped sum-product GAMP with an AWGN output channel.

    Per iteration: output linear step with Onsager correction, AWGN output
    denoiser, input linear step, structured input denoiser, then a damped
    update of the coefficient estimates and the output residuals.
    """
    N, D = A.shape
    A2 = np.abs(A) ** 2
    Ah = A.conj().T
    floor = settings.variance_floor
    beta = settings.damping

    u = np.zeros(D, dtype=np.complex128)
    tau = np.maximum(ctx.prior_second_moment, floor)
    s = np.zeros(N, dtype=np.complex128)
    converged = False
    u_den = np.zeros(D, dtype=np.complex128)
    tau_den = tau.copy()
    post = np.exp(ctx.log_prior)
    visited = np.empty((settings.max_iters, ctx.M), dtype=np.int64)

    for it in range(1, settings.max_iters + 1):
        taup = A2 @ tau
        p = A @ u - taup * s
        denom = taup + sigma2
        s_new = (y - p) / denom
        taus = 1.0 / denom
        taur = 1.0 / np.maximum(A2.T @ taus, 1e-300)
        np.maximum(taur, floor, out=taur)
        rvec = u + taur * (Ah @ s_new)

        u_den, tau_den, post = denoise_arrays(rvec, taur, ctx)
        visited[it - 1] = np.argmax(post, axis=1)

        u_next = beta * u_den + (1.0 - beta) * u
        s = beta * s_new + (1.0 - beta) * s
        if not (
            np.isfinite(u_next).all()
            and np.isfinite(s).all()
            and np.isfinite(post).all()
        ):
            raise DivergenceError(it)
        delta = np.linalg.norm(u_next - u)
        u = u_next
        tau = np.maximum(tau_den, floor)
        scale = np.linalg.norm(u)
        if delta <= settings.tol * scale or (scale == 0.0 and delta == 0.0):
            converged = True
            break

    return u_den, tau_den, post, it, converged, visited[:it]
