"""End-to-end trial generation: indicator encoding, fading, and noise."""

from __future__ import annotations

import numpy as np

from .codebooks import SystemMatrix
from .model import Coding, EventVector, ReceivedSignal, TransmitState


def encode(
    events: EventVector,
    estimates: np.ndarray,
    channel: np.ndarray,
    system_matrix: SystemMatrix,
) -> TransmitState:
    """Collapse per-device indicator transmissions into the coefficient
    vector u aligned with the system-matrix columns.

    Deterministic given its inputs; estimate value 0 contributes nothing.
    """
    layout = system_matrix.layout
    R = layout.R
    u = np.zeros(layout.D, dtype=np.complex128)
    k_idx, m_idx = np.nonzero(estimates)
    if k_idx.size:
        values = estimates[k_idx, m_idx]
        pairs = layout.pair_index[k_idx, m_idx]
        if (pairs < 0).any():
            bad = int(np.argmax(pairs < 0))
            raise ValueError(
                f"device {k_idx[bad]} reported event {m_idx[bad]} it does not observe"
            )
        cols = pairs * R + (values - 1)
        if layout.coding is Coding.JSC:
            # Shared columns: devices with equal estimates add up on air.
            np.add.at(u, cols, channel[k_idx])
        else:
            u[cols] = channel[k_idx]
    return TransmitState(h=channel, estimates=estimates, u=u)


def transmit(
    transmit_state: TransmitState,
    system_matrix: SystemMatrix,
    sigma2: float,
    rng: np.random.Generator,
) -> ReceivedSignal:
    """y = A u + w with w i.i.d. CN(0, sigma2)."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    N = system_matrix.N
    noise = (rng.standard_normal(N) + 1j * rng.standard_normal(N)) * np.sqrt(sigma2 / 2.0)
    y = system_matrix.matrix @ transmit_state.u + noise
    return ReceivedSignal(y=y, sigma2=float(sigma2))
