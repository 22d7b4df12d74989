"""Codebook generation and system-matrix assembly.

A codeword block is the N x R matrix of codewords for values 1..R of one
transmitter role; value 0 is silence and has no column. Under SSC there is
one block per (device, observed event) pair; under JSC one shared block per
event. Stacking the blocks side by side gives the N x D system matrix A,
whose columns align with the effective coefficient vector u built by
:func:`tbma.channel.encode`.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .model import Coding, ScenarioConfig


@dataclass(frozen=True)
class MatrixLayout:
    """Column bookkeeping shared by every random draw for one config.

    Columns come in blocks of R; block p owns columns [p*R, (p+1)*R).
    ``pair_event[p]`` is the event a block signals about and
    ``pair_device[p]`` the transmitting device (-1 for a shared JSC block).
    ``pair_index[k, m]`` inverts the map (-1 where device k does not
    observe event m, or for JSC where blocks are shared).
    """

    coding: Coding
    M: int
    R: int
    n_blocks: int
    pair_event: np.ndarray
    pair_device: np.ndarray
    pair_index: np.ndarray

    def __post_init__(self):
        for name in ("pair_event", "pair_device", "pair_index"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def D(self) -> int:
        return self.n_blocks * self.R

    def column_map(self) -> list[tuple[int, int, int]]:
        """(device, event, value) per column; device is -1 for JSC."""
        out = []
        for p in range(self.n_blocks):
            for r in range(1, self.R + 1):
                out.append((int(self.pair_device[p]), int(self.pair_event[p]), r))
        return out


@functools.lru_cache(maxsize=None)
def layout_for(config: ScenarioConfig) -> MatrixLayout:
    if config.coding is Coding.JSC:
        n_blocks = config.M
        pair_event = np.arange(config.M, dtype=np.int64)
        pair_device = np.full(config.M, -1, dtype=np.int64)
        pair_index = np.full((config.K, config.M), -1, dtype=np.int64)
        for k in range(config.K):
            for m in config.group_assignment[k]:
                pair_index[k, m] = m
    else:
        pairs = [
            (k, m) for k in range(config.K) for m in config.group_assignment[k]
        ]
        n_blocks = len(pairs)
        pair_device = np.array([k for k, _ in pairs], dtype=np.int64)
        pair_event = np.array([m for _, m in pairs], dtype=np.int64)
        pair_index = np.full((config.K, config.M), -1, dtype=np.int64)
        for p, (k, m) in enumerate(pairs):
            pair_index[k, m] = p
    return MatrixLayout(
        coding=config.coding,
        M=config.M,
        R=config.R,
        n_blocks=n_blocks,
        pair_event=pair_event,
        pair_device=pair_device,
        pair_index=pair_index,
    )


@dataclass(frozen=True)
class CodebookSet:
    """All codeword blocks for one scenario draw.

    ``blocks`` has shape (n_blocks, N, R): blocks[p, :, r-1] is the codeword
    transmitted for value r by block p.
    """

    layout: MatrixLayout
    blocks: np.ndarray
    N: int
    E: float

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=np.complex128)
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def coding(self) -> Coding:
        return self.layout.coding

    def codeword(self, k: int, m: int, r: int) -> np.ndarray:
        """Codeword sent by device k for event m when its estimate is r.

        Value 0 is silence (all zeros). The same array is returned for all
        devices of a group under JSC.
        """
        if r == 0:
            return np.zeros(self.N, dtype=np.complex128)
        p = int(self.layout.pair_index[k, m])
        if p < 0:
            raise ConfigError(f"device {k} does not observe event {m}")
        return self.blocks[p, :, r - 1]


@dataclass(frozen=True)
class SystemMatrix:
    """The N x D matrix A with its column bookkeeping."""

    matrix: np.ndarray
    layout: MatrixLayout
    E: float

    def __post_init__(self):
        matrix = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def D(self) -> int:
        return self.matrix.shape[1]

    @property
    def coding(self) -> Coding:
        return self.layout.coding


def gen_gaussian_codebooks(
    config: ScenarioConfig, rng: np.random.Generator, normalize: bool = False
) -> CodebookSet:
    """Draw i.i.d. CN(0, E/N) codeword entries.

    JSC draws one shared block per event, SSC an independent block per
    (device, event) pair. Raw draws have expected energy E per codeword;
    ``normalize=True`` rescales every codeword to exactly ``||s||^2 = E``
    for hard power-constraint experiments.
    """
    layout = layout_for(config)
    shape = (layout.n_blocks, config.N, config.R)
    scale = np.sqrt(config.E / (2.0 * config.N))
    blocks = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    if normalize:
        norms = np.linalg.norm(blocks, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        blocks = blocks * (np.sqrt(config.E) / norms)
    return CodebookSet(layout=layout, blocks=blocks, N=config.N, E=config.E)


def gen_orthogonal_codebooks(config: ScenarioConfig) -> CodebookSet:
    """Deterministic orthogonal codebooks (classical TBMA baseline).

    Uses discrete-Fourier columns scaled to ``||s||^2 = E``; requires JSC
    coding and M*R <= N so that all codewords fit in one orthogonal basis.
    """
    if config.coding is not Coding.JSC:
        raise ConfigError("orthogonal codebooks are defined for JSC coding only")
    total = config.M * config.R
    if total > config.N:
        raise DimensionError(
            f"cannot fit {total} orthogonal codewords in length N={config.N}"
        )
    layout = layout_for(config)
    n = np.arange(config.N)[:, None]
    c = np.arange(total)[None, :]
    cols = np.exp(-2j * np.pi * n * c / config.N) * np.sqrt(config.E / config.N)
    blocks = cols.T.reshape(config.M, config.R, config.N).transpose(0, 2, 1)
    return CodebookSet(layout=layout, blocks=blocks, N=config.N, E=config.E)


def assemble_system_matrix(codebooks: CodebookSet, config: ScenarioConfig) -> SystemMatrix:
    """Stack all codeword blocks into the N x D system matrix."""
    layout = codebooks.layout
    if layout is not layout_for(config):
        raise ConfigError("codebooks were generated for a different configuration")
    matrix = codebooks.blocks.transpose(1, 0, 2).reshape(config.N, layout.D)
    return SystemMatrix(matrix=matrix, layout=layout, E=codebooks.E)


def export_matrix_csv(system_matrix: SystemMatrix, path) -> None:
    """Debug dump of A: two real columns (re, im) per complex column."""
    A = system_matrix.matrix
    header: list[str] = []
    for d, (dev, ev, val) in enumerate(system_matrix.layout.column_map()):
        tag = f"m{ev}_r{val}" if dev < 0 else f"k{dev}_m{ev}_r{val}"
        header += [f"{tag}_re", f"{tag}_im"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(A.shape[0]):
            row = []
            for d in range(A.shape[1]):
                row += [repr(float(A[i, d].real)), repr(float(A[i, d].imag))]
            writer.writerow(row)
