"""Monte-Carlo experiment engine.

Each trial is a pure function of ``(master_seed, axis_index, coding,
trial_index, redraw_counter)``, so sweeps are bit-reproducible for any
worker count and any scheduling. Codebooks are redrawn every trial
(ensemble averaging over the random codeword draw) unless the
fixed-codebook mode is requested.

The CSV output contains only deterministic columns; wall-clock timings and
other run metadata go to the JSON manifest written alongside.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import multiprocessing
import os
import tempfile
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .amp import AmpSettings, active_backend, context_for_config, detect, gamp_iterate
from .amp.common import DenoiseContext
from .channel import encode, transmit
from .codebooks import CodebookSet, SystemMatrix, assemble_system_matrix, gen_gaussian_codebooks
from .errors import ConfigError, DivergenceError, SweepDivergenceError
from .model import Coding, ScenarioConfig, local_estimates, sample_channel, sample_events
from .oracle import (
    DEFAULT_BUDGET,
    candidate_event_posteriors,
    exact_event_posteriors,
    exact_map_detect,
)

log = logging.getLogger("tbma")

AXES = ("group_size", "codeword_length", "activation", "snr_db")
_AXIS_ALIASES = {
    "g": "group_size",
    "group_size": "group_size",
    "n": "codeword_length",
    "codeword_length": "codeword_length",
    "rho": "activation",
    "activation": "activation",
    "snr": "snr_db",
    "snr_db": "snr_db",
}

_CODING_CODE = {Coding.SSC: 0, Coding.JSC: 1}
MAX_REDRAWS_PER_TRIAL = 25


@dataclass(frozen=True)
class StoppingRule:
    """Fixed trial count, or stop once the 95% CI is relatively tight.

    In ``target_rel_ci`` mode trials run in deterministic batches until the
    CI halfwidth falls below ``rel_halfwidth * error_rate`` or the trial cap
    is reached; the decision depends only on aggregated counts, never on
    scheduling.
    """

    mode: str = "fixed"
    rel_halfwidth: float = 0.1
    batch: int = 2000

    def __post_init__(self):
        if self.mode not in ("fixed", "target_rel_ci"):
            raise ConfigError(f"unknown stopping mode {self.mode!r}")
        if self.mode == "target_rel_ci" and not (0 < self.rel_halfwidth and self.batch >= 1):
            raise ConfigError("target_rel_ci needs rel_halfwidth > 0 and batch >= 1")

    @classmethod
    def from_json_dict(cls, doc) -> "StoppingRule":
        if doc is None:
            return cls()
        if isinstance(doc, str):
            return cls(mode=doc)
        doc = dict(doc)
        return cls(
            mode=doc.pop("mode", "fixed"),
            rel_halfwidth=float(doc.pop("rel_halfwidth", 0.1)),
            batch=int(doc.pop("batch", 2000)),
        )


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    axis: str
    values: tuple
    codings: tuple[Coding, ...]
    trials: int
    master_seed: int
    confidence: StoppingRule = StoppingRule()
    amp: AmpSettings = AmpSettings()
    fixed_codebooks: bool = False

    def __post_init__(self):
        axis = _AXIS_ALIASES.get(str(self.axis).lower())
        if axis is None:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        object.__setattr__(self, "axis", axis)
        values = tuple(self.values)
        if not values:
            raise ConfigError("values must be nonempty")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError("values must be strictly increasing")
        object.__setattr__(self, "values", values)
        codings = tuple(Coding(c) if not isinstance(c, Coding) else c for c in self.codings)
        if not codings:
            raise ConfigError("codings must be nonempty")
        object.__setattr__(self, "codings", codings)
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.axis == "group_size":
            expected = ScenarioConfig.disjoint
            G = self.base.uniform_group_size
            if G is None or self.base.group_assignment != expected(
                M=self.base.M, R=self.base.R, G=G,
                rho=self.base.rho, snr_db=self.base.snr_db, N=self.base.N,
            ).group_assignment:
                raise ConfigError(
                    "group-size sweeps require the disjoint equal-group constructor"
                )

    def config_for(self, value, coding: Coding) -> ScenarioConfig:
        base = self.base
        if self.axis == "group_size":
            cfg = ScenarioConfig.disjoint(
                M=base.M, R=base.R, G=int(value), rho=base.rho, snr_db=base.snr_db,
                N=base.N, E=base.E, coding=coding,
                local_error_prob=base.local_error_prob,
            )
            return cfg
        if self.axis == "codeword_length":
            cfg = replace(base, N=int(value))
        elif self.axis == "activation":
            cfg = replace(base, rho=float(value))
        else:
            cfg = replace(base, snr_db=float(value))
        return cfg.with_coding(coding)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SweepSpec":
        doc = dict(doc)
        axis = doc.pop("axis", None)
        values = doc.pop("values", None)
        if axis is None or values is None:
            raise ConfigError("sweep spec needs 'axis' and 'values'")
        trials = int(doc.pop("trials", 1000))
        master_seed = int(doc.pop("master_seed", 0))
        confidence = StoppingRule.from_json_dict(doc.pop("confidence", None))
        amp = AmpSettings.from_json_dict(doc.pop("amp", {}))
        fixed_codebooks = bool(doc.pop("fixed_codebooks", False))
        codings = doc.pop("codings", None)
        if codings is None:
            codings = [doc["coding"]] if "coding" in doc else ["SSC", "JSC"]
        doc.setdefault("coding", codings[0])
        base = ScenarioConfig.from_json_dict(doc)
        return cls(
            base=base,
            axis=axis,
            values=tuple(values),
            codings=tuple(codings),
            trials=trials,
            master_seed=master_seed,
            confidence=confidence,
            amp=amp,
            fixed_codebooks=fixed_codebooks,
        )

    @classmethod
    def from_json(cls, text: str) -> "SweepSpec":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class TrialOutcomes:
    """Raw per-trial, per-event material a result row is computed from."""

    xi: np.ndarray  # (T, M) true states
    errors: np.ndarray  # (T, M) bool, decision != truth
    iters: np.ndarray  # (T,)
    redraws: int  # divergent trials that were redrawn

    @property
    def trials(self) -> int:
        return self.xi.shape[0]


@dataclass(frozen=True)
class ResultRow:
    axis_value: object
    coding: str
    M: int
    R: int
    N: int
    G: int | None
    rho: float
    snr_db: float
    error_rate: float
    trials: int
    event_decisions: int
    ci95_halfwidth: float
    mean_amp_iters: float
    error_rate_active: float | None
    error_rate_inactive: float | None
    divergent_redraws: int
    wall_time_s: float  # diagnostic; recorded in the manifest, not the CSV


CSV_COLUMNS = [
    "axis_value", "coding", "M", "R", "N", "G", "rho", "snr_db",
    "error_rate", "trials", "event_decisions", "ci95_halfwidth",
    "mean_amp_iters", "error_rate_active", "error_rate_inactive",
    "divergent_redraws",
]


def estimate_error_rate(
    outcomes: TrialOutcomes,
    config: ScenarioConfig,
    axis_value=None,
    wall_time_s: float = 0.0,
) -> ResultRow:
    """Average per-event decoding error over all events and trials, with a
    binomial 95% CI; activity-conditioned variants ride along."""
    T, M = outcomes.errors.shape
    n = T * M
    n_err = int(outcomes.errors.sum())
    p = n_err / n
    ci = 1.96 * np.sqrt(p * (1.0 - p) / n)
    active = outcomes.xi > 0
    n_act = int(active.sum())
    err_act = int((outcomes.errors & active).sum())
    n_inact = n - n_act
    err_inact = n_err - err_act
    return ResultRow(
        axis_value=axis_value,
        coding=config.coding.value,
        M=config.M,
        R=config.R,
        N=config.N,
        G=config.uniform_group_size,
        rho=config.rho,
        snr_db=config.snr_db,
        error_rate=p,
        trials=T,
        event_decisions=n,
        ci95_halfwidth=float(ci),
        mean_amp_iters=int(outcomes.iters.sum()) / T,
        error_rate_active=err_act / n_act if n_act else None,
        error_rate_inactive=err_inact / n_inact if n_inact else None,
        divergent_redraws=outcomes.redraws,
        wall_time_s=wall_time_s,
    )


def detect_with_rescoring(
    received,
    sm: SystemMatrix,
    config: ScenarioConfig,
    beliefs,
):
    """Final decision: re-rank the candidates the recursion visited by
    their exact marginal likelihoods (plus a greedy refinement around the
    best one when the recursion did not settle), then per-event argmax.
    Returns (EventVector, event posteriors over the scored set)."""
    refine = not beliefs.converged or len(beliefs.visited_candidates) > 3
    post = candidate_event_posteriors(
        received, sm, config, beliefs.visited_candidates, refine=refine
    )
    return exact_map_detect(post), post


def run_trial(
    config: ScenarioConfig,
    codebooks: CodebookSet | SystemMatrix,
    trial_seed,
    settings: AmpSettings | None = None,
    ctx: DenoiseContext | None = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """One end-to-end trial; returns (true xi, per-event error indicators,
    AMP iterations). Detector divergence propagates to the caller."""
    sm = (
        codebooks
        if isinstance(codebooks, SystemMatrix)
        else assemble_system_matrix(codebooks, config)
    )
    settings = settings or AmpSettings()
    rng = np.random.default_rng(trial_seed)
    events = sample_events(config, rng)
    h = sample_channel(config, rng)
    est = local_estimates(events, config, rng)
    state = encode(events, est, h, sm)
    received = transmit(state, sm, config.sigma2, rng)
    if ctx is None:
        ctx = context_for_config(config)
    beliefs = gamp_iterate(received, sm, ctx, settings)
    if settings.rescore and config.local_error_prob == 0:
        xi_hat, _ = detect_with_rescoring(received, sm, config, beliefs)
    else:
        xi_hat = detect(beliefs)
    return events.xi, xi_hat.xi != events.xi, beliefs.iterations_used


# ---------------------------------------------------------------------------
# Point engine: runs `trials` independent trials of one configuration with
# deterministic per-trial seeding, optionally in parallel.

@dataclass(frozen=True)
class _PointPayload:
    config: ScenarioConfig
    settings: AmpSettings
    ctx: DenoiseContext
    master_seed: int
    axis_index: int
    coding_code: int
    fixed_codebooks: CodebookSet | None
    with_oracle: bool = False
    oracle_budget: int = DEFAULT_BUDGET


_WORKER_PAYLOAD: _PointPayload | None = None


def _init_worker(payload: _PointPayload) -> None:
    global _WORKER_PAYLOAD
    _WORKER_PAYLOAD = payload


def _trial_once(payload: _PointPayload, trial_index: int, redraw: int):
    seed = np.random.SeedSequence(
        [payload.master_seed, payload.axis_index, payload.coding_code, trial_index, redraw]
    )
    cb_seed, trial_seed = seed.spawn(2)
    codebooks = payload.fixed_codebooks
    if codebooks is None:
        codebooks = gen_gaussian_codebooks(payload.config, np.random.default_rng(cb_seed))
    sm = assemble_system_matrix(codebooks, payload.config)
    if not payload.with_oracle:
        xi, err, iters = run_trial(
            payload.config, sm, trial_seed, payload.settings, payload.ctx
        )
        return xi, err, iters, None
    # Oracle comparison path: both detectors see the identical signal.
    rng = np.random.default_rng(trial_seed)
    events = sample_events(payload.config, rng)
    h = sample_channel(payload.config, rng)
    est = local_estimates(events, payload.config, rng)
    state = encode(events, est, h, sm)
    received = transmit(state, sm, payload.config.sigma2, rng)
    beliefs = gamp_iterate(received, sm, payload.ctx, payload.settings)
    if payload.settings.rescore:
        amp_hat = detect_with_rescoring(received, sm, payload.config, beliefs)[0].xi
    else:
        amp_hat = detect(beliefs).xi
    map_hat = exact_map_detect(
        exact_event_posteriors(received, sm, payload.config, payload.oracle_budget)
    ).xi
    return (
        events.xi,
        amp_hat != events.xi,
        beliefs.iterations_used,
        (map_hat != events.xi, amp_hat == map_hat),
    )


def _run_chunk(payload: _PointPayload, start: int, stop: int):
    M = payload.config.M
    n = stop - start
    xi = np.empty((n, M), dtype=np.int64)
    err = np.empty((n, M), dtype=bool)
    iters = np.empty(n, dtype=np.int64)
    map_err = np.empty((n, M), dtype=bool) if payload.with_oracle else None
    agree = np.empty((n, M), dtype=bool) if payload.with_oracle else None
    redraws = 0
    for j, t in enumerate(range(start, stop)):
        redraw = 0
        while True:
            try:
                xi[j], err[j], iters[j], extra = _trial_once(payload, t, redraw)
                break
            except DivergenceError as exc:
                redraw += 1
                log.warning(
                    "trial %d diverged at iteration %d (redraw %d)",
                    t, exc.iteration, redraw,
                )
                if redraw > MAX_REDRAWS_PER_TRIAL:
                    raise SweepDivergenceError(
                        f"trial {t} diverged {redraw} times in a row"
                    ) from exc
        redraws += redraw
        if payload.with_oracle:
            map_err[j], agree[j] = extra
    return xi, err, iters, redraws, map_err, agree


def _chunk_worker(bounds):
    return _run_chunk(_WORKER_PAYLOAD, *bounds)


def _chunk_bounds(n_trials: int, offset: int, workers: int):
    chunk = max(1, min(512, -(-n_trials // max(1, workers * 4))))
    return [
        (offset + a, offset + min(a + chunk, n_trials)) for a in range(0, n_trials, chunk)
    ]


def _run_trials(payload: _PointPayload, offset: int, n_trials: int, workers: int):
    bounds = _chunk_bounds(n_trials, offset, workers)
    if workers <= 1 or len(bounds) == 1:
        chunks = [_run_chunk(payload, a, b) for a, b in bounds]
    else:
        with multiprocessing.Pool(
            processes=workers, initializer=_init_worker, initargs=(payload,)
        ) as pool:
            chunks = pool.map(_chunk_worker, bounds)
    xi = np.concatenate([c[0] for c in chunks])
    err = np.concatenate([c[1] for c in chunks])
    iters = np.concatenate([c[2] for c in chunks])
    redraws = sum(c[3] for c in chunks)
    extras = None
    if payload.with_oracle:
        extras = (
            np.concatenate([c[4] for c in chunks]),
            np.concatenate([c[5] for c in chunks]),
        )
    return xi, err, iters, redraws, extras


def run_point(
    config: ScenarioConfig,
    trials: int,
    master_seed: int,
    axis_index: int = 0,
    settings: AmpSettings | None = None,
    workers: int = 1,
    fixed_codebooks: bool = False,
    stopping: StoppingRule | None = None,
    axis_value=None,
) -> tuple[ResultRow, TrialOutcomes]:
    """Estimate the error rate of one configuration point."""
    settings = settings or AmpSettings()
    stopping = stopping or StoppingRule()
    coding_code = _CODING_CODE[config.coding]
    fixed = None
    if fixed_codebooks:
        seed = np.random.SeedSequence([master_seed, axis_index, coding_code])
        fixed = gen_gaussian_codebooks(config, np.random.default_rng(seed))
    payload = _PointPayload(
        config=config,
        settings=settings,
        ctx=context_for_config(config),
        master_seed=master_seed,
        axis_index=axis_index,
        coding_code=coding_code,
        fixed_codebooks=fixed,
    )
    t0 = time.perf_counter()
    if stopping.mode == "fixed":
        xi, err, iters, redraws, _ = _run_trials(payload, 0, trials, workers)
    else:
        parts, done = [], 0
        while done < trials:
            batch = min(stopping.batch, trials - done)
            parts.append(_run_trials(payload, done, batch, workers))
            done += batch
            n_err = sum(int(p[1].sum()) for p in parts)
            n = done * config.M
            p_hat = n_err / n
            ci = 1.96 * np.sqrt(p_hat * (1.0 - p_hat) / n)
            if n_err and ci <= stopping.rel_halfwidth * p_hat:
                break
        xi = np.concatenate([p[0] for p in parts])
        err = np.concatenate([p[1] for p in parts])
        iters = np.concatenate([p[2] for p in parts])
        redraws = sum(p[3] for p in parts)
    wall = time.perf_counter() - t0
    outcomes = TrialOutcomes(xi=xi, errors=err, iters=iters, redraws=redraws)
    if redraws > 0.05 * outcomes.trials:
        raise SweepDivergenceError(
            f"{redraws} divergent redraws over {outcomes.trials} trials (> 5%)"
        )
    row = estimate_error_rate(outcomes, config, axis_value=axis_value, wall_time_s=wall)
    return row, outcomes


def run_sweep(
    spec: SweepSpec, workers: int = 1
) -> dict[Coding, list[ResultRow]]:
    """All (axis value, coding) points of a sweep, in deterministic order.

    Per-trial seeds are derived from (master_seed, axis index, coding,
    trial index), so rows do not depend on the worker count or on which
    codings/values are run together.
    """
    results: dict[Coding, list[ResultRow]] = {}
    for coding in spec.codings:
        rows = []
        for axis_index, value in enumerate(spec.values):
            config = spec.config_for(value, coding)
            log.info("sweep point %s=%s coding=%s", spec.axis, value, coding.value)
            row, _ = run_point(
                config,
                trials=spec.trials,
                master_seed=spec.master_seed,
                axis_index=axis_index,
                settings=spec.amp,
                workers=workers,
                fixed_codebooks=spec.fixed_codebooks,
                stopping=spec.confidence,
                axis_value=value,
            )
            rows.append(row)
        results[coding] = rows
    return results


def compare_detectors(
    config: ScenarioConfig,
    trials: int,
    master_seed: int,
    settings: AmpSettings | None = None,
    workers: int = 1,
    budget: int = DEFAULT_BUDGET,
) -> dict:
    """AMP and exact marginal-MAP on identical trials.

    Returns per-detector error rates and the per-event decision agreement
    fraction. Requires perfect local estimation (the oracle's model).
    """
    if config.local_error_prob != 0:
        raise ConfigError("oracle comparison requires local_error_prob == 0")
    n_hyp = (config.R + 1) ** config.M
    if n_hyp > budget:
        from .errors import EnumerationBudgetError

        raise EnumerationBudgetError(n_hyp, budget)
    payload = _PointPayload(
        config=config,
        settings=settings or AmpSettings(),
        ctx=context_for_config(config),
        master_seed=master_seed,
        axis_index=0,
        coding_code=_CODING_CODE[config.coding],
        fixed_codebooks=None,
        with_oracle=True,
        oracle_budget=budget,
    )
    xi, amp_err, iters, redraws, (map_err, agree) = _run_trials(
        payload, 0, trials, workers
    )
    n = xi.size
    return {
        "coding": config.coding.value,
        "M": config.M,
        "R": config.R,
        "N": config.N,
        "G": config.uniform_group_size,
        "rho": config.rho,
        "snr_db": config.snr_db,
        "trials": trials,
        "event_decisions": n,
        "amp_error_rate": int(amp_err.sum()) / n,
        "map_error_rate": int(map_err.sum()) / n,
        "agreement": int(agree.sum()) / n,
        # discordant decision counts, for paired significance tests
        "amp_only_errors": int((amp_err & ~map_err).sum()),
        "map_only_errors": int((map_err & ~amp_err).sum()),
        "divergent_redraws": redraws,
    }


# ---------------------------------------------------------------------------
# Persistence.

def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_rows_csv(path, rows: list[ResultRow]) -> None:
    """Write rows atomically (temp file + rename) so an interrupted run
    never leaves a partial CSV behind."""
    path = os.fspath(path)
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        d = dataclasses.asdict(row)
        lines.append(",".join(format_cell(d[c]) for c in CSV_COLUMNS))
    body = "\n".join(lines) + "\n"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_rows_csv(path) -> list[dict]:
    import csv as _csv

    with open(path, newline="") as fh:
        return list(_csv.DictReader(fh))


def write_manifest(path, spec: SweepSpec, results: dict[Coding, list[ResultRow]],
                   workers: int) -> None:
    doc = {
        "version": __version__,
        "backend": active_backend(),
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "workers": workers,
        "spec": {
            "axis": spec.axis,
            "values": list(spec.values),
            "codings": [c.value for c in spec.codings],
            "trials": spec.trials,
            "master_seed": spec.master_seed,
            "fixed_codebooks": spec.fixed_codebooks,
            "confidence": dataclasses.asdict(spec.confidence),
            "amp": dataclasses.asdict(spec.amp),
            "base": spec.base.to_json_dict(),
        },
        "rows": {
            coding.value: [
                {"axis_value": row.axis_value, "wall_time_s": row.wall_time_s,
                 "divergent_redraws": row.divergent_redraws}
                for row in rows
            ]
            for coding, rows in results.items()
        },
    }
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
