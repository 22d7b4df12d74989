"""Monte-Carlo engine: determinism, metrics, stopping, divergence policy."""

import dataclasses
import json

import numpy as np
import pytest

import tbma.harness as harness
from tbma import ScenarioConfig, assemble_system_matrix, gen_orthogonal_codebooks
from tbma.amp import AmpSettings
from tbma.errors import ConfigError, DivergenceError, SweepDivergenceError
from tbma.harness import (
    ResultRow,
    StoppingRule,
    SweepSpec,
    TrialOutcomes,
    compare_detectors,
    estimate_error_rate,
    run_point,
    run_sweep,
    run_trial,
    write_rows_csv,
)
from tbma.model import Coding


def small_config(coding="JSC", **kw):
    defaults = dict(M=4, R=1, G=2, rho=0.2, snr_db=12.0, N=5)
    defaults.update(kw)
    return ScenarioConfig.disjoint(coding=coding, **defaults)


def small_spec(**kw):
    defaults = dict(
        base=small_config(),
        axis="group_size",
        values=(1, 2),
        codings=(Coding.SSC, Coding.JSC),
        trials=40,
        master_seed=77,
    )
    defaults.update(kw)
    return SweepSpec(**defaults)


class TestSweepSpec:
    def test_values_must_increase(self):
        with pytest.raises(ConfigError):
            small_spec(values=(2, 2))
        with pytest.raises(ConfigError):
            small_spec(values=())

    def test_axis_aliases(self):
        assert small_spec(axis="G").axis == "group_size"
        assert small_spec(axis="rho", values=(0.1, 0.2)).axis == "activation"

    def test_config_for_each_axis(self):
        spec = small_spec(axis="codeword_length", values=(4, 8))
        assert spec.config_for(8, Coding.SSC).N == 8
        spec = small_spec(axis="activation", values=(0.05, 0.5))
        assert spec.config_for(0.5, Coding.JSC).rho == 0.5
        spec = small_spec(axis="snr_db", values=(4.0, 16.0))
        assert spec.config_for(16.0, Coding.JSC).snr_db == 16.0
        spec = small_spec(axis="group_size", values=(1, 4))
        cfg = spec.config_for(4, Coding.SSC)
        assert cfg.K == 16 and cfg.coding is Coding.SSC

    def test_flat_json_schema(self):
        doc = {
            "M": 4, "R": 1, "G": 2, "rho": 0.2, "snr_db": 12, "N": 5,
            "axis": "group_size", "values": [1, 2], "codings": ["SSC", "JSC"],
            "trials": 10, "master_seed": 3,
            "amp": {"damping": 0.5},
            "confidence": {"mode": "fixed"},
        }
        spec = SweepSpec.from_json_dict(doc)
        assert spec.amp.damping == 0.5
        assert spec.trials == 10
        assert spec.base.M == 4

    def test_group_size_axis_needs_disjoint_base(self):
        base = ScenarioConfig(
            M=2, R=1, K=3, group_assignment=((0,), (0, 1), (1,)),
            rho=0.2, snr_db=12, N=5,
        )
        with pytest.raises(ConfigError, match="disjoint"):
            small_spec(base=base, values=(1, 2))


class TestMetrics:
    def test_all_correct_gives_zero(self):
        out = TrialOutcomes(
            xi=np.zeros((10, 4), dtype=int),
            errors=np.zeros((10, 4), dtype=bool),
            iters=np.full(10, 7),
            redraws=0,
        )
        row = estimate_error_rate(out, small_config())
        assert row.error_rate == 0.0
        assert row.event_decisions == 40
        assert row.mean_amp_iters == 7.0
        assert row.error_rate_active is None  # no active decisions occurred
        assert row.error_rate_inactive == 0.0

    def test_half_wrong_binomial_ci(self):
        errors = np.zeros((10, 4), dtype=bool)
        errors[:5] = True
        out = TrialOutcomes(
            xi=np.ones((10, 4), dtype=int),
            errors=errors,
            iters=np.full(10, 3),
            redraws=2,
        )
        row = estimate_error_rate(out, small_config())
        assert row.error_rate == 0.5
        assert row.ci95_halfwidth == pytest.approx(1.96 * np.sqrt(0.25 / 40))
        assert row.divergent_redraws == 2
        assert row.error_rate_active == 0.5

    def test_recount_matches_naive_loop(self):
        rng = np.random.default_rng(0)
        xi = rng.integers(0, 2, size=(50, 4))
        errors = rng.random((50, 4)) < 0.3
        out = TrialOutcomes(xi=xi, errors=errors, iters=rng.integers(1, 9, 50),
                            redraws=0)
        row = estimate_error_rate(out, small_config())
        # Naive single-threaded recount over the stored bits.
        n = n_err = n_act = err_act = 0
        for t in range(50):
            for m in range(4):
                n += 1
                n_err += int(errors[t, m])
                if xi[t, m] > 0:
                    n_act += 1
                    err_act += int(errors[t, m])
        assert row.error_rate == n_err / n
        assert row.error_rate_active == err_act / n_act
        assert row.error_rate_inactive == (n_err - err_act) / (n - n_act)
        assert row.event_decisions == n

    def test_ci_coverage_on_synthetic_bernoulli(self):
        # The binomial 95% CI must cover the true p in >= 93% of repeats.
        rng = np.random.default_rng(1)
        p, n, reps, covered = 0.3, 500, 1000, 0
        cfg = small_config()
        for _ in range(reps):
            errors = rng.random((n // cfg.M, cfg.M)) < p
            out = TrialOutcomes(
                xi=np.ones_like(errors, dtype=int),
                errors=errors,
                iters=np.ones(n // cfg.M, dtype=int),
                redraws=0,
            )
            row = estimate_error_rate(out, cfg)
            covered += abs(row.error_rate - p) <= row.ci95_halfwidth
        assert covered / reps >= 0.93


class TestRunTrial:
    def test_same_seed_same_bits(self):
        cfg = small_config()
        cb = gen_orthogonal_codebooks(cfg)
        a = run_trial(cfg, cb, 123)
        b = run_trial(cfg, cb, 123)
        assert (a[0] == b[0]).all() and (a[1] == b[1]).all() and a[2] == b[2]

    def test_noise_free_orthogonal_all_correct(self):
        cfg = small_config(snr_db=200.0, M=4, G=2)
        sm = assemble_system_matrix(gen_orthogonal_codebooks(cfg), cfg)
        for seed in range(100):
            _, err, _ = run_trial(cfg, sm, seed)
            assert not err.any()


class TestRunPoint:
    def test_deterministic_across_worker_counts(self):
        cfg = small_config(coding="SSC")
        kw = dict(trials=60, master_seed=99, axis_index=1)
        row1, out1 = run_point(cfg, workers=1, **kw)
        row2, out2 = run_point(cfg, workers=3, **kw)
        assert (out1.xi == out2.xi).all()
        assert (out1.errors == out2.errors).all()
        assert (out1.iters == out2.iters).all()
        assert row1.error_rate == row2.error_rate
        assert row1.ci95_halfwidth == row2.ci95_halfwidth

    def test_rho_zero_never_fires(self):
        cfg = small_config(rho=0.0)
        row, _ = run_point(cfg, trials=2000, master_seed=5)
        assert row.error_rate < 1e-3

    def test_fixed_codebooks_mode_differs_and_is_deterministic(self):
        cfg = small_config()
        r1, _ = run_point(cfg, trials=50, master_seed=1, fixed_codebooks=True)
        r2, _ = run_point(cfg, trials=50, master_seed=1, fixed_codebooks=True)
        r3, _ = run_point(cfg, trials=50, master_seed=1, fixed_codebooks=False)
        assert r1.error_rate == r2.error_rate
        assert (r1.error_rate, r1.mean_amp_iters) != (r3.error_rate, r3.mean_amp_iters)

    def test_ci_stopping_rule_stops_early_and_deterministically(self):
        cfg = small_config(rho=0.5, snr_db=0.0)
        stop = StoppingRule(mode="target_rel_ci", rel_halfwidth=0.25, batch=100)
        r1, o1 = run_point(cfg, trials=5000, master_seed=2, stopping=stop)
        r2, o2 = run_point(cfg, trials=5000, master_seed=2, stopping=stop, workers=2)
        assert o1.trials < 5000
        assert o1.trials == o2.trials
        assert r1.error_rate == r2.error_rate
        assert r1.ci95_halfwidth <= 0.25 * r1.error_rate

    def test_monotone_snr_sanity(self):
        cfg8 = ScenarioConfig.disjoint(M=8, R=1, G=4, rho=0.15, snr_db=8.0, N=8)
        cfg16 = dataclasses.replace(cfg8, snr_db=16.0)
        r8, _ = run_point(cfg8, trials=10_000, master_seed=11)
        r16, _ = run_point(cfg16, trials=10_000, master_seed=11)
        assert r16.error_rate <= r8.error_rate


class TestDivergencePolicy:
    def test_redraws_are_counted_and_logged(self, monkeypatch, caplog):
        cfg = small_config()
        real_once = harness._trial_once

        def fail_sometimes(payload, trial_index, redraw):
            # Diverge on the first attempt of every 25th trial.
            if trial_index % 25 == 0 and redraw == 0:
                raise DivergenceError(3)
            return real_once(payload, trial_index, redraw)

        monkeypatch.setattr(harness, "_trial_once", fail_sometimes)
        with caplog.at_level("WARNING", logger="tbma"):
            row, out = run_point(cfg, trials=100, master_seed=0)
        assert out.redraws == 4
        assert row.divergent_redraws == 4
        assert any("diverged" in r.message for r in caplog.records)

    def test_excessive_divergence_fails_loudly(self, monkeypatch):
        cfg = small_config()
        real_once = harness._trial_once

        def fail_often(payload, trial_index, redraw):
            if trial_index % 2 == 0 and redraw == 0:
                raise DivergenceError(1)
            return real_once(payload, trial_index, redraw)

        monkeypatch.setattr(harness, "_trial_once", fail_often)
        with pytest.raises(SweepDivergenceError):
            run_point(cfg, trials=100, master_seed=0)


class TestSweep:
    def test_rows_in_deterministic_order_and_csv_identical(self, tmp_path):
        spec = small_spec(trials=30)
        res_a = run_sweep(spec, workers=1)
        res_b = run_sweep(spec, workers=2)
        for coding in spec.codings:
            pa, pb = tmp_path / f"a_{coding.value}.csv", tmp_path / f"b_{coding.value}.csv"
            write_rows_csv(pa, res_a[coding])
            write_rows_csv(pb, res_b[coding])
            assert pa.read_bytes() == pb.read_bytes()
        assert [r.axis_value for r in res_a[Coding.SSC]] == [1, 2]

    def test_rerun_is_bit_identical(self, tmp_path):
        spec = small_spec(trials=25)
        for attempt in ("x", "y"):
            res = run_sweep(spec, workers=1)
            write_rows_csv(tmp_path / f"{attempt}.csv", res[Coding.JSC])
        assert (tmp_path / "x.csv").read_bytes() == (tmp_path / "y.csv").read_bytes()

    def test_csv_has_documented_columns(self, tmp_path):
        spec = small_spec(trials=10, codings=(Coding.JSC,))
        res = run_sweep(spec, workers=1)
        path = tmp_path / "rows.csv"
        write_rows_csv(path, res[Coding.JSC])
        header = path.read_text().splitlines()[0].split(",")
        assert header == harness.CSV_COLUMNS
        assert "wall_time_s" not in header  # timings live in the manifest

    def test_single_trial_smoke_writes_one_row_per_point(self, tmp_path):
        spec = small_spec(trials=1)
        res = run_sweep(spec, workers=1)
        for coding in spec.codings:
            assert len(res[coding]) == len(spec.values)
            assert all(r.trials == 1 for r in res[coding])

    def test_manifest_written(self, tmp_path):
        spec = small_spec(trials=10, codings=(Coding.JSC,))
        res = run_sweep(spec, workers=1)
        harness.write_manifest(tmp_path / "m.json", spec, res, workers=1)
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["spec"]["axis"] == "group_size"
        assert len(doc["rows"]["JSC"]) == 2
        assert all("wall_time_s" in r for r in doc["rows"]["JSC"])


class TestOracleComparison:
    def test_small_instance_agreement(self):
        cfg = ScenarioConfig.disjoint(M=2, R=1, G=1, rho=0.1, snr_db=12.0, N=8)
        stats = compare_detectors(cfg, trials=400, master_seed=21)
        assert stats["map_error_rate"] <= stats["amp_error_rate"] + 0.01
        assert stats["agreement"] >= 0.9
        assert stats["event_decisions"] == 800

    def test_requires_perfect_estimation(self):
        cfg = small_config(coding="SSC", local_error_prob=0.1)
        with pytest.raises(ConfigError):
            compare_detectors(cfg, trials=10, master_seed=0)
