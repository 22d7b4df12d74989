"""Scenario config, priors, and sampling distributions."""

import numpy as np
import pytest

from tbma import (
    Coding,
    ScenarioConfig,
    encode,
    assemble_system_matrix,
    gen_gaussian_codebooks,
    local_estimates,
    sample_channel,
    sample_events,
)
from tbma.errors import ConfigError
from tbma.model import EventVector


def disjoint(M=4, R=1, G=2, rho=0.1, snr_db=12.0, N=6, coding="JSC", **kw):
    return ScenarioConfig.disjoint(
        M=M, R=R, G=G, rho=rho, snr_db=snr_db, N=N, coding=coding, **kw
    )


class TestScenarioConfig:
    def test_sigma2_from_snr(self):
        cfg = disjoint(snr_db=12.0, E=1.0)
        assert cfg.sigma2 == pytest.approx(10 ** (-1.2))
        assert cfg.sigma2 == pytest.approx(0.0631, rel=1e-3)
        assert disjoint(snr_db=0.0, E=2.0).sigma2 == pytest.approx(2.0)

    def test_disjoint_constructor(self):
        cfg = disjoint(M=3, G=4)
        assert cfg.K == 12
        assert cfg.group_sizes == (4, 4, 4)
        assert cfg.uniform_group_size == 4
        assert cfg.group_assignment[5] == (1,)

    def test_every_event_needs_an_observer(self):
        with pytest.raises(ConfigError, match="no observing device"):
            ScenarioConfig(
                M=2, R=1, K=1, group_assignment=((0,),), rho=0.1, snr_db=12, N=4
            )

    def test_rejects_bad_fields(self):
        with pytest.raises(ConfigError):
            disjoint(rho=1.5)
        with pytest.raises(ConfigError):
            disjoint(E=0.0)
        with pytest.raises(ConfigError):
            disjoint(M=0)
        with pytest.raises(ConfigError):
            disjoint(local_error_prob=1.0)

    def test_jsc_rejects_local_errors(self):
        with pytest.raises(ConfigError, match="local_error_prob"):
            disjoint(coding="JSC", local_error_prob=0.1)
        disjoint(coding="SSC", local_error_prob=0.1)  # fine

    def test_overlapping_groups_supported(self):
        cfg = ScenarioConfig(
            M=3,
            R=2,
            K=4,
            group_assignment=((0,), (0, 1), (1, 2), (2, 0)),
            rho=0.2,
            snr_db=10,
            N=8,
        )
        assert cfg.groups == ((0, 1, 3), (1, 2), (2, 3))
        assert cfg.uniform_group_size is None

    def test_json_round_trip(self):
        cfg = disjoint(M=3, G=2, coding="SSC", local_error_prob=0.05)
        again = ScenarioConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_json_g_shorthand(self):
        doc = {"M": 24, "R": 1, "G": 16, "rho": 0.1, "snr_db": 12, "N": 6,
               "coding": "JSC"}
        cfg = ScenarioConfig.from_json_dict(doc)
        assert cfg.K == 384
        assert cfg == disjoint(M=24, R=1, G=16)

    def test_json_unknown_field_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            ScenarioConfig.from_json_dict(
                {"M": 2, "R": 1, "G": 1, "rho": 0.1, "snr_db": 12, "N": 4,
                 "bogus": 3}
            )


class TestSampling:
    def test_rho_zero_all_inactive(self):
        cfg = disjoint(rho=0.0)
        ev = sample_events(cfg, np.random.default_rng(0))
        assert (ev.xi == 0).all()

    def test_rho_one_r_one_all_ones(self):
        cfg = disjoint(rho=1.0, R=1)
        ev = sample_events(cfg, np.random.default_rng(0))
        assert (ev.xi == 1).all()

    def test_event_prior_frequencies(self):
        # ~1e6 event draws; each value r >= 1 should appear w.p. rho / R.
        cfg = disjoint(M=24, R=2, rho=0.1)
        rng = np.random.default_rng(42)
        draws = 42_000
        counts = np.zeros(3, dtype=np.int64)
        for _ in range(draws):
            xi = sample_events(cfg, rng).xi
            counts += np.bincount(xi, minlength=3)
        n = draws * cfg.M
        p_hat = counts[1] / n
        sigma = np.sqrt(0.05 * 0.95 / n)
        assert abs(p_hat - 0.05) < 3 * sigma

    def test_channel_unit_variance(self):
        cfg = disjoint(M=1, G=100_000, N=2)
        rng = np.random.default_rng(3)
        h = np.concatenate([sample_channel(cfg, rng) for _ in range(10)])
        assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 0.01
        assert abs(h.mean()) < 0.01
        # real and imaginary parts carry half the power each
        assert np.var(h.real) == pytest.approx(0.5, rel=0.02)

    def test_channel_single_draw_finite(self):
        cfg = disjoint(M=1, G=1, N=2)
        h = sample_channel(cfg, np.random.default_rng(0))
        assert h.shape == (1,) and np.isfinite(h).all()

    def test_fixed_seed_reproducible(self):
        cfg = disjoint()
        a = sample_channel(cfg, np.random.default_rng(123))
        b = sample_channel(cfg, np.random.default_rng(123))
        assert (a == b).all()
        ea = sample_events(cfg, np.random.default_rng(5)).xi
        eb = sample_events(cfg, np.random.default_rng(5)).xi
        assert (ea == eb).all()

    def test_perfect_estimates_echo_truth(self):
        cfg = disjoint(M=3, G=2, R=2, rho=0.5)
        rng = np.random.default_rng(1)
        ev = sample_events(cfg, rng)
        est = local_estimates(ev, cfg, rng)
        for k, g in enumerate(cfg.group_assignment):
            for m in range(cfg.M):
                expected = ev.xi[m] if m in g else 0
                assert est[k, m] == expected

    def test_inactive_event_keeps_observers_silent(self):
        cfg = disjoint(M=2, G=3, rho=0.0)
        rng = np.random.default_rng(2)
        ev = sample_events(cfg, rng)
        est = local_estimates(ev, cfg, rng)
        assert (est == 0).all()

    def test_local_error_flip_rate(self):
        cfg = ScenarioConfig.disjoint(
            M=1, R=1, G=1000, rho=1.0, snr_db=12, N=2,
            coding="SSC", local_error_prob=0.3,
        )
        rng = np.random.default_rng(4)
        flips = total = 0
        for _ in range(100):
            ev = sample_events(cfg, rng)
            est = local_estimates(ev, cfg, rng)
            flips += int((est[:, 0] != ev.xi[0]).sum())
            total += cfg.K
        p_hat = flips / total
        sigma = np.sqrt(0.3 * 0.7 / total)
        assert abs(p_hat - 0.3) < 3 * sigma


class TestEffectiveVectorInvariants:
    def test_jsc_active_block_is_sum_of_g_fading_coeffs(self):
        # One nonzero entry per active block; its variance accumulates the
        # whole group, E|u|^2 = G within 5% over 1e5 trials.
        cfg = disjoint(M=2, R=1, G=4, rho=0.5)
        rng = np.random.default_rng(6)
        sm = assemble_system_matrix(gen_gaussian_codebooks(cfg, rng), cfg)
        samples = []
        for _ in range(100_000):
            ev = sample_events(cfg, rng)
            h = sample_channel(cfg, rng)
            est = local_estimates(ev, cfg, rng)
            u = encode(ev, est, h, sm).u.reshape(cfg.M, cfg.R)
            for m in range(cfg.M):
                if ev.xi[m] > 0:
                    block = u[m]
                    assert np.count_nonzero(block) == 1
                    samples.append(block[ev.xi[m] - 1])
                else:
                    assert not block_any_nonzero(u[m])
        emp = np.mean(np.abs(np.array(samples)) ** 2)
        assert abs(emp - 4.0) / 4.0 < 0.05

    def test_ssc_sparsity_count(self):
        cfg = ScenarioConfig(
            M=3, R=2, K=5,
            group_assignment=((0,), (0, 1), (1,), (2,), (2, 0)),
            rho=0.6, snr_db=12, N=8, coding="SSC",
        )
        rng = np.random.default_rng(7)
        sm = assemble_system_matrix(gen_gaussian_codebooks(cfg, rng), cfg)
        sizes = cfg.group_sizes
        for _ in range(50):
            ev = sample_events(cfg, rng)
            h = sample_channel(cfg, rng)
            est = local_estimates(ev, cfg, rng)
            u = encode(ev, est, h, sm).u
            expected = sum(sizes[m] for m in range(cfg.M) if ev.xi[m] != 0)
            assert np.count_nonzero(u) == expected


def block_any_nonzero(block):
    return bool(np.count_nonzero(block))


class TestEventVector:
    def test_validation(self):
        cfg = disjoint(M=3, R=2)
        EventVector(np.array([0, 1, 2])).validate(cfg)
        with pytest.raises(ConfigError):
            EventVector(np.array([0, 1])).validate(cfg)
        with pytest.raises(ConfigError):
            EventVector(np.array([0, 1, 3])).validate(cfg)
