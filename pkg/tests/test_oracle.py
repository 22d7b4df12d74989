"""Exact enumeration detector: closed-form checks and optimality sanity."""

import numpy as np
import pytest

from tbma import (
    ScenarioConfig,
    assemble_system_matrix,
    encode,
    exact_event_posteriors,
    exact_joint_map_detect,
    exact_map_detect,
    gen_gaussian_codebooks,
    gen_orthogonal_codebooks,
    local_estimates,
    sample_channel,
    sample_events,
    transmit,
)
from tbma.errors import EnumerationBudgetError
from tbma.model import EventVector, ReceivedSignal


def run_instance(cfg, seed, orthogonal=False):
    rng = np.random.default_rng(seed)
    cb = gen_orthogonal_codebooks(cfg) if orthogonal else gen_gaussian_codebooks(cfg, rng)
    sm = assemble_system_matrix(cb, cfg)
    ev = sample_events(cfg, rng)
    h = sample_channel(cfg, rng)
    est = local_estimates(ev, cfg, rng)
    rx = transmit(encode(ev, est, h, sm), sm, cfg.sigma2, rng)
    return sm, ev, rx


class TestExactPosteriors:
    def test_two_hypothesis_closed_form(self):
        # M=1, R=1: the posterior must match the scalar Gaussian
        # likelihood-ratio formula obtained by Sherman-Morrison:
        # LR = exp(v |a^H y|^2 / (s2 (s2 + v E))) / (1 + v E / s2), v = G.
        cfg = ScenarioConfig.disjoint(M=1, R=1, G=3, rho=0.2, snr_db=8.0, N=5)
        for seed in range(20):
            sm, _, rx = run_instance(cfg, seed, orthogonal=True)
            a = sm.matrix[:, 0]
            E = np.vdot(a, a).real
            v, s2, rho = 3.0, cfg.sigma2, cfg.rho
            lr = np.exp(
                v * np.abs(np.vdot(a, rx.y)) ** 2 / (s2 * (s2 + v * E))
            ) / (1.0 + v * E / s2)
            expected = rho * lr / (rho * lr + (1.0 - rho))
            post = exact_event_posteriors(rx, sm, cfg)
            assert abs(post[0, 1] - expected) < 1e-10

    def test_posteriors_approach_prior_in_heavy_noise(self):
        cfg = ScenarioConfig.disjoint(M=2, R=2, G=2, rho=0.3, snr_db=-120.0, N=4)
        sm, _, rx = run_instance(cfg, 1)
        post = exact_event_posteriors(rx, sm, cfg)
        prior = np.array([0.7, 0.15, 0.15])
        assert np.abs(post - prior).max() < 1e-3

    def test_rows_normalized(self):
        cfg = ScenarioConfig.disjoint(M=3, R=2, G=2, rho=0.2, snr_db=12.0, N=6,
                                      coding="SSC")
        sm, _, rx = run_instance(cfg, 2)
        post = exact_event_posteriors(rx, sm, cfg)
        assert np.abs(post.sum(axis=1) - 1.0).max() < 1e-12

    def test_budget_error_names_the_budget(self):
        cfg = ScenarioConfig.disjoint(M=12, R=2, G=1, rho=0.1, snr_db=12.0, N=40)
        sm, _, rx = run_instance(cfg, 3)
        with pytest.raises(EnumerationBudgetError) as err:
            exact_event_posteriors(rx, sm, cfg, budget=100_000)
        assert "100000" in str(err.value)
        assert err.value.hypotheses == 3**12

    def test_cholesky_survives_tiny_noise(self):
        cfg = ScenarioConfig.disjoint(M=2, R=1, G=2, rho=0.2, snr_db=120.0, N=4)
        assert cfg.sigma2 == pytest.approx(1e-12)
        sm, _, rx = run_instance(cfg, 4)
        post = exact_event_posteriors(rx, sm, cfg)
        assert np.isfinite(post).all()

    def test_handles_overlapping_groups_exactly(self):
        # Devices observing two events make the active signatures
        # correlated; the per-device covariance assembly stays exact. A
        # noise-free read then pins the truth.
        cfg = ScenarioConfig(
            M=2, R=1, K=3, group_assignment=((0,), (0, 1), (1,)),
            rho=0.4, snr_db=90.0, N=8, coding="SSC",
        )
        rng = np.random.default_rng(5)
        sm = assemble_system_matrix(gen_gaussian_codebooks(cfg, rng), cfg)
        ev = EventVector(np.array([1, 1]))
        est = local_estimates(ev, cfg, rng)
        h = sample_channel(cfg, rng)
        rx = transmit(encode(ev, est, h, sm), sm, cfg.sigma2, rng)
        post = exact_event_posteriors(rx, sm, cfg)
        assert (exact_map_detect(post).xi == ev.xi).all()


class TestMapDetection:
    def test_tie_breaks_toward_inactive(self):
        post = np.array([[0.5, 0.5], [0.9, 0.1], [1 / 3, 1 / 3 + 1e-12]])
        xi = exact_map_detect(post[:2]).xi
        assert (xi == [0, 0]).all()

    def test_noise_free_orthogonal_recovers_truth(self):
        cfg = ScenarioConfig.disjoint(M=2, R=2, G=2, rho=0.5, snr_db=140.0, N=6)
        errors = 0
        for seed in range(100):
            sm, ev, rx = run_instance(cfg, seed, orthogonal=True)
            xi_hat = exact_map_detect(exact_event_posteriors(rx, sm, cfg)).xi
            errors += int((xi_hat != ev.xi).sum())
        assert errors == 0

    def test_joint_map_matches_marginal_on_easy_instances(self):
        cfg = ScenarioConfig.disjoint(M=2, R=1, G=1, rho=0.2, snr_db=40.0, N=8)
        for seed in range(10):
            sm, ev, rx = run_instance(cfg, seed)
            joint = exact_joint_map_detect(rx, sm, cfg).xi
            marg = exact_map_detect(exact_event_posteriors(rx, sm, cfg)).xi
            assert (joint == marg).all()

    def test_joint_map_budget(self):
        cfg = ScenarioConfig.disjoint(M=12, R=2, G=1, rho=0.1, snr_db=12.0, N=40)
        sm, _, rx = run_instance(cfg, 6)
        with pytest.raises(EnumerationBudgetError):
            exact_joint_map_detect(rx, sm, cfg, budget=1000)
