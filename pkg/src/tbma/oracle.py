"""Exact Bayesian reference detector by hypothesis enumeration.

For every candidate event vector the received signal is zero-mean complex
Gaussian; conditioning on the states and perfect local estimates, each
device contributes a deterministic signature weighted by its CN(0, 1)
fading coefficient, so the covariance is sigma2*I plus the signatures'
outer products. Tractable only at desk scale; used to validate the AMP
detector.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .codebooks import SystemMatrix
from .errors import EnumerationBudgetError
from .model import Coding, EventVector, ReceivedSignal, ScenarioConfig
from .amp.common import detect as _argmax_detect
from .model import PosteriorBeliefs

DEFAULT_BUDGET = 10**6


def _log_prior_table(config: ScenarioConfig) -> np.ndarray:
    prior = np.full(config.R + 1, config.rho / config.R)
    prior[0] = 1.0 - config.rho
    with np.errstate(divide="ignore"):
        return np.log(prior)


def _device_signatures(
    xi: tuple[int, ...], system_matrix: SystemMatrix, config: ScenarioConfig
) -> np.ndarray:
    """N x K matrix whose column k is device k's transmitted signature."""
    layout = system_matrix.layout
    A = system_matrix.matrix
    B = np.zeros((system_matrix.N, config.K), dtype=np.complex128)
    for k, observed in enumerate(config.group_assignment):
        for m in observed:
            r = xi[m]
            if r > 0:
                B[:, k] += A[:, layout.pair_index[k, m] * layout.R + (r - 1)]
    return B


def _chol_loglik(cov: np.ndarray, y: np.ndarray) -> float:
    """log N_C(y; 0, cov) up to the -N*log(pi) constant.

    Guaranteed for noise variances >= 1e-12; below that, float rounding can
    make the assembled covariance numerically indefinite, in which case a
    trace-scaled ridge restores a usable factorization.
    """
    try:
        c, low = cho_factor(cov, lower=True)
    except np.linalg.LinAlgError:
        ridge = 1e-12 * np.real(np.trace(cov)) / cov.shape[0] + 1e-300
        c, low = cho_factor(cov + ridge * np.eye(cov.shape[0]), lower=True)
    quad = np.real(np.vdot(y, cho_solve((c, low), y)))
    logdet = 2.0 * np.sum(np.log(np.real(np.diag(c))))
    return -quad - logdet


def _hypothesis_loglik(y: np.ndarray, B: np.ndarray, sigma2: float) -> float:
    N = y.shape[0]
    cov = sigma2 * np.eye(N, dtype=np.complex128) + B @ B.conj().T
    return _chol_loglik(cov, y)


def exact_event_posteriors(
    received: ReceivedSignal,
    system_matrix: SystemMatrix,
    config: ScenarioConfig,
    budget: int = DEFAULT_BUDGET,
) -> np.ndarray:
    """Marginal per-event posteriors, exact under perfect local estimation.

    Enumerates all (R+1)^M hypotheses; raises
    :class:`tbma.errors.EnumerationBudgetError` beyond ``budget``.
    """
    n_hyp = (config.R + 1) ** config.M
    if n_hyp > budget:
        raise EnumerationBudgetError(n_hyp, budget)
    log_prior = _log_prior_table(config)
    y = received.y

    weights = np.empty(n_hyp)
    hypotheses = list(itertools.product(range(config.R + 1), repeat=config.M))
    for h, xi in enumerate(hypotheses):
        loglik = _hypothesis_loglik(y, _device_signatures(xi, system_matrix, config), received.sigma2)
        weights[h] = loglik + sum(log_prior[r] for r in xi)

    post = np.empty((config.M, config.R + 1))
    xi_table = np.asarray(hypotheses)
    norm = logsumexp(weights)
    for m in range(config.M):
        for r in range(config.R + 1):
            mask = xi_table[:, m] == r
            post[m, r] = (
                np.exp(logsumexp(weights[mask]) - norm) if mask.any() else 0.0
            )
    post /= post.sum(axis=1, keepdims=True)
    return post


def exact_map_detect(posteriors: np.ndarray | PosteriorBeliefs) -> EventVector:
    """Per-event argmax with the same tie rule as the AMP detector."""
    if isinstance(posteriors, PosteriorBeliefs):
        return _argmax_detect(posteriors)
    return EventVector(np.argmax(np.asarray(posteriors), axis=1))


class _CandidateScorer:
    """Scores event-vector hypotheses by their exact log posterior weight,
    caching every evaluation. Requires perfect local estimation.

    Batches covariance assembly and factorization across hypotheses; with
    disjoint groups the covariance is a sum of per-(event, value) blocks,
    which also enables cheap incremental updates during refinement.
    """

    def __init__(self, received, system_matrix, config):
        self.y = received.y
        self.sigma2 = received.sigma2
        self.sm = system_matrix
        self.config = config
        self.log_prior = _log_prior_table(config)
        self.fast = config.disjoint_groups
        if self.fast:
            self.contrib = _event_value_covariances(system_matrix, config)
        self.eye = received.sigma2 * np.eye(system_matrix.N, dtype=np.complex128)
        self.cache: dict[bytes, float] = {}

    def _cov(self, xi: np.ndarray) -> np.ndarray:
        cov = self.eye.copy()
        for m, r in enumerate(xi):
            if r > 0:
                cov += self.contrib[m][r - 1]
        return cov

    def _score_covs(self, covs: np.ndarray) -> np.ndarray:
        """Batched log N_C(y; 0, cov) over a (n, N, N) stack."""
        try:
            L = np.linalg.cholesky(covs)
        except np.linalg.LinAlgError:
            ridge = 1e-12 * np.real(np.trace(covs, axis1=1, axis2=2)) / covs.shape[1]
            covs = covs + (ridge + 1e-300)[:, None, None] * np.eye(covs.shape[1])
            L = np.linalg.cholesky(covs)
        z = np.linalg.solve(L, np.broadcast_to(self.y, covs.shape[:2])[..., None])[..., 0]
        quad = (np.abs(z) ** 2).sum(axis=1)
        logdet = 2.0 * np.log(np.abs(np.einsum("sii->si", L))).sum(axis=1)
        return -quad - logdet

    def score_many(self, xis: np.ndarray) -> np.ndarray:
        xis = np.ascontiguousarray(np.asarray(xis, dtype=np.int64))
        keys = [xi.tobytes() for xi in xis]
        todo: dict[bytes, np.ndarray] = {
            k: xi for k, xi in zip(keys, xis) if k not in self.cache
        }
        if todo:
            fresh = list(todo.items())
            if self.fast:
                covs = np.stack([self._cov(xi) for _, xi in fresh])
                logliks = self._score_covs(covs)
            else:
                logliks = np.array(
                    [
                        _hypothesis_loglik(
                            self.y,
                            _device_signatures(tuple(xi), self.sm, self.config),
                            self.sigma2,
                        )
                        for _, xi in fresh
                    ]
                )
            for (key, xi), ll in zip(fresh, logliks):
                self.cache[key] = float(ll) + float(self.log_prior[xi].sum())
        return np.array([self.cache[k] for k in keys])

    def score(self, xi: np.ndarray) -> float:
        return float(self.score_many(np.asarray(xi, dtype=np.int64)[None, :])[0])

    def _moves(self, cur: np.ndarray) -> np.ndarray:
        """Single-event changes plus active-to-inactive swaps, the dominant
        confusion mode when two codeword subsets explain the signal almost
        equally well."""
        M, R = self.config.M, self.config.R
        variants = []
        for m in range(M):
            for r in range(R + 1):
                if r == cur[m]:
                    continue
                v = cur.copy()
                v[m] = r
                variants.append(v)
        for a in np.nonzero(cur)[0]:
            for b in np.nonzero(cur == 0)[0]:
                for r in range(1, R + 1):
                    v = cur.copy()
                    v[a] = 0
                    v[b] = r
                    variants.append(v)
        return np.array(variants, dtype=np.int64)

    def refine(self, xi: np.ndarray, max_passes: int = 6) -> np.ndarray:
        """Greedy best-improvement search on the joint posterior weight,
        seeded at ``xi``; every evaluation stays cached."""
        cur = np.asarray(xi, dtype=np.int64).copy()
        best = self.score(cur)
        for _ in range(max_passes):
            variants = self._moves(cur)
            weights = self.score_many(variants)
            top = int(np.argmax(weights))
            if weights[top] <= best:
                break
            best = float(weights[top])
            cur = variants[top]
        return cur

    def posterior(self) -> np.ndarray:
        """Per-event posterior over every hypothesis scored so far."""
        xis = np.array(
            [np.frombuffer(k, dtype=np.int64) for k in self.cache], dtype=np.int64
        )
        weights = np.array(list(self.cache.values()))
        weights -= logsumexp(weights)
        w = np.exp(weights)
        post = np.zeros((self.config.M, self.config.R + 1))
        for h in range(len(xis)):
            post[np.arange(self.config.M), xis[h]] += w[h]
        post /= post.sum(axis=1, keepdims=True)
        return post


def candidate_event_posteriors(
    received: ReceivedSignal,
    system_matrix: SystemMatrix,
    config: ScenarioConfig,
    candidates: np.ndarray,
    refine: bool = False,
) -> np.ndarray:
    """Exact posterior restricted to a candidate set of event vectors.

    Re-ranks the (few) hypotheses an iterative detector passed through with
    the same marginal likelihood the full oracle uses; cost is one small
    Cholesky per distinct hypothesis. With ``refine`` the best candidate is
    additionally improved by greedy per-event search, widening the set.
    """
    candidates = np.unique(np.asarray(candidates, dtype=np.int64), axis=0)
    scorer = _CandidateScorer(received, system_matrix, config)
    weights = scorer.score_many(candidates)
    if refine and len(candidates):
        scorer.refine(candidates[int(np.argmax(weights))])
    return scorer.posterior()


def _event_value_covariances(system_matrix: SystemMatrix, config: ScenarioConfig):
    """contrib[m][r-1] = covariance added when event m has value r
    (disjoint groups only: device signatures do not mix events)."""
    layout = system_matrix.layout
    A = system_matrix.matrix
    out = []
    for m, group in enumerate(config.groups):
        per_value = []
        for r in range(1, config.R + 1):
            if layout.coding is Coding.JSC:
                a = A[:, m * layout.R + (r - 1)]
                per_value.append(len(group) * np.outer(a, a.conj()))
            else:
                cols = np.stack(
                    [A[:, layout.pair_index[k, m] * layout.R + (r - 1)] for k in group],
                    axis=1,
                )
                per_value.append(cols @ cols.conj().T)
        out.append(per_value)
    return out


def exact_joint_map_detect(
    received: ReceivedSignal,
    system_matrix: SystemMatrix,
    config: ScenarioConfig,
    budget: int = DEFAULT_BUDGET,
) -> EventVector:
    """Diagnostic: the jointly most probable event vector (sequence MAP),
    which generally differs from the per-event marginal MAP."""
    n_hyp = (config.R + 1) ** config.M
    if n_hyp > budget:
        raise EnumerationBudgetError(n_hyp, budget)
    log_prior = _log_prior_table(config)
    best, best_xi = -np.inf, None
    for xi in itertools.product(range(config.R + 1), repeat=config.M):
        w = _hypothesis_loglik(
            received.y, _device_signatures(xi, system_matrix, config), received.sigma2
        ) + sum(log_prior[r] for r in xi)
        if w > best:
            best, best_xi = w, xi
    return EventVector(np.asarray(best_xi))
