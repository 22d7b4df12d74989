# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of ``numpy_backend``: the GAMP recursion and the structured
input denoiser as flat C loops. Semantics must match the NumPy module; only
the summation order (and hence the last few ulps) may differ."""

import numpy as np

from libc.math cimport exp, log, log1p, sqrt, isfinite

from tbma.errors import DivergenceError


cdef inline double _abs2(double complex z) noexcept:
    return z.real * z.real + z.imag * z.imag


cdef bint _denoise_core(
    const double complex[::1] rvec,
    const double[::1] taur,
    const long[::1] pair_event,
    const double[::1] v_pair,
    const double[:, ::1] log_prior,
    bint use_mix,
    const double[:, ::1] mix_log,
    int M,
    int R,
    double complex[::1] u_den,
    double[::1] tau_den,
    double[:, ::1] post,
    double[:, ::1] lam,
    double[:, ::1] ell_full,
    double[:, ::1] ellp,
) noexcept:
    """Fills u_den, tau_den, post. Returns False if post went non-finite."""
    cdef Py_ssize_t P = pair_event.shape[0]
    cdef Py_ssize_t p, m, j, r, d
    cdef double v, tau, g, ell, zmax, acc, total, pi, shrunk_abs2
    cdef double complex shrunk
    cdef bint ok = True

    for m in range(M):
        for j in range(R + 1):
            lam[m, j] = 0.0

    if not use_mix:
        for p in range(P):
            m = pair_event[p]
            v = v_pair[p]
            for r in range(R):
                d = p * R + r
                tau = taur[d]
                ell = _abs2(rvec[d]) * v / (tau * (tau + v)) - log1p(v / tau)
                lam[m, 1 + r] += ell
    else:
        for p in range(P):
            m = pair_event[p]
            v = v_pair[p]
            ell_full[p, 0] = 0.0
            for r in range(R):
                d = p * R + r
                tau = taur[d]
                ell_full[p, 1 + r] = (
                    _abs2(rvec[d]) * v / (tau * (tau + v)) - log1p(v / tau)
                )
            for j in range(R + 1):
                zmax = mix_log[j, 0] + ell_full[p, 0]
                for r in range(1, R + 1):
                    if mix_log[j, r] + ell_full[p, r] > zmax:
                        zmax = mix_log[j, r] + ell_full[p, r]
                acc = 0.0
                for r in range(R + 1):
                    acc += exp(mix_log[j, r] + ell_full[p, r] - zmax)
                ellp[p, j] = zmax + log(acc)
                lam[m, j] += ellp[p, j]

    for m in range(M):
        zmax = log_prior[m, 0] + lam[m, 0]
        for j in range(1, R + 1):
            if log_prior[m, j] + lam[m, j] > zmax:
                zmax = log_prior[m, j] + lam[m, j]
        total = 0.0
        for j in range(R + 1):
            post[m, j] = exp(log_prior[m, j] + lam[m, j] - zmax)
            total += post[m, j]
        for j in range(R + 1):
            post[m, j] /= total
            if not isfinite(post[m, j]):
                ok = False

    for p in range(P):
        m = pair_event[p]
        v = v_pair[p]
        for r in range(R):
            d = p * R + r
            tau = taur[d]
            g = v / (v + tau)
            if use_mix:
                pi = 0.0
                for j in range(R + 1):
                    pi += post[m, j] * exp(
                        mix_log[j, 1 + r] + ell_full[p, 1 + r] - ellp[p, j]
                    )
            else:
                pi = post[m, 1 + r]
            shrunk = g * rvec[d]
            shrunk_abs2 = _abs2(shrunk)
            u_den[d] = pi * shrunk
            tau_den[d] = pi * g * tau + pi * (1.0 - pi) * shrunk_abs2
    return ok


def denoise_pass(rvec, taur, pair_event, v_pair, log_prior, mix_log, int M, int R):
    """Run only the structured denoiser (for tests and direct use)."""
    cdef Py_ssize_t P = pair_event.shape[0]
    u_den = np.empty(P * R, dtype=np.complex128)
    tau_den = np.empty(P * R, dtype=np.float64)
    post = np.empty((M, R + 1), dtype=np.float64)
    lam = np.empty((M, R + 1), dtype=np.float64)
    ell_full = np.empty((P, R + 1), dtype=np.float64)
    ellp = np.empty((P, R + 1), dtype=np.float64)
    cdef bint use_mix = mix_log is not None
    mix = mix_log if use_mix else np.zeros((1, 1), dtype=np.float64)
    _denoise_core(
        np.ascontiguousarray(rvec, dtype=np.complex128),
        np.ascontiguousarray(taur, dtype=np.float64),
        np.ascontiguousarray(pair_event, dtype=np.int64),
        np.ascontiguousarray(v_pair, dtype=np.float64),
        np.ascontiguousarray(log_prior, dtype=np.float64),
        use_mix,
        np.ascontiguousarray(mix, dtype=np.float64),
        M,
        R,
        u_den,
        tau_den,
        post,
        lam,
        ell_full,
        ellp,
    )
    return u_den, tau_den, post


def gamp_run(
    y_in,
    double sigma2,
    A_in,
    pair_event_in,
    v_pair_in,
    log_prior_in,
    mix_log_in,
    prior_second_moment,
    int max_iters,
    double damping,
    double tol,
    double variance_floor,
):
    cdef const double complex[:, ::1] A = np.ascontiguousarray(A_in, dtype=np.complex128)
    cdef const double complex[::1] y = np.ascontiguousarray(y_in, dtype=np.complex128)
    cdef const long[::1] pair_event = np.ascontiguousarray(pair_event_in, dtype=np.int64)
    cdef const double[::1] v_pair = np.ascontiguousarray(v_pair_in, dtype=np.float64)
    cdef const double[:, ::1] log_prior = np.ascontiguousarray(log_prior_in, dtype=np.float64)
    cdef bint use_mix = mix_log_in is not None
    mix_arr = mix_log_in if use_mix else np.zeros((1, 1), dtype=np.float64)
    cdef const double[:, ::1] mix_log = np.ascontiguousarray(mix_arr, dtype=np.float64)

    cdef Py_ssize_t N = A.shape[0]
    cdef Py_ssize_t D = A.shape[1]
    cdef Py_ssize_t P = pair_event.shape[0]
    cdef int M = log_prior.shape[0]
    cdef int R = log_prior.shape[1] - 1

    A2_np = np.abs(np.asarray(A_in)) ** 2
    cdef const double[:, ::1] A2 = np.ascontiguousarray(A2_np, dtype=np.float64)

    u_np = np.zeros(D, dtype=np.complex128)
    tau_np = np.maximum(
        np.ascontiguousarray(prior_second_moment, dtype=np.float64), variance_floor
    )
    s_np = np.zeros(N, dtype=np.complex128)
    u_den_np = np.zeros(D, dtype=np.complex128)
    tau_den_np = tau_np.copy()
    post_np = np.empty((M, R + 1), dtype=np.float64)
    visited_np = np.empty((max_iters, M), dtype=np.int64)

    cdef double complex[::1] u = u_np
    cdef double[::1] tau = tau_np
    cdef double complex[::1] s = s_np
    cdef double complex[::1] u_den = u_den_np
    cdef double[::1] tau_den = tau_den_np
    cdef double[:, ::1] post = post_np
    cdef long[:, ::1] visited = visited_np

    cdef double[::1] taup = np.empty(N, dtype=np.float64)
    cdef double complex[::1] pvec = np.empty(N, dtype=np.complex128)
    cdef double complex[::1] s_new = np.empty(N, dtype=np.complex128)
    cdef double[::1] taus = np.empty(N, dtype=np.float64)
    cdef double[::1] acc1 = np.empty(D, dtype=np.float64)
    cdef double complex[::1] acc2 = np.empty(D, dtype=np.complex128)
    cdef double[::1] taur = np.empty(D, dtype=np.float64)
    cdef double complex[::1] rvec = np.empty(D, dtype=np.complex128)
    cdef double[:, ::1] lam = np.empty((M, R + 1), dtype=np.float64)
    cdef double[:, ::1] ell_full = np.empty((P, R + 1), dtype=np.float64)
    cdef double[:, ::1] ellp = np.empty((P, R + 1), dtype=np.float64)

    cdef Py_ssize_t i, d
    cdef int it = 0
    cdef int m, j, best
    cdef bint converged = False
    cdef bint ok
    cdef double tp, denom, delta2, scale2, beta1
    cdef double complex acc_c, un

    for it in range(1, max_iters + 1):
        # Output linear step with Onsager correction.
        for i in range(N):
            tp = 0.0
            acc_c = 0.0
            for d in range(D):
                tp += A2[i, d] * tau[d]
                acc_c = acc_c + A[i, d] * u[d]
            taup[i] = tp
            pvec[i] = acc_c - tp * s[i]
            denom = tp + sigma2
            s_new[i] = (y[i] - pvec[i]) / denom
            taus[i] = 1.0 / denom

        # Input linear step.
        for d in range(D):
            acc1[d] = 0.0
            acc2[d] = 0.0
        for i in range(N):
            for d in range(D):
                acc1[d] += A2[i, d] * taus[i]
                acc2[d] = acc2[d] + A[i, d].conjugate() * s_new[i]
        for d in range(D):
            if acc1[d] < 1e-300:
                acc1[d] = 1e-300
            taur[d] = 1.0 / acc1[d]
            if taur[d] < variance_floor:
                taur[d] = variance_floor
            rvec[d] = u[d] + taur[d] * acc2[d]

        ok = _denoise_core(
            rvec, taur, pair_event, v_pair, log_prior, use_mix, mix_log,
            M, R, u_den, tau_den, post, lam, ell_full, ellp,
        )
        for m in range(M):
            best = 0
            for j in range(1, R + 1):
                if post[m, j] > post[m, best]:
                    best = j
            visited[it - 1, m] = best

        # Damped updates and convergence measure.
        beta1 = 1.0 - damping
        delta2 = 0.0
        scale2 = 0.0
        for d in range(D):
            un = damping * u_den[d] + beta1 * u[d]
            delta2 += _abs2(un - u[d])
            scale2 += _abs2(un)
            u[d] = un
            if not (isfinite(un.real) and isfinite(un.imag)):
                ok = False
            tau[d] = tau_den[d] if tau_den[d] > variance_floor else variance_floor
        for i in range(N):
            s[i] = damping * s_new[i] + beta1 * s[i]
            if not (isfinite(s[i].real) and isfinite(s[i].imag)):
                ok = False
        if not ok:
            raise DivergenceError(it)
        if sqrt(delta2) <= tol * sqrt(scale2) or (scale2 == 0.0 and delta2 == 0.0):
            converged = True
            break

    return u_den_np, tau_den_np, post_np, it, converged, visited_np[:it]
