"""Numba-jitted round-simulation kernel.

The kernel is pure arithmetic on pregenerated random inputs: no RNG calls
and no transcendental functions inside, so its output is bit-identical to
the numpy fallback.  Sampling uses inverse-CDF transforms of uniforms; the
multiplication order in the recurrences must stay in sync with
``_kernels_numpy.py``.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MAX_PHOTONS = 60  # Poisson tail at the intensities used is < 1e-60 here


@njit(cache=True, nogil=True)
def _poisson_icdf(u, lam, p0):
    k = 0
    p = p0
    cdf = p
    while u >= cdf and k < MAX_PHOTONS:
        k += 1
        p = p * (lam / k)
        cdf = cdf + p
    return k


@njit(cache=True, nogil=True)
def _binomial_icdf(u, n, p):
    if n == 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    q = 1.0
    for _ in range(n):
        q = q * (1.0 - p)
    cdf = q
    pm = q
    i = 0
    while u >= cdf and i < n:
        pm = pm * ((n - i) / (i + 1.0)) * (p / (1.0 - p))
        i += 1
        cdf = cdf + pm
    return i


@njit(cache=True, nogil=True)
def simulate_rounds(
    pair_idx,
    j_a,
    j_b,
    kappa_a,
    kappa_b,
    j_delta,
    lam_sent,
    exp_neg_lam,
    w_left,
    u_poisson,
    u_thin,
    u_split,
    u_dark_l,
    u_dark_r,
    eta_arm,
    p_d,
    D,
):
    half = D // 2
    lo = D // 4
    hi = 3 * D // 4
    sends = np.zeros(4, dtype=np.int64)
    clicks = np.zeros(4, dtype=np.int64)
    group_clicks = np.zeros((3, half), dtype=np.int64)
    group_errors = np.zeros((3, half), dtype=np.int64)
    sends_k1 = np.zeros(3, dtype=np.int64)
    clicks_k1 = np.zeros((3, half), dtype=np.int64)
    both = 0

    for i in range(pair_idx.shape[0]):
        pair = pair_idx[i]
        k_sent = _poisson_icdf(u_poisson[i], lam_sent[i], exp_neg_lam[i])
        k_det = _binomial_icdf(u_thin[i], k_sent, eta_arm)
        k_l = _binomial_icdf(u_split[i], k_det, w_left[i])
        k_r = k_det - k_l
        click_l = k_l > 0 or u_dark_l[i] < p_d
        click_r = k_r > 0 or u_dark_r[i] < p_d

        sends[pair] += 1
        if pair < 3 and k_sent == 1:
            sends_k1[pair] += 1
        if click_l and click_r:
            both += 1
        elif click_l or click_r:
            clicks[pair] += 1
            if pair < 3:
                raw = (j_a[i] - j_b[i] + j_delta[i]) % D
                group = raw % half
                flip = 1 if click_r else 0
                if lo <= raw < hi:
                    flip = 1 - flip
                if kappa_a[i] != (kappa_b[i] ^ flip):
                    group_errors[pair, group] += 1
                group_clicks[pair, group] += 1
                if k_sent == 1:
                    clicks_k1[pair, group] += 1

    return sends, clicks, group_clicks, group_errors, both, sends_k1, clicks_k1
