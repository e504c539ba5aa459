"""Pure-numpy vectorized round-simulation kernel.

Fallback twin of ``_kernels_numba.simulate_rounds``: identical sampling
recurrences evaluated with masked array updates, so every element goes
through the same float operations in the same order and the tallies come
out bit-identical.
"""
from __future__ import annotations

import numpy as np

MAX_PHOTONS = 60


def _poisson_icdf_vec(u, lam, p0):
    n = u.shape[0]
    k = np.zeros(n, dtype=np.int64)
    p = p0.copy()
    cdf = p.copy()
    step = 0
    active = u >= cdf
    while active.any() and step < MAX_PHOTONS:
        step += 1
        p[active] = p[active] * (lam[active] / step)
        cdf[active] = cdf[active] + p[active]
        k[active] += 1
        active &= u >= cdf
    return k


def _binomial_icdf_vec(u, n, p):
    out = np.zeros(n.shape[0], dtype=np.int64)
    full = p >= 1.0
    out[full] = n[full]
    live = (n > 0) & (p > 0.0) & ~full
    if not live.any():
        return out
    ul, nl, pl = u[live], n[live], p[live]
    q = np.ones(nl.shape[0])
    kmax = int(nl.max())
    for step in range(kmax):
        m = nl > step
        q[m] = q[m] * (1.0 - pl[m])
    cdf = q.copy()
    pm = q.copy()
    i = np.zeros(nl.shape[0], dtype=np.int64)
    active = (ul >= cdf) & (i < nl)
    while active.any():
        pm[active] = (
            pm[active]
            * ((nl[active] - i[active]) / (i[active] + 1.0))
            * (pl[active] / (1.0 - pl[active]))
        )
        i[active] += 1
        cdf[active] = cdf[active] + pm[active]
        active = (ul >= cdf) & (i < nl)
    out[live] = i
    return out


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

    k_sent = _poisson_icdf_vec(u_poisson, lam_sent, exp_neg_lam)
    eta_col = np.full(k_sent.shape[0], eta_arm)
    k_det = _binomial_icdf_vec(u_thin, k_sent, eta_col)
    k_l = _binomial_icdf_vec(u_split, k_det, w_left)
    k_r = k_det - k_l
    click_l = (k_l > 0) | (u_dark_l < p_d)
    click_r = (k_r > 0) | (u_dark_r < p_d)

    single = click_l ^ click_r
    both_mask = click_l & click_r
    is_k1 = k_sent == 1
    joint = pair_idx < 3

    sends = np.bincount(pair_idx, minlength=4).astype(np.int64)
    clicks = np.bincount(pair_idx[single], minlength=4).astype(np.int64)
    sends_k1 = np.bincount(pair_idx[joint & is_k1], minlength=3)[:3].astype(np.int64)
    both = int(both_mask.sum())

    sel = single & joint
    raw = (j_a[sel] - j_b[sel] + j_delta[sel]) % D
    group = raw % half
    flip = click_r[sel].astype(np.int64)
    flip[(raw >= lo) & (raw < hi)] ^= 1
    err = kappa_a[sel] != (kappa_b[sel] ^ flip)
    pair_sel = pair_idx[sel]

    flat = pair_sel * half + group
    group_clicks = np.bincount(flat, minlength=3 * half).reshape(3, half).astype(np.int64)
    group_errors = (
        np.bincount(flat[err], minlength=3 * half).reshape(3, half).astype(np.int64)
    )
    clicks_k1 = (
        np.bincount(flat[is_k1[sel]], minlength=3 * half).reshape(3, half).astype(np.int64)
    )

    return sends, clicks, group_clicks, group_errors, both, sends_k1, clicks_k1
