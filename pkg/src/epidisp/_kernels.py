"""
Compiled inner loops for the latent-state sampler.

Everything here operates on plain arrays laid out as:
  inf   (C, U) int64   latent infections; U = d_init + T, column u is
                        observation day u - d_init (seed days come first)
  cases (C, T) float64  observed onset counts
  R     (C, T) float64  instantaneous reproductive numbers
  Lld   (C, T) float64  viral load (generation-time weighted past infections)
  M     (C, T) float64  Poisson case intensity
  astart (C,)  int64    first latent column of each compartment; columns
                        before it are structurally zero, the next d_init
                        columns are the seeded initialization

Per-day log-likelihood terms are cached in trans_ll / meas_ll so the sweep
only evaluates terms a proposal actually changes.
"""

import math

import numpy as np
from numba import njit

NEG_INF = -1e300


@njit(cache=True, nogil=True, inline="always")
def nb_term(x, r, psi, load):
    """NB log-pmf of count x with mean r*load and dispersion psi*load."""
    if load <= 0.0:
        return 0.0 if x == 0 else NEG_INF
    mu = r * load
    k = psi * load
    return (
        math.lgamma(x + k)
        - math.lgamma(k)
        - math.lgamma(x + 1.0)
        - k * math.log1p(mu / k)
        + x * (math.log(mu) - math.log(mu + k))
    )


@njit(cache=True, nogil=True, inline="always")
def pois_term(x, m):
    if m <= 0.0:
        return 0.0 if x == 0.0 else NEG_INF
    return x * math.log(m) - m - math.lgamma(x + 1.0)


@njit(cache=True, nogil=True, inline="always")
def seed_term(x, m):
    """Log-pmf of a rounded exponential with mean m at integer x >= 0."""
    if x == 0:
        return math.log1p(-math.exp(-0.5 / m))
    return -(x - 0.5) / m + math.log1p(-math.exp(-1.0 / m))


@njit(cache=True, nogil=True)
def compute_load(inf, w, d_init):
    """Delay-weighted sums of past infections per observation day."""
    C, U = inf.shape
    T = U - d_init
    L = len(w)
    out = np.zeros((C, T))
    for c in range(C):
        for t in range(T):
            u = d_init + t
            top = L if L < u else u
            acc = 0.0
            for l in range(1, top + 1):
                acc += w[l - 1] * inf[c, u - l]
            out[c, t] = acc
    return out


@njit(cache=True, nogil=True)
def fill_trans_ll(inf, R, Lld, psi_c, astart, d_init, out):
    """Per-day transmission terms; zero outside each compartment's window."""
    C, U = inf.shape
    T = U - d_init
    total = 0.0
    for c in range(C):
        for t in range(T):
            out[c, t] = 0.0
        first = astart[c]  # t >= astart[c] <=> full column t + d_init is generated
        for t in range(first, T):
            term = nb_term(inf[c, t + d_init], R[c, t], psi_c[c], Lld[c, t])
            out[c, t] = term
            total += term
    return total


@njit(cache=True, nogil=True)
def fill_meas_ll(cases, M, out):
    C, T = cases.shape
    total = 0.0
    for c in range(C):
        for t in range(T):
            term = pois_term(cases[c, t], M[c, t])
            out[c, t] = term
            total += term
    return total


@njit(cache=True, nogil=True)
def trans_rows_ll(inf, R_rows, Lld_rows, psi_rows, a_rows, d_init, rows, out_rows):
    """Transmission terms for a subset of compartments with candidate inputs.

    R_rows/Lld_rows/out_rows are (n, T) arrays aligned to ``rows``; psi_rows
    and a_rows are (n,). Returns the summed log-likelihood.
    """
    n, T = R_rows.shape
    total = 0.0
    for i in range(n):
        c = rows[i]
        for t in range(T):
            out_rows[i, t] = 0.0
        for t in range(a_rows[i], T):
            term = nb_term(inf[c, t + d_init], R_rows[i, t], psi_rows[i], Lld_rows[i, t])
            out_rows[i, t] = term
            total += term
    return total


@njit(cache=True, nogil=True)
def meas_rows_ll(cases_rows, M_rows, out_rows):
    n, T = cases_rows.shape
    total = 0.0
    for i in range(n):
        for t in range(T):
            term = pois_term(cases_rows[i, t], M_rows[i, t])
            out_rows[i, t] = term
            total += term
    return total


@njit(cache=True, nogil=True)
def latent_sweep(
    inf, cases, R, Lld, M, trans_ll, meas_ll,
    psi_c, w_i, w_s, r_rate, astart, d_init, seed_m,
    step_mean, order, u_sign, u_mag, u_acc,
    acc, prop, scratch_trans, scratch_meas,
):
    """One randomized sweep of integer random-walk updates over all day nodes.

    Proposals are symmetric: a geometric step size (per-node adapted mean)
    with a fair sign. Acceptance uses only the local terms the node touches:
    its own seed/NB term, downstream NB terms within the generation window,
    and downstream Poisson terms within the incubation window. Caches are
    updated in place on acceptance.
    """
    C, U = inf.shape
    T = U - d_init
    Li = len(w_i)
    Ls = len(w_s)
    for oi in range(U):
        t0 = order[oi]
        for c in range(C):
            a = astart[c]
            if t0 < a:
                continue
            old = inf[c, t0]
            p = 1.0 / step_mean[c, t0]
            if p >= 1.0:
                k = 1
            else:
                k = 1 + int(math.log(u_mag[t0, c]) / math.log(1.0 - p))
                if k < 1:
                    k = 1
            d = k if u_sign[t0, c] < 0.5 else -k
            new = old + d
            prop[c, t0] += 1
            if new < 0:
                continue

            gen0 = a + d_init
            dll = 0.0
            if t0 < gen0:
                dll += seed_term(new, seed_m) - seed_term(old, seed_m)
            else:
                t = t0 - d_init
                own_new = nb_term(new, R[c, t], psi_c[c], Lld[c, t])
                dll += own_new - trans_ll[c, t]

            ts_lo = t0 + 1
            if ts_lo < gen0:
                ts_lo = gen0
            ts_hi = t0 + Li
            if ts_hi > U - 1:
                ts_hi = U - 1
            for s in range(ts_lo, ts_hi + 1):
                w = w_i[s - t0 - 1]
                t = s - d_init
                if w == 0.0:
                    scratch_trans[s] = trans_ll[c, t]
                    continue
                lnew = Lld[c, t] + d * w
                term = nb_term(inf[c, s], R[c, t], psi_c[c], lnew)
                scratch_trans[s] = term
                dll += term - trans_ll[c, t]

            tm_lo = t0 + 1
            if tm_lo < d_init:
                tm_lo = d_init
            tm_hi = t0 + Ls
            if tm_hi > U - 1:
                tm_hi = U - 1
            for s in range(tm_lo, tm_hi + 1):
                w = w_s[s - t0 - 1]
                t = s - d_init
                if w == 0.0:
                    scratch_meas[s] = meas_ll[c, t]
                    continue
                mnew = M[c, t] + r_rate * d * w
                term = pois_term(cases[c, t], mnew)
                scratch_meas[s] = term
                dll += term - meas_ll[c, t]

            if dll >= 0.0 or math.log(u_acc[t0, c]) < dll:
                acc[c, t0] += 1
                inf[c, t0] = new
                if t0 >= gen0:
                    t = t0 - d_init
                    trans_ll[c, t] = nb_term(new, R[c, t], psi_c[c], Lld[c, t])
                for s in range(ts_lo, ts_hi + 1):
                    t = s - d_init
                    Lld[c, t] += d * w_i[s - t0 - 1]
                    trans_ll[c, t] = scratch_trans[s]
                for s in range(tm_lo, tm_hi + 1):
                    t = s - d_init
                    M[c, t] += r_rate * d * w_s[s - t0 - 1]
                    meas_ll[c, t] = scratch_meas[s]


@njit(cache=True, nogil=True)
def noise_sweep(
    eps, R, inf, Lld, trans_ll,
    psi_c, astart, d_init, noise_sd,
    comp_of_loc, n_comp_of_loc, scale, z, u_acc, acc, prop,
):
    """Random-walk updates of the per-(location, day) noise terms.

    Accepting a move rescales the R column of every compartment at that
    location and refreshes the affected cached transmission terms.
    """
    n_loc, T = eps.shape
    for l in range(n_loc):
        for t in range(T):
            e_old = eps[l, t]
            e_new = e_old + scale[l, t] * z[l, t]
            prop[l, t] += 1
            if 1.0 + e_new <= 0.0:
                continue
            fac = (1.0 + e_new) / (1.0 + e_old)
            dll = -0.5 * (e_new * e_new - e_old * e_old) / (noise_sd * noise_sd)
            for i in range(n_comp_of_loc[l]):
                c = comp_of_loc[l, i]
                if t < astart[c]:
                    continue
                u = t + d_init
                dll += nb_term(inf[c, u], R[c, t] * fac, psi_c[c], Lld[c, t]) - trans_ll[c, t]
            if dll >= 0.0 or math.log(u_acc[l, t]) < dll:
                acc[l, t] += 1
                eps[l, t] = e_new
                for i in range(n_comp_of_loc[l]):
                    c = comp_of_loc[l, i]
                    R[c, t] *= fac
                    if t >= astart[c]:
                        u = t + d_init
                        trans_ll[c, t] = nb_term(inf[c, u], R[c, t], psi_c[c], Lld[c, t])
