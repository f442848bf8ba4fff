"""Hot numeric kernels: exact scalar samplers and per-row Gibbs sweep loops.

Written as plain scalar/loop code so the same source runs compiled under
numba or as pure Python (``MIXIMPUTE_NUMBA=0``).  All randomness flows
through an explicit ``numpy.random.Generator``; numba's Generator support
is bit-compatible with numpy, so the two backends yield identical streams.
"""

from __future__ import annotations

import math

import numpy as np

from ._jit import NUMBA_ENABLED, njit

__all__ = [
    "NUMBA_ENABLED",
    "pg_draw",
    "pg_vector",
    "truncnorm_draw",
    "categorical_from_logits",
    "sweep_z",
    "sweep_ystar_obs",
    "sweep_ymis",
]

_SQRT2 = math.sqrt(2.0)
_LOG2PI = math.log(2.0 * math.pi)
# Devroye's threshold between the inverse-Gaussian body and the
# exponential tail of the Jacobi-type proposal.
_PG_TRUNC = 0.64


@njit(cache=True)
def _log_norm_cdf(x):
    """log Phi(x), stable far into the lower tail."""
    if x > -25.0:
        return math.log(0.5 * math.erfc(-x / _SQRT2))
    ax = -x
    return -0.5 * ax * ax - math.log(ax) - 0.5 * _LOG2PI + math.log1p(-1.0 / (ax * ax))


@njit(cache=True)
def _pg_coef(n, x):
    """Alternating-series coefficient a_n(x) of the Jacobi density."""
    np_half = n + 0.5
    if x <= _PG_TRUNC:
        return (
            math.pi
            * np_half
            * (2.0 / (math.pi * x)) ** 1.5
            * math.exp(-2.0 * np_half * np_half / x)
        )
    return math.pi * np_half * math.exp(-0.5 * np_half * np_half * math.pi * math.pi * x)


@njit(cache=True)
def _pg_right_prob(z):
    """P(proposal falls in the exponential tail), i.e. p/(p+q)."""
    t = _PG_TRUNC
    fz = 0.125 * math.pi * math.pi + 0.5 * z * z
    rt = math.sqrt(t)
    b = (z * t - 1.0) / rt
    a = -(z * t + 1.0) / rt
    x0 = math.log(fz) + fz * t
    xb = x0 - z + _log_norm_cdf(b)
    xa = x0 + z + _log_norm_cdf(a)
    if xb > 690.0 or xa > 690.0:
        return 0.0
    qdivp = 4.0 / math.pi * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + qdivp)


@njit(cache=True)
def _rtigauss(z, r, gen):
    """Inverse-Gaussian(mu=1/z, lambda=1) truncated to (0, r); z >= 0."""
    if z < 1.0 / r:
        # mean beyond the truncation point: sample a truncated Levy
        # (the z=0 law) and thin by the exp(-z^2 x / 2) tilt.
        while True:
            while True:
                e1 = gen.standard_exponential()
                e2 = gen.standard_exponential()
                if e1 * e1 <= 2.0 * e2 / r:
                    break
            x = r / ((1.0 + r * e1) * (1.0 + r * e1))
            if gen.random() <= math.exp(-0.5 * z * z * x):
                return x
    else:
        mu = 1.0 / z
        while True:
            y = gen.standard_normal()
            y = y * y
            muy = mu * y
            x = mu + 0.5 * mu * muy - 0.5 * mu * math.sqrt(4.0 * muy + muy * muy)
            if gen.random() > mu / (mu + x):
                x = mu * mu / x
            if x <= r:
                return x


@njit(cache=True)
def pg_draw(c, gen):
    """Exact draw from PG(1, c) (Devroye alternating-series rejection)."""
    z = 0.5 * abs(c)
    fz = 0.125 * math.pi * math.pi + 0.5 * z * z
    p_right = _pg_right_prob(z)
    while True:
        if gen.random() < p_right:
            x = _PG_TRUNC + gen.standard_exponential() / fz
        else:
            x = _rtigauss(z, _PG_TRUNC, gen)
        s = _pg_coef(0, x)
        y = gen.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _pg_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _pg_coef(n, x)
                if y > s:
                    break


@njit(cache=True)
def pg_vector(c, out, gen):
    for i in range(c.shape[0]):
        out[i] = pg_draw(c[i], gen)


@njit(cache=True)
def _tn_lower(a, gen):
    """Standard normal conditioned on x >= a."""
    if a <= 0.45:
        while True:
            x = gen.standard_normal()
            if x >= a:
                return x
    # Robert (1995) translated-exponential rejection for the far tail.
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        x = a + gen.standard_exponential() / alpha
        d = x - alpha
        if gen.random() <= math.exp(-0.5 * d * d):
            return x


@njit(cache=True)
def _tn_interval(a, b, gen):
    """Standard normal conditioned on a <= x <= b (both finite)."""
    if b <= 0.0:
        return -_tn_interval(-b, -a, gen)
    if a <= 0.0:
        # interval straddles the mode
        if b - a < 1.0:
            while True:
                x = a + (b - a) * gen.random()
                if gen.random() <= math.exp(-0.5 * x * x):
                    return x
        while True:
            x = gen.standard_normal()
            if a <= x <= b:
                return x
    # interval within the upper tail
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    if (b - a) * alpha < 0.8:
        # narrow: uniform proposal under the density bound at a
        while True:
            x = a + (b - a) * gen.random()
            if gen.random() <= math.exp(0.5 * (a * a - x * x)):
                return x
    while True:
        x = a + gen.standard_exponential() / alpha
        if x > b:
            continue
        d = x - alpha
        if gen.random() <= math.exp(-0.5 * d * d):
            return x


@njit(cache=True)
def truncnorm_draw(mu, sd, lo, hi, gen):
    """N(mu, sd^2) conditioned on the open interval (lo, hi)."""
    while True:
        if lo == -np.inf and hi == np.inf:
            x = mu + sd * gen.standard_normal()
        elif hi == np.inf:
            x = mu + sd * _tn_lower((lo - mu) / sd, gen)
        elif lo == -np.inf:
            x = mu - sd * _tn_lower((mu - hi) / sd, gen)
        else:
            x = mu + sd * _tn_interval((lo - mu) / sd, (hi - mu) / sd, gen)
        if lo < x < hi:
            return x


@njit(cache=True)
def categorical_from_logits(logw, gen):
    """Index g with probability softmax(logw)_g (max-subtracted)."""
    n = logw.shape[0]
    m = logw[0]
    for g in range(1, n):
        if logw[g] > m:
            m = logw[g]
    tot = 0.0
    for g in range(n):
        tot += math.exp(logw[g] - m)
    u = gen.random() * tot
    acc = 0.0
    for g in range(n - 1):
        acc += math.exp(logw[g] - m)
        if u < acc:
            return g
    return n - 1


@njit(cache=True)
def sweep_z(ystar, means, mixlog, pat_id, obs_idx, n_obs, cholL, zconst, z, gen):
    """Draw z_i ~ Categorical(mixing x observed-pattern Gaussian marginal).

    Missing coordinates are marginalized out (collapsed); cholL/zconst hold
    per-(pattern, component) Cholesky factors of the observed submatrices.
    Returns the observed-data log likelihood of the current parameters as a
    free by-product.
    """
    n, G = mixlog.shape
    p = ystar.shape[1]
    logw = np.empty(G)
    r = np.empty(p)
    loglik = 0.0
    for i in range(n):
        pid = pat_id[i]
        no = n_obs[pid]
        mmax = mixlog[i, 0]
        for g in range(1, G):
            if mixlog[i, g] > mmax:
                mmax = mixlog[i, g]
        lse_mix = 0.0
        for g in range(G):
            lse_mix += math.exp(mixlog[i, g] - mmax)
        lse_mix = mmax + math.log(lse_mix)
        for g in range(G):
            lw = mixlog[i, g]
            if no > 0:
                q = 0.0
                for a in range(no):
                    k = obs_idx[pid, a]
                    acc = ystar[i, k] - means[i, g, k]
                    for b in range(a):
                        acc -= cholL[pid, g, a, b] * r[b]
                    rv = acc / cholL[pid, g, a, a]
                    r[a] = rv
                    q += rv * rv
                lw += zconst[pid, g] - 0.5 * q
            logw[g] = lw
        wmax = logw[0]
        for g in range(1, G):
            if logw[g] > wmax:
                wmax = logw[g]
        tot = 0.0
        for g in range(G):
            v = math.exp(logw[g] - wmax)
            logw[g] = v
            tot += v
        u = gen.random() * tot
        acc2 = 0.0
        zi = G - 1
        for g in range(G - 1):
            acc2 += logw[g]
            if u < acc2:
                zi = g
                break
        z[i] = zi
        loglik += (wmax + math.log(tot)) - lse_mix
    return loglik


@njit(cache=True)
def sweep_ystar_obs(
    ystar, means, pat_id, obs_idx, n_obs, condw, condsd, lo, hi, is_disc, z, gen
):
    """Refresh latent y* at observed discrete cells.

    Each cell is drawn from its Gaussian conditional given the row's OTHER
    OBSERVED coordinates (missing coordinates marginalized out), truncated
    to the interval encoding the observed discrete value.
    """
    n = ystar.shape[0]
    for i in range(n):
        pid = pat_id[i]
        no = n_obs[pid]
        g = z[i]
        for j in range(no):
            k = obs_idx[pid, j]
            if not is_disc[k]:
                continue
            m = means[i, g, k]
            for l in range(no):
                if l == j:
                    continue
                kl = obs_idx[pid, l]
                m += condw[pid, g, j, l] * (ystar[i, kl] - means[i, g, kl])
            ystar[i, k] = truncnorm_draw(m, condsd[pid, g, j], lo[i, k], hi[i, k], gen)


@njit(cache=True)
def sweep_ymis(ystar, means, pat_id, obs_idx, n_obs, mis_idx, n_mis, W, cholS, z, gen):
    """Draw the missing y* coordinates jointly given the observed ones."""
    n, p = ystar.shape
    dev = np.empty(p)
    eps = np.empty(p)
    for i in range(n):
        pid = pat_id[i]
        nm = n_mis[pid]
        if nm == 0:
            continue
        no = n_obs[pid]
        g = z[i]
        for a in range(no):
            k = obs_idx[pid, a]
            dev[a] = ystar[i, k] - means[i, g, k]
        for a in range(nm):
            eps[a] = gen.standard_normal()
        for a in range(nm):
            k = mis_idx[pid, a]
            m = means[i, g, k]
            for b in range(no):
                m += W[pid, g, a, b] * dev[b]
            for b in range(a + 1):
                m += cholS[pid, g, a, b] * eps[b]
            ystar[i, k] = m
