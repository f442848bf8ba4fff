"""Statistical verification suites behind the `check` CLI command.

Every suite returns a list of CheckResult; a suite passes when all its
results pass.  The suites deliberately route through the production update
code so that a planted bug (see `mutated`) makes them fail.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from . import gibbs, kernels
from .cgmm import PriorConfig
from .data_model import Dataset, VariableKind
from .distributions import (
    gamma_log_moments,
    sample_inverse_wishart,
    sample_matrix_normal,
    sample_categorical_logits,
)
from .gibbs import ChainConfig, ChainState, _PriorCache, _Tables, sweep
from .rng import RngStream

__all__ = [
    "CheckResult",
    "mutated",
    "check_samplers",
    "check_prior_recovery",
    "check_conjugate",
    "check_geweke",
    "check_mixing_oracle",
    "run_suite",
    "SUITES",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@contextmanager
def mutated(name: str):
    """Plant a known bug in an update (test fixture for suite power)."""
    old = gibbs._MUTATION
    gibbs._MUTATION = name
    try:
        yield
    finally:
        gibbs._MUTATION = old


def _moment_check(name, draws, mean, var, sigmas=4.0):
    n = draws.size
    se_mean = math.sqrt(var / n)
    m_ok = abs(draws.mean() - mean) < sigmas * se_mean
    # variance of the sample variance ~ (m4 - var^2)/n; normal-ish bound
    m4 = np.mean((draws - mean) ** 4)
    se_var = math.sqrt(max(m4 - var * var, 1e-300) / n)
    v_ok = abs(draws.var() - var) < sigmas * se_var
    return CheckResult(
        name,
        bool(m_ok and v_ok),
        f"mean {draws.mean():.6g} vs {mean:.6g}, var {draws.var():.6g} vs {var:.6g}",
    )


def pg_mean(c: float) -> float:
    return 0.25 if c == 0.0 else math.tanh(c / 2.0) / (2.0 * c)

def pg_var(c: float) -> float:
    if c == 0.0:
        return 1.0 / 24.0
    return math.tanh(c / 2.0) / (2.0 * c**3) - 1.0 / (4.0 * c**2 * math.cosh(c / 2.0) ** 2)


def _tn_moments(mu, sigma, lo, hi):
    a = max(lo, mu - 12 * sigma)
    b = min(hi, mu + 12 * sigma)
    dens = lambda t: math.exp(-0.5 * ((t - mu) / sigma) ** 2)
    z = integrate.quad(dens, a, b)[0]
    m1 = integrate.quad(lambda t: t * dens(t), a, b)[0] / z
    m2 = integrate.quad(lambda t: t * t * dens(t), a, b)[0] / z
    return m1, m2 - m1 * m1


def check_samplers(n_draws: int = 200_000, seed: int = 20240601) -> list:
    """Moment/Laplace-transform checks of every nonstandard sampler against
    analytic or quadrature oracles."""
    out = []
    rng = RngStream(seed)
    gen = rng.gen

    for c in (0.0, 0.5, 2.0, 10.0):
        draws = np.empty(n_draws)
        kernels.pg_vector(np.full(n_draws, c), draws, gen)
        out.append(_moment_check(f"pg(1,{c:g}) moments", draws, pg_mean(c), pg_var(c)))

    # PG Laplace transform: exact cosh form; the 200-term sum-of-gammas
    # product is checked against it as well (the product converges to it)
    for c in (0.0, 1.0, 3.0):
        draws = np.empty(n_draws)
        kernels.pg_vector(np.full(n_draws, c), draws, gen)
        ks = np.arange(1, 201)
        dk = (ks - 0.5) ** 2 + c * c / (4.0 * math.pi**2)
        ok = True
        worst = 0.0
        for t in (0.1, 1.0, 10.0):
            exact = math.cosh(c / 2.0) / math.cosh(math.sqrt(c * c / 4.0 + t / 2.0))
            finite_sum = float(np.prod(1.0 / (1.0 + t / (2.0 * math.pi**2 * dk))))
            emp = float(np.mean(np.exp(-t * draws)))
            worst = max(worst, abs(emp - exact))
            ok = ok and abs(emp - exact) < 1e-3 and abs(finite_sum - exact) < 1e-3
        out.append(CheckResult(f"pg(1,{c:g}) laplace", ok, f"max |emp - exact| {worst:.2e}"))

    # PG symmetry in the tilt
    d1 = np.empty(50_000); d2 = np.empty(50_000)
    kernels.pg_vector(np.full(50_000, 2.0), d1, gen)
    kernels.pg_vector(np.full(50_000, -2.0), d2, gen)
    p = stats.ks_2samp(d1, d2).pvalue
    out.append(CheckResult("pg sign symmetry", p > 0.01, f"two-sample KS p {p:.3f}"))

    for mu, s2, lo, hi in ((0.0, 1.0, -np.inf, np.inf), (0.0, 1.0, 0.0, np.inf),
                           (0.0, 1.0, 8.0, 9.0), (2.0, 4.0, -1.0, 0.5)):
        draws = np.array([
            kernels.truncnorm_draw(mu, math.sqrt(s2), lo, hi, gen) for _ in range(n_draws // 2)
        ])
        m, v = ((mu, s2) if lo == -np.inf and hi == np.inf
                else _tn_moments(mu, math.sqrt(s2), lo, hi))
        inside = bool(np.all((draws > lo) & (draws < hi)))
        res = _moment_check(f"truncnorm ({lo:g},{hi:g})", draws, m, v)
        out.append(CheckResult(res.name, res.passed and inside, res.detail))

    # inverse Wishart: mean identity and SPD invariant
    p_dim, nu = 2, 10.0
    iw = np.stack([sample_inverse_wishart(nu, np.eye(p_dim), rng) for _ in range(20_000)])
    target = np.eye(p_dim) / (nu - p_dim - 1)
    err = np.max(np.abs(iw.mean(axis=0) - target))
    spd = all(np.all(np.linalg.eigvalsh(m) > 0) for m in iw[:200]) and bool(
        np.allclose(iw, np.swapaxes(iw, 1, 2))
    )
    out.append(CheckResult("inverse wishart mean", err < 0.02 * np.max(target) + 0.01 and spd,
                           f"max elementwise error {err:.4f}"))

    # matrix normal: Kronecker covariance
    u = np.diag([1.0, 4.0])
    v = np.eye(3)
    mn = np.stack([sample_matrix_normal(np.zeros((2, 3)), u, v, rng) for _ in range(50_000)])
    row_var = mn.var(axis=0)
    err = max(abs(row_var[0].mean() - 1.0), abs(row_var[1].mean() - 4.0) / 4.0)
    out.append(CheckResult("matrix normal covariance", err < 0.03, f"rel var error {err:.4f}"))

    # categorical: overflow-safe softmax frequencies
    logw = np.array([1000.0, 1001.0])
    idx = np.array([sample_categorical_logits(logw, rng) for _ in range(50_000)])
    f1 = idx.mean()
    want = 1.0 / (1.0 + math.exp(-1.0))
    out.append(CheckResult("categorical softmax", abs(f1 - want) < 0.01,
                           f"freq {f1:.4f} vs {want:.4f}"))
    return out


def check_prior_recovery(a: float = 0.25, iters: int = 100_000, seed: int = 7,
                         thin: int = 5) -> list:
    """With no data terms, the u update's stationary law must be its Ga(a,1)
    prior (up to the log u < 2 proposal truncation, which carries negligible
    prior mass).  Routes through the production MH core."""
    rng = RngStream(seed)
    m, s2 = gamma_log_moments(a)
    cur = 0.0
    draws = np.empty(iters // thin)
    j = 0
    for t in range(iters):
        cur, _ = gibbs._mh_u_core(cur, a, m, s2, 0.0, 0.0, 0.0, rng.gen)
        if t % thin == thin - 1:
            draws[j] = cur
            j += 1
    u = np.exp(draws[:j])
    p = stats.kstest(u, stats.gamma(a).cdf).pvalue
    return [CheckResult("u prior recovery", p > 0.01, f"KS p {p:.4f} over {j} thinned draws")]


def _conjugate_oracle(x, y, S_b, S_B1, nu, S_Sigma):
    """Exact posterior moments for G=1, p=q=1 complete data: Gaussian prior
    on (b, B) with FIXED covariance, inverse-gamma on sigma^2; the sigma^2
    marginal is one-dimensional, so everything reduces to quadrature."""
    n = x.size
    X = np.column_stack([np.ones(n), x])
    V = np.diag([S_b, S_B1])
    XtX = X.T @ X
    Xty = X.T @ y
    Vinv = np.linalg.inv(V)
    a_ig, b_ig = nu / 2.0, S_Sigma / 2.0

    def parts(log_s2):
        s2 = math.exp(log_s2)
        A = np.linalg.inv(XtX / s2 + Vinv)
        mean = A @ Xty / s2
        # log marginal likelihood N(y; 0, s2 I + X V X')
        C = s2 * np.eye(n) + X @ V @ X.T
        L = np.linalg.cholesky(C)
        r = np.linalg.solve(L, y)
        logm = -0.5 * n * math.log(2 * math.pi) - np.log(np.diag(L)).sum() - 0.5 * r @ r
        logprior = a_ig * math.log(b_ig) - math.lgamma(a_ig) - (a_ig + 1) * log_s2 - b_ig / s2
        # + Jacobian of s2 = e^t
        return logm + logprior + log_s2, mean, A

    grid = np.linspace(-8.0, 8.0, 1200)
    logw = np.empty(grid.size)
    means = np.empty((grid.size, 2))
    covs = np.empty((grid.size, 2, 2))
    for i, t in enumerate(grid):
        logw[i], means[i], covs[i] = parts(t)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    theta_mean = w @ means
    second = np.einsum("i,ijk->jk", w, covs + np.einsum("ij,ik->ijk", means, means))
    theta_cov = second - np.outer(theta_mean, theta_mean)
    s2_mean = w @ np.exp(grid)
    return theta_mean, theta_cov, float(s2_mean)


def check_conjugate(keep: int = 20_000, seed: int = 11, n: int = 40) -> list:
    """G=1 complete continuous data: chain posterior vs the quadrature oracle
    within 3 Monte Carlo standard errors (batch means)."""
    rng = RngStream(seed)
    gen = rng.gen
    x = gen.standard_normal(n)
    y = 1.0 + 2.0 * x + 0.8 * gen.standard_normal(n)
    data = Dataset(
        x=x[:, None], y=y[:, None], delta=np.ones((n, 1), dtype=np.uint8),
        kinds=(VariableKind.continuous(),),
    )
    S_b, S_B1, nu, S_Sig = 4.0, 4.0, 3.0, 0.8
    priors = PriorConfig(
        a=1.0, S_alpha=np.eye(1), S_B1=[[S_B1]], S_B2=np.eye(1),
        S_b=S_b, nu=nu, S_Sigma=[[S_Sig]],
    )
    cfg = ChainConfig(burn_in=500, keep=keep, thin=1, m_imputations=1)
    tables = _Tables(data)
    cache = _PriorCache(priors, 1, 1)
    state = gibbs.init_state(data, 1, priors, cfg, rng.child(1))
    bs = np.empty(keep); Bs = np.empty(keep); s2s = np.empty(keep)
    for t in range(cfg.burn_in + keep):
        sweep(state, data, priors, tables=tables, cache=cache)
        if t >= cfg.burn_in:
            bs[t - cfg.burn_in] = state.b[0, 0]
            Bs[t - cfg.burn_in] = state.B[0, 0, 0]
            s2s[t - cfg.burn_in] = state.Sigma[0, 0, 0]
    theta_mean, theta_cov, s2_mean = _conjugate_oracle(x, y, S_b, S_B1, nu, S_Sig)

    def batch_se(v, nb=50):
        m = v.size // nb
        bm = v[: m * nb].reshape(nb, m).mean(axis=1)
        return bm.std(ddof=1) / math.sqrt(nb)

    out = []
    for name, chain_draws, target in (
        ("b", bs, theta_mean[0]),
        ("B", Bs, theta_mean[1]),
        ("sigma2", s2s, s2_mean),
    ):
        se = batch_se(chain_draws)
        diff = abs(chain_draws.mean() - target)
        out.append(CheckResult(
            f"conjugate posterior mean {name}", diff < 3.0 * se,
            f"chain {chain_draws.mean():.5f} vs oracle {target:.5f} (3 MCSE {3*se:.5f})",
        ))
    for name, chain_draws, target in (("b", bs, theta_cov[0, 0]), ("B", Bs, theta_cov[1, 1])):
        rel = abs(chain_draws.var(ddof=1) - target) / target
        out.append(CheckResult(
            f"conjugate posterior var {name}", rel < 0.15,
            f"chain var {chain_draws.var(ddof=1):.5f} vs oracle {target:.5f}",
        ))
    return out


def _prior_draw_state(n, G, p, q, priors, data, rng) -> ChainState:
    gen = rng.gen
    log_u = np.zeros(G)
    alpha = np.zeros((G, q))
    for g in range(1, G):
        log_u[g] = math.log(gen.standard_gamma(priors.a))
        if q:
            La = np.linalg.cholesky(priors.S_alpha)
            alpha[g] = La @ gen.standard_normal(q)
    v0 = np.zeros((q + 1, q + 1))
    v0[0, 0] = priors.S_b
    if q:
        v0[1:, 1:] = priors.S_B1
    lv = np.linalg.cholesky(v0)
    lu = np.linalg.cholesky(priors.S_B2)
    b = np.zeros((G, p)); B = np.zeros((G, p, q))
    Sigma = np.zeros((G, p, p))
    for g in range(G):
        theta = lu @ gen.standard_normal((p, q + 1)) @ lv.T
        b[g] = theta[:, 0]; B[g] = theta[:, 1:]
        Sigma[g] = sample_inverse_wishart(priors.nu, priors.S_Sigma, rng)
    return ChainState(
        log_u=log_u, alpha=alpha, b=b, B=B, Sigma=Sigma,
        z=np.zeros(n, dtype=np.int64), omega=np.ones((n, G)),
        ystar=np.zeros((n, p)), rng=rng, iteration=0,
    )


def _simulate_given_params(state: ChainState, x: np.ndarray, kinds):
    """(z, y*, y) ~ model | current parameters, using the state's stream."""
    gen = state.rng.gen
    n = x.shape[0]
    p = state.b.shape[1]
    logits = state.log_u[None, :] + x @ state.alpha.T
    z = np.empty(n, dtype=np.int64)
    ystar = np.empty((n, p))
    for i in range(n):
        z[i] = sample_categorical_logits(logits[i], state.rng)
        g = z[i]
        L = np.linalg.cholesky(state.Sigma[g])
        ystar[i] = state.b[g] + state.B[g] @ x[i] + L @ gen.standard_normal(p)
    y = np.column_stack([kinds[k].to_response(ystar[:, k]) for k in range(p)])
    return z, ystar, y


def check_geweke(
    cycles: int = 10_000,
    seed: int = 404,
    G: int = 2,
    kinds=None,
    thin: int = 20,
    n: int = 20,
    miss_frac: float = 0.3,
    p_threshold: float = 0.005,
) -> list:
    """Getting-it-right test: alternating data simulation and Gibbs sweeps
    must keep every parameter marginally distributed as its prior."""
    kinds = tuple(kinds) if kinds else (VariableKind.continuous(),)
    p = len(kinds)
    q = 1
    rng = RngStream(seed)
    gen = rng.gen
    x = gen.standard_normal((n, q))
    delta = (gen.random((n, p)) > miss_frac).astype(np.uint8)
    delta[0] = 1  # keep at least one fully observed row
    a = 0.5
    priors = PriorConfig(
        a=a, S_alpha=np.eye(q), S_B1=np.eye(q), S_B2=np.eye(p),
        S_b=1.0, nu=p + 2.0, S_Sigma=np.eye(p),
    )
    state = _prior_draw_state(n, G, p, q, priors, data=None, rng=rng.child(1))
    state.rng = rng.child(2)
    z, ystar, y = _simulate_given_params(state, x, kinds)
    ymask = y.astype(float).copy()
    ymask[delta == 0] = np.nan
    data = Dataset(x=x, y=ymask, delta=delta, kinds=kinds)
    tables = _Tables(data)
    cache = _PriorCache(priors, p, q)

    def refresh_intervals(ynew):
        for k, kind in enumerate(kinds):
            if not kind.is_discrete:
                continue
            for i in np.flatnonzero(delta[:, k] == 1):
                tables.lo[i, k], tables.hi[i, k] = kind.latent_interval(ynew[i, k])

    kept = cycles // thin
    rec = {
        "u2": np.empty(kept), "alpha2": np.empty(kept),
        "b1": np.empty(kept), "b2": np.empty(kept),
        "B1": np.empty(kept), "B2": np.empty(kept),
        "sig1": np.empty(kept), "sig2": np.empty(kept),
    }
    j = 0
    for t in range(cycles):
        z, ystar, ynew = _simulate_given_params(state, x, kinds)
        state.z[:] = z
        state.ystar[:] = ystar
        refresh_intervals(ynew)
        sweep(state, data, priors, tables=tables, cache=cache)
        if t % thin == thin - 1:
            rec["u2"][j] = math.exp(state.log_u[1])
            rec["alpha2"][j] = state.alpha[1, 0]
            rec["b1"][j] = state.b[0, 0]
            rec["b2"][j] = state.b[1, 0]
            rec["B1"][j] = state.B[0, 0, 0]
            rec["B2"][j] = state.B[1, 0, 0]
            rec["sig1"][j] = state.Sigma[0, 0, 0]
            rec["sig2"][j] = state.Sigma[1, -1, -1]
            j += 1

    ig_shape = (priors.nu - p + 1) / 2.0
    cdfs = {
        "u2": stats.gamma(a).cdf,
        "alpha2": stats.norm(0, 1).cdf,
        "b1": stats.norm(0, 1).cdf,
        "b2": stats.norm(0, 1).cdf,
        "B1": stats.norm(0, 1).cdf,
        "B2": stats.norm(0, 1).cdf,
        "sig1": stats.invgamma(ig_shape, scale=0.5).cdf,
        "sig2": stats.invgamma(ig_shape, scale=0.5).cdf,
    }
    out = []
    for name, draws in rec.items():
        pv = stats.kstest(draws[:j], cdfs[name]).pvalue
        out.append(CheckResult(
            f"geweke[{G}comp,{'mixed' if any(k.is_discrete for k in kinds) else 'cont'}] {name}",
            pv > p_threshold, f"KS p {pv:.4f}",
        ))
    return out


def check_mixing_oracle(seed: int = 3, sweeps: int = 4000, n: int = 200) -> list:
    """alpha/u updates vs an independent random-walk MH on the exact
    conditional posterior (no augmentation, no proposal approximation), on
    well-separated two-component data with effectively known labels."""
    rng = RngStream(seed)
    gen = rng.gen
    true_alpha, true_logu = 1.2, 0.5
    x = gen.standard_normal((n, 1))
    pz = 1.0 / (1.0 + np.exp(-(true_logu + true_alpha * x[:, 0])))
    z = (gen.random(n) < pz).astype(int)
    y = np.where(z == 1, 50.0, -50.0) + gen.standard_normal(n)
    data = Dataset(x=x, y=y[:, None], delta=np.ones((n, 1), dtype=np.uint8),
                   kinds=(VariableKind.continuous(),))
    priors = PriorConfig(a=1.0, S_alpha=np.eye(1) * 25.0, S_B1=np.eye(1) * 25.0,
                         S_B2=np.eye(1), S_b=2500.0, nu=3.0, S_Sigma=np.eye(1))
    cfg = ChainConfig(burn_in=500, keep=sweeps, thin=1, m_imputations=1)
    tables = _Tables(data)
    cache = _PriorCache(priors, 1, 1)
    state = gibbs.init_state(data, 2, priors, cfg, rng.child(1))
    al = np.empty(sweeps); lu = np.empty(sweeps)
    for t in range(cfg.burn_in + sweeps):
        sweep(state, data, priors, tables=tables, cache=cache)
        if t >= cfg.burn_in:
            # identify the high-mean component as "2"
            g2 = int(np.argmax(state.b[:, 0]))
            sgn = 1.0 if g2 == 1 else -1.0
            al[t - cfg.burn_in] = sgn * state.alpha[1, 0]
            lu[t - cfg.burn_in] = sgn * state.log_u[1]
    # oracle: RW-MH on (alpha_2, log u_2) given the true labels
    xv = x[:, 0]
    zi = z.astype(float)

    def logpost(a_, l_):
        if l_ >= 2.0:
            return -np.inf
        psi = l_ + a_ * xv
        ll = float(np.dot(zi, psi) - np.sum(np.logaddexp(0.0, psi)))
        lp = -0.5 * a_ * a_ / 25.0 + (priors.a * l_ - math.exp(l_))
        return ll + lp

    ogen = rng.child(2).gen
    cur = np.array([0.0, 0.0])
    cur_lp = logpost(*cur)
    osamp = np.empty((120_000, 2))
    for t in range(osamp.shape[0]):
        prop = cur + 0.25 * ogen.standard_normal(2)
        lp = logpost(*prop)
        if math.log(ogen.random()) < lp - cur_lp:
            cur, cur_lp = prop, lp
        osamp[t] = cur
    osamp = osamp[20_000::10]

    def batch_se(v, nb=40):
        m = v.size // nb
        bm = v[: m * nb].reshape(nb, m).mean(axis=1)
        return bm.std(ddof=1) / math.sqrt(nb)

    out = []
    for name, mine, ref in (("alpha", al, osamp[:, 0]), ("log_u", lu, osamp[:, 1])):
        tol = 4.0 * math.hypot(batch_se(mine), batch_se(ref))
        diff = abs(mine.mean() - ref.mean())
        out.append(CheckResult(
            f"mixing oracle {name}", diff < tol,
            f"gibbs {mine.mean():.4f} vs rw-mh {ref.mean():.4f} (tol {tol:.4f})",
        ))
    return out


SUITES = {
    "samplers": lambda fast: check_samplers(n_draws=100_000 if fast else 1_000_000),
    "prior": lambda fast: check_prior_recovery(iters=50_000 if fast else 100_000),
    "conjugate": lambda fast: check_conjugate(keep=10_000 if fast else 20_000),
    "geweke": lambda fast: check_geweke(cycles=4_000 if fast else 10_000),
    "gibbs": lambda fast: check_mixing_oracle(sweeps=2_000 if fast else 4_000),
}


def run_suite(names, fast: bool = False) -> list:
    results = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown check suite {name!r}")
        results.extend(SUITES[name](fast))
    return results
