"""The MCMC kernel: latent-augmented updates for the mixing parameters
(Polya-Gamma), the per-component regressions and covariances, the component
labels, the latent responses behind discrete outcomes, and the missing
values; plus the chain driver (burn-in, thinning, imputation collection).

One chain is one sequential task owning its state and stream.  Multiple
chains/replications run concurrently on distinct streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import cho_solve, solve_triangular

from . import kernels
from .cgmm import (
    LOG_U_BOUND,
    ComponentParams,
    MixingParams,
    ModelParams,
    PriorConfig,
)
from .data_model import Dataset, ImputationDraws
from .distributions import chol_with_jitter, gamma_log_moments, sample_inverse_wishart
from .errors import MiximputeError, ValidationError
from .rng import RngStream

__all__ = [
    "ChainConfig",
    "ChainState",
    "ChainDiagnostics",
    "Snapshot",
    "init_state",
    "update_omega",
    "update_alpha",
    "update_u",
    "update_mixing",
    "update_regression",
    "update_sigma",
    "update_z",
    "update_ystar_observed",
    "update_ymis",
    "non_null_count",
    "swap_reference",
    "run_chain",
    "impute_from_snapshot",
]

_LOG2PI = math.log(2.0 * math.pi)

# Test fixture: the verification suites flip this to confirm they can
# detect a planted bug (see checks.mutated).  Never set in real runs.
_MUTATION = None


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 500
    keep: int = 1500
    thin: int = 1
    m_imputations: int = 10
    init_strategy: str = "kmeans"

    def __post_init__(self):
        if self.burn_in < 0 or self.keep < 1 or self.thin < 1 or self.m_imputations < 1:
            raise ValidationError("chain counts must be positive (burn_in may be 0)")
        if self.m_imputations > self.keep // self.thin:
            raise ValidationError(
                f"m_imputations={self.m_imputations} exceeds kept draws "
                f"keep//thin={self.keep // self.thin}"
            )
        if self.init_strategy not in ("kmeans", "random"):
            raise ValidationError(f"unknown init strategy {self.init_strategy!r}")


@dataclass
class ChainState:
    """All latent quantities at one iteration.  Parameter blocks are plain
    arrays for the hot loop; .params materializes the immutable snapshot."""

    log_u: np.ndarray  # (G,)
    alpha: np.ndarray  # (G, q)
    b: np.ndarray  # (G, p)
    B: np.ndarray  # (G, p, q)
    Sigma: np.ndarray  # (G, p, p)
    z: np.ndarray  # (n,) int64
    omega: np.ndarray  # (n, G)
    ystar: np.ndarray  # (n, p)
    rng: RngStream
    iteration: int = 0
    u_proposals: np.ndarray = None
    u_accepts: np.ndarray = None

    def __post_init__(self):
        G = self.log_u.shape[0]
        if self.u_proposals is None:
            self.u_proposals = np.zeros(G)
        if self.u_accepts is None:
            self.u_accepts = np.zeros(G)

    @property
    def G(self) -> int:
        return self.log_u.shape[0]

    @property
    def params(self) -> ModelParams:
        comps = tuple(
            ComponentParams(self.b[g], self.B[g], self.Sigma[g]) for g in range(self.G)
        )
        return ModelParams(MixingParams(self.log_u, self.alpha), comps)

    def set_params(self, params: ModelParams) -> None:
        self.log_u = params.mixing.log_u.copy()
        self.alpha = params.mixing.alpha.copy()
        for g, c in enumerate(params.components):
            self.b[g] = c.b
            self.B[g] = c.B
            self.Sigma[g] = c.Sigma


@dataclass
class ChainDiagnostics:
    loglik: np.ndarray
    non_null: np.ndarray
    burn_in: int
    keep: int
    thin: int
    u_accept_rate: np.ndarray
    source_iterations: tuple

    @property
    def non_null_avg(self) -> float:
        """Mean non-null component count over the kept iterations."""
        return float(np.mean(self.non_null[self.burn_in :]))

    def kept_loglik(self) -> np.ndarray:
        return self.loglik[self.burn_in :]

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loglik", "non_null_count"])
            for i, (ll, nn) in enumerate(zip(self.loglik, self.non_null), start=1):
                w.writerow([i, repr(float(ll)), int(nn)])

    def summary(self) -> dict:
        return {
            "iterations": int(self.loglik.shape[0]),
            "burn_in": self.burn_in,
            "keep": self.keep,
            "thin": self.thin,
            "mean_kept_loglik": float(np.mean(self.kept_loglik())),
            "non_null_avg": self.non_null_avg,
            "u_accept_rate": [float(r) for r in self.u_accept_rate],
            "source_iterations": list(self.source_iterations),
        }


@dataclass(frozen=True)
class Snapshot:
    """Parameter + latent-response state frozen at one kept iteration;
    enough to draw fresh (z, y_mis) from the posterior predictive."""

    log_u: np.ndarray
    alpha: np.ndarray
    b: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray
    ystar: np.ndarray
    iteration: int


class _Tables:
    """Per-dataset precomputations shared by every sweep."""

    def __init__(self, data: Dataset):
        n, p = data.n, data.p
        self.x = data.x
        self.x_aug = np.hstack([np.ones((n, 1)), data.x])
        # missingness patterns
        codes = data.delta @ (1 << np.arange(p, dtype=np.int64))
        uniq, pat_id = np.unique(codes, return_inverse=True)
        P = uniq.shape[0]
        self.pat_id = pat_id.astype(np.int64)
        self.P = P
        self.obs_idx = np.zeros((P, p), dtype=np.int64)
        self.mis_idx = np.zeros((P, p), dtype=np.int64)
        self.n_obs = np.zeros(P, dtype=np.int64)
        self.n_mis = np.zeros(P, dtype=np.int64)
        self.is_disc = np.array([k.is_discrete for k in data.kinds])
        self.pat_has_disc_obs = np.zeros(P, dtype=bool)
        for pid in range(P):
            row = np.flatnonzero(self.pat_id == pid)[0]
            obs, mis = data.row_pattern(row)
            self.n_obs[pid] = obs.size
            self.n_mis[pid] = mis.size
            self.obs_idx[pid, : obs.size] = obs
            self.mis_idx[pid, : mis.size] = mis
            self.pat_has_disc_obs[pid] = bool(np.any(self.is_disc[obs]))
        self.any_missing = bool(np.any(self.n_mis > 0))
        self.any_disc = bool(np.any(self.is_disc))
        # truncation intervals encoding observed discrete values
        self.lo = np.full((n, p), -np.inf)
        self.hi = np.full((n, p), np.inf)
        for k, kind in enumerate(data.kinds):
            if not kind.is_discrete:
                continue
            for i in np.flatnonzero(data.delta[:, k] == 1):
                self.lo[i, k], self.hi[i, k] = kind.latent_interval(data.y[i, k])


class _PriorCache:
    def __init__(self, priors: PriorConfig, p: int, q: int):
        if priors.p != p or priors.q != q:
            raise ValidationError(
                f"prior dimensions (p={priors.p}, q={priors.q}) do not match data "
                f"(p={p}, q={q})"
            )
        self.priors = priors
        eye_q = np.eye(q)
        if q:
            L = chol_with_jitter(priors.S_alpha)
            self.S_alpha_inv = cho_solve((L, True), eye_q)
        else:
            self.S_alpha_inv = np.zeros((0, 0))
        v0 = np.zeros((q + 1, q + 1))
        v0[0, 0] = priors.S_b
        if q:
            v0[1:, 1:] = priors.S_B1
        lv = chol_with_jitter(v0)
        v0inv = cho_solve((lv, True), np.eye(q + 1))
        lu = chol_with_jitter(priors.S_B2)
        u0inv = cho_solve((lu, True), np.eye(p))
        self.prior_prec = np.kron(v0inv, u0inv)
        self.log_m, self.log_s2 = gamma_log_moments(priors.a)


def _mix_logits(state: ChainState, x: np.ndarray) -> np.ndarray:
    return state.log_u[None, :] + x @ state.alpha.T


def _c_col(logits: np.ndarray, g: int) -> np.ndarray:
    """C_ig = log sum_{h != g} exp(logits_ih)."""
    others = [h for h in range(logits.shape[1]) if h != g]
    return np.logaddexp.reduce(logits[:, others], axis=1)


def init_state(
    data: Dataset, G: int, priors: PriorConfig, config: ChainConfig, rng: RngStream
) -> ChainState:
    """Deterministic-in-seed initial state: k-means or random labels, latent
    responses drawn inside their truncation cells, per-component least
    squares for the regressions, sample covariances for Sigma."""
    if G < 1:
        raise ValidationError(f"need G >= 1, got {G}")
    n, p, q = data.n, data.p, data.q
    gen = rng.gen
    tables = _Tables(data)

    ystar = np.where(data.delta == 1, np.nan_to_num(data.y), 0.0)
    for k, kind in enumerate(data.kinds):
        for i in range(n):
            if data.delta[i, k] == 0:
                ystar[i, k] = gen.standard_normal()
            elif kind.is_discrete:
                ystar[i, k] = kernels.truncnorm_draw(
                    0.0, 1.0, tables.lo[i, k], tables.hi[i, k], gen
                )

    if G == 1:
        z = np.zeros(n, dtype=np.int64)
    elif config.init_strategy == "random":
        z = gen.integers(0, G, size=n).astype(np.int64)
    else:
        filled = ystar.copy()
        feats = np.hstack([data.x, filled]) if q else filled
        try:
            _, labels = kmeans2(feats, G, minit="++", seed=gen)
            z = labels.astype(np.int64)
        except Exception:
            z = gen.integers(0, G, size=n).astype(np.int64)

    b = np.zeros((G, p))
    B = np.zeros((G, p, q))
    Sigma = np.tile(np.eye(p), (G, 1, 1))
    x_aug = tables.x_aug
    for g in range(G):
        idx = np.flatnonzero(z == g)
        if idx.size > q + 1:
            theta, *_ = np.linalg.lstsq(x_aug[idx], ystar[idx], rcond=None)
            if np.all(np.isfinite(theta)):
                b[g] = theta[0]
                B[g] = theta[1:].T
        if idx.size > p + 1:
            cov = np.cov(ystar[idx], rowvar=False).reshape(p, p)
            if np.all(np.isfinite(cov)):
                try:
                    np.linalg.cholesky(cov + 1e-8 * np.eye(p))
                    Sigma[g] = cov + 1e-8 * np.eye(p)
                except np.linalg.LinAlgError:
                    pass

    return ChainState(
        log_u=np.zeros(G),
        alpha=np.zeros((G, q)),
        b=b,
        B=B,
        Sigma=Sigma,
        z=z,
        omega=np.ones((n, G)),
        ystar=ystar,
        rng=rng,
        iteration=0,
    )


def _draw_alpha_g(state, x, g, C, cache):
    om = state.omega[:, g]
    kappa = (state.z == g) - 0.5
    prec = (x * om[:, None]).T @ x + cache.S_alpha_inv
    bt = x.T @ (kappa + om * (C - state.log_u[g]))
    if _MUTATION == "alpha-sign":
        bt = -bt
    L = chol_with_jitter(prec)
    mean = cho_solve((L, True), bt, check_finite=False)
    q = x.shape[1]
    noise = solve_triangular(
        L, state.rng.gen.standard_normal(q), lower=True, trans=1, check_finite=False
    )
    return mean + noise


def _log_u_mh_ratio(prop, cur, a, m, s2):
    """Log acceptance ratio: exact Gamma prior (with the exp Jacobian folded
    in) versus the truncated-normal approximate prior, both on the log-u
    scale.  The likelihood and truncation normalizers cancel."""
    return (
        (a * prop - math.exp(prop))
        - (a * cur - math.exp(cur))
        + (-0.5 * (cur - m) ** 2 / s2)
        - (-0.5 * (prop - m) ** 2 / s2)
    )


def _mh_u_core(cur, a, m, s2, om_sum, om_dot_offset, kappa_sum, gen):
    """One independent-MH step on log u; the proposal is the PG-augmented
    conditional under the approximate prior.  Returns (value, accepted)."""
    A = 1.0 / (om_sum + 1.0 / s2)
    Bt = kappa_sum + om_dot_offset + m / s2
    prop = kernels.truncnorm_draw(A * Bt, math.sqrt(A), -np.inf, LOG_U_BOUND, gen)
    if math.log(gen.random()) < _log_u_mh_ratio(prop, cur, a, m, s2):
        return prop, True
    return cur, False


def _mh_u_g(state, x, g, C, cache):
    gen = state.rng.gen
    om = state.omega[:, g]
    n = x.shape[0]
    kappa_sum = float(np.count_nonzero(state.z == g)) - 0.5 * n
    xa = x @ state.alpha[g] if x.shape[1] else 0.0
    new, accepted = _mh_u_core(
        state.log_u[g], cache.priors.a, cache.log_m, cache.log_s2,
        float(om.sum()), float(np.dot(om, C - xa)), kappa_sum, gen,
    )
    state.u_proposals[g] += 1
    if accepted:
        state.u_accepts[g] += 1
    return new


def update_omega(state: ChainState, data: Dataset, priors=None, tables=None) -> ChainState:
    """Global PG refresh: omega_ig ~ PG(1, psi_ig) for all i, g >= 2."""
    if state.G == 1:
        return state
    logits = _mix_logits(state, data.x)
    for g in range(1, state.G):
        psi = logits[:, g] - _c_col(logits, g)
        kernels.pg_vector(psi, state.omega[:, g], state.rng.gen)
    return state


def update_alpha(state: ChainState, data: Dataset, priors: PriorConfig, tables=None, cache=None) -> ChainState:
    """Gaussian full-conditional draw of alpha_g for g >= 2 (C recomputed fresh)."""
    if state.G == 1 or data.q == 0:
        return state
    cache = cache or _PriorCache(priors, data.p, data.q)
    for g in range(1, state.G):
        logits = _mix_logits(state, data.x)
        C = _c_col(logits, g)
        state.alpha[g] = _draw_alpha_g(state, data.x, g, C, cache)
    return state


def update_u(state: ChainState, data: Dataset, priors: PriorConfig, tables=None, cache=None) -> ChainState:
    """Independent-MH refresh of log u_g for g >= 2 (C recomputed fresh)."""
    if state.G == 1:
        return state
    cache = cache or _PriorCache(priors, data.p, data.q)
    for g in range(1, state.G):
        logits = _mix_logits(state, data.x)
        C = _c_col(logits, g)
        state.log_u[g] = _mh_u_g(state, data.x, g, C, cache)
    return state


def update_mixing(state: ChainState, data: Dataset, priors: PriorConfig, cache=None) -> ChainState:
    """Per-component block (omega_g, alpha_g, u_g) for g = 2..G.

    The one-vs-rest PG augmentation is only a valid move when omega_g is
    refreshed against the current C_ig, so the blocks are interleaved rather
    than run as three global passes (identical for G = 2).
    """
    if state.G == 1:
        return state
    cache = cache or _PriorCache(priors, data.p, data.q)
    x = data.x
    logits = _mix_logits(state, x)
    for g in range(1, state.G):
        C = _c_col(logits, g)
        psi = logits[:, g] - C
        kernels.pg_vector(psi, state.omega[:, g], state.rng.gen)
        if data.q:
            state.alpha[g] = _draw_alpha_g(state, x, g, C, cache)
        state.log_u[g] = _mh_u_g(state, x, g, C, cache)
        logits[:, g] = state.log_u[g] + (x @ state.alpha[g] if data.q else 0.0)
    return state


def _small_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """np.kron without its shape gymnastics; fine for tiny blocks."""
    ra, ca = a.shape
    rb, cb = b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(ra * rb, ca * cb)


def update_regression(state: ChainState, data: Dataset, priors: PriorConfig, tables=None, cache=None) -> ChainState:
    """Draw (b_g, B_g) from its exact Gaussian full conditional on
    vec(b, B), precision V0^-1 (x) U0^-1 + (sum x* x*') (x) Sigma_g^-1.
    Empty components fall back to the prior automatically."""
    tables = tables or _Tables(data)
    cache = cache or _PriorCache(priors, data.p, data.q)
    p, q = data.p, data.q
    d = p * (q + 1)
    gen = state.rng.gen
    eye_p = np.broadcast_to(np.eye(p), (state.G, p, p))
    try:
        Sinv_all = np.linalg.solve(state.Sigma, np.ascontiguousarray(eye_p))
    except np.linalg.LinAlgError:
        Sinv_all = np.stack(
            [cho_solve((chol_with_jitter(state.Sigma[g]), True), np.eye(p)) for g in range(state.G)]
        )
    for g in range(state.G):
        idx = np.flatnonzero(state.z == g)
        Sinv = Sinv_all[g]
        if idx.size:
            xg = tables.x_aug[idx]
            yg = state.ystar[idx]
            sx = xg.T @ xg
            ell = (Sinv @ (yg.T @ xg)).flatten(order="F")
            prec = cache.prior_prec + _small_kron(sx, Sinv)
        else:
            ell = np.zeros(d)
            prec = cache.prior_prec
        L = chol_with_jitter(prec)
        mean = cho_solve((L, True), ell, check_finite=False)
        vec = mean + solve_triangular(
            L, gen.standard_normal(d), lower=True, trans=1, check_finite=False
        )
        theta = vec.reshape(p, q + 1, order="F")
        state.b[g] = theta[:, 0]
        state.B[g] = theta[:, 1:]
    return state


def update_sigma(state: ChainState, data: Dataset, priors: PriorConfig, tables=None, cache=None) -> ChainState:
    """Sigma_g ~ IW(nu + n_g, S_Sigma + residual scatter)."""
    tables = tables or _Tables(data)
    for g in range(state.G):
        idx = np.flatnonzero(state.z == g)
        scale = priors.S_Sigma.copy()
        if idx.size:
            resid = state.ystar[idx] - tables.x_aug[idx] @ np.hstack(
                [state.b[g][:, None], state.B[g]]
            ).T
            scale += resid.T @ resid
        state.Sigma[g] = sample_inverse_wishart(
            priors.nu + idx.size, 0.5 * (scale + scale.T), state.rng
        )
    return state


def _batched_cholesky(mats: np.ndarray) -> np.ndarray:
    """Stacked lower Cholesky with a per-matrix jitter fallback."""
    try:
        return np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        out = np.empty_like(mats)
        for g in range(mats.shape[0]):
            out[g] = chol_with_jitter(mats[g])
        return out


class _SweepFactors:
    """Per-sweep, per-(pattern, component) Gaussian factorizations.

    Everything is computed with stacked (batched) linalg over the G
    components; the matrices are at most p x p.
    """

    def __init__(self, state: ChainState, tables: _Tables):
        n = tables.x.shape[0]
        p = state.ystar.shape[1]
        G = state.G
        q = tables.x.shape[1]
        # one matmul for all component means: (n, q) @ (q, G*p)
        flat = state.B.transpose(2, 0, 1).reshape(q, G * p) if q else None
        self.means = (
            (tables.x @ flat).reshape(n, G, p) if q else np.zeros((n, G, p))
        ) + state.b[None, :, :]
        self.mixlog = _mix_logits(state, tables.x)
        P = tables.P
        self.cholL = np.zeros((P, G, p, p))
        self.zconst = np.zeros((P, G))
        self.condw = np.zeros((P, G, p, p))
        self.condsd = np.ones((P, G, p))
        self.W = np.zeros((P, G, p, p))
        self.cholS = np.zeros((P, G, p, p))
        gidx = np.arange(G)
        for pid in range(P):
            no = int(tables.n_obs[pid])
            nm = int(tables.n_mis[pid])
            obs = tables.obs_idx[pid, :no]
            mis = tables.mis_idx[pid, :nm]
            if no:
                Soo = state.Sigma[np.ix_(gidx, obs, obs)]
                L = _batched_cholesky(Soo)
                self.cholL[pid, :, :no, :no] = L
                self.zconst[pid] = -0.5 * no * _LOG2PI - np.sum(
                    np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1
                )
                if tables.pat_has_disc_obs[pid]:
                    eye = np.broadcast_to(np.eye(no), (G, no, no))
                    prec = np.linalg.solve(Soo, np.ascontiguousarray(eye))
                    d = np.diagonal(prec, axis1=1, axis2=2)
                    self.condsd[pid, :, :no] = np.sqrt(1.0 / d)
                    w = -prec / d[:, :, None]
                    w[:, np.arange(no), np.arange(no)] = 0.0
                    self.condw[pid, :, :no, :no] = w
                if nm:
                    Som = state.Sigma[np.ix_(gidx, obs, mis)]
                    Wg = np.linalg.solve(Soo, Som)  # Soo^-1 Som, stacked
                    Smm = state.Sigma[np.ix_(gidx, mis, mis)]
                    Sc = Smm - Som.transpose(0, 2, 1) @ Wg
                    self.W[pid, :, :nm, :no] = Wg.transpose(0, 2, 1)
                    self.cholS[pid, :, :nm, :nm] = _batched_cholesky(
                        0.5 * (Sc + Sc.transpose(0, 2, 1))
                    )
            elif nm:
                Smm = state.Sigma[np.ix_(gidx, mis, mis)]
                self.cholS[pid, :, :nm, :nm] = _batched_cholesky(Smm)


def update_z(state: ChainState, data: Dataset, tables=None, factors=None) -> float:
    """Categorical label refresh; missing coordinates marginalized out.
    Returns the observed-data log likelihood at the current parameters."""
    tables = tables or _Tables(data)
    factors = factors or _SweepFactors(state, tables)
    return float(
        kernels.sweep_z(
            state.ystar,
            factors.means,
            factors.mixlog,
            tables.pat_id,
            tables.obs_idx,
            tables.n_obs,
            factors.cholL,
            factors.zconst,
            state.z,
            state.rng.gen,
        )
    )


def update_ystar_observed(state: ChainState, data: Dataset, tables=None, factors=None) -> ChainState:
    """Truncated univariate refresh of y* at observed discrete cells, each
    conditioned on the row's other observed coordinates."""
    tables = tables or _Tables(data)
    if not tables.any_disc:
        return state
    factors = factors or _SweepFactors(state, tables)
    kernels.sweep_ystar_obs(
        state.ystar,
        factors.means,
        tables.pat_id,
        tables.obs_idx,
        tables.n_obs,
        factors.condw,
        factors.condsd,
        tables.lo,
        tables.hi,
        tables.is_disc,
        state.z,
        state.rng.gen,
    )
    return state


def update_ymis(state: ChainState, data: Dataset, tables=None, factors=None) -> ChainState:
    """Joint Gaussian draw of the missing coordinates given the observed ones."""
    tables = tables or _Tables(data)
    if not tables.any_missing:
        return state
    factors = factors or _SweepFactors(state, tables)
    kernels.sweep_ymis(
        state.ystar,
        factors.means,
        tables.pat_id,
        tables.obs_idx,
        tables.n_obs,
        tables.mis_idx,
        tables.n_mis,
        factors.W,
        factors.cholS,
        state.z,
        state.rng.gen,
    )
    return state


def non_null_count(state: ChainState) -> int:
    """Number of components with at least one row currently assigned."""
    return int(np.unique(state.z).size)


def swap_reference(state: ChainState, priors: PriorConfig, cache=None) -> bool:
    """Metropolis move exchanging a random component with the pinned one.

    The identifiability pin (u_1 = 1, alpha_1 = 0) plus the log u <= 2
    proposal cap bound the reference component's weight away from zero, so
    a chain whose labeling parks a real cluster in a free slot cannot empty
    the reference slot by within-slot moves alone.  Swapping the parameter
    blocks of slots 1 and g and renormalizing the logits by the old slot-g
    values leaves every mixing weight pi_h(x), the component likelihoods,
    and the augmented PG terms numerically invariant, so the acceptance
    ratio reduces to the mixing priors of the relabeled free slots.  The
    move changes nothing label-invariant except the sampler's mixing.
    """
    G = state.G
    if G == 1:
        return False
    gen = state.rng.gen
    g = 1 + int(gen.integers(0, G - 1))
    lg = state.log_u[g]
    ag = state.alpha[g].copy()
    # relabeled mixing parameters: swap slots, then re-pin by slot g's values
    new_lu = state.log_u - lg
    new_lu[0], new_lu[g] = 0.0, -lg
    new_al = state.alpha - ag
    new_al[0], new_al[g] = 0.0, -ag
    if np.any(new_lu[1:] > LOG_U_BOUND):
        return False  # outside the sampler's support
    a = priors.a
    log_ratio = 0.0
    for h in range(1, G):
        log_ratio += (a * new_lu[h] - math.exp(new_lu[h])) - (
            a * state.log_u[h] - math.exp(state.log_u[h])
        )
    if state.alpha.shape[1]:
        cache = cache or _PriorCache(priors, state.b.shape[1], state.alpha.shape[1])
        Sinv = cache.S_alpha_inv
        for h in range(1, G):
            log_ratio += -0.5 * (new_al[h] @ Sinv @ new_al[h]) + 0.5 * (
                state.alpha[h] @ Sinv @ state.alpha[h]
            )
    if math.log(gen.random()) >= log_ratio:
        return False
    state.log_u = new_lu
    state.alpha = new_al
    for arr in (state.b, state.B, state.Sigma):
        arr[[0, g]] = arr[[g, 0]]
    state.omega[:, [0, g]] = state.omega[:, [g, 0]]
    z = state.z
    was_g = z == g
    z[z == 0] = g
    z[was_g] = 0
    return True


def sweep(state: ChainState, data: Dataset, priors: PriorConfig, tables=None, cache=None) -> float:
    """One full Gibbs sweep in the fixed order: mixing block (omega, alpha, u
    per component), (b, B), Sigma, z, y*_observed, y_missing; preceded by a
    reference-swap label move.  Returns the observed-data log likelihood
    recorded during the z update."""
    tables = tables or _Tables(data)
    cache = cache or _PriorCache(priors, data.p, data.q)
    swap_reference(state, priors, cache=cache)
    update_mixing(state, data, priors, cache=cache)
    update_regression(state, data, priors, tables=tables, cache=cache)
    update_sigma(state, data, priors, tables=tables, cache=cache)
    factors = _SweepFactors(state, tables)
    loglik = update_z(state, data, tables=tables, factors=factors)
    update_ystar_observed(state, data, tables=tables, factors=factors)
    update_ymis(state, data, tables=tables, factors=factors)
    state.iteration += 1
    return loglik


def _completed_y(state: ChainState, data: Dataset) -> np.ndarray:
    y = data.y.copy()
    for k, kind in enumerate(data.kinds):
        mis = data.delta[:, k] == 0
        if np.any(mis):
            y[mis, k] = kind.to_response(state.ystar[mis, k])
    return y


def _evenly_spaced(total: int, count: int) -> np.ndarray:
    """count indices in 1..total, evenly spaced, ending at total."""
    return np.unique(np.round(np.arange(1, count + 1) * total / count).astype(int))


def run_chain(
    data: Dataset,
    G: int,
    priors: PriorConfig,
    config: ChainConfig,
    rng: RngStream,
    *,
    n_snapshots: int = 0,
    return_snapshots: bool = False,
):
    """Run burn-in + keep sweeps; collect m completed datasets at evenly
    spaced kept (thinned) iterations, plus optional posterior snapshots for
    the bootstrap.  Any update error aborts with the iteration attached."""
    tables = _Tables(data)
    cache = _PriorCache(priors, data.p, data.q)
    state = init_state(data, G, priors, config, rng)

    kept = config.keep // config.thin
    imp_at = set(config.burn_in + config.thin * _evenly_spaced(kept, config.m_imputations))
    snap_at = set()
    if n_snapshots:
        if n_snapshots > kept:
            raise ValidationError(
                f"n_snapshots={n_snapshots} exceeds kept draws {kept}"
            )
        snap_at = set(config.burn_in + config.thin * _evenly_spaced(kept, n_snapshots))

    total = config.burn_in + config.keep
    loglik = np.empty(total)
    non_null = np.empty(total, dtype=np.int64)
    completed = []
    source_iters = []
    snapshots = []
    for it in range(1, total + 1):
        try:
            loglik[it - 1] = sweep(state, data, priors, tables=tables, cache=cache)
        except MiximputeError as exc:
            raise type(exc)(f"gibbs sweep {it}: {exc}") from exc
        non_null[it - 1] = non_null_count(state)
        if it in imp_at:
            completed.append(data.completed(_completed_y(state, data)))
            source_iters.append(it)
        if it in snap_at:
            snapshots.append(
                Snapshot(
                    log_u=state.log_u.copy(),
                    alpha=state.alpha.copy(),
                    b=state.b.copy(),
                    B=state.B.copy(),
                    Sigma=state.Sigma.copy(),
                    ystar=state.ystar.copy(),
                    iteration=it,
                )
            )

    with np.errstate(invalid="ignore"):
        rate = np.where(state.u_proposals > 0, state.u_accepts / np.maximum(state.u_proposals, 1), np.nan)
    draws = ImputationDraws(datasets=tuple(completed), source_iterations=tuple(source_iters))
    diag = ChainDiagnostics(
        loglik=loglik,
        non_null=non_null,
        burn_in=config.burn_in,
        keep=config.keep,
        thin=config.thin,
        u_accept_rate=rate,
        source_iterations=tuple(source_iters),
    )
    if return_snapshots:
        return draws, diag, snapshots
    return draws, diag


def impute_from_snapshot(
    snap: Snapshot, data: Dataset, tables: _Tables, rng: RngStream
) -> np.ndarray:
    """One fresh posterior-predictive completion: draw z from the component
    posterior given the snapshot's observed-pattern y*, then the missing
    coordinates from the within-component conditional; returns completed y
    on the response scale."""
    state = ChainState(
        log_u=snap.log_u,
        alpha=snap.alpha,
        b=snap.b,
        B=snap.B,
        Sigma=snap.Sigma,
        z=np.zeros(data.n, dtype=np.int64),
        omega=np.ones((data.n, 1)),
        ystar=snap.ystar.copy(),
        rng=rng,
        iteration=snap.iteration,
    )
    factors = _SweepFactors(state, tables)
    update_z(state, data, tables=tables, factors=factors)
    update_ymis(state, data, tables=tables, factors=factors)
    return _completed_y(state, data)
