"""Conditional Gaussian mixture math: parameters, covariate-dependent
mixing weights, per-pattern marginals/conditionals, component posterior,
and the row imputation draw.

All operations are pure; parameter objects are immutable snapshots, so
concurrent evaluation across rows is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .data_model import Dataset, split_pattern
from .distributions import chol_with_jitter, gaussian_logpdf
from .errors import ValidationError
from .rng import RngStream

__all__ = [
    "ComponentParams",
    "MixingParams",
    "ModelParams",
    "PriorConfig",
    "mixing_probs",
    "component_obs_marginal",
    "component_mis_conditional",
    "component_posterior",
    "impute_row",
    "loglik_obs",
]

LOG_U_BOUND = 2.0  # proposal truncation bound on log u_g, g >= 2


@dataclass(frozen=True)
class ComponentParams:
    """One mixture component: y | x, z=g ~ N(b + B x, Sigma)."""

    b: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float, ndmin=1)
        B = np.array(self.B, dtype=float, ndmin=2)
        S = np.array(self.Sigma, dtype=float, ndmin=2)
        p = b.shape[0]
        if B.shape[0] != p or S.shape != (p, p):
            raise ValidationError(
                f"component shapes disagree: b {b.shape}, B {B.shape}, Sigma {S.shape}"
            )
        for a in (b, B, S):
            a.flags.writeable = False
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Sigma", S)

    def mean(self, x: np.ndarray) -> np.ndarray:
        return self.b + self.B @ x


@dataclass(frozen=True)
class MixingParams:
    """Multinomial-logit weights: pi_g(x) = u_g exp(x'a_g) / sum_h u_h exp(x'a_h).

    The first component is the identifiability pin: log_u[0] = 0, alpha[0] = 0.
    log u_g is capped at LOG_U_BOUND for g >= 2 (the sampler's proposal never
    leaves that region).
    """

    log_u: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        lu = np.array(self.log_u, dtype=float, ndmin=1)
        al = np.array(self.alpha, dtype=float, ndmin=2)
        G = lu.shape[0]
        if al.shape[0] != G:
            raise ValidationError(f"log_u has G={G} but alpha has {al.shape[0]} rows")
        if lu[0] != 0.0 or (al.shape[1] and np.any(al[0] != 0.0)):
            raise ValidationError("first component must have log_u = 0 and alpha = 0")
        if G > 1 and np.any(lu[1:] > LOG_U_BOUND):
            raise ValidationError(f"log_u must be <= {LOG_U_BOUND} for g >= 2")
        lu.flags.writeable = False
        al.flags.writeable = False
        object.__setattr__(self, "log_u", lu)
        object.__setattr__(self, "alpha", al)

    @property
    def G(self) -> int:
        return self.log_u.shape[0]


@dataclass(frozen=True)
class ModelParams:
    mixing: MixingParams
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.mixing.G:
            raise ValidationError(
                f"{len(comps)} components but mixing has G={self.mixing.G}"
            )
        if len({(c.b.shape[0], c.B.shape[1]) for c in comps}) != 1:
            raise ValidationError("components disagree on (p, q)")
        object.__setattr__(self, "components", comps)

    @property
    def G(self) -> int:
        return self.mixing.G

    @property
    def p(self) -> int:
        return self.components[0].b.shape[0]

    @property
    def q(self) -> int:
        return self.components[0].B.shape[1]

    def to_dict(self) -> dict:
        return {
            "log_u": self.mixing.log_u.tolist(),
            "alpha": self.mixing.alpha.tolist(),
            "components": [
                {"b": c.b.tolist(), "B": c.B.tolist(), "Sigma": c.Sigma.tolist()}
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        mixing = MixingParams(np.asarray(d["log_u"]), np.asarray(d["alpha"]))
        comps = tuple(
            ComponentParams(np.asarray(c["b"]), np.asarray(c["B"]), np.asarray(c["Sigma"]))
            for c in d["components"]
        )
        return cls(mixing, comps)


def _spd_matrix(value, dim: int, name: str) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if np.isscalar(value) or m.ndim == 0:
        m = float(value) * np.eye(dim)
    if m.shape != (dim, dim):
        raise ValidationError(f"{name} must be {dim}x{dim}, got {m.shape}")
    if not np.allclose(m, m.T):
        raise ValidationError(f"{name} must be symmetric")
    chol_with_jitter(m)
    m = m.copy()
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters.

    a: Gamma(a, 1) shape on the mixing intercepts u_g (small a shrinks
       unneeded components; default 1/G).
    S_alpha: covariance of alpha_g.
    S_b (scalar), S_B1 (q x q), S_B2 (p x p): the joint coefficient matrix
       (b_g, B_g) gets vec-covariance blockdiag(S_b, S_B1) (x) S_B2.
    nu, S_Sigma: inverse-Wishart on Sigma_g.
    """

    a: float
    S_alpha: np.ndarray
    S_B1: np.ndarray
    S_B2: np.ndarray
    S_b: float
    nu: float
    S_Sigma: np.ndarray

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValidationError(f"a must be positive, got {self.a}")
        if not self.S_b > 0.0:
            raise ValidationError(f"S_b must be positive, got {self.S_b}")
        p = np.asarray(self.S_B2).shape[0] if np.asarray(self.S_B2).ndim else None
        S_B2 = np.asarray(self.S_B2, dtype=float)
        S_Sigma = np.asarray(self.S_Sigma, dtype=float)
        if S_B2.ndim != 2 or S_Sigma.shape != S_B2.shape:
            raise ValidationError("S_B2 and S_Sigma must be p x p matrices")
        p = S_B2.shape[0]
        q = np.asarray(self.S_alpha, dtype=float).shape[0] if np.asarray(self.S_alpha).ndim == 2 else 0
        object.__setattr__(self, "S_B2", _spd_matrix(S_B2, p, "S_B2"))
        object.__setattr__(self, "S_Sigma", _spd_matrix(S_Sigma, p, "S_Sigma"))
        object.__setattr__(self, "S_alpha", _spd_matrix(self.S_alpha, q, "S_alpha"))
        object.__setattr__(self, "S_B1", _spd_matrix(self.S_B1, q, "S_B1"))
        if not self.nu > p - 1:
            raise ValidationError(f"need nu > p-1 = {p-1}, got {self.nu}")

    @classmethod
    def default(cls, p: int, q: int, G: int) -> "PriorConfig":
        return cls(
            a=1.0 / G,
            S_alpha=25.0 * np.eye(q),
            S_B1=25.0 * np.eye(q),
            S_B2=np.eye(p),
            S_b=25.0,
            nu=p + 2.0,
            S_Sigma=np.eye(p),
        )

    @classmethod
    def from_data(cls, data, G: int) -> "PriorConfig":
        """Weakly informative priors scaled to the data.

        Response rows are scaled by the observed column variances and
        covariate columns by 1/Var(x), so coefficient priors are roughly
        scale equivariant; S_Sigma = diag(var) keeps the prior covariance
        at the marginal data scale, which stops near-empty components from
        collapsing onto single points.
        """
        p, q = data.p, data.q
        v = np.ones(p)
        for k in range(p):
            if data.kinds[k].kind == "binary":
                continue  # the latent scale behind a binary margin is ~1
            obs = data.y[data.delta[:, k] == 1, k]
            if obs.size >= 2:
                v[k] = max(float(np.var(obs)), 1e-6)
            if data.kinds[k].kind == "count":
                v[k] = max(v[k], 1.0)
        if q:
            vx = np.maximum(np.var(data.x, axis=0), 1e-6)
        else:
            vx = np.ones(0)
        return cls(
            a=1.0 / G,
            S_alpha=np.diag(25.0 / vx) if q else np.zeros((0, 0)),
            S_B1=np.diag(25.0 / vx) if q else np.zeros((0, 0)),
            S_B2=np.diag(v),
            S_b=25.0,
            nu=p + 2.0,
            S_Sigma=np.diag(v),
        )

    @property
    def p(self) -> int:
        return self.S_B2.shape[0]

    @property
    def q(self) -> int:
        return self.S_alpha.shape[0]


def mixing_logits(mixing: MixingParams, x: np.ndarray) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return mixing.log_u + mixing.alpha @ x


def _softmax(logw: np.ndarray) -> np.ndarray:
    w = np.exp(logw - np.max(logw))
    return w / w.sum()


def mixing_probs(mixing: MixingParams, x: np.ndarray) -> np.ndarray:
    """pi(x): exact simplex vector, computed in log space."""
    return _softmax(mixing_logits(mixing, x))


def component_obs_marginal(comp: ComponentParams, x, obs_idx) -> tuple:
    """Gaussian marginal of the component over the observed coordinates."""
    obs_idx = np.asarray(obs_idx, dtype=int)
    if obs_idx.size == 0:
        raise ValidationError("obs_idx must be nonempty for a marginal")
    mean = comp.mean(np.atleast_1d(np.asarray(x, dtype=float)))
    return mean[obs_idx], comp.Sigma[np.ix_(obs_idx, obs_idx)]


def component_mis_conditional(comp: ComponentParams, x, y_obs, obs_idx, mis_idx) -> tuple:
    """Gaussian conditional of the missing coordinates given the observed ones.

    Empty obs_idx returns the marginal on mis_idx.  The Schur complement is
    formed via Cholesky solves; the result never depends on missing entries
    of the input row.
    """
    obs_idx = np.asarray(obs_idx, dtype=int)
    mis_idx = np.asarray(mis_idx, dtype=int)
    if mis_idx.size == 0:
        raise ValidationError("mis_idx must be nonempty for a conditional")
    mean = comp.mean(np.atleast_1d(np.asarray(x, dtype=float)))
    S = comp.Sigma
    if obs_idx.size == 0:
        return mean[mis_idx], S[np.ix_(mis_idx, mis_idx)]
    y_obs = np.atleast_1d(np.asarray(y_obs, dtype=float))
    Soo = S[np.ix_(obs_idx, obs_idx)]
    Som = S[np.ix_(obs_idx, mis_idx)]
    L = chol_with_jitter(Soo)
    W = cho_solve((L, True), Som).T  # Sigma_mo Sigma_oo^-1
    cmean = mean[mis_idx] + W @ (y_obs - mean[obs_idx])
    ccov = S[np.ix_(mis_idx, mis_idx)] - W @ Som
    return cmean, 0.5 * (ccov + ccov.T)


def component_posterior(params: ModelParams, x, y_obs, obs_idx) -> np.ndarray:
    """P(z = g | x, y_obs): mixing weight times observed-pattern marginal."""
    obs_idx = np.asarray(obs_idx, dtype=int)
    logw = mixing_logits(params.mixing, x).copy()
    if obs_idx.size:
        y_obs = np.atleast_1d(np.asarray(y_obs, dtype=float))
        for g, comp in enumerate(params.components):
            mean, cov = component_obs_marginal(comp, x, obs_idx)
            logw[g] += gaussian_logpdf(y_obs, mean, cov)
    return _softmax(logw)


def impute_row(params: ModelParams, x, y_obs, obs_idx, mis_idx, rng: RngStream) -> np.ndarray:
    """Exact draw from the mixture of conditionals: draw the component from
    the component posterior, then the within-component Gaussian conditional."""
    mis_idx = np.asarray(mis_idx, dtype=int)
    if mis_idx.size == 0:
        raise ValidationError("impute_row needs at least one missing coordinate")
    probs = component_posterior(params, x, y_obs, obs_idx)
    g = int(np.searchsorted(np.cumsum(probs), rng.gen.random() * probs.sum()))
    g = min(g, params.G - 1)
    mean, cov = component_mis_conditional(params.components[g], x, y_obs, obs_idx, mis_idx)
    L = chol_with_jitter(cov)
    return mean + L @ rng.gen.standard_normal(mis_idx.size)


def loglik_obs(params: ModelParams, data: Dataset) -> float:
    """Observed-data log likelihood: sum_i log sum_g pi_g(x_i) f_g(y_i,obs | x_i).

    Rows with no observed responses contribute zero.
    """
    total = 0.0
    chol_cache = {}
    for i in range(data.n):
        obs_idx, _ = split_pattern(data.delta[i])
        if obs_idx.size == 0:
            continue
        xi = data.x[i]
        logits = mixing_logits(params.mixing, xi)
        logw = np.empty(params.G)
        for g, comp in enumerate(params.components):
            key = (tuple(obs_idx), g)
            if key not in chol_cache:
                Soo = comp.Sigma[np.ix_(obs_idx, obs_idx)]
                L = chol_with_jitter(Soo)
                const = -0.5 * obs_idx.size * math.log(2.0 * math.pi) - np.sum(
                    np.log(np.diag(L))
                )
                chol_cache[key] = (L, const)
            L, const = chol_cache[key]
            mean = comp.mean(xi)[obs_idx]
            r = solve_triangular(L, data.y[i, obs_idx] - mean, lower=True)
            logw[g] = logits[g] + const - 0.5 * np.dot(r, r)
        m = np.max(logw)
        total += m + math.log(np.sum(np.exp(logw - m))) - (
            np.max(logits) + math.log(np.sum(np.exp(logits - np.max(logits))))
        )
    return float(total)
