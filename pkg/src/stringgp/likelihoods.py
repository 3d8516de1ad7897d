"""
Plug-in likelihood models for the MCMC sampler.

A likelihood model evaluates log p(D | f, u), where f holds latent-function
values at the training inputs and u any extra likelihood parameters.  Models
may declare a conjugate update or a Metropolis-Hastings proposal for u;
otherwise u is absent and updating it is a no-op.

The Gamma-utility likelihood scores a portfolio built from latent values at
asset-characteristic points: softmax weights over assets, compounded through
historical price relatives, and a Gamma density on the realised utility
(excess log return over a benchmark, or the annualised Sharpe ratio).
Utilities outside the Gamma support map to log-density -inf so the sampler
simply rejects, rather than raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "LikelihoodModel",
    "FlatLikelihood",
    "GaussianLikelihood",
    "GammaUtilityLikelihood",
    "PortfolioSpec",
    "gamma_utility_likelihood",
]


class LikelihoodModel:
    """Base likelihood: finite, deterministic evaluator plus optional u machinery."""

    has_u = False

    def log_lik(self, f: np.ndarray, u=None) -> float:
        raise NotImplementedError

    def init_u(self, rng: np.random.Generator):
        return None

    def update_u(self, f: np.ndarray, u, rng: np.random.Generator):
        """One u update (conjugate draw or MH step); no-op without u."""
        return u


class FlatLikelihood(LikelihoodModel):
    """Constant likelihood; the posterior is the prior."""

    def log_lik(self, f, u=None) -> float:
        return 0.0


class GaussianLikelihood(LikelihoodModel):
    """i.i.d. Gaussian observation noise, y_i ~ N(f_i, u).

    ``noise_variance`` fixes u; otherwise u carries an inverse-Gamma(a, b)
    prior updated by an exact conjugate draw (or by Metropolis-Hastings on
    log u when ``use_mh`` is set, mainly for cross-checking).
    """

    def __init__(self, y, noise_variance=None, prior=(2.0, 0.5), use_mh=False, mh_step=0.3):
        self.y = np.asarray(y, dtype=float).reshape(-1)
        self.fixed = noise_variance
        self.prior = prior
        self.has_u = noise_variance is None
        self.use_mh = use_mh
        self.mh_step = mh_step

    def log_lik(self, f, u=None) -> float:
        var = self.fixed if self.fixed is not None else float(u)
        r = self.y - np.asarray(f, dtype=float).reshape(-1)
        n = r.size
        return float(-0.5 * (r @ r) / var - 0.5 * n * math.log(2.0 * math.pi * var))

    def init_u(self, rng):
        if not self.has_u:
            return None
        a, b = self.prior
        return float(b / rng.gamma(a))

    def _log_prior_u(self, u: float) -> float:
        a, b = self.prior
        return float(stats.invgamma.logpdf(u, a, scale=b))

    def update_u(self, f, u, rng):
        if not self.has_u:
            return u
        r = self.y - np.asarray(f, dtype=float).reshape(-1)
        if not self.use_mh:
            a, b = self.prior
            a_post = a + 0.5 * r.size
            b_post = b + 0.5 * float(r @ r)
            return float(b_post / rng.gamma(a_post))
        # random-walk MH on log u; proposal is symmetric in log space, so the
        # log-scale Jacobian contributes u' / u to the ratio
        prop = float(u * math.exp(self.mh_step * rng.standard_normal()))
        log_r = (
            self.log_lik(f, prop)
            + self._log_prior_u(prop)
            + math.log(prop)
            - self.log_lik(f, u)
            - self._log_prior_u(u)
            - math.log(u)
        )
        if math.log(rng.uniform()) < min(0.0, log_r):
            return prop
        return u


# ---------------------------------------------------------------------------
# portfolio utility likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PortfolioSpec:
    """Synthetic market for the utility likelihood.

    ``prices``: asset price levels, shape (T + 1, n).  ``characteristics``:
    the d-dimensional characteristic vector of each asset at each weight
    date, shape (T, n, d); the portfolio is rebalanced at dates 0..T-1 and
    each rebalance earns the following period's price relative.
    """

    prices: np.ndarray
    characteristics: np.ndarray
    utility: str = "excess_return"  # or "sharpe"
    benchmark: str = "equal"  # or "market"

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        chars = np.asarray(self.characteristics, dtype=float)
        if prices.ndim != 2 or chars.ndim != 3:
            raise ValueError("prices must be (T+1, n), characteristics (T, n, d)")
        if prices.shape[0] != chars.shape[0] + 1 or prices.shape[1] != chars.shape[1]:
            raise ValueError("prices and characteristics disagree on shape")
        if self.utility not in ("excess_return", "sharpe"):
            raise ValueError(f"unknown utility {self.utility!r}")
        if self.benchmark not in ("equal", "market"):
            raise ValueError(f"unknown benchmark {self.benchmark!r}")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "characteristics", chars)

    @property
    def training_inputs(self) -> np.ndarray:
        """All characteristic points, flattened to (T * n, d)."""
        t, n, d = self.characteristics.shape
        return self.characteristics.reshape(t * n, d)


class GammaUtilityLikelihood(LikelihoodModel):
    """Gamma density on the realised utility of a latent-driven portfolio.

    The latent function is the log of the positive portfolio score, so
    weights are a per-date softmax of latent values across assets.
    """

    def __init__(self, spec: PortfolioSpec, alpha_e: float, beta_e: float):
        if alpha_e <= 0 or beta_e <= 0:
            raise ValueError("Gamma parameters must be positive")
        self.spec = spec
        self.alpha_e = float(alpha_e)
        self.beta_e = float(beta_e)
        prices = spec.prices
        self._relatives = prices[1:] / prices[:-1]  # (T, n)
        if spec.benchmark == "equal":
            bench_w = np.full_like(self._relatives, 1.0 / prices.shape[1])
        else:
            caps = prices[:-1]
            bench_w = caps / caps.sum(axis=1, keepdims=True)
        self._bench_growth = np.sum(bench_w * self._relatives, axis=1)

    @property
    def training_inputs(self) -> np.ndarray:
        return self.spec.training_inputs

    def _daily_log_returns(self, f: np.ndarray) -> np.ndarray:
        t, n, _ = self.spec.characteristics.shape
        latent = np.asarray(f, dtype=float).reshape(t, n)
        latent = latent - latent.max(axis=1, keepdims=True)
        scores = np.exp(latent)
        weights = scores / scores.sum(axis=1, keepdims=True)
        growth = np.sum(weights * self._relatives, axis=1)
        return np.log(growth)

    def utility(self, f: np.ndarray) -> float:
        r = self._daily_log_returns(f)
        if self.spec.utility == "excess_return":
            return float(r.sum() - np.log(self._bench_growth).sum())
        mean = float(r.mean())
        spread = float(np.sqrt(np.mean((r - mean) ** 2)))
        if spread <= 1e-12 * max(abs(mean), 1e-300):
            return -math.inf  # constant daily returns: the ratio diverges
        return mean * math.sqrt(252.0) / spread

    def log_lik(self, f, u=None) -> float:
        value = self.utility(f)
        if not value > 0.0:
            return -math.inf
        return float(stats.gamma.logpdf(value, self.alpha_e, scale=1.0 / self.beta_e))


def gamma_utility_likelihood(
    spec: PortfolioSpec, alpha_e: float, beta_e: float
) -> GammaUtilityLikelihood:
    """Build the Gamma-utility likelihood for a synthetic portfolio problem."""
    return GammaUtilityLikelihood(spec, alpha_e, beta_e)
