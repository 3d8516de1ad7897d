"""
Small-scale Bayesian nonparametric regression by maximum marginal likelihood.

The latent function carries a membrane prior (additively separable by
default, or any polynomial link used as a plain GP covariance), observed
under heteroskedastic Gaussian noise: two inputs share a noise variance
exactly when their coordinates fall on the same string intervals in every
dimension.  Everything here is dense O(N^3); it is intended for data sets
small enough that the Gram matrix fits comfortably in memory.

Main entry points
-----------------
log_marginal_likelihood   Gaussian evidence of the targets
fit_mle                   quasi-Newton optimisation of hyper-parameters
                          (and optionally boundary positions) in log space
select_boundaries         AIC/BIC selection of per-dimension string counts
predict                   posterior mean/covariance of noise-free values
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .kernels import KernelSpec, log_params, with_log_params
from .membrane import LinkFunction, elementary_symmetric_values, symmetric_sum
from .string_core import StringModel, StringPartition, StringSpec

__all__ = [
    "ConditioningError",
    "RegressionModel",
    "FitConfig",
    "FitResult",
    "make_model",
    "noise_group_indices",
    "log_marginal_likelihood",
    "fit_mle",
    "select_boundaries",
    "predict",
    "value_cov_matrix",
]

log = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class ConditioningError(np.linalg.LinAlgError):
    """The noisy Gram matrix stayed non positive definite through the jitter ladder."""


@dataclass
class RegressionModel:
    """String-GP regression model with per-cell noise variances.

    ``noise`` holds one variance per cell of the string-interval grid, keyed
    by the tuple of per-dimension string indices; only occupied cells matter.
    """

    partitions: tuple[StringPartition, ...]
    link: LinkFunction
    noise: dict[tuple[int, ...], float]
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.shape[0] != self.y.size:
            raise ValueError("x and y disagree on the number of observations")
        if self.x.shape[1] != len(self.partitions):
            raise ValueError("x must have one column per partition")
        if any(v <= 0 for v in self.noise.values()):
            raise ValueError("noise variances must be strictly positive")

    @property
    def models(self) -> tuple[StringModel, ...]:
        compiled = getattr(self, "_models", None)
        if compiled is None:
            compiled = tuple(StringModel(p) for p in self.partitions)
            self._models = compiled
        return compiled


def make_model(x, y, partitions, link=None, noise=None) -> RegressionModel:
    """Convenience constructor filling default link and per-cell noise."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    partitions = tuple(partitions)
    if link is None:
        link = symmetric_sum(len(partitions))
    if noise is None:
        base = max(float(np.var(np.asarray(y))), 1e-6) * 0.1
        noise = {cell: base for cell in _all_cells(partitions)}
    return RegressionModel(partitions, link, dict(noise), x, y)


def _all_cells(partitions) -> list[tuple[int, ...]]:
    from itertools import product

    return list(product(*[range(1, p.n_strings + 1) for p in partitions]))


def noise_group_indices(model: RegressionModel, x=None) -> np.ndarray:
    """Cell key per input row: the tuple of per-dimension string indices."""
    x = model.x if x is None else np.atleast_2d(np.asarray(x, dtype=float))
    cols = [m.string_index(x[:, j]) for j, m in enumerate(model.models)]
    return np.stack(cols, axis=1)


def _dim_cov_values(model: StringModel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Value-value covariance matrix between coordinate vectors (deduplicated)."""
    ua, inv_a = np.unique(a, return_inverse=True)
    ub, inv_b = np.unique(b, return_inverse=True)
    grid = model.cov_grid(ua, ub)[..., 0, 0]
    return grid[np.ix_(inv_a, inv_b)]


def value_cov_matrix(models, link: LinkFunction, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """cov(f(a_i), f(b_j)) for mean-zero coordinate processes under the link."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    per_dim = np.stack(
        [_dim_cov_values(m, a[:, j], b[:, j]) for j, m in enumerate(models)], axis=-1
    )
    w = link.order_weights()
    e_all = elementary_symmetric_values(per_dim, len(models))
    return np.einsum("abn,n->ab", e_all[..., 1:], w[1:] ** 2)


def _noisy_gram(model: RegressionModel) -> np.ndarray:
    gram = value_cov_matrix(model.models, model.link, model.x, model.x)
    groups = noise_group_indices(model)
    diag = np.array([model.noise[tuple(g)] for g in groups])
    return gram + np.diag(diag)


def _chol_with_ladder(mat: np.ndarray) -> np.ndarray:
    mean_diag = float(np.mean(np.diag(mat)))
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(mat + jitter * mean_diag * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError("Gram matrix not positive definite after jitter ladder")


def log_marginal_likelihood(model: RegressionModel) -> float:
    """Gaussian evidence log p(y | X, hyper-parameters)."""
    if model.y.size == 0:
        raise ValueError("empty data set")
    chol = _chol_with_ladder(_noisy_gram(model))
    alpha = np.linalg.solve(chol, model.y)
    n = model.y.size
    return float(
        -0.5 * alpha @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * np.log(2.0 * np.pi)
    )


def predict(model: RegressionModel, x_star) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of noise-free latent values at ``x_star``.

    Raises if any test coordinate falls outside the partition domain of its
    dimension.
    """
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    for j, p in enumerate(model.partitions):
        lo, hi = p.domain
        if np.any(x_star[:, j] < lo) or np.any(x_star[:, j] > hi):
            raise ValueError(
                f"test inputs outside the partition domain [{lo}, {hi}] in dimension {j}"
            )
    chol = _chol_with_ladder(_noisy_gram(model))
    k_sx = value_cov_matrix(model.models, model.link, x_star, model.x)
    k_ss = value_cov_matrix(model.models, model.link, x_star, x_star)
    v = np.linalg.solve(chol, k_sx.T)
    alpha = np.linalg.solve(chol, model.y)
    mean = v.T @ alpha
    cov = k_ss - v.T @ v
    return mean, cov


# ---------------------------------------------------------------------------
# parameter packing and optimisation
# ---------------------------------------------------------------------------


@dataclass
class FitConfig:
    restarts: int = 5
    seed: int = 0
    maxiter: int = 200
    optimize_boundaries: bool = False
    jitter_scale: float = 0.5  # stddev of the log-space restart perturbations
    noise_floor: float = 1e-10


@dataclass
class FitResult:
    model: RegressionModel
    log_marginal: float
    n_evals: int
    converged: bool
    restarts: list[float] = field(default_factory=list)


class _Packing:
    """Flattens (kernel log-params, log noises, boundary increments) to a vector.

    Interior boundaries are optimised through cumulative positive increments
    so that candidate partitions always stay strictly increasing.
    """

    def __init__(self, model: RegressionModel, optimize_boundaries: bool):
        self.link = model.link
        self.x = model.x
        self.y = model.y
        self.domains = [p.domain for p in model.partitions]
        self.families = [[s.kernel.family for s in p.strings] for p in model.partitions]
        self.means = [[s.mean for s in p.strings] for p in model.partitions]
        self.cells = sorted(model.noise)
        self.optimize_boundaries = optimize_boundaries
        self.slices: list[tuple] = []
        pieces = []
        for j, p in enumerate(model.partitions):
            for k, s in enumerate(p.strings):
                vec = log_params(s.kernel)
                self.slices.append(("kernel", j, k, len(vec)))
                pieces.append(vec)
        for cell in self.cells:
            self.slices.append(("noise", cell, None, 1))
            pieces.append(np.log([model.noise[cell]]))
        if optimize_boundaries:
            for j, p in enumerate(model.partitions):
                k = p.n_strings
                if k > 1:
                    incr = np.diff(np.asarray(p.boundary_times))
                    self.slices.append(("boundaries", j, None, k))
                    pieces.append(np.log(incr / incr.sum()))
        self.x0 = np.concatenate(pieces) if pieces else np.zeros(0)
        self._template = model

    def unpack(self, vec: np.ndarray, noise_floor: float) -> RegressionModel:
        vec = np.clip(vec, -30.0, 30.0)  # keep exp() finite during line search
        pos = 0
        kernels: dict[tuple[int, int], KernelSpec] = {}
        noise: dict[tuple[int, ...], float] = {}
        boundaries: dict[int, np.ndarray] = {}
        for tag, j, k, width in self.slices:
            chunk = vec[pos : pos + width]
            pos += width
            if tag == "kernel":
                old = self._template.partitions[j].strings[k].kernel
                kernels[(j, k)] = with_log_params(old, chunk)
            elif tag == "noise":
                noise[j] = max(float(np.exp(chunk[0])), noise_floor)
            else:
                a, b = self.domains[j]
                incr = np.exp(chunk)
                cum = np.cumsum(incr) / incr.sum()
                boundaries[j] = np.concatenate([[a], a + (b - a) * cum])
        partitions = []
        for j, p in enumerate(self._template.partitions):
            bt = boundaries.get(j, np.asarray(p.boundary_times))
            specs = tuple(
                StringSpec(kernels[(j, k)], self.means[j][k]) for k in range(p.n_strings)
            )
            partitions.append(StringPartition(tuple(bt), specs))
        return RegressionModel(tuple(partitions), self.link, noise, self.x, self.y)


def fit_mle(model: RegressionModel, config: FitConfig | None = None) -> FitResult:
    """Maximise the marginal likelihood with numeric-gradient L-BFGS restarts."""
    if model.y.size == 0:
        raise ValueError("empty data set")
    config = config or FitConfig()
    packing = _Packing(model, config.optimize_boundaries)
    evals = {"n": 0}

    def objective(vec):
        evals["n"] += 1
        try:
            candidate = packing.unpack(vec, config.noise_floor)
            return -log_marginal_likelihood(candidate)
        except (ConditioningError, ValueError, FloatingPointError):
            return 1e12

    rng = np.random.default_rng(config.seed)
    starts = [packing.x0]
    for _ in range(max(config.restarts - 1, 0)):
        starts.append(packing.x0 + config.jitter_scale * rng.standard_normal(packing.x0.size))

    best = None
    scores = []
    for start in starts:
        res = optimize.minimize(
            objective, start, method="L-BFGS-B", options={"maxiter": config.maxiter}
        )
        scores.append(-float(res.fun))
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise RuntimeError("optimisation failed from every start")
    fitted = packing.unpack(best.x, config.noise_floor)
    return FitResult(
        model=fitted,
        log_marginal=-float(best.fun),
        n_evals=evals["n"],
        converged=bool(best.success),
        restarts=scores,
    )


def _n_params(model: RegressionModel, optimize_boundaries: bool) -> int:
    return _Packing(model, optimize_boundaries).x0.size


def select_boundaries(
    make_candidate,
    candidate_counts,
    criterion: str = "BIC",
    config: FitConfig | None = None,
) -> tuple[int, FitResult, list[dict]]:
    """Fit one model per candidate string count and keep the best criterion.

    ``make_candidate(count)`` must return an initial :class:`RegressionModel`
    with that many strings per dimension.  Ties break toward fewer strings.
    """
    if criterion not in ("AIC", "BIC"):
        raise ValueError("criterion must be 'AIC' or 'BIC'")
    config = config or FitConfig()
    table = []
    best = None
    for count in sorted(candidate_counts):
        candidate = make_candidate(count)
        result = fit_mle(candidate, config)
        p = _n_params(result.model, config.optimize_boundaries)
        n = result.model.y.size
        if criterion == "AIC":
            score = 2.0 * p - 2.0 * result.log_marginal
        else:
            score = p * np.log(n) - 2.0 * result.log_marginal
        table.append(
            {"count": count, "criterion": float(score), "log_marginal": result.log_marginal}
        )
        if best is None or score < best[0] - 1e-12:
            best = (score, count, result)
    return best[1], best[2], table
