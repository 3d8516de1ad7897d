"""
Multivariate extension through link functions.

A membrane model combines d independent univariate string GPs through a
polynomial link phi, f(t_1, ..., t_d) = phi(z^1_{t_1}, ..., z^d_{t_d}).
Supported links are the elementary symmetric polynomials e_n (n = 1 is the
symmetric sum, n = d the separable product) and weighted sums of them.

Because the coordinate processes are independent, every first- and
second-order moment of f and its gradient factorizes over dimensions; the
helpers here assemble them from the univariate global means/covariances.
The covariance formulas assume mean-zero coordinate processes (the default
prior throughout this package); means themselves are handled exactly.

The module also hosts the gradient flexibility diagnostics comparing an
additively separable model against an isotropic one with the same radial
profile: gradient entropies always agree, while the mutual information
between gradients at two points is never larger for the separable model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .string_core import StringModel, StringPartition

__all__ = [
    "LinkFunction",
    "symmetric_sum",
    "product_link",
    "elementary_symmetric",
    "weighted_additive",
    "link_from_config",
    "link_to_config",
    "elementary_symmetric_values",
    "link_eval_and_partials",
    "MembraneModel",
    "membrane_gradient",
    "MembraneMoments",
    "membrane_moments",
    "RadialProfile",
    "se_profile",
    "rq_profile",
    "FlexibilityMetrics",
    "flexibility_metrics",
]


# ---------------------------------------------------------------------------
# link functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkFunction:
    """Polynomial link combining the d coordinate processes.

    ``kind`` is one of ``sum`` (e_1), ``product`` (e_d), ``esp`` (e_n with
    ``order`` = n) or ``weighted_additive`` (sum_k weights[k] * e_k).
    """

    kind: str
    dimension: int
    order: int = 1
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        d = self.dimension
        if d < 1:
            raise ValueError("link dimension must be >= 1")
        if self.kind == "esp" and not 1 <= self.order <= d:
            raise ValueError("elementary symmetric order must be in [1, d]")
        if self.kind == "weighted_additive":
            if self.weights is None or len(self.weights) != d:
                raise ValueError("weighted_additive needs one weight per order 1..d")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        elif self.kind not in ("sum", "product", "esp"):
            raise ValueError(f"unknown link kind {self.kind!r}")

    def order_weights(self) -> np.ndarray:
        """Coefficients w with phi = sum_n w[n] e_n, indexed by order 0..d."""
        w = np.zeros(self.dimension + 1)
        if self.kind == "sum":
            w[1] = 1.0
        elif self.kind == "product":
            w[self.dimension] = 1.0
        elif self.kind == "esp":
            w[self.order] = 1.0
        else:
            w[1:] = self.weights
        return w


def symmetric_sum(dimension: int) -> LinkFunction:
    return LinkFunction("sum", dimension)


def product_link(dimension: int) -> LinkFunction:
    return LinkFunction("product", dimension)


def elementary_symmetric(dimension: int, order: int) -> LinkFunction:
    return LinkFunction("esp", dimension, order=order)


def weighted_additive(weights) -> LinkFunction:
    weights = tuple(float(w) for w in weights)
    return LinkFunction("weighted_additive", len(weights), weights=weights)


def link_from_config(config: dict, dimension: int) -> LinkFunction:
    kind = config.get("kind", "sum")
    if kind == "sum":
        return symmetric_sum(dimension)
    if kind == "product":
        return product_link(dimension)
    if kind == "esp":
        return elementary_symmetric(dimension, int(config["order"]))
    if kind == "weighted_additive":
        return weighted_additive(config["weights"])
    raise ValueError(f"unknown link kind {kind!r}")


def link_to_config(link: LinkFunction) -> dict:
    out = {"kind": link.kind}
    if link.kind == "esp":
        out["order"] = link.order
    if link.kind == "weighted_additive":
        out["weights"] = list(link.weights)
    return out


def elementary_symmetric_values(x: np.ndarray, max_order: int) -> np.ndarray:
    """All e_0..e_max_order of the last axis of ``x`` via the Newton recurrence.

    Shape ``x.shape[:-1] + (max_order + 1,)``; cost O(d * max_order) instead
    of the binomial number of monomials.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    e = np.zeros(x.shape[:-1] + (max_order + 1,))
    e[..., 0] = 1.0
    for j in range(d):
        top = min(j + 1, max_order)
        for n in range(top, 0, -1):
            e[..., n] += x[..., j] * e[..., n - 1]
    return e


def _esp_without(x: np.ndarray, e_all: np.ndarray, order: int) -> np.ndarray:
    """e_order of x with coordinate j removed, for every j (last axis)."""
    d = x.shape[-1]
    out = np.zeros(x.shape)
    if order == 0:
        return np.ones(x.shape)
    for j in range(d):
        # deflate the recurrence: e_n(x \ j) = e_n(x) - x_j * e_{n-1}(x \ j)
        acc = np.ones(x.shape[:-1])
        for n in range(1, order + 1):
            acc = e_all[..., n] - x[..., j] * acc
        out[..., j] = acc
    return out


def link_eval_and_partials(link: LinkFunction, x) -> tuple[np.ndarray, np.ndarray]:
    """Value and gradient of the link at x; both vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != link.dimension:
        raise ValueError("point dimension does not match the link")
    w = link.order_weights()
    top = int(np.max(np.nonzero(w)[0]))
    e_all = elementary_symmetric_values(x, top)
    value = np.einsum("...n,n->...", e_all, w[: top + 1])
    grad = np.zeros(x.shape)
    for n in range(1, top + 1):
        if w[n] != 0.0:
            grad += w[n] * _esp_without(x, e_all, n - 1)
    return value, grad


# ---------------------------------------------------------------------------
# membrane models and moments
# ---------------------------------------------------------------------------


class MembraneModel:
    """d independent univariate string GPs coupled through a link function."""

    def __init__(self, partitions, link: LinkFunction | None = None, validate: bool = True):
        self.partitions = tuple(partitions)
        d = len(self.partitions)
        self.link = link if link is not None else symmetric_sum(d)
        if self.link.dimension != d:
            raise ValueError("link dimension must match the number of partitions")
        self.models = tuple(StringModel(p, validate=validate) for p in self.partitions)

    @property
    def dimension(self) -> int:
        return len(self.partitions)


def membrane_gradient(link: LinkFunction, values, derivatives) -> np.ndarray:
    """Gradient of f from per-dimension states: coordinate j is z'_j * d(phi)/dx_j."""
    values = np.asarray(values, dtype=float)
    derivatives = np.asarray(derivatives, dtype=float)
    _, partials = link_eval_and_partials(link, values)
    return derivatives * partials


@dataclass(frozen=True)
class MembraneMoments:
    """First and second moments of (f(u), f(v)) and their gradients."""

    mean_u: float
    mean_v: float
    grad_mean_u: np.ndarray  # (d,)
    grad_mean_v: np.ndarray  # (d,)
    cov: float  # cov(f(u), f(v))
    cross: np.ndarray  # (d,)  cov(df/du_i (u), f(v))
    grad_grad: np.ndarray  # (d, d)  cov(df/du_i (u), df/dv_j (v))


def _combine_orders(weights: np.ndarray, slots: np.ndarray, drop: int) -> float:
    """sum_n weights[n]^2 e_{n-drop}(slots) over the admissible orders."""
    d = slots.shape[-1]
    e_all = elementary_symmetric_values(slots, max(0, weights.size - 1 - drop))
    total = 0.0
    for n in range(drop, weights.size):
        if weights[n] != 0.0 and n - drop <= d:
            total += weights[n] ** 2 * e_all[..., n - drop]
    return float(total)


def membrane_moments(model: MembraneModel, u, v) -> MembraneMoments:
    """Joint value/gradient moments of f at the pair of points (u, v).

    All quantities are assembled from per-dimension global means and
    covariance blocks; the covariance parts are exact for mean-zero
    coordinate processes.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    d = model.dimension
    if u.size != d or v.size != d:
        raise ValueError("points must have one coordinate per dimension")
    w = model.link.order_weights()

    means_u = np.array([m.global_mean(ui) for m, ui in zip(model.models, u)])  # (d, 2)
    means_v = np.array([m.global_mean(vi) for m, vi in zip(model.models, v)])
    blocks = np.array(
        [m.global_cov(ui, vi) for m, ui, vi in zip(model.models, u, v)]
    )  # (d, 2, 2)

    val_u, grad_u = link_eval_and_partials(model.link, means_u[:, 0])
    val_v, grad_v = link_eval_and_partials(model.link, means_v[:, 0])
    grad_mean_u = means_u[:, 1] * grad_u
    grad_mean_v = means_v[:, 1] * grad_v

    c = blocks[:, 0, 0]  # cov(z_u, z_v) per dimension
    dz_u = blocks[:, 1, 0]  # cov(z'_u, z_v)
    z_dv = blocks[:, 0, 1]  # cov(z_u, z'_v)
    dd = blocks[:, 1, 1]  # cov(z'_u, z'_v)

    cov = float(np.dot(w[1:] ** 2, elementary_symmetric_values(c, d)[1:]))

    cross = np.empty(d)
    grad_grad = np.empty((d, d))
    for i in range(d):
        rest_i = np.delete(c, i)
        cross[i] = dz_u[i] * _combine_orders(w, rest_i, drop=1)
        grad_grad[i, i] = dd[i] * _combine_orders(w, rest_i, drop=1)
        for j in range(d):
            if j == i:
                continue
            rest_ij = np.delete(c, [i, j])
            grad_grad[i, j] = dz_u[i] * z_dv[j] * _combine_orders(w, rest_ij, drop=2)
    return MembraneMoments(
        mean_u=float(val_u),
        mean_v=float(val_v),
        grad_mean_u=grad_mean_u,
        grad_mean_v=grad_mean_v,
        cov=cov,
        cross=cross,
        grad_grad=grad_grad,
    )


# ---------------------------------------------------------------------------
# flexibility diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialProfile:
    """Radial profile rho with derivatives: k(x, y) = rho(||x - y||^2)."""

    value: callable
    d1: callable
    d2: callable
    tag: str = ""


def se_profile(lengthscale: float = 1.0, variance: float = 1.0) -> RadialProfile:
    ell2 = float(lengthscale) ** 2
    half = 0.5 / ell2
    return RadialProfile(
        value=lambda s: variance * np.exp(-half * s),
        d1=lambda s: -variance * half * np.exp(-half * s),
        d2=lambda s: variance * half**2 * np.exp(-half * s),
        tag=f"se(l={lengthscale})",
    )


def rq_profile(alpha: float = 1.0, lengthscale: float = 1.0, variance: float = 1.0) -> RadialProfile:
    a = float(alpha)
    c = 1.0 / (2.0 * a * float(lengthscale) ** 2)
    return RadialProfile(
        value=lambda s: variance * (1.0 + c * s) ** (-a),
        d1=lambda s: -variance * a * c * (1.0 + c * s) ** (-a - 1.0),
        d2=lambda s: variance * a * (a + 1.0) * c**2 * (1.0 + c * s) ** (-a - 2.0),
        tag=f"rq(a={alpha},l={lengthscale})",
    )


@dataclass(frozen=True)
class FlexibilityMetrics:
    h_f: float
    h_g: float
    i_f: float
    i_g: float


def _gaussian_entropy(cov: np.ndarray) -> float:
    d = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ValueError("covariance matrix is not positive definite")
    return 0.5 * d * (1.0 + math.log(2.0 * math.pi)) + 0.5 * logdet


def flexibility_metrics(profile: RadialProfile, x, y, psd_tol: float = 1e-9) -> FlexibilityMetrics:
    """Gradient entropies and mutual informations for separable vs isotropic models.

    ``x`` and ``y`` are distinct d-vectors.  The separable model sums d
    independent one-dimensional processes sharing the radial profile; the
    isotropic model uses the same profile on ||x - y||^2 in R^d.  Marginal
    gradient covariances agree (-2 rho'(0) I); cross covariances share their
    diagonal while the isotropic one also carries off-diagonal terms.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same dimension")
    if np.array_equal(x, y):
        raise ValueError("x and y must be distinct")
    d = x.size
    delta = x - y
    s = float(delta @ delta)
    var0 = -2.0 * profile.d1(0.0)
    if var0 <= 0:
        raise ValueError("profile must have rho'(0) < 0")
    marg = var0 * np.eye(d)

    diag = -2.0 * (profile.d1(s) + 2.0 * delta**2 * profile.d2(s))
    cross_f = np.diag(diag)
    cross_g = -4.0 * np.outer(delta, delta) * profile.d2(s)
    np.fill_diagonal(cross_g, diag)

    joint_f = np.block([[marg, cross_f], [cross_f.T, marg]])
    joint_g = np.block([[marg, cross_g], [cross_g.T, marg]])
    scale = float(var0)
    for name, joint in (("separable", joint_f), ("isotropic", joint_g)):
        min_eig = float(np.linalg.eigvalsh(joint).min())
        if min_eig < -psd_tol * scale:
            raise ValueError(
                f"profile {profile.tag or ''} not admissible at this pair: "
                f"{name} joint gradient covariance has eigenvalue {min_eig:.3e}"
            )

    h_marg = _gaussian_entropy(marg)
    i_f = 2.0 * h_marg - _gaussian_entropy(joint_f)
    i_g = 2.0 * h_marg - _gaussian_entropy(joint_g)
    return FlexibilityMetrics(h_f=h_marg, h_g=h_marg, i_f=i_f, i_g=i_g)
