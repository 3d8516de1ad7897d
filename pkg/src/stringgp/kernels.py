"""
Covariance kernels with analytic derivative blocks.

Every kernel k(u, v) in this module is at least twice continuously
differentiable, so the joint law of a process and its derivative exists.
The central object is the 2x2 block

    [ k(u, v)          dk/dy(u, v)      ]
    [ dk/dx(u, v)      d2k/dxdy(u, v)   ]

returned by :func:`eval_block`, where ``x`` (resp. ``y``) denotes the first
(resp. second) argument of ``k``.  For a stationary kernel k(u, v) = f(u - v)
the block reduces to ``[[f(r), -f'(r)], [f'(r), -f''(r)]]`` with ``r = u - v``.

Families
--------
se          k(r) = s2 * exp(-r^2 / (2 l^2))
rq          k(r) = s2 * (1 + r^2 / (2 a l^2))^(-a)
matern32    k(r) = s2 * (1 + sqrt(3)|r|/l) * exp(-sqrt(3)|r|/l)
matern52    k(r) = s2 * (1 + sqrt(5)|r|/l + 5 r^2/(3 l^2)) * exp(-sqrt(5)|r|/l)
periodic    k(r) = s2 * exp(-2 sin^2(pi r / T) / l^2)
sm          k(r) = sum_q w_q * exp(-2 pi^2 r^2 g_q^2) * cos(2 pi r m_q)
linear      k(u, v) = s2 * (u - c) * (v - c)        (diagnostics only)

All scale-like hyper-parameters are strictly positive.  The spectral mixture
takes any number of (weight, gamma, mu) components; the linear kernel's shift
``c`` may be any real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelSpec",
    "DegeneracyError",
    "DegeneracyFlags",
    "DEGENERACY_TOL",
    "squared_exponential",
    "rational_quadratic",
    "matern32",
    "matern52",
    "periodic",
    "spectral_mixture",
    "linear",
    "eval_block",
    "eval_value",
    "degeneracy_check",
    "kernel_from_config",
    "kernel_to_config",
    "is_stationary",
    "log_params",
    "with_log_params",
    "FAMILIES",
]

_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)
_TWO_PI2 = 2.0 * math.pi**2

#: eigenvalue / correlation tolerance, relative to the output variance, below
#: which a boundary Gaussian counts as degenerate
DEGENERACY_TOL = 1e-9

# param name lists; positivity is enforced except where masked out
_PARAM_NAMES = {
    "se": ("variance", "lengthscale"),
    "rq": ("variance", "lengthscale", "alpha"),
    "matern32": ("variance", "lengthscale"),
    "matern52": ("variance", "lengthscale"),
    "periodic": ("variance", "lengthscale", "period"),
    "linear": ("variance", "shift"),
}
_UNCONSTRAINED = {"linear": ("shift",)}

FAMILIES = ("se", "rq", "matern32", "matern52", "periodic", "sm", "linear")


class DegeneracyError(ValueError):
    """A boundary Gaussian is singular where the construction needs it invertible."""


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family tag plus its hyper-parameters.

    Instances are immutable and hashable; use the module-level factory
    functions (``squared_exponential`` etc.) rather than the constructor.
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if self.family == "sm":
            if len(params) == 0 or len(params) % 3 != 0:
                raise ValueError("spectral mixture needs (weight, gamma, mu) triplets")
            if any(p <= 0 for p in params):
                raise ValueError("spectral mixture parameters must be positive")
            return
        names = _PARAM_NAMES[self.family]
        if len(params) != len(names):
            raise ValueError(f"{self.family} kernel expects params {names}")
        free = _UNCONSTRAINED.get(self.family, ())
        for name, value in zip(names, params):
            if name not in free and value <= 0:
                raise ValueError(f"{self.family} kernel parameter {name} must be > 0")

    @property
    def param_names(self) -> tuple[str, ...]:
        if self.family == "sm":
            q = len(self.params) // 3
            return tuple(
                f"{base}_{i + 1}" for i in range(q) for base in ("weight", "gamma", "mu")
            )
        return _PARAM_NAMES[self.family]

    @property
    def variance(self) -> float:
        """Output variance k(u, u) for stationary families, nominal scale otherwise."""
        if self.family == "sm":
            return float(sum(self.params[0::3]))
        return self.params[0]


@dataclass(frozen=True)
class DegeneracyFlags:
    degenerate_at_a: bool
    degenerate_at_b_given_a: bool


def squared_exponential(variance: float = 1.0, lengthscale: float = 1.0) -> KernelSpec:
    return KernelSpec("se", (variance, lengthscale))


def rational_quadratic(
    variance: float = 1.0, lengthscale: float = 1.0, alpha: float = 1.0
) -> KernelSpec:
    return KernelSpec("rq", (variance, lengthscale, alpha))


def matern32(variance: float = 1.0, lengthscale: float = 1.0) -> KernelSpec:
    return KernelSpec("matern32", (variance, lengthscale))


def matern52(variance: float = 1.0, lengthscale: float = 1.0) -> KernelSpec:
    return KernelSpec("matern52", (variance, lengthscale))


def periodic(
    variance: float = 1.0, lengthscale: float = 1.0, period: float = 1.0
) -> KernelSpec:
    return KernelSpec("periodic", (variance, lengthscale, period))


def spectral_mixture(components) -> KernelSpec:
    """Spectral mixture kernel from (weight, gamma, mu) triplets."""
    flat = tuple(float(x) for comp in components for x in comp)
    return KernelSpec("sm", flat)


def linear(variance: float = 1.0, shift: float = 0.0) -> KernelSpec:
    return KernelSpec("linear", (variance, shift))


def is_stationary(kernel: KernelSpec) -> bool:
    return kernel.family != "linear"


# ---------------------------------------------------------------------------
# stationary profiles: f(r), f'(r), f''(r)
# ---------------------------------------------------------------------------


def _profile(kernel: KernelSpec, r: np.ndarray):
    """Return (f(r), f'(r), f''(r)) for a stationary kernel."""
    p = kernel.params
    if kernel.family == "se":
        s2, ell = p
        q = r / ell**2
        e = s2 * np.exp(-0.5 * r * q)
        return e, -q * e, (q * q - 1.0 / ell**2) * e
    if kernel.family == "rq":
        s2, ell, alpha = p
        b = 1.0 + r * r / (2.0 * alpha * ell**2)
        f = s2 * b ** (-alpha)
        fp = -s2 * (r / ell**2) * b ** (-alpha - 1.0)
        fpp = -(s2 / ell**2) * b ** (-alpha - 2.0) * (b - (alpha + 1.0) * r * r / (alpha * ell**2))
        return f, fp, fpp
    if kernel.family == "matern32":
        s2, ell = p
        s = _SQRT3 * np.abs(r) / ell
        e = np.exp(-s)
        f = s2 * (1.0 + s) * e
        fp = -3.0 * s2 * (r / ell**2) * e
        fpp = -3.0 * (s2 / ell**2) * (1.0 - s) * e
        return f, fp, fpp
    if kernel.family == "matern52":
        s2, ell = p
        s = _SQRT5 * np.abs(r) / ell
        e = np.exp(-s)
        f = s2 * (1.0 + s + s * s / 3.0) * e
        fp = -(5.0 * s2 / (3.0 * ell**2)) * r * (1.0 + s) * e
        fpp = -(5.0 * s2 / (3.0 * ell**2)) * (1.0 + s - 5.0 * r * r / ell**2) * e
        return f, fp, fpp
    if kernel.family == "periodic":
        s2, ell, period = p
        w = np.pi * r / period
        e = s2 * np.exp(-2.0 * np.sin(w) ** 2 / ell**2)
        c = 2.0 * np.pi / (period * ell**2)
        fp = -c * np.sin(2.0 * w) * e
        fpp = (2.0 * np.pi * c / period) * (np.sin(2.0 * w) ** 2 / ell**2 - np.cos(2.0 * w)) * e
        return e, fp, fpp
    if kernel.family == "sm":
        f = np.zeros_like(np.asarray(r, dtype=float))
        fp = np.zeros_like(f)
        fpp = np.zeros_like(f)
        for w2, gam, mu in zip(p[0::3], p[1::3], p[2::3]):
            a2 = _TWO_PI2 * gam**2  # exp(-a2 r^2)
            om = 2.0 * np.pi * mu
            e = w2 * np.exp(-a2 * r * r)
            cos, sin = np.cos(om * r), np.sin(om * r)
            f = f + e * cos
            fp = fp + e * (-2.0 * a2 * r * cos - om * sin)
            fpp = fpp + e * (
                (4.0 * a2**2 * r * r - 2.0 * a2 - om**2) * cos + 4.0 * a2 * om * r * sin
            )
        return f, fp, fpp
    raise ValueError(f"{kernel.family} is not stationary")


def eval_block(kernel: KernelSpec, u, v) -> np.ndarray:
    """Evaluate the 2x2 value/derivative covariance block at (u, v).

    ``u`` and ``v`` broadcast; the result has shape ``broadcast(u, v) + (2, 2)``.
    Raises ``ValueError`` if any entry is non-finite (a symptom of invalid
    hyper-parameters, e.g. overflow in ``exp``).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if kernel.family == "linear":
        s2, c = kernel.params
        du, dv = u - c, v - c
        block = np.stack(
            [
                np.stack(np.broadcast_arrays(s2 * du * dv, s2 * du), axis=-1),
                np.stack(np.broadcast_arrays(s2 * dv, np.full(np.broadcast(u, v).shape, s2)), axis=-1),
            ],
            axis=-2,
        )
    else:
        f, fp, fpp = _profile(kernel, u - v)
        block = np.stack(
            [np.stack([f, -fp], axis=-1), np.stack([fp, -fpp], axis=-1)], axis=-2
        )
    if not np.all(np.isfinite(block)):
        raise ValueError(f"non-finite kernel block for {kernel.family} params {kernel.params}")
    return block


def eval_value(kernel: KernelSpec, u, v) -> np.ndarray:
    """Kernel value k(u, v) alone (vectorized)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if kernel.family == "linear":
        s2, c = kernel.params
        return s2 * (u - c) * (v - c)
    return _profile(kernel, u - v)[0]


# ---------------------------------------------------------------------------
# degeneracy diagnostics
# ---------------------------------------------------------------------------


def _min_eig_2x2(m: np.ndarray) -> float:
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc = max(tr * tr / 4.0 - det, 0.0)
    return tr / 2.0 - math.sqrt(disc)


def degeneracy_check(
    kernel: KernelSpec, a: float, b: float, tol: float = DEGENERACY_TOL
) -> DegeneracyFlags:
    """Diagnose boundary-Gaussian singularity at ``a`` and at ``b`` given ``a``.

    ``degenerate_at_a`` is true when the value/derivative pair at ``a`` is
    perfectly correlated or has (relatively) zero variance.
    ``degenerate_at_b_given_a`` is true when the pair at ``b`` conditional on
    the pair at ``a`` has a (relatively) zero eigenvalue; it is reported as
    False when the kernel is already degenerate at ``a``.
    """
    if not a < b:
        raise ValueError("degeneracy_check requires a < b")
    scale = kernel.variance
    thresh = tol * scale
    kaa = eval_block(kernel, a, a)
    deg_a = _min_eig_2x2(kaa) < thresh
    if not deg_a and kaa[0, 0] > 0 and kaa[1, 1] > 0:
        corr = abs(kaa[0, 1]) / math.sqrt(kaa[0, 0] * kaa[1, 1])
        deg_a = deg_a or (1.0 - corr) < tol
    if deg_a:
        return DegeneracyFlags(True, False)
    kbb = eval_block(kernel, b, b)
    kba = eval_block(kernel, b, a)
    cond = kbb - kba @ np.linalg.solve(kaa, kba.T)
    deg_b = _min_eig_2x2(cond) < thresh
    return DegeneracyFlags(False, deg_b)


# ---------------------------------------------------------------------------
# config round trip and log-space parameter access
# ---------------------------------------------------------------------------

_FACTORIES = {
    "se": squared_exponential,
    "rq": rational_quadratic,
    "matern32": matern32,
    "matern52": matern52,
    "periodic": periodic,
    "linear": linear,
}


def kernel_from_config(config: dict) -> KernelSpec:
    """Build a kernel from ``{"family": str, "params": {name: value}}``."""
    try:
        family = config["family"]
        params = dict(config["params"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed kernel config: {config!r}") from exc
    if family == "sm":
        comps = []
        q = len(params) // 3
        for i in range(1, q + 1):
            comps.append((params[f"weight_{i}"], params[f"gamma_{i}"], params[f"mu_{i}"]))
        return spectral_mixture(comps)
    if family not in _FACTORIES:
        raise ValueError(f"unknown kernel family {family!r}")
    names = _PARAM_NAMES[family]
    missing = set(names) - set(params)
    if missing or set(params) - set(names):
        raise ValueError(f"{family} kernel config expects params {names}, got {sorted(params)}")
    return KernelSpec(family, tuple(params[n] for n in names))


def kernel_to_config(kernel: KernelSpec) -> dict:
    return {
        "family": kernel.family,
        "params": {n: p for n, p in zip(kernel.param_names, kernel.params)},
    }


def log_params(kernel: KernelSpec) -> np.ndarray:
    """Hyper-parameters in log space (positivity by construction)."""
    if kernel.family in _UNCONSTRAINED:
        raise ValueError(f"{kernel.family} kernel has unconstrained parameters")
    return np.log(np.asarray(kernel.params))


def with_log_params(kernel: KernelSpec, log_p: np.ndarray) -> KernelSpec:
    return KernelSpec(kernel.family, tuple(np.exp(np.asarray(log_p, dtype=float))))
