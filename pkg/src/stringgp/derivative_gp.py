"""
Conditioning machinery for a process observed jointly with its derivative.

A derivative Gaussian process is the joint law of (z_t, z'_t) induced by a
mean function m and a kernel k: values covary through k, value/derivative
pairs through dk/dy, and derivatives through d2k/dxdy.  This module builds
the conditional law of (z_t, z'_t) given the pair at one interval endpoint
(:func:`condition_left`) or at both endpoints (:func:`condition_both`).

Mean functions are callable pairs (value, slope); the default is zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg as sla

from .kernels import (
    DEGENERACY_TOL,
    DegeneracyError,
    KernelSpec,
    degeneracy_check,
    eval_block,
)

__all__ = [
    "MeanFunction",
    "ZERO_MEAN",
    "constant_mean",
    "mean_from_config",
    "mean_to_config",
    "BoundaryCondition",
    "ConditionalDerivativeGP",
    "condition_left",
    "condition_both",
    "sym_solve",
    "sym_inv",
]

log = logging.getLogger(__name__)

#: relative diagonal jitter applied once when a boundary solve fails
JITTER = 1e-10


@dataclass(frozen=True)
class MeanFunction:
    """A mean function together with its derivative."""

    value: Callable[[np.ndarray], np.ndarray]
    slope: Callable[[np.ndarray], np.ndarray]
    tag: str = "zero"

    def vec(self, t) -> np.ndarray:
        """Stacked (value, slope) with shape ``t.shape + (2,)``."""
        t = np.asarray(t, dtype=float)
        return np.stack(
            [np.broadcast_to(self.value(t), t.shape), np.broadcast_to(self.slope(t), t.shape)],
            axis=-1,
        )


ZERO_MEAN = MeanFunction(lambda t: np.zeros_like(t), lambda t: np.zeros_like(t), "zero")


def constant_mean(c: float) -> MeanFunction:
    c = float(c)
    return MeanFunction(
        lambda t: np.full_like(t, c), lambda t: np.zeros_like(t), f"constant:{c}"
    )


def mean_from_config(tag: str) -> MeanFunction:
    if tag == "zero":
        return ZERO_MEAN
    if tag.startswith("constant:"):
        return constant_mean(float(tag.split(":", 1)[1]))
    raise ValueError(f"unknown mean function {tag!r} (use 'zero' or 'constant:c')")


def mean_to_config(mean: MeanFunction) -> str:
    return mean.tag


@dataclass(frozen=True)
class BoundaryCondition:
    """State (value, derivative) of the process at one time."""

    time: float
    value: float
    derivative: float

    @property
    def state(self) -> np.ndarray:
        return np.array([self.value, self.derivative])


def sym_solve(a: np.ndarray, b: np.ndarray, scale: float, what: str = "") -> np.ndarray:
    """Solve the symmetric system ``a x = b`` with a one-shot jitter fallback.

    On failure a diagonal jitter of ``JITTER * scale`` is added and the event
    logged; a second failure raises :class:`DegeneracyError`.
    """
    try:
        return sla.solve(a, b, assume_a="sym")
    except (sla.LinAlgError, ValueError):
        pass
    log.warning("boundary solve failed%s; retrying with jitter", f" ({what})" if what else "")
    try:
        return sla.solve(a + JITTER * scale * np.eye(a.shape[0]), b, assume_a="sym")
    except (sla.LinAlgError, ValueError) as exc:
        raise DegeneracyError(f"singular boundary matrix {what}".strip()) from exc


def sym_inv(a: np.ndarray, scale: float, what: str = "") -> np.ndarray:
    """Explicit inverse of a small symmetric matrix via :func:`sym_solve`."""
    return sym_solve(a, np.eye(a.shape[0]), scale, what)


def _degenerate_at(kernel: KernelSpec, a: float, tol: float = DEGENERACY_TOL) -> bool:
    kaa = eval_block(kernel, a, a)
    thresh = tol * kernel.variance
    tr = kaa[0, 0] + kaa[1, 1]
    det = kaa[0, 0] * kaa[1, 1] - kaa[0, 1] * kaa[1, 0]
    min_eig = tr / 2.0 - math.sqrt(max(tr * tr / 4.0 - det, 0.0))
    if min_eig < thresh:
        return True
    corr = abs(kaa[0, 1]) / math.sqrt(kaa[0, 0] * kaa[1, 1])
    return (1.0 - corr) < tol


class ConditionalDerivativeGP:
    """Joint law of (z_t, z'_t) conditioned on one or two boundary states.

    Query the conditional mean with :meth:`mean` and the conditional
    covariance block between two times with :meth:`cov`; both broadcast over
    time arguments.  Construct instances with :func:`condition_left` or
    :func:`condition_both`.
    """

    def __init__(self, kernel, mean, times, states):
        self.kernel = kernel
        self.mean_fn = mean
        self.times = np.asarray(times, dtype=float)  # (1,) or (2,)
        self.states = np.asarray(states, dtype=float).reshape(-1)  # (2,) or (4,)
        where = f"at boundary time(s) {self.times.tolist()}"
        gram = np.concatenate(
            [
                np.concatenate([eval_block(kernel, ta, tb) for tb in self.times], axis=1)
                for ta in self.times
            ],
            axis=0,
        )
        self._ginv = sym_inv(gram, kernel.variance, where)
        resid = self.states - mean.vec(self.times).reshape(-1)
        self._weights = self._ginv @ resid

    def _cross(self, t) -> np.ndarray:
        """Cross blocks K(t; boundaries), shape ``t.shape + (2, 2n)``."""
        return np.concatenate([eval_block(self.kernel, t, tb) for tb in self.times], axis=-1)

    def mean(self, t) -> np.ndarray:
        """Conditional mean of (z_t, z'_t); shape ``t.shape + (2,)``."""
        t = np.asarray(t, dtype=float)
        return self.mean_fn.vec(t) + self._cross(t) @ self._weights

    def cov(self, t, s) -> np.ndarray:
        """Conditional covariance block between times t and s; ``(..., 2, 2)``.

        ``t`` and ``s`` broadcast against each other; the conditional
        covariance does not depend on the boundary values, only on the times.
        """
        t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        kts = eval_block(self.kernel, t, s)
        return kts - np.einsum(
            "...ik,kl,...jl->...ij", self._cross(t), self._ginv, self._cross(s)
        )

    def sample(self, times, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw (z, z') at ``times`` jointly; shape ``(size?, n, 2)``."""
        times = np.asarray(times, dtype=float)
        n = times.size
        mu = self.mean(times).reshape(-1)
        cov = (
            self.cov(times[:, None], times[None, :])
            .transpose(0, 2, 1, 3)
            .reshape(2 * n, 2 * n)
        )
        vals, vecs = np.linalg.eigh(cov)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        shape = (n * 2,) if size is None else (size, n * 2)
        draw = mu + rng.standard_normal(shape) @ root.T
        return draw.reshape(shape[:-1] + (n, 2))


def condition_left(
    kernel: KernelSpec,
    a: float,
    bc: BoundaryCondition,
    mean: MeanFunction = ZERO_MEAN,
) -> ConditionalDerivativeGP:
    """Condition the derivative GP to start at ``bc`` at time ``a``."""
    if _degenerate_at(kernel, a):
        raise DegeneracyError(f"kernel degenerate at boundary time {a}")
    return ConditionalDerivativeGP(kernel, mean, [a], bc.state)


def condition_both(
    kernel: KernelSpec,
    a: float,
    b: float,
    bc_a: BoundaryCondition,
    bc_b: BoundaryCondition,
    mean: MeanFunction = ZERO_MEAN,
) -> ConditionalDerivativeGP:
    """Condition the derivative GP on boundary states at both ends of [a, b]."""
    if not a < b:
        raise ValueError("condition_both requires a < b")
    flags = degeneracy_check(kernel, a, b)
    if flags.degenerate_at_a:
        raise DegeneracyError(f"kernel degenerate at boundary time {a}")
    if flags.degenerate_at_b_given_a:
        raise DegeneracyError(f"kernel degenerate at {b} given {a}")
    return ConditionalDerivativeGP(
        kernel, mean, [a, b], np.concatenate([bc_a.state, bc_b.state])
    )
