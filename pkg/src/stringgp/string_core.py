"""
Univariate string GP construction.

A string GP on [a_0, a_K] glues K locally defined derivative GPs ("strings")
at shared boundary states (z, z').  Boundary states are generated by a
first-order recursion: the state at a_k given the state at a_{k-1} is
Gaussian with an affine mean map M_k and covariance S_k obtained by
conditioning string k's kernel on its left boundary.  Conditional on all
boundary states, strings are independent two-sided conditional derivative
GPs.

:class:`StringModel` compiles a :class:`StringPartition` once (boundary
moment recursion, boundary covariance grid, per-string 4x4 inverses) and
then answers mean/covariance/sampling queries in O(1) per point:

* :meth:`StringModel.global_mean`   exact unconditional mean of (z_t, z'_t)
* :meth:`StringModel.global_cov`    exact unconditional 2x2 covariance block
* :meth:`StringModel.sample_paths`  joint draws of the path and derivative

Module-level wrappers (:func:`boundary_moments`, :func:`sample_path`,
:func:`global_mean`, :func:`global_cov`, :func:`kernel_error_table`) accept a
partition directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .derivative_gp import ZERO_MEAN, MeanFunction, mean_from_config, mean_to_config, sym_inv
from .kernels import (
    DegeneracyError,
    KernelSpec,
    degeneracy_check,
    eval_block,
    eval_value,
    is_stationary,
    kernel_from_config,
    kernel_to_config,
)

__all__ = [
    "StringSpec",
    "StringPartition",
    "uniform_partition",
    "partition_from_config",
    "partition_to_config",
    "BoundaryMoments",
    "DerivativePathSample",
    "StringModel",
    "boundary_moments",
    "sample_path",
    "global_mean",
    "global_cov",
    "kernel_error_table",
    "psd_sqrt",
]

_CHUNK = 256  # row chunk for covariance grids, bounds peak memory


@dataclass(frozen=True)
class StringSpec:
    """Unconditional mean/kernel pair driving one string."""

    kernel: KernelSpec
    mean: MeanFunction = ZERO_MEAN


@dataclass(frozen=True)
class StringPartition:
    """Ordered boundary times plus one :class:`StringSpec` per interval."""

    boundary_times: tuple[float, ...]
    strings: tuple[StringSpec, ...]

    def __post_init__(self):
        bt = tuple(float(t) for t in self.boundary_times)
        object.__setattr__(self, "boundary_times", bt)
        object.__setattr__(self, "strings", tuple(self.strings))
        if len(self.strings) < 1:
            raise ValueError("a partition needs at least one string")
        if len(bt) != len(self.strings) + 1:
            raise ValueError("need exactly one more boundary time than strings")
        if not all(a < b for a, b in zip(bt, bt[1:])):
            raise ValueError("boundary times must be strictly increasing")

    @property
    def n_strings(self) -> int:
        return len(self.strings)

    @property
    def domain(self) -> tuple[float, float]:
        return self.boundary_times[0], self.boundary_times[-1]


def uniform_partition(
    kernel: KernelSpec, boundary_times, mean: MeanFunction = ZERO_MEAN
) -> StringPartition:
    """Partition whose strings all restrict one global mean/kernel pair."""
    bt = tuple(float(t) for t in boundary_times)
    return StringPartition(bt, tuple(StringSpec(kernel, mean) for _ in bt[:-1]))


def partition_from_config(config: dict) -> StringPartition:
    try:
        boundaries = config["boundaries"]
        strings = config["strings"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed partition config: expected keys 'boundaries' and 'strings'") from exc
    specs = tuple(
        StringSpec(kernel_from_config(s["kernel"]), mean_from_config(s.get("mean", "zero")))
        for s in strings
    )
    return StringPartition(tuple(boundaries), specs)


def partition_to_config(partition: StringPartition) -> dict:
    return {
        "boundaries": list(partition.boundary_times),
        "strings": [
            {"kernel": kernel_to_config(s.kernel), "mean": mean_to_config(s.mean)}
            for s in partition.strings
        ],
    }


@dataclass(frozen=True)
class BoundaryMoments:
    """Factors of the sequential boundary-state law.

    ``mean[k]`` is the unconditional mean of the state at a_k, ``sigma[k]``
    the covariance of the state at a_k conditional on the state at a_{k-1}
    (``sigma[0]`` is unconditional), and ``m[k]`` the affine propagation
    matrix; ``m[0]`` is zero by convention.
    """

    mean: np.ndarray  # (K+1, 2)
    sigma: np.ndarray  # (K+1, 2, 2)
    m: np.ndarray  # (K+1, 2, 2)


@dataclass(frozen=True)
class DerivativePathSample:
    """Jointly sampled values (z, z') at boundary and string times."""

    times: np.ndarray  # (n,)
    values: np.ndarray  # (n, 2) or (size, n, 2)
    seed: object = None


def psd_sqrt(mat: np.ndarray, clip_warn: float = -1e-12) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, clamping tiny negatives.

    Works on stacks ``(..., n, n)``.  Eigenvalues below ``clip_warn`` indicate
    a genuinely indefinite input and trigger a warning before clamping.
    """
    vals, vecs = np.linalg.eigh(mat)
    if np.any(vals < clip_warn):
        import logging

        logging.getLogger(__name__).warning(
            "clamping negative eigenvalue %.3e in PSD square root", float(vals.min())
        )
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)[..., None, :] @ np.swapaxes(vecs, -1, -2)


class StringModel:
    """Compiled partition: boundary recursions cached, queries O(1) per point."""

    def __init__(self, partition: StringPartition, validate: bool = True):
        self.partition = partition
        bt = np.asarray(partition.boundary_times)
        self._bt = bt
        K = partition.n_strings
        if validate:
            for k, s in enumerate(partition.strings, start=1):
                flags = degeneracy_check(s.kernel, bt[k - 1], bt[k])
                if flags.degenerate_at_a:
                    raise DegeneracyError(
                        f"string {k}: kernel degenerate at boundary time {bt[k - 1]}"
                    )
                if flags.degenerate_at_b_given_a:
                    raise DegeneracyError(
                        f"string {k}: kernel degenerate at {bt[k]} given {bt[k - 1]}"
                    )

        mean = np.zeros((K + 1, 2))
        sigma = np.zeros((K + 1, 2, 2))
        mmat = np.zeros((K + 1, 2, 2))
        first = partition.strings[0]
        sigma[0] = eval_block(first.kernel, bt[0], bt[0])
        mean[0] = first.mean.vec(bt[0])
        for k in range(1, K + 1):
            s = partition.strings[k - 1]
            a, b = bt[k - 1], bt[k]
            kaa = eval_block(s.kernel, a, a)
            kba = eval_block(s.kernel, b, a)
            kbb = eval_block(s.kernel, b, b)
            kaa_inv = sym_inv(kaa, s.kernel.variance, f"string {k} at {a}")
            mk = kba @ kaa_inv
            mmat[k] = mk
            sigma[k] = kbb - mk @ kba.T
            mean[k] = s.mean.vec(b) + mk @ (mean[k - 1] - s.mean.vec(a))
        self._moments = BoundaryMoments(mean, sigma, mmat)
        self._ginv_cache: dict[int, np.ndarray] = {}
        self._bcov: np.ndarray | None = None  # (K+1, K+1, 2, 2), lazy

    # -- cached pieces ------------------------------------------------------

    @property
    def boundary_moments(self) -> BoundaryMoments:
        return self._moments

    @property
    def boundary_cov(self) -> np.ndarray:
        """Unconditional covariance blocks between all boundary-state pairs."""
        if self._bcov is None:
            K = self.partition.n_strings
            mom = self._moments
            c = np.zeros((K + 1, K + 1, 2, 2))
            c[0, 0] = mom.sigma[0]
            for k in range(1, K + 1):
                mk = mom.m[k]
                c[k, k] = mom.sigma[k] + mk @ c[k - 1, k - 1] @ mk.T
                for l in range(k):
                    c[k, l] = mk @ c[k - 1, l]
                    c[l, k] = c[k, l].T
            self._bcov = c
        return self._bcov

    def string_index(self, t) -> np.ndarray:
        """Index p in [1..K] with a_{p-1} <= t <= a_p (left string at ties)."""
        t = np.asarray(t, dtype=float)
        bt = self._bt
        if np.any(t < bt[0]) or np.any(t > bt[-1]):
            raise ValueError("time outside the partition domain")
        return np.clip(np.searchsorted(bt, t, side="left"), 1, len(bt) - 1)

    def _string_ginv(self, p: int) -> np.ndarray:
        """Inverse of string p's 4x4 boundary Gram, computed on first use."""
        cached = self._ginv_cache.get(p)
        if cached is None:
            s = self.partition.strings[p - 1]
            a, b = self._bt[p - 1], self._bt[p]
            kaa = eval_block(s.kernel, a, a)
            kba = eval_block(s.kernel, b, a)
            kbb = eval_block(s.kernel, b, b)
            gram = np.block([[kaa, kba.T], [kba, kbb]])
            cached = sym_inv(gram, s.kernel.variance, f"string {p} on [{a}, {b}]")
            self._ginv_cache[p] = cached
        return cached

    def _lambda(self, t, p) -> np.ndarray:
        """Two-sided conditioning factors; t (n,), p (n,) -> (n, 2, 4)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p = np.atleast_1d(p)
        out = np.empty((t.size, 2, 4))
        for pi in np.unique(p):
            sel = p == pi
            s = self.partition.strings[pi - 1]
            a, b = self._bt[pi - 1], self._bt[pi]
            cross = np.concatenate(
                [eval_block(s.kernel, t[sel], a), eval_block(s.kernel, t[sel], b)], axis=-1
            )
            out[sel] = cross @ self._string_ginv(int(pi))
        return out

    # -- queries ------------------------------------------------------------

    def global_mean(self, t) -> np.ndarray:
        """Unconditional mean of (z_t, z'_t); shape ``t.shape + (2,)``."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        flat = np.atleast_1d(t).reshape(-1)
        p = self.string_index(flat)
        lam = self._lambda(flat, p)
        mom = self._moments
        out = np.empty((flat.size, 2))
        for pi in np.unique(p):
            sel = p == pi
            s = self.partition.strings[pi - 1]
            a, b = self._bt[pi - 1], self._bt[pi]
            resid = np.concatenate(
                [mom.mean[pi - 1] - s.mean.vec(a), mom.mean[pi] - s.mean.vec(b)]
            )
            out[sel] = s.mean.vec(flat[sel]) + lam[sel] @ resid
        out = out.reshape(t.shape + (2,)) if not scalar else out[0]
        return out

    def global_cov(self, u, v) -> np.ndarray:
        """Unconditional covariance block between (z_u, z'_u) and (z_v, z'_v)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.ndim == 0 and v.ndim == 0:
            return self.cov_grid(u.reshape(1), v.reshape(1))[0, 0]
        u_b, v_b = np.broadcast_arrays(u, v)
        flat_u, flat_v = u_b.reshape(-1), v_b.reshape(-1)
        # pairwise (not outer) query: evaluate on the diagonal of a grid chunkwise
        out = np.empty((flat_u.size, 2, 2))
        for lo in range(0, flat_u.size, _CHUNK):
            hi = min(lo + _CHUNK, flat_u.size)
            block = self.cov_grid(flat_u[lo:hi], flat_v[lo:hi])
            out[lo:hi] = block[np.arange(hi - lo), np.arange(hi - lo)]
        return out.reshape(u_b.shape + (2, 2))

    def cov_grid(self, us, vs) -> np.ndarray:
        """Covariance blocks on the product grid; shape (len(us), len(vs), 2, 2)."""
        us = np.atleast_1d(np.asarray(us, dtype=float))
        vs = np.atleast_1d(np.asarray(vs, dtype=float))
        pu = self.string_index(us)
        qv = self.string_index(vs)
        lam_u = self._lambda(us, pu)
        lam_v = self._lambda(vs, qv)
        bcov = self.boundary_cov
        out = np.empty((us.size, vs.size, 2, 2))
        for lo in range(0, us.size, _CHUNK):
            hi = min(lo + _CHUNK, us.size)
            pm, qm = pu[lo:hi], qv
            # gather the 4x4 boundary-state covariance for every (u, v) pair
            b = np.empty((hi - lo, vs.size, 4, 4))
            b[:, :, :2, :2] = bcov[np.ix_(pm - 1, qm - 1)]
            b[:, :, :2, 2:] = bcov[np.ix_(pm - 1, qm)]
            b[:, :, 2:, :2] = bcov[np.ix_(pm, qm - 1)]
            b[:, :, 2:, 2:] = bcov[np.ix_(pm, qm)]
            out[lo:hi] = np.einsum("uia,uvab,vjb->uvij", lam_u[lo:hi], b, lam_v)
        # same-string pairs pick up the conditional covariance of the string
        for pi in np.unique(pu):
            sel_u = np.flatnonzero(pu == pi)
            sel_v = np.flatnonzero(qv == pi)
            if sel_u.size == 0 or sel_v.size == 0:
                continue
            s = self.partition.strings[pi - 1]
            a, b_t = self._bt[pi - 1], self._bt[pi]
            uu = us[sel_u]
            vv = vs[sel_v]
            kuv = eval_block(s.kernel, uu[:, None], vv[None, :])
            cross_v = np.concatenate(
                [eval_block(s.kernel, vv, a), eval_block(s.kernel, vv, b_t)], axis=-1
            )  # (nv, 2, 4)
            cond = kuv - np.einsum("uia,vja->uvij", lam_u[sel_u], cross_v)
            out[np.ix_(sel_u, sel_v)] += cond
        return out

    def sample_paths(
        self,
        string_times,
        rng: np.random.Generator,
        size: int | None = None,
        seed_label=None,
    ) -> DerivativePathSample:
        """Draw paths jointly with their derivative at boundary and string times.

        ``string_times`` is a sequence with one sorted array of interior times
        per string (possibly empty).  Boundary states are drawn sequentially;
        interior values are drawn per string conditional on the enclosing
        boundary states, each string using an independent RNG substream.
        """
        K = self.partition.n_strings
        bt = self._bt
        if string_times is None:
            string_times = [np.empty(0)] * K
        string_times = [np.atleast_1d(np.asarray(ts, dtype=float)) for ts in string_times]
        if len(string_times) != K:
            raise ValueError("need one string-time array per string")
        for k, ts in enumerate(string_times, start=1):
            if ts.size and not (np.all(ts > bt[k - 1]) and np.all(ts < bt[k])):
                raise ValueError(f"string times for string {k} must lie strictly inside")

        n_rep = 1 if size is None else int(size)
        mom = self._moments
        # step 1: boundary states, sequential in k, vectorized across replicates
        z_b = np.empty((n_rep, K + 1, 2))
        roots = psd_sqrt(mom.sigma)
        z_b[:, 0] = mom.mean[0] + rng.standard_normal((n_rep, 2)) @ roots[0].T
        for k in range(1, K + 1):
            s = self.partition.strings[k - 1]
            prev_resid = z_b[:, k - 1] - s.mean.vec(bt[k - 1])
            z_b[:, k] = (
                s.mean.vec(bt[k])
                + prev_resid @ mom.m[k].T
                + rng.standard_normal((n_rep, 2)) @ roots[k].T
            )
        # step 2: interior values per string, conditionally independent
        substreams = rng.spawn(K)
        per_string_vals = []
        for k in range(1, K + 1):
            ts = string_times[k - 1]
            if ts.size == 0:
                per_string_vals.append(np.empty((n_rep, 0, 2)))
                continue
            s = self.partition.strings[k - 1]
            a, b = bt[k - 1], bt[k]
            cross = np.concatenate(
                [eval_block(s.kernel, ts, a), eval_block(s.kernel, ts, b)], axis=-1
            )  # (n_k, 2, 4)
            lam = cross @ self._string_ginv(k)
            dev = np.concatenate(
                [z_b[:, k - 1] - s.mean.vec(a), z_b[:, k] - s.mean.vec(b)], axis=-1
            )  # (n_rep, 4)
            mu = s.mean.vec(ts)[None] + np.einsum("tia,ra->rti", lam, dev)
            kgrid = (
                eval_block(s.kernel, ts[:, None], ts[None, :])
                .transpose(0, 2, 1, 3)
                .reshape(2 * ts.size, 2 * ts.size)
            )
            lam_flat = lam.reshape(2 * ts.size, 4)
            cross_flat = cross.reshape(2 * ts.size, 4)
            cov = kgrid - lam_flat @ cross_flat.T
            root = psd_sqrt(cov)
            draw = substreams[k - 1].standard_normal((n_rep, 2 * ts.size)) @ root.T
            per_string_vals.append(mu + draw.reshape(n_rep, ts.size, 2))

        times = np.concatenate([bt] + string_times)
        values = np.concatenate([z_b] + per_string_vals, axis=1)
        order = np.argsort(times, kind="stable")
        times = times[order]
        values = values[:, order]
        if size is None:
            values = values[0]
        return DerivativePathSample(times, values, seed_label)


# ---------------------------------------------------------------------------
# module-level wrappers
# ---------------------------------------------------------------------------


def boundary_moments(partition: StringPartition) -> BoundaryMoments:
    """Boundary-state moment recursion for a partition."""
    return StringModel(partition).boundary_moments


def sample_path(
    partition: StringPartition,
    string_times,
    rng: np.random.Generator,
    size: int | None = None,
) -> DerivativePathSample:
    return StringModel(partition).sample_paths(string_times, rng, size=size)


def global_mean(partition_or_model, t) -> np.ndarray:
    model = _as_model(partition_or_model)
    return model.global_mean(t)


def global_cov(partition_or_model, u, v) -> np.ndarray:
    model = _as_model(partition_or_model)
    return model.global_cov(u, v)


def _as_model(partition_or_model) -> StringModel:
    if isinstance(partition_or_model, StringModel):
        return partition_or_model
    return StringModel(partition_or_model)


def kernel_error_table(
    base_kernel: KernelSpec, counts, grid: int = 100
) -> list[dict]:
    """Absolute-error statistics between a kernel and its equal-length string versions.

    For each string count K the base kernel is restricted to K equal strings
    on [0, 1]; the table reports min/avg/max of the absolute difference
    between the resulting global value covariance and the base kernel over a
    ``grid`` x ``grid`` uniform grid on [0, 1]^2.
    """
    if not is_stationary(base_kernel):
        raise ValueError("kernel_error_table requires a stationary kernel")
    ts = np.linspace(0.0, 1.0, int(grid))
    base_vals = eval_value(base_kernel, ts[:, None], ts[None, :])
    rows = []
    for count in counts:
        count = int(count)
        boundaries = np.linspace(0.0, 1.0, count + 1)
        model = StringModel(uniform_partition(base_kernel, boundaries))
        approx = model.cov_grid(ts, ts)[..., 0, 0]
        err = np.abs(approx - base_vals)
        rows.append(
            {
                "strings": count,
                "min": float(err.min()),
                "avg": float(err.mean()),
                "max": float(err.max()),
            }
        )
    return rows
