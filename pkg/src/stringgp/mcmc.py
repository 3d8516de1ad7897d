"""
Reversible-jump MCMC over latent functions, kernel hyper-parameters and
change-points.

State per input dimension (and per latent output): boundary times fixed at
the distinct input coordinates, a Poisson-process set of change-points
partitioning the dimension into kernel configurations, per-configuration
log hyper-parameters with independent centred Gaussian priors, a Gamma
change-point intensity, and a whitened standard-normal representation x of
all boundary states.  Boundary states are recovered sequentially through

    z_0 = L_0 x_0,        z_k = M_k z_{k-1} + L_k x_k,

where M_k and L_k depend only on hyper-parameters and kernel membership
(L_k is the eigenvalue square root of the one-step conditional covariance,
so degenerate steps are handled without failure).

One iteration runs the within-model cycle (intensities, extra likelihood
parameters, hyper-parameter ESS, whitened-state ESS, change-point sweep),
one between-models add/delete proposal, then records latent values and
gradients at training and test inputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec
from .likelihoods import LikelihoodModel
from .membrane import LinkFunction, link_eval_and_partials, symmetric_sum

__all__ = [
    "NonFiniteLikelihoodError",
    "McmcConfig",
    "McmcChain",
    "default_changepoint_prior",
    "prior_changepoint_moments",
    "kernel_membership",
    "boundary_membership",
    "compute_factors",
    "whiten",
    "unwhiten",
    "RJSampler",
    "run_sampler",
    "update_lambda",
    "update_u",
    "ess_update_x",
    "ess_update_theta",
    "update_changepoints",
    "propose_add",
    "propose_delete",
    "SPLIT_ANGLE",
]

log = logging.getLogger(__name__)

#: rotation angle of the add/delete hyper-parameter split (symmetric choice)
SPLIT_ANGLE = math.pi / 4.0

_N_PARAMS = {"se": 2, "matern32": 2, "matern52": 2, "rq": 3, "periodic": 3, "sm": 3}


class NonFiniteLikelihoodError(RuntimeError):
    """Likelihood returned NaN or +inf; carries a diagnostic state dump."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


def default_changepoint_prior(n_distinct: int, length: float) -> tuple[float, float]:
    """(alpha, beta) making the prior change-point count 5% of the distinct
    coordinates with variance 50 times that mean."""
    mean = 0.05 * n_distinct
    beta = length / 49.0
    alpha = mean * beta / length
    return alpha, beta


def prior_changepoint_moments(alpha: float, beta: float, length: float) -> tuple[float, float]:
    """Mean and variance of the Gamma-mixed Poisson change-point count."""
    mean = length * alpha / beta
    var = length * (alpha / beta) * (1.0 + length / beta)
    return mean, var


# ---------------------------------------------------------------------------
# kernel membership and whitening factors
# ---------------------------------------------------------------------------


def kernel_membership(boundary_times, change_points) -> np.ndarray:
    """Config index per string: the string ending at a_{k+1} counts the
    change-points strictly below a_{k+1} (ties at a boundary resolve left)."""
    bt = np.asarray(boundary_times, dtype=float)
    cps = np.asarray(change_points, dtype=float)
    return np.searchsorted(cps, bt[1:], side="left")


def boundary_membership(boundary_times, change_points) -> np.ndarray:
    """Config index per boundary factor: index k >= 1 uses the string ending
    at a_k; the initial state uses the first string's config."""
    bt = np.asarray(boundary_times, dtype=float)
    cps = np.asarray(change_points, dtype=float)
    if bt.size == 1:
        return np.searchsorted(cps, bt, side="left")
    strings = kernel_membership(bt, cps)
    return np.concatenate([strings[:1], strings])


def _stationary_moments(family: str, log_theta: np.ndarray, r: np.ndarray):
    """One-step propagation M and conditional covariance S for lags ``r``."""
    from .kernels import _profile  # stationary profile (f, f', f'')

    if family == "sm":
        spec = KernelSpec("sm", tuple(np.exp(log_theta)))
    else:
        spec = KernelSpec(family, tuple(np.exp(log_theta)))
    f0, _, fpp0 = _profile(spec, np.zeros(1))
    var_z, var_dz = float(f0[0]), float(-fpp0[0])
    f, fp, fpp = _profile(spec, r)
    cross = np.empty(r.shape + (2, 2))
    cross[..., 0, 0] = f
    cross[..., 0, 1] = -fp
    cross[..., 1, 0] = fp
    cross[..., 1, 1] = -fpp
    m = cross / np.array([var_z, var_dz])  # right-multiply by diag inverse
    sigma = np.zeros_like(cross)
    sigma[..., 0, 0] = var_z
    sigma[..., 1, 1] = var_dz
    sigma -= m @ np.swapaxes(cross, -1, -2)
    return m, sigma, var_z, var_dz


def compute_factors(
    boundary_times: np.ndarray,
    member: np.ndarray,
    log_thetas: np.ndarray,
    family: str,
    rows: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Whitening factors (M_k, L_k) for the requested boundary rows.

    ``member[k]`` selects the hyper-parameter row driving the factor at
    boundary k.  ``rows`` restricts the computation (factor locality); by
    default all rows are built.  L is the eigen square root of the one-step
    conditional covariance, with negative eigenvalues clamped to zero, so
    degenerate steps (conditional covariance of rank < 2) are representable.
    """
    bt = np.asarray(boundary_times, dtype=float)
    n = bt.size
    if rows is None:
        rows = np.arange(n)
    m_out = np.zeros((rows.size, 2, 2))
    l_out = np.zeros((rows.size, 2, 2))
    lags = np.empty(rows.size)
    nonzero = rows > 0
    lags[nonzero] = bt[rows[nonzero]] - bt[rows[nonzero] - 1]
    for config in np.unique(member[rows]):
        sel = member[rows] == config
        sel_rows = rows[sel]
        theta = log_thetas[config]
        interior = sel & nonzero
        if np.any(interior):
            m_int, s_int, _, _ = _stationary_moments(family, theta, lags[interior])
            m_out[interior] = m_int
            l_out[interior] = _eigen_sqrt(s_int)
        initial = sel & ~nonzero
        if np.any(initial):
            _, _, var_z, var_dz = _stationary_moments(family, theta, np.zeros(1))
            l_out[initial] = np.diag([math.sqrt(var_z), math.sqrt(var_dz)])
    return m_out, l_out


def _eigen_sqrt(sigma: np.ndarray) -> np.ndarray:
    """L = U diag(sqrt(w)) with sigma = U diag(w) U^T; L L^T = sigma."""
    vals, vecs = np.linalg.eigh(sigma)
    bad = vals < -1e-12
    if np.any(bad):
        log.warning("clamping %d negative eigenvalues (min %.2e)", int(bad.sum()), float(vals.min()))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))[..., None, :]


def unwhiten(m: np.ndarray, l: np.ndarray, x: np.ndarray, z: np.ndarray | None = None, start: int = 0) -> np.ndarray:
    """Recover boundary states z from the whitened representation x.

    Sequential in k; with ``start`` > 0 the prefix of ``z`` is kept and the
    recursion resumes from that row (used after local factor updates).
    """
    n = x.shape[0]
    out = np.empty((n, 2)) if z is None else z.copy()
    if start == 0:
        out[0] = l[0] @ x[0]
        start = 1
    for k in range(start, n):
        out[k] = m[k] @ out[k - 1] + l[k] @ x[k]
    return out


def whiten(m: np.ndarray, l: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Invert :func:`unwhiten`; singular L falls back to a pseudo-inverse."""
    n = z.shape[0]
    x = np.empty((n, 2))
    for k in range(n):
        resid = z[k] - (m[k] @ z[k - 1] if k > 0 else 0.0)
        lk = l[k]
        det = lk[0, 0] * lk[1, 1] - lk[0, 1] * lk[1, 0]
        scale = max(abs(lk).max() ** 2, 1e-300)
        if abs(det) > 1e-24 * scale:
            x[k] = np.array([lk[1, 1] * resid[0] - lk[0, 1] * resid[1],
                             -lk[1, 0] * resid[0] + lk[0, 0] * resid[1]]) / det
        else:
            log.warning("singular L at boundary %d; whitening via pseudo-inverse", k)
            x[k] = np.linalg.pinv(lk) @ resid
    return x


# ---------------------------------------------------------------------------
# sampler state
# ---------------------------------------------------------------------------


@dataclass
class _Slot:
    """Per (output, dimension) state."""

    bt: np.ndarray  # distinct coordinate values (boundary times)
    lo: float
    hi: float
    alpha: float
    beta: float
    rho: float
    lam: float = 1.0
    cps: np.ndarray = field(default_factory=lambda: np.empty(0))
    log_theta: np.ndarray = field(default_factory=lambda: np.zeros((1, 2)))
    member: np.ndarray | None = None
    m: np.ndarray | None = None
    l: np.ndarray | None = None
    x: np.ndarray | None = None
    z: np.ndarray | None = None

    @property
    def n_cp(self) -> int:
        return int(self.cps.size)

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass
class McmcConfig:
    iterations: int = 1000
    burnin: int = 500
    thin: int = 1
    seed: int = 0
    kernel_family: str = "se"
    alpha: float | None = None
    beta: float | None = None
    rho: float = 1.0
    allow_add: bool = True
    update_theta: bool = True
    init_log_theta: np.ndarray | None = None
    n_outputs: int = 1
    record_x: bool = False
    max_shrink: int = 1000


@dataclass
class McmcChain:
    """Recorded draws and traces of one sampler run."""

    f: np.ndarray  # (R, N) or (R, N, L)
    f_star: np.ndarray  # (R, M) or (R, M, L)
    grad_f: np.ndarray  # (R, N, d) or (R, N, L, d)
    grad_f_star: np.ndarray
    kept_iterations: np.ndarray
    n_trace: np.ndarray  # (iterations, n_slots)
    lam_trace: np.ndarray
    u_trace: list
    cp_records: list  # (iteration, slot, positions) at kept iterations
    x_trace: np.ndarray | None
    telemetry: dict
    iterations: int


class RJSampler:
    """Sampler state plus the individual update moves (see module docstring)."""

    def __init__(
        self,
        x_train: np.ndarray,
        x_test: np.ndarray | None,
        likelihood: LikelihoodModel,
        config: McmcConfig,
        link: LinkFunction | None = None,
    ):
        self.config = config
        self.likelihood = likelihood
        self.x_train = np.atleast_2d(np.asarray(x_train, dtype=float))
        self.x_test = (
            np.empty((0, self.x_train.shape[1]))
            if x_test is None
            else np.atleast_2d(np.asarray(x_test, dtype=float))
        )
        self.d = self.x_train.shape[1]
        self.n_outputs = config.n_outputs
        self.link = link if link is not None else symmetric_sum(self.d)
        if self.link.dimension != self.d:
            raise ValueError("link dimension must match the input dimension")
        family = config.kernel_family
        if family not in _N_PARAMS:
            raise ValueError(f"unsupported kernel family for the sampler: {family}")
        self.n_params = _N_PARAMS[family]
        self.family = family

        all_x = np.vstack([self.x_train, self.x_test])
        self.idx_train = np.empty(self.x_train.shape, dtype=int)
        self.idx_test = np.empty(self.x_test.shape, dtype=int)
        self._dims = []
        for j in range(self.d):
            bt, inverse = np.unique(all_x[:, j], return_inverse=True)
            self._dims.append(bt)
            self.idx_train[:, j] = inverse[: self.x_train.shape[0]]
            self.idx_test[:, j] = inverse[self.x_train.shape[0] :]

        self.slots: list[_Slot] = []
        for _ in range(self.n_outputs):
            for j in range(self.d):
                bt = self._dims[j]
                lo, hi = float(bt[0]), float(bt[-1])
                if hi <= lo:
                    hi = lo + 1.0  # single distinct value: unit nominal domain
                alpha, beta = (
                    (config.alpha, config.beta)
                    if config.alpha is not None and config.beta is not None
                    else default_changepoint_prior(bt.size, hi - lo)
                )
                self.slots.append(
                    _Slot(bt=bt, lo=lo, hi=hi, alpha=alpha, beta=beta, rho=config.rho)
                )
        self.telemetry = {
            "factor_builds": 0,
            "z_updates": 0,
            "lik_evals": 0,
            "lik_points": 0,
            "accept_add": 0,
            "accept_delete": 0,
            "accept_cp_move": 0,
            "propose_add": 0,
            "propose_delete": 0,
            "propose_cp_move": 0,
        }
        self.u = None
        self.log_lik = -math.inf
        self._iteration = 0

    # -- initialisation -----------------------------------------------------

    def initialise(self, rng: np.random.Generator) -> None:
        """Alg. step 0: no change-points; draw theta, lambda, x, u from priors."""
        cfg = self.config
        for slot in self.slots:
            slot.lam = float(rng.gamma(slot.alpha, 1.0 / slot.beta))
            slot.cps = np.empty(0)
            if cfg.init_log_theta is not None:
                slot.log_theta = np.asarray(cfg.init_log_theta, dtype=float).reshape(1, -1).copy()
            else:
                slot.log_theta = math.sqrt(slot.rho) * rng.standard_normal((1, self.n_params))
            slot.member = boundary_membership(slot.bt, slot.cps)
            slot.m, slot.l = compute_factors(slot.bt, slot.member, slot.log_theta, self.family)
            self.telemetry["factor_builds"] += slot.bt.size
            slot.x = rng.standard_normal((slot.bt.size, 2))
            slot.z = unwhiten(slot.m, slot.l, slot.x)
            self.telemetry["z_updates"] += slot.bt.size
        self.u = self.likelihood.init_u(rng)
        self.log_lik = self._loglik(self._f_train())

    # -- latent values --------------------------------------------------------

    def _slot(self, output: int, dim: int) -> _Slot:
        return self.slots[output * self.d + dim]

    def _values_at(self, idx: np.ndarray, z_per_slot=None):
        """Latent values and gradients at indexed inputs; (n, L) and (n, L, d)."""
        n = idx.shape[0]
        f = np.empty((n, self.n_outputs))
        grad = np.empty((n, self.n_outputs, self.d))
        for out in range(self.n_outputs):
            vals = np.empty((n, self.d))
            ders = np.empty((n, self.d))
            for j in range(self.d):
                z = (
                    z_per_slot[out * self.d + j]
                    if z_per_slot is not None
                    else self._slot(out, j).z
                )
                vals[:, j] = z[idx[:, j], 0]
                ders[:, j] = z[idx[:, j], 1]
            value, partials = link_eval_and_partials(self.link, vals)
            f[:, out] = value
            grad[:, out, :] = ders * partials
        return f, grad

    def _f_train(self, z_per_slot=None) -> np.ndarray:
        f, _ = self._values_at(self.idx_train, z_per_slot)
        return f[:, 0] if self.n_outputs == 1 else f

    def _loglik(self, f: np.ndarray) -> float:
        self.telemetry["lik_evals"] += 1
        self.telemetry["lik_points"] += int(np.size(f))
        value = float(self.likelihood.log_lik(f, self.u))
        if math.isnan(value) or value == math.inf:
            raise NonFiniteLikelihoodError(
                f"likelihood returned {value} at iteration {self._iteration}",
                dump=self.state_dump(),
            )
        return value

    def state_dump(self) -> dict:
        return {
            "iteration": self._iteration,
            "u": self.u,
            "slots": [
                {
                    "n_cp": s.n_cp,
                    "lam": s.lam,
                    "cps": s.cps.tolist(),
                    "log_theta": s.log_theta.tolist(),
                }
                for s in self.slots
            ],
        }

    # -- within-model updates -------------------------------------------------

    def lambda_posterior_params(self, slot: _Slot) -> tuple[float, float]:
        """(shape, rate) of the intensity's Gamma conditional."""
        return slot.n_cp / slot.length + slot.alpha, 1.0 + slot.beta

    def step_lambda(self, rng: np.random.Generator) -> None:
        for slot in self.slots:
            shape, rate = self.lambda_posterior_params(slot)
            slot.lam = float(rng.gamma(shape, 1.0 / rate))

    def step_u(self, rng: np.random.Generator) -> None:
        if not getattr(self.likelihood, "has_u", False):
            return
        f = self._f_train()
        self.u = self.likelihood.update_u(f, self.u, rng)
        self.log_lik = self._loglik(f)

    def _ess(self, current, loglik0, draw_nu, apply_state, rng) -> tuple:
        """Elliptical slice sampling on a flat vector; returns (state, loglik)."""
        nu = draw_nu()
        threshold = loglik0 + math.log(rng.uniform()) if loglik0 > -math.inf else -math.inf
        angle = rng.uniform(0.0, 2.0 * math.pi)
        lo, hi = angle - 2.0 * math.pi, angle
        for _ in range(self.config.max_shrink):
            candidate = current * math.cos(angle) + nu * math.sin(angle)
            value = apply_state(candidate)
            if value > threshold:
                return candidate, value
            if angle < 0.0:
                lo = angle
            else:
                hi = angle
            angle = rng.uniform(lo, hi)
            if hi - lo < 1e-12:
                break
        apply_state(current)  # restore
        return current, loglik0

    def step_x(self, rng: np.random.Generator) -> None:
        """ESS on the concatenated whitened representation."""
        sizes = [s.x.size for s in self.slots]
        flat = np.concatenate([s.x.ravel() for s in self.slots])

        holder: dict = {}

        def apply_state(vec):
            pos = 0
            z_candidate = []
            for slot, size in zip(self.slots, sizes):
                xs = vec[pos : pos + size].reshape(-1, 2)
                pos += size
                z_candidate.append(unwhiten(slot.m, slot.l, xs))
                self.telemetry["z_updates"] += xs.shape[0]
            holder["z"] = z_candidate
            return self._loglik(self._f_train(z_candidate))

        new_flat, new_lik = self._ess(
            flat, self.log_lik, lambda: rng.standard_normal(flat.size), apply_state, rng
        )
        pos = 0
        for i, (slot, size) in enumerate(zip(self.slots, sizes)):
            slot.x = new_flat[pos : pos + size].reshape(-1, 2)
            slot.z = holder["z"][i]
            pos += size
        self.log_lik = new_lik

    def step_theta(self, rng: np.random.Generator) -> None:
        """ESS on concatenated log hyper-parameters; factors rebuilt on the fly."""
        if not self.config.update_theta:
            return
        sizes = [s.log_theta.size for s in self.slots]
        flat = np.concatenate([s.log_theta.ravel() for s in self.slots])
        scales = np.concatenate(
            [np.full(size, math.sqrt(slot.rho)) for slot, size in zip(self.slots, sizes)]
        )

        holder: dict = {}

        def draw_nu():
            return scales * rng.standard_normal(flat.size)

        def apply_state(vec):
            pos = 0
            states = []
            z_candidate = []
            for slot, size in zip(self.slots, sizes):
                logt = vec[pos : pos + size].reshape(slot.log_theta.shape)
                pos += size
                m, l = compute_factors(slot.bt, slot.member, logt, self.family)
                self.telemetry["factor_builds"] += slot.bt.size
                z = unwhiten(m, l, slot.x)
                self.telemetry["z_updates"] += slot.bt.size
                states.append((logt, m, l, z))
                z_candidate.append(z)
            holder["states"] = states
            return self._loglik(self._f_train(z_candidate))

        _, new_lik = self._ess(flat, self.log_lik, draw_nu, apply_state, rng)
        for slot, (logt, m, l, z) in zip(self.slots, holder["states"]):
            slot.log_theta, slot.m, slot.l, slot.z = logt, m, l, z
        self.log_lik = new_lik

    def _apply_cp_config(self, slot: _Slot, cps: np.ndarray, log_theta: np.ndarray):
        """Candidate factors/z for a new change-point configuration.

        Only boundary factors whose effective hyper-parameters change are
        rebuilt; z is re-propagated from the first affected row.
        """
        member = boundary_membership(slot.bt, cps)
        old_eff = slot.log_theta[slot.member]
        new_eff = log_theta[member]
        changed = np.flatnonzero(np.any(old_eff != new_eff, axis=1))
        if changed.size == 0:
            return member, slot.m, slot.l, slot.z, None
        m_new = slot.m.copy()
        l_new = slot.l.copy()
        m_rows, l_rows = compute_factors(slot.bt, member, log_theta, self.family, rows=changed)
        m_new[changed] = m_rows
        l_new[changed] = l_rows
        self.telemetry["factor_builds"] += changed.size
        start = int(changed.min())
        z_new = unwhiten(m_new, l_new, slot.x, z=slot.z, start=start)
        self.telemetry["z_updates"] += slot.bt.size - start
        return member, m_new, l_new, z_new, start

    def _slot_z_list(self, slot_index: int, z_new: np.ndarray) -> list:
        return [
            z_new if i == slot_index else s.z for i, s in enumerate(self.slots)
        ]

    def step_changepoints(self, rng: np.random.Generator) -> None:
        """Metropolis sweep over change-point positions, one slot at a time."""
        for si, slot in enumerate(self.slots):
            for p in range(slot.n_cp):
                left = slot.cps[p - 1] if p > 0 else slot.lo
                right = slot.cps[p + 1] if p < slot.n_cp - 1 else slot.hi
                proposal = rng.uniform(left, right)
                self.telemetry["propose_cp_move"] += 1
                cps_new = slot.cps.copy()
                cps_new[p] = proposal
                member, m_new, l_new, z_new, start = self._apply_cp_config(
                    slot, cps_new, slot.log_theta
                )
                if start is None:
                    # no membership change: likelihood ratio is one
                    slot.cps = cps_new
                    self.telemetry["accept_cp_move"] += 1
                    continue
                lik_new = self._loglik(self._f_train(self._slot_z_list(si, z_new)))
                if math.log(rng.uniform()) < min(0.0, lik_new - self.log_lik):
                    slot.cps = cps_new
                    slot.member, slot.m, slot.l, slot.z = member, m_new, l_new, z_new
                    self.log_lik = lik_new
                    self.telemetry["accept_cp_move"] += 1

    # -- between-models updates ------------------------------------------------

    def _log_prior_theta(self, slot: _Slot, row: np.ndarray) -> float:
        return float(
            -0.5 * (row @ row) / slot.rho
            - 0.5 * row.size * math.log(2.0 * math.pi * slot.rho)
        )

    def step_between(self, rng: np.random.Generator) -> None:
        si = int(rng.integers(len(self.slots)))
        slot = self.slots[si]
        if slot.n_cp == 0:
            if self.config.allow_add and rng.uniform() < 0.5:
                self.propose_add(si, rng)
        else:
            move = rng.uniform()
            if move < 1.0 / 3.0:
                if self.config.allow_add:
                    self.propose_add(si, rng)
            elif move < 2.0 / 3.0:
                self.propose_delete(si, rng)
            # else: do nothing, acceptance ratio one

    def propose_add(self, slot_index: int, rng: np.random.Generator) -> bool:
        """Split a kernel-membership cluster at a uniform new change-point."""
        slot = self.slots[slot_index]
        self.telemetry["propose_add"] += 1
        c_star = rng.uniform(slot.lo, slot.hi)
        if np.any(slot.cps == c_star):
            return False  # probability-zero tie
        p = int(np.searchsorted(slot.cps, c_star))
        theta_p = slot.log_theta[p]
        theta_star = math.sqrt(slot.rho) * rng.standard_normal(self.n_params)
        cos, sin = math.cos(SPLIT_ANGLE), math.sin(SPLIT_ANGLE)
        left = cos * theta_p - sin * theta_star
        right = sin * theta_p + cos * theta_star
        log_theta = np.insert(slot.log_theta, p + 1, right, axis=0)
        log_theta[p] = left
        cps_new = np.insert(slot.cps, p, c_star)

        member, m_new, l_new, z_new, start = self._apply_cp_config(slot, cps_new, log_theta)
        lik_new = (
            self.log_lik
            if start is None
            else self._loglik(self._f_train(self._slot_z_list(slot_index, z_new)))
        )
        log_ratio = (
            (lik_new - self.log_lik)
            + math.log(slot.lam * slot.length / (1.0 + slot.n_cp))
            + self._log_prior_theta(slot, left)
            + self._log_prior_theta(slot, right)
            - self._log_prior_theta(slot, theta_p)
            - self._log_prior_theta(slot, theta_star)
        )
        if math.log(rng.uniform()) < min(0.0, log_ratio):
            slot.cps = cps_new
            slot.log_theta = log_theta
            slot.member, slot.m, slot.l, slot.z = member, m_new, l_new, z_new
            self.log_lik = lik_new
            self.telemetry["accept_add"] += 1
            return True
        return False

    def propose_delete(self, slot_index: int, rng: np.random.Generator) -> bool:
        """Merge the clusters adjacent to a uniformly chosen change-point."""
        slot = self.slots[slot_index]
        if slot.n_cp == 0:
            return False
        self.telemetry["propose_delete"] += 1
        q = int(rng.integers(slot.n_cp))
        cos, sin = math.cos(SPLIT_ANGLE), math.sin(SPLIT_ANGLE)
        theta_left = slot.log_theta[q]
        theta_right = slot.log_theta[q + 1]
        merged = cos * theta_left + sin * theta_right
        discarded = -sin * theta_left + cos * theta_right
        log_theta = np.delete(slot.log_theta, q + 1, axis=0)
        log_theta[q] = merged
        cps_new = np.delete(slot.cps, q)

        member, m_new, l_new, z_new, start = self._apply_cp_config(slot, cps_new, log_theta)
        lik_new = (
            self.log_lik
            if start is None
            else self._loglik(self._f_train(self._slot_z_list(slot_index, z_new)))
        )
        log_ratio = (
            (lik_new - self.log_lik)
            + math.log(slot.n_cp / (slot.lam * slot.length))
            + self._log_prior_theta(slot, merged)
            + self._log_prior_theta(slot, discarded)
            - self._log_prior_theta(slot, theta_left)
            - self._log_prior_theta(slot, theta_right)
        )
        if math.log(rng.uniform()) < min(0.0, log_ratio):
            slot.cps = cps_new
            slot.log_theta = log_theta
            slot.member, slot.m, slot.l, slot.z = member, m_new, l_new, z_new
            self.log_lik = lik_new
            self.telemetry["accept_delete"] += 1
            return True
        return False

    # -- main loop ---------------------------------------------------------------

    def run(self) -> McmcChain:
        cfg = self.config
        master = np.random.SeedSequence(cfg.seed)
        init_seed, *iter_seeds = master.spawn(cfg.iterations + 1)
        self.initialise(np.random.default_rng(init_seed))

        n_slots = len(self.slots)
        keep = [
            it
            for it in range(cfg.iterations)
            if it >= cfg.burnin and (it - cfg.burnin) % cfg.thin == 0
        ]
        n_keep = len(keep)
        n_train, n_test = self.x_train.shape[0], self.x_test.shape[0]
        L = self.n_outputs
        f_rec = np.empty((n_keep, n_train, L))
        fs_rec = np.empty((n_keep, n_test, L))
        gf_rec = np.empty((n_keep, n_train, L, self.d))
        gfs_rec = np.empty((n_keep, n_test, L, self.d))
        n_trace = np.empty((cfg.iterations, n_slots), dtype=int)
        lam_trace = np.empty((cfg.iterations, n_slots))
        u_trace = []
        cp_records = []
        x_trace = (
            np.empty((cfg.iterations, sum(s.x.size for s in self.slots)))
            if cfg.record_x
            else None
        )

        kept = 0
        for it in range(cfg.iterations):
            self._iteration = it
            rng = np.random.default_rng(iter_seeds[it])
            # step 1: within-model cycle, in the fixed order 1.1-1.5
            self.step_lambda(rng)
            self.step_u(rng)
            self.step_theta(rng)
            self.step_x(rng)
            self.step_changepoints(rng)
            # step 2: between-models move
            self.step_between(rng)
            # traces
            n_trace[it] = [s.n_cp for s in self.slots]
            lam_trace[it] = [s.lam for s in self.slots]
            u_trace.append(self.u)
            if x_trace is not None:
                x_trace[it] = np.concatenate([s.x.ravel() for s in self.slots])
            # step 3: record latent values and gradients
            if kept < n_keep and it == keep[kept]:
                f, gf = self._values_at(self.idx_train)
                fs, gfs = self._values_at(self.idx_test)
                f_rec[kept], gf_rec[kept] = f, gf
                fs_rec[kept], gfs_rec[kept] = fs, gfs
                for si, slot in enumerate(self.slots):
                    cp_records.append((it, si, slot.cps.copy()))
                kept += 1

        squeeze = (lambda a: a[..., 0, :] if a.ndim == 4 else a[..., 0]) if L == 1 else (lambda a: a)
        return McmcChain(
            f=squeeze(f_rec),
            f_star=squeeze(fs_rec),
            grad_f=squeeze(gf_rec),
            grad_f_star=squeeze(gfs_rec),
            kept_iterations=np.asarray(keep, dtype=int),
            n_trace=n_trace,
            lam_trace=lam_trace,
            u_trace=u_trace,
            cp_records=cp_records,
            x_trace=x_trace,
            telemetry=dict(self.telemetry),
            iterations=cfg.iterations,
        )


def run_sampler(
    x_train,
    likelihood: LikelihoodModel,
    config: McmcConfig,
    x_test=None,
    link: LinkFunction | None = None,
) -> McmcChain:
    """Run the reversible-jump sampler end to end and return the chain."""
    sampler = RJSampler(x_train, x_test, likelihood, config, link=link)
    return sampler.run()


# module-level aliases matching the operation names used in tests/demos
def update_lambda(sampler: RJSampler, rng) -> None:
    sampler.step_lambda(rng)


def update_u(sampler: RJSampler, rng) -> None:
    sampler.step_u(rng)


def ess_update_x(sampler: RJSampler, rng) -> None:
    sampler.step_x(rng)


def ess_update_theta(sampler: RJSampler, rng) -> None:
    sampler.step_theta(rng)


def update_changepoints(sampler: RJSampler, rng) -> None:
    sampler.step_changepoints(rng)


def propose_add(sampler: RJSampler, slot_index: int, rng) -> bool:
    return sampler.propose_add(slot_index, rng)


def propose_delete(sampler: RJSampler, slot_index: int, rng) -> bool:
    return sampler.propose_delete(slot_index, rng)
