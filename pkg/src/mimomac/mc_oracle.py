"""Finite-size Monte-Carlo estimator of the ergodic sum mutual information.

For each channel realization the estimator marginalizes constellations
exactly: Gaussian terminals are folded analytically into the conditional
noise covariance, discrete terminals are enumerated (log-sum-exp over the
joint symbol set), and only the channel, symbol and noise draws are sampled.
All-Gaussian scenarios skip sampling entirely and average the per-realization
closed forms ln det(pi e (I + sum H P H^H)).

Realization r draws from the Philox stream (seed, r), so estimates are
bit-identical for any worker count and any partitioning of the realization
range.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .channel import ChannelRealization, RealizationSampler, Scenario, TerminalProfile
from .constellations import ENUMERATION_GUARD, enumerate_symbol_vectors
from .errors import CapacityError
from .linalg import logdet_hermitian
from .rng import complex_normal, derive_seed, make_generator

WORKERS_ENV = "MIMOMAC_WORKERS"

#: Realizations are processed in fixed-size chunks; the chunking only affects
#: scheduling, never values.
_CHUNK = 16


@dataclass(frozen=True)
class McEstimate:
    value: float  # nats per receive antenna
    std_error: float
    realizations: int
    seed: int

    @property
    def value_bits(self) -> float:
        return self.value / math.log(2.0)


@dataclass(frozen=True)
class ExtrapolationFit:
    """Least-squares quadratic in 1/M through per-antenna estimates."""

    coefficients: np.ndarray  # highest degree first, variable 1/M
    predicted_limit: float  # value at 1/M = 0
    fit_residual: float


def worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


# ---------------------------------------------------------------------------
# Terminal groups
# ---------------------------------------------------------------------------

class _Group:
    """Either side of the conditioning split: users or interferers."""

    def __init__(self, terminals: list[TerminalProfile], offsets: list[int], name: str):
        self.name = name
        self.terminals = terminals
        self.offsets = offsets  # index of each terminal within scenario.terminals
        self.discrete = [i for i, t in enumerate(terminals) if t.constellation.is_discrete]
        self.gaussian = [i for i, t in enumerate(terminals) if not t.constellation.is_discrete]
        joint = 1
        for i in self.discrete:
            t = terminals[i]
            joint *= t.constellation.cardinality ** t.antennas
            if joint > ENUMERATION_GUARD:
                raise CapacityError(
                    f"joint {name} constellation needs more than {ENUMERATION_GUARD} "
                    "vectors; the exhaustive estimator cannot marginalize it"
                )
        self.joint_size = joint
        self.inputs = [
            enumerate_symbol_vectors(terminals[i].constellation, terminals[i].antennas)
            @ terminals[i].precoder.T
            for i in self.discrete
        ]

    def enumerate_contributions(self, channels: list[np.ndarray], n: int) -> np.ndarray:
        """All joint received-signal vectors of the discrete members, (joint_size, N)."""
        acc = np.zeros((1, n), dtype=complex)
        for i, x in zip(self.discrete, self.inputs):
            contrib = x @ channels[i].T  # (P_i, N)
            acc = (acc[:, None, :] + contrib[None, :, :]).reshape(-1, n)
        return acc

    def gaussian_covariance(self, channels: list[np.ndarray], n: int) -> np.ndarray:
        cov = np.zeros((n, n), dtype=complex)
        for i in self.gaussian:
            hg = channels[i] @ self.terminals[i].precoder
            cov += hg @ hg.conj().T
        return cov

    def sample_signal(
        self, channels: list[np.ndarray], rng, draws: int, n: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Sampled transmitted contribution per draw and the joint discrete index."""
        idx = rng.integers(0, self.joint_size, size=draws) if self.discrete else np.zeros(draws, int)
        signal = np.zeros((draws, n), dtype=complex)
        if self.discrete:
            # decompose the joint index into per-terminal indices (row-major)
            rem = idx.copy()
            sizes = [x.shape[0] for x in self.inputs]
            for pos in range(len(self.discrete) - 1, -1, -1):
                sub = rem % sizes[pos]
                rem //= sizes[pos]
                signal += self.inputs[pos][sub] @ channels[self.discrete[pos]].T
        for i in self.gaussian:
            t = self.terminals[i]
            s = complex_normal(rng, (draws, t.antennas))
            signal += (s @ t.precoder.T) @ channels[i].T
        return signal, idx


def _logsumexp_pair(uncond: np.ndarray, a_terms: np.ndarray, b_terms: np.ndarray, gamma: np.ndarray):
    """lse over (i, j) of -(a_terms[t,i] + b_terms[t,j] + gamma[i,j]), blockwise in i.

    The shifted exponent tensor is evaluated in single precision: after the
    per-draw max subtraction every entry is <= 0, so the 1e-7 rounding is
    orders of magnitude below the Monte-Carlo standard error while the big
    exp/sum pass runs several times faster.
    """
    draws, count_a = a_terms.shape
    count_b = b_terms.shape[1]
    a32 = a_terms.astype(np.float32)
    b32 = b_terms.astype(np.float32)
    g32 = gamma.astype(np.float32)
    block = max(1, int(2**22 // max(count_b * draws, 1)))
    n_blocks = (count_a + block - 1) // block
    partial = np.full((draws, n_blocks), -np.inf)
    buf = None
    for bi, start in enumerate(range(0, count_a, block)):
        stop = min(start + block, count_a)
        width = stop - start
        if buf is None or buf.shape[1] != width:
            buf = np.empty((draws, width, count_b), dtype=np.float32)
        np.add(a32[:, start:stop, None], g32[None, start:stop, :], out=buf)
        np.add(buf, b32[:, None, :], out=buf)
        np.negative(buf, out=buf)
        mx = buf.max(axis=(1, 2))
        np.subtract(buf, mx[:, None, None], out=buf)
        np.exp(buf, out=buf)
        partial[:, bi] = mx.astype(np.float64) + np.log(buf.sum(axis=(1, 2), dtype=np.float64))
    mx = partial.max(axis=1)
    return mx + np.log(np.exp(partial - mx[:, None]).sum(axis=1)) + uncond


class _Estimator:
    def __init__(self, scenario: Scenario, noise_samples: int, analytic_gaussian: bool):
        scenario.validate()
        self.scenario = scenario
        self.n = scenario.rx_antennas
        self.noise_samples = noise_samples
        self.sampler = RealizationSampler(scenario)
        k = len(scenario.users)
        self.users = _Group(scenario.users, list(range(k)), "user")
        self.interferers = _Group(
            scenario.interferers, list(range(k, k + len(scenario.interferers))), "interferer"
        )
        self.all_gaussian = not (self.users.discrete or self.interferers.discrete)
        self.analytic = analytic_gaussian and self.all_gaussian

    def realization_mi(self, seed: int, index: int) -> float:
        """Mutual information contribution of one channel draw, in nats (total)."""
        real = self.sampler.sample(seed, index)
        channels = real.user_channels + real.interferer_channels
        user_channels = real.user_channels
        interferer_channels = real.interferer_channels
        n = self.n
        eye = np.eye(n, dtype=complex)

        cov_users = self.users.gaussian_covariance(user_channels, n)
        cov_interf = self.interferers.gaussian_covariance(interferer_channels, n)
        sigma_joint = eye + cov_users + cov_interf
        sigma_cond = eye + cov_interf
        logdet_joint = logdet_hermitian(sigma_joint)
        logdet_cond = logdet_hermitian(sigma_cond)

        if self.analytic:
            return logdet_joint - logdet_cond

        rng = make_generator(derive_seed(seed, index), stream=1)
        draws = self.noise_samples
        half = (draws + 1) // 2

        a_set = self.users.enumerate_contributions(user_channels, n)
        b_set = self.interferers.enumerate_contributions(interferer_channels, n)

        user_sig_half, idx_a_half = self.users.sample_signal(user_channels, rng, half, n)
        interf_sig_half, _ = self.interferers.sample_signal(interferer_channels, rng, half, n)
        noise_half = complex_normal(rng, (half, n))
        user_sig = np.concatenate([user_sig_half, user_sig_half])[:draws]
        interf_sig = np.concatenate([interf_sig_half, interf_sig_half])[:draws]
        noise = np.concatenate([noise_half, -noise_half])[:draws]  # antithetic pairing
        y = user_sig + interf_sig + noise

        # joint term: whiten with the Gaussian-terminal covariance
        white_joint = not (self.users.gaussian or self.interferers.gaussian)
        if white_joint:
            y_w, a_w, b_w = y, a_set, b_set
        else:
            chol_joint = np.linalg.cholesky(sigma_joint)
            y_w = solve_triangular(chol_joint, y.T, lower=True).T
            a_w = solve_triangular(chol_joint, a_set.T, lower=True).T
            b_w = solve_triangular(chol_joint, b_set.T, lower=True).T
        a_norm = np.einsum("in,in->i", a_w, a_w.conj()).real
        b_norm = np.einsum("jn,jn->j", b_w, b_w.conj()).real
        a_terms = a_norm[None, :] - 2.0 * (y_w @ a_w.conj().T).real
        b_terms = b_norm[None, :] - 2.0 * (y_w @ b_w.conj().T).real
        gamma = 2.0 * (a_w @ b_w.conj().T).real
        y_norm = np.einsum("tn,tn->t", y_w, y_w.conj()).real
        lse_joint = _logsumexp_pair(-y_norm, a_terms, b_terms, gamma)

        # conditional term: the transmitted user signal is known
        resid = y - user_sig
        if self.interferers.gaussian:
            chol_cond = np.linalg.cholesky(sigma_cond)
            r_w = solve_triangular(chol_cond, resid.T, lower=True).T
            bc_w = solve_triangular(chol_cond, b_set.T, lower=True).T
        else:
            r_w, bc_w = resid, b_set
        bc_norm = np.einsum("jn,jn->j", bc_w, bc_w.conj()).real
        ex = 2.0 * (r_w @ bc_w.conj().T).real - bc_norm[None, :]
        ex -= np.einsum("tn,tn->t", r_w, r_w.conj()).real[:, None]
        mx = ex.max(axis=1)
        lse_cond = mx + np.log(np.exp(ex - mx[:, None]).sum(axis=1))

        per_draw = (
            logdet_joint
            - logdet_cond
            + math.log(self.users.joint_size)
            - lse_joint
            + lse_cond
        )
        return float(np.mean(per_draw))


def _chunk_worker(args) -> tuple[int, list[float]]:
    scenario, noise_samples, analytic, seed, start, count = args
    est = _Estimator(scenario, noise_samples, analytic)
    return start, [est.realization_mi(seed, start + i) for i in range(count)]


def estimate_mi(
    scenario: Scenario,
    n_realizations: int,
    noise_samples_per_realization: int = 64,
    seed: int = 0,
    workers: int | None = None,
    analytic_gaussian: bool = True,
) -> McEstimate:
    """Ergodic mutual information per receive antenna, with its standard error.

    ``analytic_gaussian=False`` forces the sampled estimator even for
    all-Gaussian scenarios (useful for cross-validation).  Realizations are
    reduced in index order, so results are bit-identical for any ``workers``
    value; worker processes only change the wall-clock time.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    values = np.empty(n_realizations)
    n_workers = workers if workers is not None else worker_count()
    tasks = [
        (scenario, noise_samples_per_realization, analytic_gaussian, seed, start,
         min(_CHUNK, n_realizations - start))
        for start in range(0, n_realizations, _CHUNK)
    ]
    if n_workers > 1 and len(tasks) > 1:
        try:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                for start, chunk in pool.map(_chunk_worker, tasks):
                    values[start : start + len(chunk)] = chunk
        except OSError:  # multiprocessing unavailable in the host environment
            n_workers = 1
    if n_workers == 1 or len(tasks) == 1:
        est = _Estimator(scenario, noise_samples_per_realization, analytic_gaussian)
        for r in range(n_realizations):
            values[r] = est.realization_mi(seed, r)

    n = scenario.rx_antennas
    value = float(np.mean(values)) / n
    if n_realizations > 1:
        std_error = float(np.std(values, ddof=1) / math.sqrt(n_realizations)) / n
    else:
        std_error = 0.0
    return McEstimate(value=value, std_error=std_error, realizations=n_realizations, seed=seed)


def extrapolate(sizes, estimates) -> ExtrapolationFit:
    """Quadratic least-squares fit of per-antenna estimates against 1/M.

    The intercept is the predicted infinite-size limit.  Needs at least three
    distinct sizes with matching scenario shape (the caller's contract).
    """
    sizes = np.asarray(list(sizes), dtype=float)
    values = np.array([e.value if isinstance(e, McEstimate) else float(e) for e in estimates])
    if sizes.size != values.size:
        raise ValueError("sizes and estimates must have equal length")
    if np.unique(sizes).size < 3:
        raise ValueError("extrapolation needs at least 3 distinct sizes")
    inv_m = 1.0 / sizes
    coeffs = np.polyfit(inv_m, values, 2)
    fitted = np.polyval(coeffs, inv_m)
    residual = float(np.sqrt(np.mean((fitted - values) ** 2)))
    return ExtrapolationFit(
        coefficients=coeffs, predicted_limit=float(coeffs[-1]), fit_residual=residual
    )
