"""Mutual information and MMSE matrices of the fixed channel z = A x + w.

The channel input is x = G s with s i.i.d. unit-variance symbols (Gaussian,
QPSK or 16-QAM) and w i.i.d. circularly symmetric complex Gaussian noise of
unit variance.  Closed forms cover Gaussian inputs; small discrete systems
are evaluated exhaustively over the constellation; scalar kernels handle
banks of parallel streams.

All information quantities are in nats.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad
from scipy.special import erfc, roots_hermite

from .constellations import Constellation, enumerate_symbol_vectors
from .errors import DomainError
from .linalg import hermitize, logdet_hermitian, psd_clip
from .rng import make_generator


@dataclass(eq=False)
class EffectiveChannel:
    """A fixed channel matrix plus a human-readable origin tag."""

    matrix: np.ndarray
    description: str = ""


@dataclass(eq=False)
class MmseMatrix:
    """Conditional MMSE matrix E = E{(x - <x>)(x - <x>)^H} and the input covariance."""

    matrix: np.ndarray
    input_covariance: np.ndarray

    def trace_against(self, weight: np.ndarray) -> float:
        return float(np.trace(self.matrix @ weight).real)


class ScalarKernelResult(NamedTuple):
    mi: float
    mmse: float


def _as_matrix(channel) -> np.ndarray:
    if isinstance(channel, EffectiveChannel):
        channel = channel.matrix
    mat = np.asarray(channel, dtype=complex)
    if mat.ndim != 2:
        raise ValueError("channel matrix must be 2-D")
    return mat


# ---------------------------------------------------------------------------
# Gaussian inputs, general matrices
# ---------------------------------------------------------------------------

def gaussian_mi(channel, input_covariance: np.ndarray) -> float:
    """ln det(I + A P A^H) for a Gaussian input of covariance P."""
    a = _as_matrix(channel)
    p = hermitize(np.asarray(input_covariance, dtype=complex))
    w = np.linalg.eigvalsh(p)
    if w[0] < -1e-8:
        raise DomainError(f"input covariance is not PSD (min eigenvalue {w[0]:.3e})")
    n = a.shape[0]
    s = np.eye(n, dtype=complex) + a @ p @ a.conj().T
    return logdet_hermitian(s)


def gaussian_mmse_matrix(channel, input_covariance: np.ndarray) -> MmseMatrix:
    """MMSE matrix (P^{-1} + A^H A)^{-1} of a Gaussian input.

    Singular covariances are handled by restricting to the range space of P,
    so precoders that null streams are accepted.
    """
    a = _as_matrix(channel)
    p = hermitize(np.asarray(input_covariance, dtype=complex))
    w, v = np.linalg.eigh(p)
    if w[0] < -1e-8:
        raise DomainError(f"input covariance is not PSD (min eigenvalue {w[0]:.3e})")
    support = w > max(1e-14, w[-1] * 1e-13)
    if not np.any(support):
        return MmseMatrix(np.zeros_like(p), p)
    b = v[:, support] * np.sqrt(w[support])
    k = b.conj().T @ (a.conj().T @ a) @ b
    inner = np.linalg.inv(np.eye(k.shape[0], dtype=complex) + k)
    return MmseMatrix(hermitize(b @ inner @ b.conj().T), p)


# ---------------------------------------------------------------------------
# Discrete inputs, exhaustive evaluation
# ---------------------------------------------------------------------------

def _input_vectors(constellation: Constellation, antennas: int, precoder) -> np.ndarray:
    s = enumerate_symbol_vectors(constellation, antennas)
    if precoder is None:
        return s
    return s @ np.asarray(precoder, dtype=complex).T


def discrete_mi_exhaustive(
    channel,
    constellation: Constellation,
    precoder: np.ndarray | None = None,
    noise_samples: int = 2048,
    seed: int = 0,
    with_error: bool = False,
):
    """I(z; x) for a discrete input, exact constellation sums, sampled noise.

    Evaluates M ln C - mean_i E_w ln sum_j exp(|w|^2 - |A(x_i - x_j) + w|^2);
    the |w|^2 shift cancels inside the exponent, keeping every term <= 0 for
    j = i and the whole estimator exact at A = 0.  The expectation over w is
    a seeded Monte-Carlo average; the sums over i and j are exact.
    """
    if noise_samples < 1:
        raise ValueError("noise_samples must be >= 1")
    a = _as_matrix(channel)
    antennas = a.shape[1]
    x = _input_vectors(constellation, antennas, precoder)
    ax = x @ a.T  # (P, N')
    count = ax.shape[0]
    gram = ax @ ax.conj().T
    norms = np.real(np.diag(gram))
    dist_sq = norms[:, None] + norms[None, :] - 2.0 * gram.real  # |A(x_i - x_j)|^2

    rng = make_generator(seed, stream=1)
    from .rng import complex_normal

    w = complex_normal(rng, (noise_samples, a.shape[0]))
    ru = (2.0 * np.real(w @ ax.conj().T)).astype(np.float32)  # 2 Re <A x_i, w_t>
    neg_dist = (-dist_sq).astype(np.float32)

    # exponent(t, i, j) = -dist_sq[i, j] - ru[t, i] + ru[t, j]; after the
    # per-(t, i) max shift all entries are <= 0, so single precision is safe
    block = max(1, int(2**22 // max(count * noise_samples, 1)))
    per_sample = np.zeros(noise_samples)
    buf = None
    for start in range(0, count, block):
        stop = min(start + block, count)
        width = stop - start
        if buf is None or buf.shape[1] != width:
            buf = np.empty((noise_samples, width, count), dtype=np.float32)
        np.add(neg_dist[None, start:stop, :], ru[:, None, :], out=buf)
        np.subtract(buf, ru[:, start:stop, None], out=buf)
        mx = buf.max(axis=2)
        np.subtract(buf, mx[:, :, None], out=buf)
        np.exp(buf, out=buf)
        lse = mx.astype(np.float64) + np.log(buf.sum(axis=2, dtype=np.float64))
        per_sample += lse.sum(axis=1)
    per_sample /= count
    mi_samples = antennas * math.log(constellation.cardinality) - per_sample
    mi = float(np.mean(mi_samples))
    if with_error:
        se = float(np.std(mi_samples, ddof=1) / math.sqrt(noise_samples)) if noise_samples > 1 else 0.0
        return mi, se
    return mi


def discrete_mmse_matrix(
    channel,
    constellation: Constellation,
    precoder: np.ndarray | None = None,
    z_samples: int = 4096,
    seed: int = 0,
) -> MmseMatrix:
    """MMSE matrix P - E_z{<x><x>^H} with the posterior mean summed exactly.

    The expectation over the channel output is a seeded Monte-Carlo average;
    the result is Hermitian-symmetrized and clipped to the [0, P] interval.
    """
    if z_samples < 1:
        raise ValueError("z_samples must be >= 1")
    a = _as_matrix(channel)
    antennas = a.shape[1]
    x = _input_vectors(constellation, antennas, precoder)
    ax = x @ a.T
    count = ax.shape[0]
    if precoder is None:
        p_cov = np.eye(antennas, dtype=complex)
    else:
        g = np.asarray(precoder, dtype=complex)
        p_cov = g @ g.conj().T

    rng = make_generator(seed, stream=2)
    from .rng import complex_normal

    idx = rng.integers(0, count, size=z_samples)
    w = complex_normal(rng, (z_samples, a.shape[0]))
    z = ax[idx] + w

    # log posterior weights: -(|z - A x_j|^2) up to t-constants
    cross = 2.0 * np.real(z @ ax.conj().T)  # (T, P)
    logw = cross - np.real(np.einsum("pn,pn->p", ax, ax.conj()))[None, :]
    logw -= logw.max(axis=1, keepdims=True)
    weights = np.exp(logw)
    weights /= weights.sum(axis=1, keepdims=True)
    post = weights @ x  # (T, M)
    second_moment = (post.conj().T @ post) / z_samples
    e = hermitize(p_cov - second_moment)
    e = psd_clip(e)
    e = hermitize(p_cov - psd_clip(p_cov - e))
    return MmseMatrix(e, p_cov)


# ---------------------------------------------------------------------------
# Scalar kernels for parallel streams
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _gh_nodes(order: int):
    nodes, weights = roots_hermite(order)
    return nodes, weights / math.sqrt(math.pi)


def _gh_expectation(fn, tol: float = 1e-10, start: int = 64, cap: int = 512) -> float:
    """Expectation of fn(x) under N(0, 1/2) weight, i.e. (1/sqrt(pi)) * integral
    of fn against exp(-x^2), with the node count doubled until two successive
    orders agree."""
    order = start
    prev = None
    while True:
        nodes, weights = _gh_nodes(order)
        val = float(weights @ fn(nodes))
        if prev is not None and abs(val - prev) < tol * (1.0 + abs(val)):
            return val
        if order >= cap:
            return val
        prev = val
        order *= 2


def _check_kernel_args(gain: float, channel_gain: float) -> None:
    if gain < 0 or channel_gain < 0:
        raise DomainError("kernel arguments must be nonnegative")


def gaussian_kernel(gain: float, channel_gain: float) -> ScalarKernelResult:
    """Per-stream MI and MMSE for a Gaussian input x = g s over z = a x + w."""
    _check_kernel_args(gain, channel_gain)
    rho = (gain * channel_gain) ** 2
    return ScalarKernelResult(mi=math.log1p(rho), mmse=gain**2 / (1.0 + rho))


def _qpsk_mmse_unit(rho: float) -> float:
    # E[1 - tanh(rho - sqrt(rho) Z)] recentred at the decision boundary:
    # exactly exp(-rho/2) * E[sech(sqrt(rho) U)], which keeps relative
    # accuracy when the error floor is exponentially small.
    sq = math.sqrt(rho)
    root2 = math.sqrt(2.0)
    sech_mean = _gh_expectation(lambda x: 1.0 / np.cosh(sq * root2 * x))
    return math.exp(-rho / 2.0) * sech_mean


def _qpsk_mi_unit(rho: float) -> float:
    # 2*rho - 2*E[ln cosh(rho - sqrt(rho) Z)], rewritten exactly as ln 4 minus
    # an exponentially small deficit: ln cosh v = |v| - ln 2 + log1p(e^{-2|v|}),
    # E|v| in closed form, and the log1p remainder folded over the kink at
    # v = 0 so the adaptive quadrature sees a smooth positive integrand.
    sq = math.sqrt(rho)
    phi = math.exp(-rho / 2.0) / math.sqrt(2.0 * math.pi)
    cdf_tail = 0.5 * erfc(math.sqrt(rho / 2.0))
    norm = 1.0 / (sq * math.sqrt(2.0 * math.pi))

    def remainder(x):
        z1 = (x - rho) / sq
        z2 = (x + rho) / sq
        dens = math.exp(-0.5 * z1 * z1) + math.exp(-0.5 * z2 * z2)
        return math.log1p(math.exp(-2.0 * x)) * dens * norm

    tail, _ = quad(remainder, 0.0, 40.0, epsabs=1e-300, epsrel=1e-12, limit=200)
    mi = math.log(4.0) + 4.0 * rho * cdf_tail - 4.0 * sq * phi - 2.0 * tail
    return max(mi, 0.0)


def qpsk_kernel(gain: float, channel_gain: float) -> ScalarKernelResult:
    """Per-stream MI and MMSE for QPSK input, by Gauss-Hermite quadrature.

    Each quadrature node set is doubled until successive orders agree; the
    integrands are recentred so both outputs stay relatively accurate deep
    into the saturated high-SNR regime.
    """
    _check_kernel_args(gain, channel_gain)
    rho = (gain * channel_gain) ** 2
    if rho == 0.0:
        return ScalarKernelResult(mi=0.0, mmse=gain**2)
    mmse_unit = min(max(_qpsk_mmse_unit(rho), 0.0), 1.0)
    return ScalarKernelResult(mi=_qpsk_mi_unit(rho), mmse=gain**2 * mmse_unit)


def _pam4_posterior_mean(y: np.ndarray, c: float) -> np.ndarray:
    """Posterior mean of a uniform {+-1, +-3} level observed as y = c*t + N(0, 1/2).

    Evaluated through shifted exponentials so no term overflows at high SNR.
    """
    ay = np.abs(y)
    sgn = np.sign(y)
    q1 = 6.0 * c * ay - 8.0 * c * c  # outer-level branch
    q2 = 2.0 * c * ay
    m = np.maximum(q1, q2)
    e1 = np.exp(q1 - m)
    e2 = np.exp(q2 - m)
    num = 3.0 * e1 * (1.0 - np.exp(-12.0 * c * ay)) + e2 * (1.0 - np.exp(-4.0 * c * ay))
    den = e1 * (1.0 + np.exp(-12.0 * c * ay)) + e2 * (1.0 + np.exp(-4.0 * c * ay))
    return sgn * num / den


def _qam16_mmse_unit(rho: float) -> float:
    """Unit-power 16-QAM MMSE at effective SNR rho.

    The complex symbol splits into two independent 4-PAM components; the
    remaining one-dimensional integral is the posterior-mean second moment
    against the four-component Gaussian mixture of the observation.
    """
    if rho == 0.0:
        return 1.0
    c = math.sqrt(rho / 10.0)
    levels = np.array([-3.0, -1.0, 1.0, 3.0])

    def mixture(x):
        y = c * levels[:, None] + x[None, :]
        return np.mean(_pam4_posterior_mean(y, c) ** 2, axis=0)

    second_moment = _gh_expectation(mixture)
    return min(max(1.0 - second_moment / 5.0, 0.0), 1.0)


class _ImmseAccumulator:
    """MI of unit-power 16-QAM by integrating the MMSE curve over SNR.

    Segment integrals over a fixed logarithmic grid are cached, so the value
    at any SNR is independent of the call history; only the short tail from
    the nearest grid anchor is integrated per call.  Guarded by a lock for
    concurrent readers.
    """

    def __init__(self):
        self._grid = np.concatenate(([0.0], np.logspace(-4.0, 5.0, 91)))
        self._cum = [0.0]
        self._lock = threading.Lock()

    def _anchor(self, index: int) -> float:
        with self._lock:
            while len(self._cum) <= index:
                j = len(self._cum)
                seg, _ = quad(
                    _qam16_mmse_unit,
                    self._grid[j - 1],
                    self._grid[j],
                    epsabs=1e-12,
                    epsrel=1e-11,
                    limit=200,
                )
                self._cum.append(self._cum[-1] + seg)
            return self._cum[index]

    def mi_unit(self, rho: float) -> float:
        if rho <= 0.0:
            return 0.0
        index = int(np.searchsorted(self._grid, rho, side="right") - 1)
        base = self._anchor(index)
        if rho > self._grid[index]:
            tail, _ = quad(
                _qam16_mmse_unit, self._grid[index], rho, epsabs=1e-12, epsrel=1e-11, limit=200
            )
        else:
            tail = 0.0
        return base + tail


_QAM16_MI = _ImmseAccumulator()


def qam16_kernel(gain: float, channel_gain: float) -> ScalarKernelResult:
    """Per-stream MI and MMSE for 16-QAM input.

    The MMSE integral is evaluated by quadrature; the MI follows from
    integrating the MMSE curve over the effective SNR (no closed form).
    """
    _check_kernel_args(gain, channel_gain)
    rho = (gain * channel_gain) ** 2
    mmse_unit = _qam16_mmse_unit(rho)
    mi_unit = _QAM16_MI.mi_unit(rho)
    return ScalarKernelResult(mi=mi_unit, mmse=gain**2 * mmse_unit)


def _gaussian_mmse_scalar(gain: float, channel_gain: float) -> float:
    return gain**2 / (1.0 + (gain * channel_gain) ** 2)


def _qpsk_mmse_scalar(gain: float, channel_gain: float) -> float:
    rho = (gain * channel_gain) ** 2
    if rho == 0.0:
        return gain**2
    return gain**2 * min(max(_qpsk_mmse_unit(rho), 0.0), 1.0)


def _qam16_mmse_scalar(gain: float, channel_gain: float) -> float:
    return gain**2 * _qam16_mmse_unit((gain * channel_gain) ** 2)


_KERNELS = {"gaussian": gaussian_kernel, "qpsk": qpsk_kernel, "qam16": qam16_kernel}
_MMSE_ONLY = {
    "gaussian": _gaussian_mmse_scalar,
    "qpsk": _qpsk_mmse_scalar,
    "qam16": _qam16_mmse_scalar,
}


def scalar_kernel(constellation: Constellation | str):
    kind = constellation if isinstance(constellation, str) else constellation.kind
    return _KERNELS[kind]


def scalar_mmse(constellation: Constellation | str):
    """MMSE-only variant of :func:`scalar_kernel` for tight iteration loops."""
    kind = constellation if isinstance(constellation, str) else constellation.kind
    return _MMSE_ONLY[kind]


def parallel_mi(gains, channel_gains, constellation: Constellation | str) -> float:
    """MI of a bank of parallel streams: sum of per-stream kernel values."""
    gains = np.atleast_1d(np.asarray(gains, dtype=float))
    channel_gains = np.atleast_1d(np.asarray(channel_gains, dtype=float))
    if gains.shape != channel_gains.shape:
        raise ValueError("gain vectors must have equal length")
    kernel = scalar_kernel(constellation)
    return float(sum(kernel(g, a).mi for g, a in zip(gains, channel_gains)))
