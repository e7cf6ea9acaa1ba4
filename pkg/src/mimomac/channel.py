"""Scenario configuration, spatial-correlation synthesis and Kronecker channel sampling.

A :class:`Scenario` describes one receiver with ``N`` antennas, ``K`` user
terminals and ``L`` external interferers.  Each terminal carries its SNR
(linear), a transmit/receive correlation pair, a signaling constellation and
a linear precoder.  Channels follow the Kronecker model

    H = sqrt(snr / M) * R^{1/2} W T^{1/2},

with ``W`` i.i.d. circularly symmetric complex Gaussian of unit variance and
``trace(T) = M``, ``trace(R) = N``.

Scenario files are JSON documents; see :func:`scenario_from_dict` for the
schema.  SNR is given in dB in files and converted once at parse time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.linalg import toeplitz

from . import constellations
from .constellations import Constellation
from .errors import NumericalError, ScenarioParseError
from .linalg import hermitize, psd_sqrt
from .rng import complex_normal, derive_seed, make_generator

ROLE_USER = "user"
ROLE_INTERFERER = "interferer"


@dataclass(frozen=True)
class AzimuthSpectrumParams:
    """Uniform-linear-array geometry for the Gaussian power azimuth spectrum.

    ``antenna_spacing`` is in carrier wavelengths; ``mean_angle`` and the
    root-mean-square ``angle_spread`` are in radians.
    """

    antenna_spacing: float
    mean_angle: float
    angle_spread: float

    def validate(self) -> None:
        if not self.antenna_spacing > 0:
            raise ScenarioParseError("antenna spacing must be positive")
        if not self.angle_spread > 0:
            raise ScenarioParseError("angle spread must be positive")
        if not -math.pi <= self.mean_angle <= math.pi:
            raise ScenarioParseError("mean angle must lie in [-pi, pi]")


@dataclass(eq=False)
class CorrelationPair:
    """Transmit (M x M) and receive (N x N) correlation matrices, trace-normalized."""

    tx: np.ndarray
    rx: np.ndarray

    def validate(self, rel_tol: float = 1e-10) -> None:
        for name, mat in (("tx", self.tx), ("rx", self.rx)):
            n = mat.shape[0]
            if mat.shape != (n, n):
                raise ScenarioParseError(f"{name} correlation matrix must be square")
            if np.abs(mat - mat.conj().T).max() > 1e-10:
                raise ScenarioParseError(f"{name} correlation matrix must be Hermitian")
            if abs(np.trace(mat).real - n) > rel_tol * n:
                raise ScenarioParseError(
                    f"{name} correlation trace {np.trace(mat).real:.12g} != {n}"
                )
            w = np.linalg.eigvalsh(hermitize(mat))
            if w[0] < -1e-10:
                raise ScenarioParseError(f"{name} correlation matrix is not PSD")


def identity_correlation(tx_antennas: int, rx_antennas: int) -> CorrelationPair:
    return CorrelationPair(
        tx=np.eye(tx_antennas, dtype=complex), rx=np.eye(rx_antennas, dtype=complex)
    )


@dataclass(eq=False)
class TerminalProfile:
    """One transmitter (user or interferer)."""

    antennas: int
    snr: float  # linear power ratio
    correlation: CorrelationPair
    constellation: Constellation
    precoder: np.ndarray
    role: str = ROLE_USER
    precoder_spec: str = "identity"  # identity | optimize | <file path>
    label: str = ""

    def validate(self) -> None:
        m = self.antennas
        if m < 1:
            raise ScenarioParseError("terminal needs at least one antenna")
        if self.snr < 0:
            raise ScenarioParseError("SNR must be nonnegative")
        if self.precoder.shape != (m, m):
            raise ScenarioParseError(f"precoder must be {m}x{m}")
        power = float(np.trace(self.precoder @ self.precoder.conj().T).real)
        if power > m + 1e-9:
            raise ScenarioParseError(f"precoder power {power:.12g} exceeds budget {m}")
        if self.correlation.tx.shape[0] != m:
            raise ScenarioParseError("tx correlation size does not match antenna count")
        self.correlation.validate()

    @property
    def input_covariance(self) -> np.ndarray:
        return self.precoder @ self.precoder.conj().T


@dataclass(eq=False)
class Scenario:
    """Receiver plus user and interferer terminal profiles."""

    rx_antennas: int
    users: list[TerminalProfile]
    interferers: list[TerminalProfile] = field(default_factory=list)

    def validate(self) -> None:
        if self.rx_antennas < 1:
            raise ScenarioParseError("receiver needs at least one antenna")
        if not self.users:
            raise ScenarioParseError("scenario needs at least one user")
        for term in self.terminals:
            term.validate()
            if term.correlation.rx.shape[0] != self.rx_antennas:
                raise ScenarioParseError("rx correlation size does not match receiver antennas")

    @property
    def terminals(self) -> list[TerminalProfile]:
        return list(self.users) + list(self.interferers)

    def beta(self, term: TerminalProfile) -> float:
        """Receive-to-transmit antenna ratio N / M of one terminal."""
        return self.rx_antennas / term.antennas

    def is_uncorrelated(self, tol: float = 1e-12) -> bool:
        n = self.rx_antennas
        for term in self.terminals:
            if np.abs(term.correlation.tx - np.eye(term.antennas)).max() > tol:
                return False
            if np.abs(term.correlation.rx - np.eye(n)).max() > tol:
                return False
        return True


@dataclass(eq=False)
class ChannelRealization:
    """One draw of all channel matrices, reproducible from its seed."""

    user_channels: list[np.ndarray]
    interferer_channels: list[np.ndarray]
    seed: int


# ---------------------------------------------------------------------------
# Correlation synthesis
# ---------------------------------------------------------------------------

def _azimuth_entry(params: AzimuthSpectrumParams, offset: int) -> complex:
    """Correlation between array elements ``offset`` positions apart.

    One adaptive quadrature per real/imaginary part over the azimuth angle;
    the overall scale is irrelevant because the matrix is re-normalized.
    """
    d, theta, delta = params.antenna_spacing, params.mean_angle, params.angle_spread
    norm = 1.0 / (2.0 * math.pi * delta**2)

    def weight(phi):
        return norm * np.exp(-((phi - theta) ** 2) / (2.0 * delta**2))

    def re_part(phi):
        return weight(phi) * np.cos(2.0 * math.pi * d * offset * np.sin(phi))

    def im_part(phi):
        return weight(phi) * np.sin(2.0 * math.pi * d * offset * np.sin(phi))

    out = 0.0 + 0.0j
    for part, fn in (("real", re_part), ("imag", im_part)):
        val, abserr = quad(fn, -math.pi, math.pi, epsabs=1e-13, epsrel=1e-12, limit=400)
        if abserr > 1e-9:
            raise NumericalError(
                f"azimuth-spectrum quadrature did not converge for entry ({offset}, 0) "
                f"({part} part, error {abserr:.2e})"
            )
        out += val if part == "real" else 1j * val
    return out


def synthesize_correlation(params: AzimuthSpectrumParams, antennas: int) -> np.ndarray:
    """Transmit correlation matrix of a uniform linear array under a Gaussian
    power azimuth spectrum, re-normalized to trace M.

    The matrix is Hermitian Toeplitz (entries depend only on the element
    offset), so one quadrature per offset suffices.  Slightly negative
    eigenvalues from rounding are clipped at 0.
    """
    params.validate()
    if antennas < 1:
        raise ScenarioParseError("antenna count must be positive")
    first_col = np.array([_azimuth_entry(params, k) for k in range(antennas)])
    mat = toeplitz(first_col, first_col.conj())
    mat = mat * (antennas / np.trace(mat).real)
    w = np.linalg.eigvalsh(hermitize(mat))
    if w[0] < -1e-10:
        raise NumericalError(f"synthesized correlation has eigenvalue {w[0]:.3e} < -1e-10")
    if w[0] < 0.0:
        wc, v = np.linalg.eigh(hermitize(mat))
        mat = (v * np.clip(wc, 0.0, None)) @ v.conj().T
    return mat


# ---------------------------------------------------------------------------
# Channel sampling
# ---------------------------------------------------------------------------

class RealizationSampler:
    """Kronecker-model channel sampler with precomputed matrix square roots.

    Draw order within one realization is fixed: users first, then
    interferers, one ``N x M`` complex-normal block each.
    """

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self._factors = []
        for term in scenario.terminals:
            scale = math.sqrt(term.snr / term.antennas)
            self._factors.append(
                (scale, psd_sqrt(term.correlation.rx), psd_sqrt(term.correlation.tx))
            )

    def sample(self, seed: int, index: int = 0) -> ChannelRealization:
        """Realization for stream ``(seed, index)``; distinct indices are independent."""
        rng = make_generator(derive_seed(seed, index), stream=0)
        n = self.scenario.rx_antennas
        channels = []
        for (scale, sqrt_rx, sqrt_tx), term in zip(self._factors, self.scenario.terminals):
            w = complex_normal(rng, (n, term.antennas))
            channels.append(scale * (sqrt_rx @ w @ sqrt_tx))
        k = len(self.scenario.users)
        return ChannelRealization(
            user_channels=channels[:k], interferer_channels=channels[k:], seed=seed
        )


def sample_realization(scenario: Scenario, seed: int) -> ChannelRealization:
    """One Kronecker channel draw, deterministic in (scenario, seed)."""
    return RealizationSampler(scenario).sample(seed)


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

def _parse_correlation(doc, antennas: int, rx_antennas: int, where: str) -> CorrelationPair:
    from .matrixio import read_matrix  # deferred: matrixio has no further deps

    doc = doc or {"kind": "identity"}
    kind = doc.get("kind", "identity")
    if kind == "identity":
        tx = np.eye(antennas, dtype=complex)
    elif kind == "azimuth":
        try:
            params = AzimuthSpectrumParams(
                antenna_spacing=float(doc["d_lambda"]),
                mean_angle=math.radians(float(doc["theta_deg"])),
                angle_spread=math.radians(float(doc["delta_deg"])),
            )
        except KeyError as exc:
            raise ScenarioParseError(
                f"{where}: azimuth correlation needs d_lambda, theta_deg, delta_deg"
            ) from exc
        tx = synthesize_correlation(params, antennas)
    else:
        raise ScenarioParseError(f"{where}: unknown correlation kind {kind!r}")
    if "rx_file" in doc:
        rx = read_matrix(doc["rx_file"])
        if rx.shape != (rx_antennas, rx_antennas):
            raise ScenarioParseError(f"{where}: rx correlation must be {rx_antennas}x{rx_antennas}")
    else:
        rx = np.eye(rx_antennas, dtype=complex)
    return CorrelationPair(tx=tx, rx=rx)


def _parse_terminal(doc: dict, rx_antennas: int, role: str, where: str) -> TerminalProfile:
    from .matrixio import read_precoder

    try:
        antennas = int(doc["antennas"])
        snr_db = float(doc["snr_db"])
        const = constellations.by_name(str(doc.get("constellation", "gaussian")))
    except (KeyError, ValueError) as exc:
        raise ScenarioParseError(f"{where}: {exc}") from exc
    correlation = _parse_correlation(doc.get("correlation"), antennas, rx_antennas, where)
    spec = str(doc.get("precoder", "identity"))
    if spec in ("identity", "optimize"):
        precoder = np.eye(antennas, dtype=complex)
    else:
        precoder = read_precoder(spec, expect_antennas=antennas)
    profile = TerminalProfile(
        antennas=antennas,
        snr=10.0 ** (snr_db / 10.0),
        correlation=correlation,
        constellation=const,
        precoder=precoder,
        role=role,
        precoder_spec=spec,
        label=str(doc.get("label", where)),
    )
    profile.validate()
    return profile


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a scenario from its JSON document.

    Schema::

        {
          "rx_antennas": 4,
          "users": [
            {"antennas": 4, "snr_db": 10.0, "constellation": "qpsk",
             "correlation": {"kind": "identity"},
             "precoder": "identity"},
            ...
          ],
          "interferers": [ ... same fields ... ]
        }

    ``correlation.kind`` is ``identity`` or ``azimuth`` (with ``d_lambda``,
    ``theta_deg``, ``delta_deg``); an optional ``rx_file`` entry loads a
    receive-side PSD matrix.  ``precoder`` is ``identity``, ``optimize`` or a
    path to a precoder matrix file.
    """
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario document must be a JSON object")
    try:
        rx_antennas = int(doc["rx_antennas"])
    except (KeyError, ValueError) as exc:
        raise ScenarioParseError(f"rx_antennas: {exc}") from exc
    users_doc = doc.get("users")
    if not users_doc:
        raise ScenarioParseError("scenario needs a nonempty 'users' list")
    users = [
        _parse_terminal(u, rx_antennas, ROLE_USER, f"users[{i}]") for i, u in enumerate(users_doc)
    ]
    interferers = [
        _parse_terminal(it, rx_antennas, ROLE_INTERFERER, f"interferers[{i}]")
        for i, it in enumerate(doc.get("interferers", []))
    ]
    scenario = Scenario(rx_antennas=rx_antennas, users=users, interferers=interferers)
    scenario.validate()
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(doc)
