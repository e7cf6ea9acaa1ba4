"""Large-system fixed point and asymptotic sum-rate of the interfered MIMO-MAC.

The solver iterates six coupled parameter families: load parameters
(xi) obtained from resolvent traces over the receive correlations, and
noise-enhancement parameters (eps) obtained from single-user MMSE matrices at
the effective channels sqrt(snr * xi) * T^{1/2}.  Interferers appear twice:
once inside the joint system and once in a self-contained "barred" system
that describes the entropy discarded when interference is treated as noise.
The normalized sum-rate is the difference h_s - h_i of the two assembled
entropy rates.

Multiple fixed points can coexist near constellation-induced phase
transitions; :func:`select_solution` keeps the candidate minimizing each
entropy term, and :func:`solve` sweeps a bracket of initializations to find
the coexisting branches.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import su_channel
from .channel import Scenario, TerminalProfile
from .errors import DomainError, NumericalError
from .linalg import hermitize, logdet_hermitian, psd_sqrt
from .rng import derive_seed

log = logging.getLogger(__name__)

#: Monte-Carlo sample counts for terminals that need sampled MMSE/MI values
#: (discrete constellations behind non-diagonal effective channels).  Fixed
#: seeds make the fixed-point map deterministic; see the solver docstring.
MMSE_SAMPLES = 4096
MI_SAMPLES = 4096


@dataclass(eq=False)
class ReplicaState:
    """Fixed-point parameters, one entry per user / interferer."""

    xi_users: np.ndarray
    eps_users: np.ndarray
    xi_interf: np.ndarray
    eps_interf: np.ndarray
    xi_bar: np.ndarray
    eps_bar: np.ndarray
    converged: bool = False
    iterations: int = 0
    residual: float = math.inf

    def copy(self) -> "ReplicaState":
        return ReplicaState(
            self.xi_users.copy(),
            self.eps_users.copy(),
            self.xi_interf.copy(),
            self.eps_interf.copy(),
            self.xi_bar.copy(),
            self.eps_bar.copy(),
            self.converged,
            self.iterations,
            self.residual,
        )

    def distance(self, other: "ReplicaState") -> float:
        parts = []
        for a, b in (
            (self.eps_users, other.eps_users),
            (self.eps_interf, other.eps_interf),
            (self.eps_bar, other.eps_bar),
        ):
            if a.size:
                parts.append(np.max(np.abs(a - b) / (1.0 + np.abs(b))))
        return max(parts, default=0.0)


@dataclass(eq=False)
class SumRateReport:
    """Assembled entropy rates and normalized sum-rate, all in nats."""

    h_s: float
    h_i: float
    sum_rate: float  # nats per receive antenna
    per_user_mi: list[float]
    per_interferer_mi: list[float]
    per_interferer_mi_bar: list[float]
    state: ReplicaState
    converged: bool
    iterations: int
    residual: float

    @property
    def sum_rate_bits(self) -> float:
        return self.sum_rate / math.log(2.0)


# ---------------------------------------------------------------------------
# Per-terminal evaluation cache
# ---------------------------------------------------------------------------

class _TerminalOps:
    """Precomputed quantities for one terminal's eps/MI evaluations.

    Gaussian terminals reduce to the eigenvalues of T^{1/2} P T^{1/2}, making
    each iteration O(M).  Discrete terminals use scalar kernels per stream
    when both T and the precoder are diagonal (the bank of parallel channels)
    and otherwise fall back to exhaustive posterior sums with fixed sampling
    seeds, so that the fixed-point map stays deterministic.
    """

    def __init__(self, term: TerminalProfile, crn_seed: int):
        self.term = term
        self.snr = term.snr
        self.antennas = term.antennas
        self.crn_seed = crn_seed
        self.t_matrix = term.correlation.tx
        self.kind = term.constellation.kind
        self._sqrt_t = None

        if self.kind == "gaussian":
            p = term.input_covariance
            k = hermitize(psd_sqrt(self.t_matrix) @ p @ psd_sqrt(self.t_matrix))
            self.gauss_eigs = np.clip(np.linalg.eigvalsh(k), 0.0, None)
            self.mode = "gaussian"
            return

        diag_t = np.abs(self.t_matrix - np.diag(np.diag(self.t_matrix))).max() < 1e-12
        g = term.precoder
        diag_g = np.abs(g - np.diag(np.diag(g))).max() < 1e-12
        if diag_t and diag_g:
            self.mode = "parallel"
            streams = np.column_stack([np.abs(np.diag(g)), np.real(np.diag(self.t_matrix))])
            uniq, counts = np.unique(streams, axis=0, return_counts=True)
            self.streams = [(row[0], row[1], cnt) for row, cnt in zip(uniq, counts)]
            self.kernel = su_channel.scalar_kernel(self.kind)
            self.kernel_mmse = su_channel.scalar_mmse(self.kind)
        else:
            self.mode = "sampled"
            self._sqrt_t = psd_sqrt(self.t_matrix)

    def effective_channel(self, xi: float) -> np.ndarray:
        if self._sqrt_t is None:
            self._sqrt_t = psd_sqrt(self.t_matrix)
        return math.sqrt(self.snr * xi) * self._sqrt_t

    def eps(self, xi: float) -> float:
        """snr / M * trace(E T) at the effective channel sqrt(snr*xi) T^{1/2}."""
        if self.snr == 0.0:
            return 0.0
        c2 = self.snr * xi
        if self.mode == "gaussian":
            lam = self.gauss_eigs
            return self.snr / self.antennas * float(np.sum(lam / (1.0 + c2 * lam)))
        if self.mode == "parallel":
            total = sum(
                cnt * self.kernel_mmse(g, math.sqrt(c2 * t)) * t for g, t, cnt in self.streams
            )
            return self.snr / self.antennas * total
        mmse = su_channel.discrete_mmse_matrix(
            self.effective_channel(xi),
            self.term.constellation,
            self.term.precoder,
            z_samples=MMSE_SAMPLES,
            seed=self.crn_seed,
        )
        return self.snr / self.antennas * mmse.trace_against(self.t_matrix)

    def mi(self, xi: float) -> float:
        """I(z; x) in nats at the effective channel sqrt(snr*xi) T^{1/2}."""
        if self.snr == 0.0 or xi == 0.0:
            return 0.0
        c2 = self.snr * xi
        if self.mode == "gaussian":
            return float(np.sum(np.log1p(c2 * self.gauss_eigs)))
        if self.mode == "parallel":
            return sum(cnt * self.kernel(g, math.sqrt(c2 * t)).mi for g, t, cnt in self.streams)
        return su_channel.discrete_mi_exhaustive(
            self.effective_channel(xi),
            self.term.constellation,
            self.term.precoder,
            noise_samples=MI_SAMPLES,
            seed=derive_seed(self.crn_seed, 1),
        )


def _terminal_ops(scenario: Scenario, crn_seed: int) -> tuple[list[_TerminalOps], list[_TerminalOps], list[_TerminalOps]]:
    users = [
        _TerminalOps(t, derive_seed(crn_seed, 0, i)) for i, t in enumerate(scenario.users)
    ]
    interf = [
        _TerminalOps(t, derive_seed(crn_seed, 1, i)) for i, t in enumerate(scenario.interferers)
    ]
    interf_bar = [
        _TerminalOps(t, derive_seed(crn_seed, 2, i)) for i, t in enumerate(scenario.interferers)
    ]
    return users, interf, interf_bar


# ---------------------------------------------------------------------------
# Resolvent traces
# ---------------------------------------------------------------------------

class _Resolvent:
    """xi updates: trace of each terminal's receive correlation against the
    inverse of I + sum(eps * R); specializes to scalars when every R is the
    identity."""

    def __init__(self, n: int, rx_mats: list[np.ndarray], antennas: list[int]):
        self.n = n
        self.antennas = antennas
        self.identity = all(np.abs(r - np.eye(n)).max() < 1e-12 for r in rx_mats)
        self.rx_mats = rx_mats

    def xi(self, eps: np.ndarray) -> np.ndarray:
        if not len(self.antennas):
            return np.zeros(0)
        if self.identity:
            denom = 1.0 + float(np.sum(eps))
            return np.array([self.n / m / denom for m in self.antennas])
        s = np.eye(self.n, dtype=complex)
        for e, r in zip(eps, self.rx_mats):
            s = s + e * r
        sinv = np.linalg.inv(s)
        return np.array(
            [np.trace(r @ sinv).real / m for r, m in zip(self.rx_mats, self.antennas)]
        )

    def logdet(self, eps: np.ndarray) -> float:
        if self.identity:
            return self.n * math.log1p(float(np.sum(eps)))
        s = np.eye(self.n, dtype=complex)
        for e, r in zip(eps, self.rx_mats):
            s = s + e * r
        return logdet_hermitian(s)


def _build_resolvents(scenario: Scenario) -> tuple[_Resolvent, _Resolvent]:
    n = scenario.rx_antennas
    joint = _Resolvent(
        n,
        [t.correlation.rx for t in scenario.terminals],
        [t.antennas for t in scenario.terminals],
    )
    barred = _Resolvent(
        n,
        [t.correlation.rx for t in scenario.interferers],
        [t.antennas for t in scenario.interferers],
    )
    return joint, barred


# ---------------------------------------------------------------------------
# Fixed-point iteration
# ---------------------------------------------------------------------------

def default_initializations(scenario: Scenario) -> list[ReplicaState]:
    """Bracketing sweep: eps = 0, eps = snr, and 8 log-spaced fractions.

    Coexisting fixed points near a phase transition are bracketed by the
    zero (low-coupling) and full-power initializations; the intermediate
    points catch branches with small basins.
    """
    k, l = len(scenario.users), len(scenario.interferers)
    rho_u = np.array([t.snr for t in scenario.users])
    rho_i = np.array([t.snr for t in scenario.interferers])
    fractions = [0.0] + list(np.logspace(-3.0, 0.0, 10))[1:-1] + [1.0]
    states = []
    for f in fractions:
        states.append(
            ReplicaState(
                xi_users=np.zeros(k),
                eps_users=f * rho_u,
                xi_interf=np.zeros(l),
                eps_interf=f * rho_i,
                xi_bar=np.zeros(l),
                eps_bar=f * rho_i,
            )
        )
    return states


def _init_state(scenario: Scenario, init) -> ReplicaState:
    if isinstance(init, ReplicaState):
        return init.copy()
    presets = {"zero": 0.0, "full": 1.0}
    if isinstance(init, str):
        if init not in presets:
            raise ValueError(f"unknown initialization preset {init!r}")
        fraction = presets[init]
    else:
        fraction = float(init)
    k, l = len(scenario.users), len(scenario.interferers)
    return ReplicaState(
        xi_users=np.zeros(k),
        eps_users=fraction * np.array([t.snr for t in scenario.users]),
        xi_interf=np.zeros(l),
        eps_interf=fraction * np.array([t.snr for t in scenario.interferers]),
        xi_bar=np.zeros(l),
        eps_bar=fraction * np.array([t.snr for t in scenario.interferers]),
    )


def _iterate(
    scenario: Scenario,
    state: ReplicaState,
    damping: float,
    tol: float,
    max_iter: int,
    crn_seed: int,
) -> ReplicaState:
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    users, interf, interf_bar = _terminal_ops(scenario, crn_seed)
    joint, barred = _build_resolvents(scenario)
    k, l = len(users), len(interf)

    eps_joint = np.concatenate([state.eps_users, state.eps_interf]).astype(float)
    eps_bar = state.eps_bar.astype(float)
    xi_joint = np.zeros(k + l)
    xi_bar = np.zeros(l)
    residual = math.inf

    for iteration in range(1, max_iter + 1):
        xi_joint_new = joint.xi(eps_joint)
        xi_bar_new = barred.xi(eps_bar)

        eps_joint_new = np.array(
            [ops.eps(x) for ops, x in zip(users + interf, xi_joint_new)]
        )
        eps_bar_new = np.array([ops.eps(x) for ops, x in zip(interf_bar, xi_bar_new)])

        if not (np.all(np.isfinite(eps_joint_new)) and np.all(np.isfinite(eps_bar_new))):
            raise NumericalError("fixed-point iteration produced a non-finite parameter")

        deltas = [np.max(np.abs(eps_joint_new - eps_joint) / (1.0 + np.abs(eps_joint)), initial=0.0)]
        if l:
            deltas.append(np.max(np.abs(eps_bar_new - eps_bar) / (1.0 + np.abs(eps_bar))))
        if iteration > 1:
            deltas.append(np.max(np.abs(xi_joint_new - xi_joint) / (1.0 + np.abs(xi_joint)), initial=0.0))
            if l:
                deltas.append(np.max(np.abs(xi_bar_new - xi_bar) / (1.0 + np.abs(xi_bar))))
        residual = float(max(deltas))

        xi_joint, xi_bar = xi_joint_new, xi_bar_new
        eps_joint = eps_joint + damping * (eps_joint_new - eps_joint)
        eps_bar = eps_bar + damping * (eps_bar_new - eps_bar)

        if residual < tol:
            return ReplicaState(
                xi_users=xi_joint[:k],
                eps_users=eps_joint[:k],
                xi_interf=xi_joint[k:],
                eps_interf=eps_joint[k:],
                xi_bar=xi_bar,
                eps_bar=eps_bar,
                converged=True,
                iterations=iteration,
                residual=residual,
            )

    return ReplicaState(
        xi_users=xi_joint[:k],
        eps_users=eps_joint[:k],
        xi_interf=xi_joint[k:],
        eps_interf=eps_joint[k:],
        xi_bar=xi_bar,
        eps_bar=eps_bar,
        converged=False,
        iterations=max_iter,
        residual=residual,
    )


def solve_fixed_point(
    scenario: Scenario,
    init="zero",
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    crn_seed: int = 0,
) -> ReplicaState:
    """Damped Picard iteration of the coupled fixed-point system.

    ``init`` is a :class:`ReplicaState`, the name of a preset (``"zero"`` or
    ``"full"``) or a fraction of the per-terminal SNR.  A state that fails to
    converge within ``max_iter`` is returned flagged, not raised.
    """
    scenario.validate()
    return _iterate(scenario, _init_state(scenario, init), damping, tol, max_iter, crn_seed)


def solve_fixed_point_uncorrelated(
    scenario: Scenario,
    init="zero",
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    crn_seed: int = 0,
) -> ReplicaState:
    """Fixed point with scalar resolvents, valid when all correlations are identity."""
    scenario.validate()
    if not scenario.is_uncorrelated():
        raise DomainError("uncorrelated solver requires identity correlation matrices")
    return _iterate(scenario, _init_state(scenario, init), damping, tol, max_iter, crn_seed)


# ---------------------------------------------------------------------------
# Entropy assembly and solution selection
# ---------------------------------------------------------------------------

def _entropy_signal(scenario, state, users_ops, interf_ops, joint) -> tuple[float, list[float], list[float]]:
    n = scenario.rx_antennas
    mi_users = [ops.mi(x) for ops, x in zip(users_ops, state.xi_users)]
    mi_interf = [ops.mi(x) for ops, x in zip(interf_ops, state.xi_interf)]
    eps_joint = np.concatenate([state.eps_users, state.eps_interf])
    h = (sum(mi_users) + sum(mi_interf) + joint.logdet(eps_joint)) / n
    for term, xi, eps in zip(
        scenario.terminals,
        np.concatenate([state.xi_users, state.xi_interf]),
        eps_joint,
    ):
        h -= xi * eps / scenario.beta(term)
    return h + 1.0 + math.log(math.pi), mi_users, mi_interf


def _entropy_interference(scenario, state, interf_bar_ops, barred) -> tuple[float, list[float]]:
    n = scenario.rx_antennas
    mi_bar = [ops.mi(x) for ops, x in zip(interf_bar_ops, state.xi_bar)]
    h = (sum(mi_bar) + barred.logdet(state.eps_bar)) / n
    for term, xi, eps in zip(scenario.interferers, state.xi_bar, state.eps_bar):
        h -= xi * eps / scenario.beta(term)
    return h + 1.0 + math.log(math.pi), mi_bar


def assemble_sum_rate(
    scenario: Scenario, state: ReplicaState, force: bool = False, crn_seed: int = 0
) -> SumRateReport:
    """Entropy rates h_s, h_i and the normalized sum-rate h_s - h_i.

    Refuses an unconverged state unless ``force`` is set.  Single-user MI
    terms reuse the same dispatch as the solver (closed form, parallel
    kernels, or exhaustive evaluation).
    """
    if not state.converged and not force:
        raise NumericalError("refusing to assemble an unconverged fixed point (pass force=True)")
    users_ops, interf_ops, interf_bar_ops = _terminal_ops(scenario, crn_seed)
    joint, barred = _build_resolvents(scenario)
    h_s, mi_users, mi_interf = _entropy_signal(scenario, state, users_ops, interf_ops, joint)
    h_i, mi_bar = _entropy_interference(scenario, state, interf_bar_ops, barred)
    return SumRateReport(
        h_s=h_s,
        h_i=h_i,
        sum_rate=h_s - h_i,
        per_user_mi=mi_users,
        per_interferer_mi=mi_interf,
        per_interferer_mi_bar=mi_bar,
        state=state,
        converged=state.converged,
        iterations=state.iterations,
        residual=state.residual,
    )


def select_solution(
    scenario: Scenario, candidates: list[ReplicaState], crn_seed: int = 0
) -> ReplicaState:
    """Among converged candidates, keep the one minimizing h_s and, for the
    self-contained barred block, the one minimizing h_i.

    Ties (equal entropies within 1e-12) break toward the smaller total eps;
    tie events are logged.
    """
    converged = [c for c in candidates if c.converged]
    if not converged:
        raise NumericalError("no converged fixed-point candidate to select from")
    users_ops, interf_ops, interf_bar_ops = _terminal_ops(scenario, crn_seed)
    joint, barred = _build_resolvents(scenario)

    def signal_key(c):
        h, _, _ = _entropy_signal(scenario, c, users_ops, interf_ops, joint)
        return h, float(np.sum(c.eps_users) + np.sum(c.eps_interf))

    def interference_key(c):
        h, _ = _entropy_interference(scenario, c, interf_bar_ops, barred)
        return h, float(np.sum(c.eps_bar))

    signal_scored = sorted(zip(map(signal_key, converged), converged), key=lambda p: p[0])
    interf_scored = sorted(zip(map(interference_key, converged), converged), key=lambda p: p[0])
    if len(signal_scored) > 1 and abs(signal_scored[0][0][0] - signal_scored[1][0][0]) < 1e-12:
        log.info("phase-coexistence tie on h_s; picking the lower-eps branch")
    if len(interf_scored) > 1 and abs(interf_scored[0][0][0] - interf_scored[1][0][0]) < 1e-12:
        log.info("phase-coexistence tie on h_i; picking the lower-eps branch")
    best_signal = signal_scored[0][1]
    best_interf = interf_scored[0][1]

    merged = best_signal.copy()
    merged.xi_bar = best_interf.xi_bar.copy()
    merged.eps_bar = best_interf.eps_bar.copy()
    merged.converged = best_signal.converged and best_interf.converged
    merged.iterations = max(best_signal.iterations, best_interf.iterations)
    merged.residual = max(best_signal.residual, best_interf.residual)
    return merged


def solve(
    scenario: Scenario,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    crn_seed: int = 0,
    initializations=None,
) -> SumRateReport:
    """Multi-initialization sweep, branch selection and sum-rate assembly."""
    scenario.validate()
    if initializations is None:
        initializations = default_initializations(scenario)
    candidates = []
    for init in initializations:
        candidates.append(_iterate(scenario, _init_state(scenario, init), damping, tol, max_iter, crn_seed))
    converged = [c for c in candidates if c.converged]
    if not converged:
        worst = min(candidates, key=lambda c: c.residual)
        log.warning("no initialization converged (best residual %.3e)", worst.residual)
        return assemble_sum_rate(scenario, worst, force=True, crn_seed=crn_seed)
    distinct: list[ReplicaState] = []
    for cand in converged:
        if all(cand.distance(other) > 100.0 * tol for other in distinct):
            distinct.append(cand)
    chosen = select_solution(scenario, distinct, crn_seed=crn_seed)
    return assemble_sum_rate(scenario, chosen, crn_seed=crn_seed)


def distinct_solutions(
    scenario: Scenario,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    crn_seed: int = 0,
) -> list[ReplicaState]:
    """All distinct converged fixed points found by the initialization sweep.

    More than one entry signals phase coexistence at this operating point.
    """
    candidates = [
        _iterate(scenario, _init_state(scenario, init), damping, tol, max_iter, crn_seed)
        for init in default_initializations(scenario)
    ]
    distinct: list[ReplicaState] = []
    for cand in candidates:
        if cand.converged and all(cand.distance(other) > 100.0 * tol for other in distinct):
            distinct.append(cand)
    return distinct
