"""Sum-rate-maximizing precoders from statistical channel knowledge.

Gaussian signaling admits the water-filling solution over the effective
channel's eigenmodes; discrete constellations use an alternating
optimization between per-eigenmode power allocation and rotation of the
effective quadratic form, both driven by the MMSE matrix (the gradient of
the mutual information) with a backtracking line search.  Either optimizer
re-solves the large-system fixed point between outer iterations, holding
the fixed-point parameters constant while the precoder moves (they sit at a
saddle point, so their implicit derivatives vanish).
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import replica, su_channel
from .channel import Scenario
from .errors import DomainError
from .linalg import hermitize, psd_sqrt
from .rng import derive_seed

log = logging.getLogger(__name__)


@dataclass
class OptimizerParams:
    step_power: float = 0.1  # initial gradient step on the eigen-powers
    step_form: float = 0.1  # initial gradient step on the quadratic form
    backtrack_shrink: float = 0.5
    sufficient_increase: float = 1e-4
    outer_tol: float = 1e-6
    max_outer: int = 50
    inner_rounds: int = 6
    min_step: float = 1e-9
    mi_samples: int = 2048
    mmse_samples: int = 2048

    def validate(self):
        if self.step_power <= 0 or self.step_form <= 0:
            raise ValueError("step sizes must be positive")
        if not 0.0 < self.backtrack_shrink < 1.0:
            raise ValueError("backtracking shrink must lie in (0, 1)")


@dataclass(eq=False)
class PrecoderOptState:
    """Optimizer result: precoder, its decomposition, and the objective trace."""

    precoder: np.ndarray
    quadratic_form: np.ndarray  # A G G^H A^H at the final effective channel
    eigen_powers: np.ndarray  # eigenvalues of G G^H, descending
    eigen_vectors: np.ndarray  # matching eigenvectors
    objective: float  # user's single-user MI term, nats
    iterations: int
    converged: bool
    stalled: bool = False
    objective_trace: list[tuple[int, float]] = field(default_factory=list)
    # trace entries are (outer_iteration, objective); within one outer
    # iteration accepted steps are monotone nondecreasing by construction


def waterfill(channel_matrix, power_budget: float) -> np.ndarray:
    """Water-filling input covariance for ln det(I + A P A^H) under trace(P) <= budget.

    Power pours over the eigenvalues of A^H A (squared singular values of A).
    The water level is located by bisection and then snapped to the exact
    KKT value of the identified active set, so active modes share the level
    to machine precision.  An all-zero channel yields the uniform allocation
    (any basis is equivalent) and is logged as degenerate.
    """
    a = su_channel._as_matrix(channel_matrix)
    if power_budget <= 0:
        raise DomainError("power budget must be positive")
    m = a.shape[1]
    _, sing, vh = np.linalg.svd(a)
    lam = np.zeros(m)
    lam[: sing.size] = sing**2
    v = vh.conj().T
    if lam.max(initial=0.0) <= 1e-300:
        log.warning("water-filling over an all-zero channel; returning uniform allocation")
        return np.eye(m, dtype=complex) * (power_budget / m)

    positive = lam > 0
    inv_lam = np.where(positive, 1.0 / np.where(positive, lam, 1.0), np.inf)

    def total(level):
        return float(np.sum(np.clip(level - inv_lam, 0.0, None)))

    lo, hi = 0.0, float(np.min(inv_lam)) + power_budget
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) > power_budget:
            hi = mid
        else:
            lo = mid
    active = inv_lam < hi
    level = (power_budget + float(np.sum(inv_lam[active]))) / int(np.count_nonzero(active))
    powers = np.where(active, np.clip(level - inv_lam, 0.0, None), 0.0)
    return hermitize((v * powers) @ v.conj().T)


def project_to_spectrum(matrix: np.ndarray, spectrum) -> np.ndarray:
    """Nearest Hermitian matrix with the prescribed eigenvalues.

    Keeps the eigenvectors of the (Hermitized) input and replaces its
    spectrum, matching both in ascending order.
    """
    w, vecs = np.linalg.eigh(hermitize(np.asarray(matrix, dtype=complex)))
    target = np.sort(np.asarray(spectrum, dtype=float))
    if target.size != w.size:
        raise ValueError("spectrum length must match the matrix dimension")
    return hermitize((vecs * target) @ vecs.conj().T)


# ---------------------------------------------------------------------------
# Objective / gradient evaluation with exact fast paths
# ---------------------------------------------------------------------------

def _is_diagonal(mat, tol=1e-12):
    return np.abs(mat - np.diag(np.diag(mat))).max() <= tol


def _objective(a, constellation, g, mi_samples, seed) -> float:
    if _is_diagonal(a) and _is_diagonal(g):
        kernel = su_channel.scalar_kernel(constellation)
        return float(
            sum(
                kernel(abs(gm), abs(am)).mi
                for gm, am in zip(np.diag(g), np.diag(a))
            )
        )
    return su_channel.discrete_mi_exhaustive(
        a, constellation, g, noise_samples=mi_samples, seed=seed
    )


def _mmse_of_input(b, constellation, mmse_samples, seed) -> np.ndarray:
    """MMSE matrix of the unit-variance data vector behind effective matrix b."""
    if _is_diagonal(b):
        mmse = su_channel.scalar_mmse(constellation)
        return np.diag([mmse(1.0, abs(bm)) for bm in np.diag(b)]).astype(complex)
    return su_channel.discrete_mmse_matrix(
        b, constellation, None, z_samples=mmse_samples, seed=seed
    ).matrix


def _mmse_of_x(a, constellation, g, mmse_samples, seed) -> np.ndarray:
    if _is_diagonal(a) and _is_diagonal(g):
        mmse = su_channel.scalar_mmse(constellation)
        return np.diag(
            [mmse(abs(gm), abs(am)) for gm, am in zip(np.diag(g), np.diag(a))]
        ).astype(complex)
    return su_channel.discrete_mmse_matrix(
        a, constellation, g, z_samples=mmse_samples, seed=seed
    ).matrix


# ---------------------------------------------------------------------------
# Gaussian inputs: statistical water-filling
# ---------------------------------------------------------------------------

def _replica_state(scenario, warm, crn_seed, tol):
    if warm is not None:
        state = replica.solve_fixed_point(scenario, init=warm, tol=tol, crn_seed=crn_seed)
        if state.converged:
            return state
    report = replica.solve(scenario, tol=tol, crn_seed=crn_seed)
    return report.state


def optimize_gaussian(
    scenario: Scenario,
    user_index: int,
    params: OptimizerParams | None = None,
    crn_seed: int = 0,
    solver_tol: float = 1e-10,
) -> PrecoderOptState:
    """Alternate the fixed-point solve with water-filling on the user's
    effective channel until the precoder stops moving."""
    params = params or OptimizerParams()
    params.validate()
    scenario = copy.deepcopy(scenario)
    profile = scenario.users[user_index]
    if profile.constellation.is_discrete:
        raise DomainError("optimize_gaussian requires Gaussian signaling; use optimize_discrete")
    m = profile.antennas
    sqrt_t = psd_sqrt(profile.correlation.tx)
    trace: list[tuple[int, float]] = []
    warm = None
    converged = False
    outer = 0
    a = np.zeros((m, m), dtype=complex)
    for outer in range(1, params.max_outer + 1):
        state = _replica_state(scenario, warm, crn_seed, solver_tol)
        warm = state
        a = math.sqrt(profile.snr * state.xi_users[user_index]) * sqrt_t
        p_star = waterfill(a, float(m)) if profile.snr > 0 else np.eye(m, dtype=complex)
        g_new = psd_sqrt(p_star)
        delta = float(np.linalg.norm(g_new - profile.precoder))
        profile.precoder = g_new
        trace.append((outer, su_channel.gaussian_mi(a, p_star)))
        if delta < params.outer_tol:
            converged = True
            break
    p_final = profile.precoder @ profile.precoder.conj().T
    powers, vecs = np.linalg.eigh(hermitize(p_final))
    order = np.argsort(powers)[::-1]
    return PrecoderOptState(
        precoder=profile.precoder,
        quadratic_form=hermitize(a @ p_final @ a.conj().T),
        eigen_powers=powers[order],
        eigen_vectors=vecs[:, order],
        objective=trace[-1][1],
        iterations=outer,
        converged=converged,
        objective_trace=trace,
    )


# ---------------------------------------------------------------------------
# Discrete inputs: alternating power / rotation optimization
# ---------------------------------------------------------------------------

class _SvdPrecoder:
    """Precoder tracked through its SVD W diag(sqrt(g)) V^H.

    The power step moves only g (both rotations frozen); the rotation step
    replaces the whole factorization from the projected quadratic form.
    """

    def __init__(self, g_matrix: np.ndarray):
        self.set_matrix(g_matrix)

    def set_matrix(self, g_matrix: np.ndarray):
        w, sing, vh = np.linalg.svd(np.asarray(g_matrix, dtype=complex))
        self.left = w
        self.powers = sing**2
        self.right_h = vh
        self.matrix = g_matrix

    def with_powers(self, powers: np.ndarray) -> np.ndarray:
        return (self.left * np.sqrt(np.clip(powers, 0.0, None))) @ self.right_h


def _renormalize(powers: np.ndarray, budget: float) -> np.ndarray:
    powers = np.clip(powers, 0.0, None)
    total = powers.sum()
    if total <= 0:
        return np.full_like(powers, budget / powers.size)
    return powers * (budget / total)


def optimize_discrete(
    scenario: Scenario,
    user_index: int,
    params: OptimizerParams | None = None,
    crn_seed: int = 0,
    solver_tol: float = 1e-10,
) -> PrecoderOptState:
    """Alternating per-eigenmode power allocation and quadratic-form rotation.

    All Monte-Carlo objective and gradient evaluations reuse fixed sampling
    seeds (common random numbers), so line-search comparisons are coherent
    and the accepted objective sequence within an outer iteration is
    monotone nondecreasing.
    """
    params = params or OptimizerParams()
    params.validate()
    scenario = copy.deepcopy(scenario)
    profile = scenario.users[user_index]
    if not profile.constellation.is_discrete:
        raise DomainError("optimize_discrete requires a discrete constellation")
    const = profile.constellation
    m = profile.antennas
    budget = float(m)
    obj_seed = derive_seed(crn_seed, 101, user_index)
    grad_seed = derive_seed(crn_seed, 102, user_index)

    sqrt_t = psd_sqrt(profile.correlation.tx)
    t_eigs, t_vecs = np.linalg.eigh(hermitize(profile.correlation.tx))
    order = np.argsort(t_eigs)[::-1]
    t_vecs = t_vecs[:, order]

    if m == 1:
        profile.precoder = np.eye(1, dtype=complex)
        state = _replica_state(scenario, None, crn_seed, solver_tol)
        a = math.sqrt(profile.snr * state.xi_users[user_index]) * sqrt_t
        obj = _objective(a, const, profile.precoder, params.mi_samples, obj_seed)
        return PrecoderOptState(
            precoder=profile.precoder,
            quadratic_form=a @ a.conj().T,
            eigen_powers=np.ones(1),
            eigen_vectors=np.eye(1, dtype=complex),
            objective=obj,
            iterations=1,
            converged=True,
            objective_trace=[(1, obj)],
        )

    # stated starting point: uniform eigen-power fractions along the
    # transmit-correlation eigenbasis
    g_powers = np.full(m, 1.0 / m)
    tracked = _SvdPrecoder((t_vecs * np.sqrt(g_powers)) @ t_vecs.conj().T)
    profile.precoder = tracked.matrix

    trace: list[tuple[int, float]] = []
    warm = None
    converged = False
    stalled = False
    outer = 0
    a = np.zeros((m, m), dtype=complex)
    quadratic_form = np.zeros((m, m), dtype=complex)

    for outer in range(1, params.max_outer + 1):
        state = _replica_state(scenario, warm, crn_seed, solver_tol)
        warm = state
        c = math.sqrt(profile.snr * state.xi_users[user_index])
        a = c * sqrt_t
        a_eigs = c * np.sqrt(np.clip(t_eigs[order], 0.0, None))
        g_before = tracked.matrix.copy()
        obj = _objective(a, const, tracked.matrix, params.mi_samples, obj_seed)
        trace.append((outer, obj))
        stalled_rounds = 0

        for _ in range(params.inner_rounds):
            moved = False

            # (a) per-eigenmode power step in the eigenbasis of G G^H
            e_x = _mmse_of_x(a, const, tracked.matrix, params.mmse_samples, grad_seed)
            basis = tracked.left
            diag_term = tracked.powers * np.real(
                np.diag(basis.conj().T @ e_x @ basis)
            )
            direction = diag_term - diag_term.mean()
            norm_sq = float(direction @ direction)
            if norm_sq > 1e-24:
                step = params.step_power
                while step >= params.min_step:
                    g_try = _renormalize(tracked.powers + step * direction, budget)
                    cand = tracked.with_powers(g_try)
                    obj_try = _objective(a, const, cand, params.mi_samples, obj_seed)
                    if obj_try >= obj + params.sufficient_increase * step * norm_sq:
                        tracked.set_matrix(cand)
                        profile.precoder = cand
                        obj = obj_try
                        trace.append((outer, obj))
                        moved = True
                        break
                    step *= params.backtrack_shrink

            # (b) rotation of the quadratic form under the prescribed spectrum
            b = a @ tracked.matrix
            gram = hermitize(b.conj().T @ b)
            e_s = _mmse_of_input(b, const, params.mmse_samples, derive_seed(grad_seed, 1))
            prescribed = np.sort(tracked.powers)[::-1] * np.sort(a_eigs**2)[::-1]
            grad_norm_sq = float(np.real(np.sum(e_s * e_s.conj())))
            step = params.step_form
            while step >= params.min_step:
                projected = project_to_spectrum(gram + step * e_s, prescribed)
                b_new = psd_sqrt(projected)
                cand = np.linalg.pinv(a, rcond=1e-12) @ b_new
                power = float(np.trace(cand @ cand.conj().T).real)
                if power > 0:
                    cand = cand * math.sqrt(budget / power)
                obj_try = _objective(a, const, cand, params.mi_samples, obj_seed)
                if obj_try >= obj + params.sufficient_increase * step * grad_norm_sq:
                    tracked.set_matrix(cand)
                    profile.precoder = cand
                    obj = obj_try
                    trace.append((outer, obj))
                    moved = True
                    break
                step *= params.backtrack_shrink

            if not moved:
                stalled_rounds += 1
                break

        quadratic_form = hermitize(
            a @ tracked.matrix @ tracked.matrix.conj().T @ a.conj().T
        )
        delta = float(np.linalg.norm(tracked.matrix - g_before))
        if delta < params.outer_tol:
            converged = True
            break
        stalled = stalled_rounds > 0 and delta < 10 * params.outer_tol

    powers, vecs = np.linalg.eigh(hermitize(tracked.matrix @ tracked.matrix.conj().T))
    order = np.argsort(powers)[::-1]
    return PrecoderOptState(
        precoder=tracked.matrix,
        quadratic_form=quadratic_form,
        eigen_powers=powers[order],
        eigen_vectors=vecs[:, order],
        objective=trace[-1][1],
        iterations=outer,
        converged=converged,
        stalled=stalled,
        objective_trace=trace,
    )


def optimize_terminal(scenario: Scenario, user_index: int, **kwargs) -> PrecoderOptState:
    """Dispatch on the user's constellation."""
    if scenario.users[user_index].constellation.is_discrete:
        return optimize_discrete(scenario, user_index, **kwargs)
    return optimize_gaussian(scenario, user_index, **kwargs)
