"""Command-line harness: SNR sweeps, precoder runs, rate regions, validation.

Subcommands emit CSV only; plotting happens out of process (the README
documents a recipe per figure).  dB-to-linear conversion happens exactly
once, when a scenario file is parsed or a sweep grid point is applied.

Exit codes: 0 success, 2 scenario/precoder parse error, 3 numerical failure,
4 enumeration-guard violation.
"""

from __future__ import annotations

import argparse
import copy
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mc_oracle, precoder, replica
from .channel import Scenario, load_scenario, scenario_from_dict
from .errors import CapacityError, DomainError, MimomacError, NumericalError, ScenarioParseError
from .matrixio import write_precoder
from .rng import derive_seed

LN2 = math.log(2.0)

SWEEP_HEADER = ["snr_db", "mode", "sum_rate_bits_per_antenna", "std_error", "converged", "iterations"]
REGION_HEADER = ["sample_index", "r1_bits_per_antenna", "r2_bits_per_antenna"]
OPTIMIZE_HEADER = ["user_index", "outer_iteration", "objective_nats"]
EXTRAPOLATE_HEADER = ["antennas", "inv_antennas", "mi_nats_per_antenna", "std_error"]

COMPLETE_MARKER = "# complete"

DEFAULT_GRID = [x / 10.0 for x in range(-50, 301, 25)]  # -5..30 dB step 2.5


@dataclass
class SweepSpec:
    """SNR grid over which all terminals' power is swept jointly."""

    snr_db_grid: list[float]
    target: str = "all"  # all terminals locked to equal SNR
    mode: str = "replica"  # replica | mc | both

    def validate(self):
        if not self.snr_db_grid:
            raise ScenarioParseError("sweep grid must be nonempty")
        if any(b <= a for a, b in zip(self.snr_db_grid, self.snr_db_grid[1:])):
            raise ScenarioParseError("sweep grid must be strictly increasing")
        if self.mode not in ("replica", "mc", "both"):
            raise ScenarioParseError(f"unknown sweep mode {self.mode!r}")


@dataclass
class RateRegionSpec:
    """Two-user region scan at one SNR."""

    scenario: Scenario
    boundary_samples: int = 33
    snr_db: float | None = None
    precoding: str = "scenario"  # scenario | identity | waterfill

    def validate(self):
        if len(self.scenario.users) != 2:
            raise ScenarioParseError("rate region needs exactly 2 users")
        if self.boundary_samples < 3:
            raise ScenarioParseError("boundary_samples must be >= 3")
        for user in self.scenario.users:
            if user.constellation.is_discrete:
                raise DomainError("rate region supports Gaussian signaling only")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _write_rows(path, header, rows, complete=True):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        if complete:
            fh.write(COMPLETE_MARKER + "\n")


def _with_snr(scenario: Scenario, snr_db: float) -> Scenario:
    out = copy.deepcopy(scenario)
    for term in out.terminals:
        term.snr = 10.0 ** (snr_db / 10.0)
    return out


def _resolve_precoders(scenario: Scenario, crn_seed: int, force: str = "scenario") -> Scenario:
    """Replace 'optimize'-marked (or all, when forced) precoders by optimized ones."""
    out = copy.deepcopy(scenario)
    for idx, user in enumerate(out.users):
        wants = force == "waterfill" or (force == "scenario" and user.precoder_spec == "optimize")
        if force == "identity":
            user.precoder = np.eye(user.antennas, dtype=complex)
        elif wants:
            result = precoder.optimize_terminal(out, idx, crn_seed=derive_seed(crn_seed, 11, idx))
            user.precoder = result.precoder
    for idx, interf in enumerate(out.interferers):
        if force == "identity":
            interf.precoder = np.eye(interf.antennas, dtype=complex)
        elif interf.precoder_spec == "optimize" or force == "waterfill":
            # an interferer optimizes its own link: promote it to the single
            # user of a helper scenario with the remaining terminals fixed
            helper = copy.deepcopy(out)
            profile = helper.interferers.pop(idx)
            profile.role = "user"
            helper.users = [profile] + helper.users
            for other in helper.users[1:]:
                other.role = "interferer"
            helper.interferers.extend(helper.users[1:])
            helper.users = helper.users[:1]
            result = precoder.optimize_terminal(helper, 0, crn_seed=derive_seed(crn_seed, 13, idx))
            interf.precoder = result.precoder
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_sumrate(args) -> int:
    scenario = load_scenario(args.scenario)
    scenario = _resolve_precoders(scenario, args.seed)
    report = replica.solve(scenario, damping=args.damping, tol=args.tol, crn_seed=args.seed)
    state = report.state
    print(f"sum rate : {report.sum_rate_bits:.6f} bits/antenna  ({report.sum_rate:.6f} nats/antenna)")
    print(f"h_s      : {report.h_s:.6f} nats   h_i : {report.h_i:.6f} nats")
    print(f"converged: {report.converged}  iterations: {report.iterations}  residual: {report.residual:.3e}")
    np.set_printoptions(precision=6, suppress=True)
    print(f"xi users : {state.xi_users}   eps users : {state.eps_users}")
    if len(scenario.interferers):
        print(f"xi interf: {state.xi_interf}   eps interf: {state.eps_interf}")
        print(f"xi barred: {state.xi_bar}   eps barred: {state.eps_bar}")
    per_user = ", ".join(f"{mi:.6f}" for mi in report.per_user_mi)
    print(f"per-user MI (nats): {per_user}")
    if args.out:
        snr_db = 10.0 * math.log10(scenario.users[0].snr) if scenario.users[0].snr > 0 else -math.inf
        _write_rows(
            args.out,
            SWEEP_HEADER,
            [[snr_db, "replica", report.sum_rate_bits, None, report.converged, report.iterations]],
        )
    return 0


def _replica_sweep_point(payload):
    scenario, snr_db, damping, tol, seed = payload
    report = replica.solve(_with_snr(scenario, snr_db), damping=damping, tol=tol, crn_seed=seed)
    return [snr_db, "replica", report.sum_rate_bits, None, report.converged, report.iterations]


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    scenario = _resolve_precoders(scenario, args.seed)
    spec = SweepSpec(snr_db_grid=_parse_grid(args.snr_db), mode=args.mode)
    spec.validate()

    rows: list[list] = []
    complete = False
    try:
        if spec.mode in ("replica", "both"):
            payloads = [(scenario, db, args.damping, args.tol, args.seed) for db in spec.snr_db_grid]
            workers = mc_oracle.worker_count()
            if workers > 1 and len(payloads) > 1:
                try:
                    with ProcessPoolExecutor(max_workers=workers) as pool:
                        rows.extend(pool.map(_replica_sweep_point, payloads))
                except OSError:
                    rows.extend(map(_replica_sweep_point, payloads))
            else:
                rows.extend(map(_replica_sweep_point, payloads))
        if spec.mode in ("mc", "both"):
            for db in spec.snr_db_grid:
                est = mc_oracle.estimate_mi(
                    _with_snr(scenario, db),
                    n_realizations=args.realizations,
                    seed=derive_seed(args.seed, int(round(db * 1000))),
                )
                rows.append([db, "mc", est.value_bits, est.std_error / LN2, None, None])
        complete = True
    finally:
        _write_rows(args.out, SWEEP_HEADER, rows, complete=complete)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def region_constraints(scenario: Scenario, damping=0.5, tol=1e-10, seed=0):
    """Per-antenna MI bounds (nats) for user 1 alone, user 2 alone, and both."""
    def rate_of(users):
        sub = copy.deepcopy(scenario)
        sub.users = [sub.users[i] for i in users]
        report = replica.solve(sub, damping=damping, tol=tol, crn_seed=seed)
        return report.sum_rate

    return rate_of([0]), rate_of([1]), rate_of([0, 1])


def region_boundary(i1: float, i2: float, i12: float, samples: int):
    """Boundary of {r >= 0 : r1 <= i1, r2 <= i2, r1 + r2 <= i12}, sampled in r1."""
    r1 = np.linspace(0.0, i1, samples)
    r2 = np.minimum(i2, i12 - r1)
    return np.column_stack([r1, r2])


def cmd_rate_region(args) -> int:
    scenario = load_scenario(args.scenario)
    spec = RateRegionSpec(
        scenario=scenario,
        boundary_samples=args.samples,
        snr_db=args.snr_db,
        precoding=args.precoding,
    )
    spec.validate()
    if spec.snr_db is not None:
        scenario = _with_snr(scenario, spec.snr_db)
    scenario = _resolve_precoders(scenario, args.seed, force=spec.precoding)
    i1, i2, i12 = region_constraints(scenario, damping=args.damping, tol=args.tol, seed=args.seed)
    boundary = region_boundary(i1, i2, i12, spec.boundary_samples)
    rows = [[idx, r1 / LN2, r2 / LN2] for idx, (r1, r2) in enumerate(boundary)]
    _write_rows(args.out, REGION_HEADER, rows)
    print(
        f"constraints (bits/antenna): R1 <= {i1 / LN2:.4f}  R2 <= {i2 / LN2:.4f}  "
        f"R1+R2 <= {i12 / LN2:.4f}; wrote {len(rows)} boundary points to {args.out}"
    )
    return 0


def cmd_optimize(args) -> int:
    scenario = load_scenario(args.scenario)
    targets = list(range(len(scenario.users))) if args.user == "all" else [int(args.user)]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_rows = []
    work = copy.deepcopy(scenario)
    for idx in targets:
        result = precoder.optimize_terminal(work, idx, crn_seed=derive_seed(args.seed, 11, idx))
        work.users[idx].precoder = result.precoder
        path = out_dir / f"user{idx}_precoder.txt"
        write_precoder(path, result.precoder, work.users[idx].constellation.kind)
        for outer, objective in result.objective_trace:
            log_rows.append([idx, outer, objective])
        print(
            f"user {idx}: objective {result.objective:.6f} nats after {result.iterations} "
            f"outer iterations (converged={result.converged}) -> {path}"
        )
    _write_rows(out_dir / "objective_log.csv", OPTIMIZE_HEADER, log_rows)
    return 0


def scale_scenario_doc(doc: dict, antennas: int) -> dict:
    """Scale every antenna count by antennas / (first user's count), keeping ratios."""
    base = doc["users"][0]["antennas"]
    if antennas * base % base or (antennas % 1):
        raise ScenarioParseError("scaled antenna counts must stay integral")
    out = copy.deepcopy(doc)

    def scale(count):
        scaled = count * antennas / base
        if abs(scaled - round(scaled)) > 1e-9:
            raise ScenarioParseError(
                f"antenna count {count} does not scale integrally to size {antennas}"
            )
        return int(round(scaled))

    out["rx_antennas"] = scale(doc["rx_antennas"])
    for group in ("users", "interferers"):
        for term in out.get(group, []):
            if str(term.get("precoder", "identity")) not in ("identity",):
                raise ScenarioParseError("extrapolation supports identity precoders only")
            term["antennas"] = scale(term["antennas"])
    return out


def cmd_extrapolate(args) -> int:
    import json

    with open(args.scenario, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    sizes = [int(s) for s in args.sizes.split(",")]
    estimates = []
    rows = []
    for m in sizes:
        scn = scenario_from_dict(scale_scenario_doc(doc, m))
        est = mc_oracle.estimate_mi(
            scn, n_realizations=args.realizations, seed=derive_seed(args.seed, m)
        )
        estimates.append(est)
        rows.append([m, 1.0 / m, est.value, est.std_error])
    fit = mc_oracle.extrapolate(sizes, estimates)
    _write_rows(args.out, EXTRAPOLATE_HEADER, rows)
    report = replica.solve(
        scenario_from_dict(doc), damping=args.damping, tol=args.tol, crn_seed=args.seed
    )
    print(
        f"extrapolated limit: {fit.predicted_limit:.6f} nats/antenna "
        f"(fit residual {fit.fit_residual:.2e}); replica value: {report.sum_rate:.6f}"
    )
    return 0


def cmd_validate(args) -> int:
    from . import validation

    results = validation.run_acceptance(seed=args.seed, fast=args.fast)
    failures = sum(not r.passed for r in results)
    for r in results:
        print(r.line())
    print(f"{len(results) - failures}/{len(results)} criteria passed")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _parse_grid(text: str | None) -> list[float]:
    if not text:
        return list(DEFAULT_GRID)
    if ":" in text:
        start, stop, step = (float(p) for p in text.split(":"))
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(count)]
    return [float(p) for p in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mimomac",
        description="Asymptotic sum-rate analysis of interfered MIMO multiple-access channels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=0, help="root seed (64-bit)")
        p.add_argument("--tol", type=float, default=1e-10, help="fixed-point tolerance")
        p.add_argument("--damping", type=float, default=0.5, help="fixed-point damping")

    p = sub.add_parser("sumrate", help="replica sum-rate of one scenario")
    common(p)
    p.add_argument("--out", help="optional CSV output path")
    p.set_defaults(func=cmd_sumrate)

    p = sub.add_parser("sweep", help="rate vs SNR sweep")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--snr-db", help="grid as start:stop:step or comma list (default -5:30:2.5)")
    p.add_argument("--mode", choices=["replica", "mc", "both"], default="replica")
    p.add_argument("--realizations", type=int, default=2000)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rate-region", help="2-user rate region boundary")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--snr-db", type=float, default=None, help="override both users' SNR")
    p.add_argument("--samples", type=int, default=33)
    p.add_argument(
        "--precoding",
        choices=["scenario", "identity", "waterfill"],
        default="scenario",
        help="identity, water-filled, or as marked in the scenario file",
    )
    p.set_defaults(func=cmd_rate_region)

    p = sub.add_parser("optimize", help="optimize user precoders")
    common(p)
    p.add_argument("--user", default="all", help="user index or 'all'")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("extrapolate", help="finite-size study vs 1/M")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", default="4,5,6,7,8,9,10,11")
    p.add_argument("--realizations", type=int, default=2000)
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("validate", help="run the acceptance suite")
    common(p, scenario=False)
    p.add_argument("--fast", action="store_true", help="reduced sample counts (smoke test)")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except MimomacError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
