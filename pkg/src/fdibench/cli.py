"""Command-line front end.

Six subcommands cover the workbench loop: ``powerflow`` solves a case and
can meter it, ``estimate`` runs the estimator with bad-data detection over
a measurement file, ``attack`` builds a coordinated false-data injection,
``dataset`` batches labeled records from a demand series, ``analyze``
audits a normal/attack record pair, and ``dc-baseline`` measures how the
estimator treats linear-model attack vectors.

Exit codes: 0 on success, 1 on a domain failure (diverged solver,
malformed input file, infeasible attack, ...), 2 on command-line misuse.
Every subcommand that uses randomness takes a single ``--seed``
(default 7); rerunning with the same seed reproduces output bit for bit.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import analyze_pair
from .attack import AttackSpec, run_dc_baseline_trials, solve_attack
from .caseio import resolve_case
from .dataset import (
    BUNDLED_PROFILES,
    DatasetConfig,
    bundled_demand_path,
    generate_attack_records,
    generate_normal_records,
    ingest_demand_csv,
    read_records,
    synthesize_demand_profile,
    write_dataset,
)
from .errors import PairingError, WorkbenchError
from .estimation import (
    StateVariable,
    detect_bad_data,
    estimate_wls,
)
from .powerflow import (
    PowerFlowOptions,
    bus_injections,
    compute_branch_flows,
    generate_measurements,
    load_measurements,
    load_state,
    power_mismatch,
    save_measurements,
    save_state,
    solve_ac_powerflow,
    solve_dc_powerflow,
)

DEFAULT_SEED = 7


def _emit(args, doc: dict, text: str) -> None:
    print(json.dumps(doc, indent=2) if args.json else text)


def _state_doc(network, state) -> dict:
    p, q = bus_injections(network, state)
    return {
        "buses": [
            {
                "bus": b.id,
                "kind": b.kind,
                "v_mag": float(state.v_mag[i]),
                "angle_deg": float(np.degrees(state.v_ang[i])),
                "p_mw": float(p[i]),
                "q_mvar": float(q[i]),
            }
            for i, b in enumerate(network.buses)
        ],
    }


def _state_text(network, state, header: str) -> str:
    doc = _state_doc(network, state)
    lines = [header, f"{'bus':>4} {'kind':<6} {'V (p.u.)':>9} {'angle (deg)':>12} "
                     f"{'P (MW)':>10} {'Q (Mvar)':>10}"]
    for row in doc["buses"]:
        lines.append(
            f"{row['bus']:>4} {row['kind']:<6} {row['v_mag']:>9.4f} "
            f"{row['angle_deg']:>12.3f} {row['p_mw']:>10.2f} {row['q_mvar']:>10.2f}"
        )
    return "\n".join(lines)


def _cmd_powerflow(args) -> int:
    network = resolve_case(args.case)
    if args.method == "dc":
        state = solve_dc_powerflow(network)
        mismatch = None
    else:
        opts = PowerFlowOptions(tol=args.tol, max_iter=args.max_iter)
        state = solve_ac_powerflow(network, opts)
        mismatch = float(np.max(np.abs(power_mismatch(network, state))))
    flows = compute_branch_flows(network, state)
    doc = _state_doc(network, state)
    doc.update(
        case=args.case,
        method=args.method,
        max_mismatch_pu=mismatch,
        p_loss_mw=float(flows.p_loss.sum()),
        q_loss_mvar=float(flows.q_loss.sum()),
    )
    if args.state_out:
        save_state(state, args.state_out)
    if args.measurements_out:
        meas = generate_measurements(network, state, noise=args.noise, seed=args.seed)
        save_measurements(meas, args.measurements_out)
        doc["measurements_out"] = args.measurements_out
    header = (
        f"case {args.case}: {args.method} solution"
        + (f", max mismatch {mismatch:.2e} p.u." if mismatch is not None else "")
        + f", losses {doc['p_loss_mw']:.3f} MW / {doc['q_loss_mvar']:.3f} Mvar"
    )
    _emit(args, doc, _state_text(network, state, header))
    return 0


def _cmd_estimate(args) -> int:
    network = resolve_case(args.case)
    measurements = load_measurements(args.measurements)
    est = estimate_wls(network, measurements)
    report = detect_bad_data(
        network, measurements, significance=args.significance, initial_estimate=est
    )
    doc = {
        "case": args.case,
        "measurements": args.measurements,
        "iterations": est.iterations,
        "residual_j": est.residual_j,
        "k_dof": report.k_dof,
        "threshold": report.threshold,
        "passed": report.passed,
        "flagged": list(report.flagged),
    }
    doc.update(_state_doc(network, est.estimated_state))
    verdict = "clean" if report.passed else f"bad data: {', '.join(report.flagged) or 'unresolvable'}"
    text = _state_text(
        network,
        est.estimated_state,
        f"estimate from {args.measurements}: J = {est.residual_j:.4g}, "
        f"threshold = {report.threshold:.4g} (k = {report.k_dof}), {verdict}",
    )
    _emit(args, doc, text)
    return 0


def _parse_seed_variable(text: str) -> StateVariable:
    kind, _, bus = text.partition("_")
    try:
        return StateVariable(kind, int(bus))
    except (ValueError, WorkbenchError) as exc:
        raise argparse.ArgumentTypeError(
            f"must look like theta_5 or vmag_4, got {text!r}"
        ) from exc


def _cmd_attack(args) -> int:
    network = resolve_case(args.case)
    baseline = load_state(args.state) if args.state else solve_ac_powerflow(network)
    genuine = generate_measurements(network, baseline)
    spec = AttackSpec(
        center_bus=args.center_bus,
        delta=args.delta,
        seed_variable=args.seed_variable,
    )
    result = solve_attack(network, baseline, spec, genuine=genuine)
    est = estimate_wls(network, result.corrupted)
    report = detect_bad_data(
        network, result.corrupted, significance=args.significance, initial_estimate=est
    )
    doc = {
        "case": args.case,
        "center_bus": args.center_bus,
        "delta": args.delta,
        "seed_variable": str(spec.resolved_seed()),
        "area_buses": list(result.area.buses),
        "boundary_buses": list(result.area.boundary),
        "unknowns": [str(v) for v in result.unknowns],
        "iterations": result.iterations,
        "constraint_residual": result.residual,
        "manipulated": len(result.manipulated_ids),
        "manipulated_ids": list(result.manipulated_ids),
        "detector_j": est.residual_j,
        "detector_threshold": report.threshold,
        "detector_passed": report.passed,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_measurements(genuine, out / "genuine.csv")
        save_measurements(result.corrupted, out / "corrupted.csv")
        save_state(result.manipulated_state, out / "manipulated_state.json")
        (out / "attack_manifest.json").write_text(json.dumps(doc, indent=2) + "\n")
        doc["out"] = str(out)
    text = (
        f"attack on {args.case}, center bus {args.center_bus}, "
        f"seed {doc['seed_variable']} shifted by {args.delta:+g}\n"
        f"  area {list(result.area.buses)}, boundary {list(result.area.boundary)}\n"
        f"  solved in {result.iterations} iterations, "
        f"constraint residual {result.residual:.2e} p.u.\n"
        f"  manipulated {len(result.manipulated_ids)} of {len(genuine)} measurements\n"
        f"  detector: J = {est.residual_j:.3g} vs threshold {report.threshold:.4g} -> "
        f"{'silent' if report.passed else 'FLAGGED'}"
        + (f"\n  wrote genuine.csv, corrupted.csv, manipulated_state.json, "
           f"attack_manifest.json to {args.out}" if args.out else "")
    )
    _emit(args, doc, text)
    return 0


def _cmd_dataset(args) -> int:
    network = resolve_case(args.case)
    if args.points is not None:
        profile = synthesize_demand_profile(args.points, args.cadence_minutes)
    else:
        source = args.demand or "demand_3day_halfhourly"
        path = bundled_demand_path(source) if source in BUNDLED_PROFILES else Path(source)
        profile = ingest_demand_csv(path)
    config = DatasetConfig(
        seed=args.seed,
        attacks_per_point=args.attacks_per_point,
        center_bus=args.center_bus,
        significance=args.significance,
        noise=args.noise,
        records_per_file=args.records_per_file,
    )
    skip_log: list = []

    def _stream():
        yield from generate_normal_records(profile, network, config, skip_log)
        yield from generate_attack_records(profile, network, config, skip_log)

    manifest = write_dataset(
        _stream(),
        args.out,
        records_per_file=config.records_per_file,
        config=config,
        skip_log=skip_log,
        source=profile.source,
    )
    doc = manifest.to_dict()
    doc["out"] = str(args.out)
    text = (
        f"dataset written to {args.out}: {manifest.normal_records} normal + "
        f"{manifest.attack_records} attack records over {len(profile)} demand points\n"
        f"  files: {', '.join(manifest.files)}\n"
        f"  skipped points: {len(manifest.skipped)}\n"
        f"  content digest: {manifest.dataset_digest}"
    )
    _emit(args, doc, text)
    return 0


def _pick_record(records, wanted_id, role):
    if wanted_id is None:
        if not records:
            raise PairingError(f"{role} file contains no records")
        return records[0]
    for r in records:
        if r.record_id == wanted_id:
            return r
    raise PairingError(f"no record {wanted_id!r} in {role} file")


def _cmd_analyze(args) -> int:
    network = resolve_case(args.case)
    normals = read_records(args.normal)
    attacks = read_records(args.attack)
    normal = _pick_record(normals, args.normal_record, "normal")
    if args.attack_record is None:
        partners = [r for r in attacks if r.timestamp == normal.timestamp]
        if not partners:
            raise PairingError(
                f"no record in {args.attack} shares timestamp "
                f"{normal.timestamp.isoformat()} with {normal.record_id}"
            )
        attack = partners[0]
    else:
        attack = _pick_record(attacks, args.attack_record, "attack")
    report = analyze_pair(network, normal, attack, significance=args.significance)
    doc = report.to_dict()
    lines = [
        f"pair {normal.record_id} / {attack.record_id} at {report.timestamp.isoformat()}",
        f"  chi-square: normal J = {report.normal.residual_j:.3g}, "
        f"attack J = {report.attack.residual_j:.3g}, "
        f"threshold = {report.threshold:.4g} (k = {report.k_dof})",
    ]
    for label, audit in (("normal", report.normal), ("attack", report.attack)):
        sums = ", ".join(
            f"bus {b}: {p:+.2e} MW / {q:+.2e} Mvar"
            for b, (p, q) in sorted(audit.no_injection_sums.items())
        )
        lines.append(f"  {label} passive-bus sums: {sums}")
        lines.append(
            f"  {label} global mismatch: {audit.global_mismatch[0]:+.2e} MW / "
            f"{audit.global_mismatch[1]:+.2e} Mvar"
        )
    failed = [name for name, ok in report.checks.items() if not ok]
    lines.append(
        "  verdict: indistinguishable (all checks passed)"
        if report.stealthy
        else f"  verdict: distinguishable (failed: {', '.join(failed)})"
    )
    _emit(args, doc, "\n".join(lines))
    return 0


def _cmd_dc_baseline(args) -> int:
    network = resolve_case(args.case)
    report = run_dc_baseline_trials(
        network,
        trials=args.trials,
        magnitude=args.magnitude,
        seed=args.seed,
        significance=args.significance,
    )
    doc = {
        "case": args.case,
        "trials": report.trials,
        "magnitude": args.magnitude,
        "seed": args.seed,
        "diverged": report.diverged,
        "flagged": report.flagged,
        "bypassed": report.bypassed,
        "threshold": report.threshold,
    }
    text = (
        f"linear-model attack vectors vs the nonlinear estimator "
        f"({report.trials} trials, magnitude {args.magnitude}, seed {args.seed}):\n"
        f"  estimator diverged: {report.diverged}\n"
        f"  flagged as bad data: {report.flagged}\n"
        f"  passed undetected:   {report.bypassed}\n"
        f"  threshold: {report.threshold:.4g}"
    )
    _emit(args, doc, text)
    return 0


def _add_common(sub, seed: bool = False) -> None:
    sub.add_argument("--case", default="wscc9",
                     help="bundled case name or path to a case file (default: wscc9)")
    sub.add_argument("--json", action="store_true", help="machine-readable output")
    if seed:
        sub.add_argument("--seed", type=int, default=DEFAULT_SEED,
                         help=f"random seed (default: {DEFAULT_SEED})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdibench",
        description="state-estimation security workbench",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log skipped points and solver diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("powerflow", help="solve a case and optionally meter it")
    _add_common(p, seed=True)
    p.add_argument("--method", choices=("ac", "dc"), default="ac")
    p.add_argument("--tol", type=float, default=1e-8, help="mismatch tolerance, p.u.")
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--noise", choices=("none", "gaussian"), default="none",
                   help="meter noise for --measurements-out")
    p.add_argument("--state-out", metavar="PATH", help="write the solved state as JSON")
    p.add_argument("--measurements-out", metavar="PATH",
                   help="write metered values as CSV")
    p.set_defaults(func=_cmd_powerflow)

    p = sub.add_parser("estimate", help="estimate state and screen for bad data")
    _add_common(p)
    p.add_argument("--measurements", required=True, metavar="PATH",
                   help="measurement CSV (see powerflow --measurements-out)")
    p.add_argument("--significance", type=float, default=0.005)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("attack", help="synthesize a coordinated false-data injection")
    _add_common(p)
    p.add_argument("--center-bus", type=int, default=5)
    p.add_argument("--delta", type=float, default=1.0,
                   help="seed perturbation: degrees for angle seeds, p.u. for "
                        "magnitude seeds (default: 1.0)")
    p.add_argument("--seed-variable", metavar="VAR", type=_parse_seed_variable,
                   help="state variable to displace, e.g. theta_5 or vmag_4 "
                        "(default: the center bus angle)")
    p.add_argument("--state", metavar="PATH",
                   help="baseline state JSON (default: solve the case)")
    p.add_argument("--significance", type=float, default=0.005)
    p.add_argument("--out", metavar="DIR",
                   help="write genuine/corrupted measurements and the fake state")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("dataset", help="generate a labeled normal/attack dataset")
    _add_common(p, seed=True)
    p.add_argument("--out", required=True, metavar="DIR")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--demand", metavar="SRC",
                     help="demand CSV path or bundled profile name "
                          f"({', '.join(BUNDLED_PROFILES)}); "
                          "default: demand_3day_halfhourly")
    src.add_argument("--points", type=int, metavar="N",
                     help="generate a synthetic N-point profile instead of --demand "
                          "(long-run mode; scales to tens of thousands of points)")
    p.add_argument("--cadence-minutes", type=int, default=30,
                   help="synthetic profile cadence (default: 30)")
    p.add_argument("--attacks-per-point", type=int, default=2)
    p.add_argument("--center-bus", type=int, default=5)
    p.add_argument("--noise", choices=("none", "gaussian"), default="none")
    p.add_argument("--records-per-file", type=int, default=432)
    p.add_argument("--significance", type=float, default=0.005)
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("analyze", help="audit a normal/attack record pair")
    _add_common(p)
    p.add_argument("--normal", required=True, metavar="PATH", help="normal partition CSV")
    p.add_argument("--attack", required=True, metavar="PATH", help="attack partition CSV")
    p.add_argument("--normal-record", metavar="ID", help="record id (default: first)")
    p.add_argument("--attack-record", metavar="ID",
                   help="record id (default: first sharing the normal record's timestamp)")
    p.add_argument("--significance", type=float, default=0.005)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("dc-baseline",
                       help="linear-model attack vectors vs the nonlinear estimator")
    _add_common(p, seed=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--magnitude", type=float, default=0.25,
                   help="uniform bound on each state-offset component (default: 0.25)")
    p.add_argument("--significance", type=float, default=0.005)
    p.set_defaults(func=_cmd_dc_baseline)

    return parser


def run_cli(argv=None) -> int:
    """Parse and execute; returns the process exit code instead of exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # --version / --help / usage errors
        code = exc.code
        return code if isinstance(code, int) else 2
    logging.basicConfig(
        level=logging.WARNING if args.verbose else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (WorkbenchError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
