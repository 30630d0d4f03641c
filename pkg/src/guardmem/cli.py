"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from guardmem import analysis
from guardmem.evidence import EvidenceCounts, GatingConfig, confidence
from guardmem.guardrail import METHODS, RESERVED_METHODS, ProviderUnavailableError, get_method
from guardmem.induction import RefreshError, RefreshOptions, StubInducer, refresh
from guardmem.memory import (MemoryState, SnapshotFormatError, load_reports, load_snapshot,
                             load_state, save_snapshot, save_state)
from guardmem.retrieval import HashingEmbedder
from guardmem.simulator import (DeploymentConfig, Providers, run_seeds, stub_providers,
                                write_outputs)
from guardmem.world import SyntheticWorld, WorldParams

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("guardmem")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _load_config(args) -> DeploymentConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {path} must hold a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.rho is not None:
        data["noise_rho"] = args.rho
    gating = dict(data.get("gating") or {})
    for key, value in (("delta", args.delta), ("tau_refuse", args.tau_refuse),
                       ("tau_allow", args.tau_allow)):
        if value is not None:
            gating[key] = value
    if gating:
        data["gating"] = gating
    try:
        return DeploymentConfig.from_dict(data)
    except (TypeError, ValueError, NotImplementedError) as exc:
        raise UsageError(str(exc)) from None


def _methods(arg: str | None, default: str) -> list[str]:
    names = [m.strip() for m in (arg or default).split(",") if m.strip()]
    for name in names:
        if name in RESERVED_METHODS:
            raise UsageError(f"method {name!r} is reserved and not implemented; "
                             f"valid methods: {', '.join(METHODS)}")
        try:
            get_method(name)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return names


def _provider_factory(name: str):
    if name == "stub":
        return stub_providers
    from guardmem.providers import HttpClient, HttpGuardModel, HttpInducer

    client = HttpClient.from_env()
    return lambda world: Providers(HttpGuardModel(client), HttpInducer(client), HashingEmbedder())


def _write_csv(rows, header, out: Path | None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    text = buf.getvalue()
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    base = _load_config(args)
    methods = _methods(args.method, base.method)
    if args.seeds is not None and args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    seeds = range(base.seed, base.seed + (args.seeds or 1))
    factory = _provider_factory(args.provider)
    out_dir = Path(args.out_dir)
    curves = {}
    status = EXIT_OK
    for method in methods:
        cfg = DeploymentConfig.from_dict({**base.to_dict(), "method": method})
        results = run_seeds(cfg, seeds, factory)
        if all(r.initial is None for r in results):
            log.error("%s: no results (%s)", method, results[0].error)
            return EXIT_RUNTIME
        paths = write_outputs(results, out_dir)
        for r in results:
            if r.partial:
                log.error("%s seed %d aborted after %d day(s): %s",
                          method, r.config.seed, len(r.rows), r.error)
                status = EXIT_RUNTIME
        complete = [r for r in results if not r.partial]
        if complete:
            curves[method] = np.array([[r.initial.macro_f1] + [row.macro_f1 for row in r.rows]
                                       for r in complete])
            final = curves[method][:, -1]
            print(f"{method}: final macro-F1 {final.mean():.4f} +/- {final.std():.4f} "
                  f"over {len(complete)} seed(s) -> {paths['metrics']}")
    if curves and not args.no_plots:
        from guardmem.plotting import plot_f1_curves

        name = "f1_" + "_".join(curves) + ".png"
        print(f"figure -> {plot_f1_curves(curves, out_dir / name)}")
    return status


def cmd_refresh(args) -> int:
    bank = load_reports(args.reports)
    previous = load_state(args.state) if args.state else MemoryState()
    gating = GatingConfig(
        delta=args.delta if args.delta is not None else previous.snapshot.gating.delta,
        tau_refuse=args.tau_refuse if args.tau_refuse is not None else previous.snapshot.gating.tau_refuse,
        tau_allow=args.tau_allow if args.tau_allow is not None else previous.snapshot.gating.tau_allow,
    )
    method = get_method(_methods(args.method, "lisa")[0])
    world = SyntheticWorld(params=WorldParams(world_seed=args.world_seed))
    if args.provider == "stub":
        inducer = StubInducer(salient_keys=world.salient_keys())
    else:
        inducer = _provider_factory(args.provider)(world).inducer
    state = refresh(bank, previous, inducer, HashingEmbedder(),
                    RefreshOptions(build_local=method.use_local, gating=gating))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_snapshot(state.snapshot, out_dir / "snapshot.json")
    save_state(state, out_dir / "state.json")
    print(f"snapshot v{state.snapshot.version}: {len(state.snapshot.broad)} broad, "
          f"{len(state.snapshot.local)} local -> {out_dir / 'snapshot.json'}")
    return EXIT_OK


def format_snapshot(snapshot) -> str:
    delta = snapshot.gating.delta
    lines = [f"snapshot v{snapshot.version}: {len(snapshot.broad)} broad, {len(snapshot.local)} local",
             f"gating: delta={delta:g} tau_refuse={snapshot.gating.tau_refuse:g} "
             f"tau_allow={snapshot.gating.tau_allow:g}"]
    scored = [(confidence(p.evidence, delta), p) for p in snapshot.broad]
    if scored:
        lines.append("broad policies:")
    for conf, p in sorted(scored, key=lambda t: (-t[0], t[1].policy_id)):
        flag = " near_conflict" if p.near_conflict else ""
        lines.append(f"  {p.policy_id} confidence={conf:.4f} label={p.recommended_label.name} "
                     f"evidence=({p.evidence.support},{p.evidence.contradiction}){flag}: {p.statement}")
    scored = [(confidence(r.evidence, delta), r) for r in snapshot.local]
    if scored:
        lines.append("local rules:")
    for conf, r in sorted(scored, key=lambda t: (-t[0], t[1].rule_id)):
        lines.append(f"  {r.rule_id} confidence={conf:.4f} label={r.recommended_label.name} "
                     f"evidence=({r.evidence.support},{r.evidence.contradiction}) "
                     f"region='{r.region_summary}' pivots: {'; '.join(r.pivots)}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    print(format_snapshot(load_snapshot(args.snapshot)))
    return EXIT_OK


def cmd_verify(args) -> int:
    results = analysis.run_checks(trials=args.trials, seed=args.seed or 0, draws=args.draws)
    tight = analysis.tight_case().states[0]
    tight_ok = abs(analysis.refinement_gain(tight) - analysis.conflict_mass(tight)) <= 1e-12
    rows = [[r.name, r.trials, r.violations, "pass" if r.passed else "FAIL", r.detail] for r in results]
    rows.append(["tight_case", 1, 0 if tight_ok else 1, "pass" if tight_ok else "FAIL",
                 "eta=1/2 split into pure halves"])
    out = Path(args.out_dir) / "verify.csv" if args.out_dir else None
    sys.stdout.write(_write_csv(rows, ["check", "trials", "violations", "status", "detail"], out))
    return EXIT_OK if all(r[2] == 0 for r in rows) else EXIT_RUNTIME


def cmd_gap_curves(args) -> int:
    delta = args.delta if args.delta is not None else 0.05
    n_range = sorted({int(round(x)) for x in np.geomspace(1, args.n_max, args.points)})
    accuracies = [float(a) for a in args.accuracies.split(",")]
    rows = analysis.gap_curves(n_range, accuracies, delta)
    out_dir = Path(args.out_dir)
    table = [[r.n, f"{r.theta_hat:g}", r.support, r.contradiction,
              f"{r.beta_bound:.10f}", f"{r.hoeffding_bound:.10f}"] for r in rows]
    path = out_dir / "gap_curves.csv"
    _write_csv(table, ["n", "theta_hat", "support", "contradiction", "beta_bound",
                       "hoeffding_bound"], path)
    print(f"{len(rows)} rows -> {path}")
    if not args.no_plots:
        from guardmem.plotting import plot_gap_curves

        print(f"figure -> {plot_gap_curves(rows, out_dir / 'gap_curves.png', delta)}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    delta = args.delta if args.delta is not None else 0.05
    table = analysis.calibration_table(args.tau, delta, args.max_contradictions)
    rows = [[c, s, f"{confidence(EvidenceCounts(s, c), delta):.6f}"] for c, s in table]
    out = Path(args.out_dir) / "calibration.csv" if args.out_dir else None
    sys.stdout.write(_write_csv(rows, ["contradictions", "min_support", "confidence"], out))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with DeploymentConfig fields")
    common.add_argument("--seed", type=int, help="random seed (first seed with --seeds)")
    common.add_argument("--seeds", type=int, help="number of consecutive seeds to run")
    common.add_argument("--method", help="method name, or a comma-separated list")
    common.add_argument("--rho", type=float, help="label-flip noise rate for reports")
    common.add_argument("--tau-refuse", type=float)
    common.add_argument("--tau-allow", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--out-dir", default="out")
    common.add_argument("--provider", choices=("stub", "http"), default="stub")
    common.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="guardmem", description="Lifelong guardrail memory experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run deployment simulations")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("refresh", parents=[common], help="rebuild memory from a report bank")
    p.add_argument("--reports", required=True, help="report bank JSON")
    p.add_argument("--state", help="previous memory state JSON")
    p.add_argument("--world-seed", type=int, default=7)
    p.set_defaults(func=cmd_refresh)

    p = sub.add_parser("inspect", parents=[common], help="print a snapshot")
    p.add_argument("snapshot")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("verify", parents=[common], help="numerical checks of the bounds")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--draws", type=int, default=1_000_000)
    p.set_defaults(func=cmd_verify, out_dir=None)

    p = sub.add_parser("gap-curves", parents=[common], help="beta vs Hoeffding lower bounds")
    p.add_argument("--n-max", type=int, default=10_000)
    p.add_argument("--points", type=int, default=40)
    p.add_argument("--accuracies", default="0.5,0.7,0.9,1.0")
    p.set_defaults(func=cmd_gap_curves)

    p = sub.add_parser("calibrate", parents=[common], help="minimal supports per contradiction count")
    p.add_argument("--tau", type=float, default=0.55)
    p.add_argument("--max-contradictions", type=int, default=5)
    p.set_defaults(func=cmd_calibrate, out_dir=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except (SnapshotFormatError, FileNotFoundError, ProviderUnavailableError, RefreshError,
            ValueError, OSError) as exc:
        print(f"guardmem: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
