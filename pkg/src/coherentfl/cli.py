"""Command-line entry point: ``coherentfl <subcommand> [options]``.

Exit codes: 0 success, 1 failed check or run error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

from . import __version__, config, experiment, validate
from .analysis import LearningRateWarning
from .errors import CoherentFLError, ConfigurationError, InfeasibleBudgetError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _clean(value):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):
        return _clean(value.item())
    return value


def _meta(cfg) -> dict:
    return {"tool": "coherentfl", "version": __version__, "config_sha256": config.config_hash(cfg)}


def write_json(path: Path, payload: dict, cfg) -> None:
    doc = {"meta": _meta(cfg), "config": cfg, **payload}
    text = json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def write_csv(path: Path, columns, rows, cfg) -> None:
    buf = io.StringIO()
    buf.write(f"# coherentfl {__version__} config_sha256={config.config_hash(cfg)}\n")
    buf.write(f"# config={config.canonical_json(cfg)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


# -- configuration ------------------------------------------------------------------


def resolve_config(args) -> dict:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigurationError("config root must be a JSON object")
    for key, attr in (("seed", "seed"), ("scheme", "scheme"), ("fill", "fill"),
                      ("lambda", "lam"), ("rounds", "rounds"), ("snr_db", "snr_db")):
        value = getattr(args, attr, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "lam", None) is not None:
        raw["coherence_time"] = None
    if getattr(args, "mutate_shrinkage", None) is not None:
        raw.setdefault("phy_validate", {})["mutate_shrinkage"] = args.mutate_shrinkage
    return config.resolve(raw)


# -- subcommands ----------------------------------------------------------------------


def cmd_phy_validate(cfg, out: Path, args) -> int:
    results = validate.run_checks(cfg)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    ok = all(r.passed for r in results)
    write_json(out / "phy_validate.json",
               {"passed": ok, "checks": [r.to_dict() for r in results]}, cfg)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_power_sweep(cfg, out: Path, args) -> int:
    rows = experiment.power_sweep(cfg)
    write_csv(out / "power_sweep.csv", experiment.POWER_COLUMNS, rows, cfg)
    if args.plot:
        from .plotting import plot_power_sweep

        plot_power_sweep(rows, out / "power_sweep.png")
    bad = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} grid points, {bad} infeasible")
    return EXIT_OK


TRACE_COLUMNS = ("round", "global_loss", "grad_norm_sq", "model_diff_sq", "test_accuracy",
                 "comm_cost_slots", "normalized_cost", "lambda", "scheme", "fill_strategy",
                 "seed")


def cmd_train(cfg, out: Path, args) -> int:
    n_probes = cfg["analysis"]["probes"]
    result = experiment.run_training(cfg, n_probes=n_probes)
    rows = []
    for rec in result.trace.records:
        row = {c: getattr(rec, c) for c in TRACE_COLUMNS if c != "lambda"}
        row["lambda"] = rec.lam
        rows.append(row)
    write_csv(out / "trace.csv", TRACE_COLUMNS, rows, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LearningRateWarning)
        report = experiment.bound_report(cfg, result)
    if not report.constants.lr_condition_ok:
        print(f"note: eta_local exceeds 1/(2 L tau) with measured L={report.constants.L:.4g}; "
              "bound not guaranteed", file=sys.stderr)
    last = result.trace.records[-1]
    write_json(out / "analysis.json", {
        "bound": report.to_dict(),
        "summary": {"rounds": len(result.trace), "final_test_accuracy": last.test_accuracy,
                    "final_global_loss": last.global_loss,
                    "total_normalized_cost": last.normalized_cost,
                    "dynamic_noise_per_coordinate": result.dynamic_noise},
    }, cfg)
    if args.plot:
        from .plotting import plot_trace

        plot_trace(result.trace, out / "trace.png",
                   f"{cfg['scheme']} / {cfg['fill']}, seed {cfg['seed']}")
    print(f"{len(result.trace)} rounds; bound {'holds' if report.passed else 'violated'} "
          f"(lhs {report.lhs:.6g}, rhs {report.bound:.6g})")
    return EXIT_OK


COMPARE_COLUMNS = ("lambda", "scheme", "seed", "round", "cost", "accuracy")


def cmd_compare_schemes(cfg, out: Path, args) -> int:
    lambdas = [cfg["lambda"]] if args.lam is not None else None
    rows, summaries = experiment.compare_schemes(cfg, lambdas=lambdas)
    write_csv(out / "compare.csv", COMPARE_COLUMNS, rows, cfg)
    write_json(out / "compare_summary.json", {
        "target_accuracy": cfg["compare"]["target_accuracy"],
        "summaries": [{"lambda": s.lam, "scheme": s.variant,
                       "final_accuracy": s.final_accuracy,
                       "cost_to_target": s.cost_to_target,
                       "reached_target": math.isfinite(s.cost_to_target),
                       "dynamic_noise_per_coordinate": s.dynamic_noise}
                      for s in summaries],
    }, cfg)
    if args.plot:
        from .plotting import plot_comparison

        plot_comparison(rows, out / "compare.png", cfg["compare"]["target_accuracy"])
    for s in summaries:
        print(f"lambda={s.lam:g} {s.variant:13s} final_acc={s.final_accuracy:.4f} "
              f"cost_to_target={s.cost_to_target:.4g}")
    return EXIT_OK


COMMANDS = {
    "phy-validate": cmd_phy_validate,
    "power-sweep": cmd_power_sweep,
    "train": cmd_train,
    "compare-schemes": cmd_compare_schemes,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--scheme", choices=["conventional", "product", "additive"])
    common.add_argument("--fill", choices=["zf", "plmf"])
    common.add_argument("--lambda", dest="lam", type=float, help="target pilot overhead")
    common.add_argument("--rounds", type=int)
    common.add_argument("--snr-db", dest="snr_db", type=float)
    common.add_argument("--plot", action="store_true", help="also write PNG figures")
    parser = argparse.ArgumentParser(prog="coherentfl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"coherentfl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("phy-validate", parents=[common], help="run physical-layer self-checks")
    p.add_argument("--mutate-shrinkage", type=float, default=None,
                   help="scale the MMSE shrinkage (negative control)")
    sub.add_parser("power-sweep", parents=[common], help="allocation and rates over a grid")
    sub.add_parser("train", parents=[common], help="one federated training run")
    sub.add_parser("compare-schemes", parents=[common],
                   help="all schemes on identical seeds, accuracy against cost")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigurationError, InfeasibleBudgetError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CoherentFLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
