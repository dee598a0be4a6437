"""``dpqfl`` command line.

Subcommands: ``train``, ``dp-sweep``, ``attack``, ``report``. Exit codes: 0 ok,
1 configuration error, 2 runtime error, 3 checkpoint mismatch.

Outputs go to ``--output``, else ``[run] output_dir``, else ``$DPQFL_OUTPUT_DIR``,
else ``./dpqfl_out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import accountant
from .attack import VictimOracle, run_attack, write_attack_csv, write_pgm_grid
from .config import RunConfig, attack_datasets, load_config, load_datasets
from .exceptions import CheckpointMismatchError, ConfigError, DPQFLError
from .fed import load_checkpoint, save_checkpoint, train, write_metrics_csv
from .reporting import SCHEMA_VERSION, write_csv, write_json

logger = logging.getLogger("dpqfl")

OUTPUT_ENV = "DPQFL_OUTPUT_DIR"
RESOLVED_CONFIG = "resolved_config.ini"


def _output_dir(cfg: RunConfig, flag: str | None) -> Path:
    out = Path(flag or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "dpqfl_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(out: Path, cfg: RunConfig) -> None:
    (out / RESOLVED_CONFIG).write_text(cfg.to_ini())


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    train_set, test_set = load_datasets(cfg)
    out = _output_dir(cfg, args.output)
    _write_resolved(out, cfg)

    def progress(m):
        logger.info("round %d  train_loss=%.4f  train_acc=%.3f", m.round, m.train_loss, m.train_acc)

    result = train(cfg.federation_config(), train_set, test_set, callback=progress)
    write_metrics_csv(out / "metrics.csv", result.history)
    save_checkpoint(out / "checkpoint.txt", result.params, cfg.num_classes, cfg.num_rounds, cfg.to_ini())
    last = result.history[-1]
    report = accountant.budget_report(
        result.dp_params, result.budget,
        variance_mode=cfg.variance_mode,
        schema_version=SCHEMA_VERSION,
        config=cfg.to_dict(),
        notes=result.notes,
        batch_size=cfg.batch_size,
        final={"train_loss": last.train_loss, "train_acc": last.train_acc,
               "test_loss": last.test_loss, "test_acc": last.test_acc},
    )
    write_json(out / "dp_report.json", report)
    write_json(out / "timings.json", {"round_wall_time": [m.wall_time for m in result.history]})
    eps = "n/a" if result.budget is None else f"{result.budget.epsilon_total:.4g}"
    print(f"trained {cfg.num_rounds} rounds: train_acc={last.train_acc:.3f} "
          f"epsilon_total={eps} -> {out}")
    return 0


def cmd_dp_sweep(args) -> int:
    overrides = list(args.set)
    if args.shots:
        overrides.append(f"sweep.shots={args.shots}")
    if args.lambdas:
        overrides.append(f"sweep.lambdas={args.lambdas}")
    cfg = load_config(args.config, overrides)
    if not cfg.sweep_shots or not cfg.sweep_lambdas:
        raise ConfigError("sweep", "shot and lambda grids must be non-empty")
    base = cfg.dp_params(shots=cfg.sweep_shots[0])
    rows = accountant.sweep(cfg.sweep_shots, cfg.sweep_lambdas, base)
    out = _output_dir(cfg, args.output)
    _write_resolved(out, cfg)
    write_csv(out / "sweep.csv", accountant.SWEEP_COLUMNS, rows)
    print(f"wrote {len(rows)} rows -> {out / 'sweep.csv'}")
    return 0


def cmd_attack(args) -> int:
    overrides = list(args.set)
    if args.victim:
        overrides.append("attack.victims=" + ",".join(args.victim))
    cfg = load_config(args.config, overrides)
    victims = cfg.victim_list()
    if not victims:
        raise ConfigError("attack.victims", "at least one victim checkpoint is required")
    loaded = []
    for path, tag in victims:
        try:
            params, header = load_checkpoint(path)
        except OSError as exc:
            raise CheckpointMismatchError(f"cannot read checkpoint {path}: {exc}") from None
        expected = {"num_qubits": cfg.num_qubits, "num_layers": cfg.num_layers, "num_classes": cfg.num_classes}
        for key, value in expected.items():
            if header.get(key) != value:
                raise CheckpointMismatchError(f"{path}: {key}={header.get(key)} but config has {value}")
        loaded.append((tag, params))

    pool, ev = attack_datasets(cfg)
    acfg = cfg.attack_config()
    clf = cfg.classifier_config()
    out = _output_dir(cfg, args.output)
    _write_resolved(out, cfg)
    reports = []
    for tag, params in loaded:
        oracle = VictimOracle.from_params(params, clf)
        rep = run_attack(oracle, pool, ev.X, ev.y, acfg, victim_tag=tag, keep_examples=cfg.dump_images)
        reports.append(rep)
        if cfg.dump_images:
            write_pgm_grid(out / f"adversarial_{tag}.pgm", {0.0: ev.X, **rep.adversarial})
        print(f"{tag}: clean_acc={rep.clean_accuracy:.3f} substitute_agreement={rep.heldout_agreement:.3f}")
    write_attack_csv(out / "attack.csv", reports)
    print(f"wrote attack report -> {out / 'attack.csv'}")
    return 0


def cmd_report(args) -> int:
    with open(args.report) as f:
        report = json.load(f)
    print(f"variance mode: {report.get('variance_mode')}")
    params = report.get("params") or {}
    if params:
        print("parameters:")
        for key in sorted(params):
            print(f"  {key:<20} {params[key]}")
    budget = report.get("budget")
    if budget is None:
        print("budget: not certifiable")
    else:
        print("budget:")
        for key in ("p", "c_p", "per_point_grad_var", "per_example_noise_var", "total_update_var", "sigma",
                    "sensitivity", "epsilon_round", "epsilon_total", "delta_total"):
            print(f"  {key:<22} {budget[key]:.6g}")
    for note in report.get("notes", []):
        print(f"note: {note}")
    final = report.get("final")
    if final:
        print("final metrics: " + "  ".join(f"{k}={v}" for k, v in final.items() if v is not None))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpqfl", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--output", help="output directory")

    p = sub.add_parser("train", help="federated training run")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dp-sweep", help="privacy budget over a shots x lambda grid")
    common(p)
    p.add_argument("--shots", help="comma-separated shot counts")
    p.add_argument("--lambdas", help="comma-separated per-gate depolarizing rates")
    p.set_defaults(func=cmd_dp_sweep)

    p = sub.add_parser("attack", help="black-box FGSM evaluation of trained checkpoints")
    common(p)
    p.add_argument("--victim", action="append", default=[], metavar="CHECKPOINT[:TAG]")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="pretty-print a dp_report.json")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except CheckpointMismatchError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 3
    except (DPQFLError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
