"""
Command-line entry point.

    mutafuzz targets [--write-seeds DIR]
    mutafuzz collect --target builtin:mini_elf --seed-dir seeds/ --budget-execs 50000 --out out/
    mutafuzz train   --records out/records.jsonl --out out/
    mutafuzz fuzz    --target 'ext:readelf -a @@' --oracle count --model out/model.bin ...
    mutafuzz report  --out out/ [--format table|json]

Settings resolve as: built-in defaults < ``--config FILE`` (TOML) < flags.
Exit codes: 0 success, 1 usage or configuration error, 2 campaign failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from mutafuzz import collector as coll
from mutafuzz import metrics
from mutafuzz.campaign import CampaignConfig, read_report, run_campaign, run_collect_then_train, train_from_records
from mutafuzz.errors import InvalidConfig, MutaFuzzError, NoRecords, UnknownTarget
from mutafuzz.harness import DEFAULT_TIMEOUT_MS, TargetSpec, list_builtin_targets
from mutafuzz.oracle import OracleConfig
from mutafuzz.targets import BUILTIN_TARGETS

log = logging.getLogger("mutafuzz")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2

# dest -> default, for every campaign setting the config file may carry
CAMPAIGN_DEFAULTS: dict[str, Any] = {
    "target": None,
    "oracle": "uniform",
    "model": None,
    "endpoint": None,
    "seed_dir": None,
    "budget_execs": None,
    "budget_seconds": None,
    "rng_seed": 0,
    "out": None,
    "top_p": 0.9,
    "k_max": 16,
    "temperature": 1.0,
    "smoothing": 1.0,
    "timeout_ms": DEFAULT_TIMEOUT_MS,
    "mem_limit": None,
    "workers": 1,
    "gain_bucket": 1000,
    "remote_timeout": 5.0,
    "prompt_template": None,
    "instruction": coll.DEFAULT_INSTRUCTION,
    "max_seed_bytes": coll.DEFAULT_MAX_SEED_BYTES,
    "split_ratio": 0.9,
    "trace": False,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _campaign_flags(p: argparse.ArgumentParser) -> None:
    # defaults are SUPPRESSed so that only explicit flags override the config file
    S = argparse.SUPPRESS
    p.add_argument("--config", help="TOML file with campaign settings")
    p.add_argument("--target", default=S, help="builtin:NAME or 'ext:COMMAND @@'")
    p.add_argument("--oracle", default=S, choices=("uniform", "count", "remote"))
    p.add_argument("--model", default=S, help="count-model file (model.bin)")
    p.add_argument("--endpoint", default=S, help="remote oracle URL")
    p.add_argument("--seed-dir", default=S, help="directory of initial seed files")
    p.add_argument("--budget-execs", type=int, default=S)
    p.add_argument("--budget-seconds", type=float, default=S)
    p.add_argument("--rng-seed", type=int, default=S)
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--top-p", type=float, default=S)
    p.add_argument("--k-max", type=int, default=S)
    p.add_argument("--temperature", type=float, default=S)
    p.add_argument("--smoothing", type=float, default=S)
    p.add_argument("--timeout-ms", type=int, default=S)
    p.add_argument("--mem-limit", type=int, default=S, help="per-run address-space cap in bytes")
    p.add_argument("--workers", type=int, default=S)
    p.add_argument("--gain-bucket", type=int, default=S, help="executions per input-gain point")
    p.add_argument("--remote-timeout", type=float, default=S)
    p.add_argument("--prompt-template", default=S)
    p.add_argument("--instruction", default=S, help="instruction template; {program} is substituted")
    p.add_argument("--max-seed-bytes", type=int, default=S)
    p.add_argument("--split-ratio", type=float, default=S)
    p.add_argument("--trace", action="store_true", default=S, help="also write trace.jsonl")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mutafuzz", description="Coverage-guided fuzzing with mutation oracles.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_text in (
        ("fuzz", "run an oracle-guided campaign"),
        ("collect", "uniform campaign, then train a count model and write the dataset"),
    ):
        _campaign_flags(sub.add_parser(name, help=help_text))

    p = sub.add_parser("train", help="train a count model from a records.jsonl file")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--split-ratio", type=float, default=0.9)
    p.add_argument("--max-seed-bytes", type=int, default=coll.DEFAULT_MAX_SEED_BYTES)
    p.add_argument("--instruction", default=coll.DEFAULT_INSTRUCTION)

    p = sub.add_parser("report", help="render report.json from a campaign output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--coverage-summary", help="JSON file of external coverage figures to attach")

    p = sub.add_parser("targets", help="list built-in targets")
    p.add_argument("--write-seeds", metavar="DIR", help="write each target's sample seed into DIR/<name>/")
    return parser


def load_config_file(path: str) -> dict[str, Any]:
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"bad config {path}: {e}") from e
    out = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest not in CAMPAIGN_DEFAULTS:
            raise UsageError(f"unknown config key {key!r} in {path}")
        out[dest] = value
    return out


def resolve_settings(args: argparse.Namespace) -> dict[str, Any]:
    settings = dict(CAMPAIGN_DEFAULTS)
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    for dest in CAMPAIGN_DEFAULTS:
        if hasattr(args, dest):
            settings[dest] = getattr(args, dest)
    return settings


def config_from_settings(s: dict[str, Any]) -> CampaignConfig:
    if not s["target"]:
        raise UsageError("--target is required")
    if not s["seed_dir"]:
        raise UsageError("--seed-dir is required")
    if s["budget_execs"] is None and s["budget_seconds"] is None:
        raise UsageError("--budget-execs or --budget-seconds is required")
    target = TargetSpec.parse(s["target"], timeout_ms=s["timeout_ms"], mem_limit=s["mem_limit"])
    oc = OracleConfig(top_p=s["top_p"], k_max=s["k_max"], temperature=s["temperature"], smoothing=s["smoothing"])
    return CampaignConfig(
        target=target,
        seed_dir=s["seed_dir"],
        oracle=s["oracle"],
        model_path=s["model"],
        endpoint=s["endpoint"],
        budget_execs=s["budget_execs"],
        budget_seconds=s["budget_seconds"],
        rng_seed=s["rng_seed"],
        oracle_config=oc,
        output_dir=s["out"],
        gain_bucket=s["gain_bucket"],
        workers=s["workers"],
        remote_timeout=s["remote_timeout"],
        prompt_template=s["prompt_template"],
        instruction=s["instruction"],
        max_seed_bytes=s["max_seed_bytes"],
        split_ratio=s["split_ratio"],
        write_trace=bool(s["trace"]),
    )


def _cmd_targets(args) -> int:
    for name, desc in list_builtin_targets():
        print(f"{name:<20} {desc}")
    if args.write_seeds:
        for name, t in BUILTIN_TARGETS.items():
            d = Path(args.write_seeds) / name
            d.mkdir(parents=True, exist_ok=True)
            (d / "seed").write_bytes(t.seed())
    return EXIT_OK


def _cmd_fuzz(args) -> int:
    settings = resolve_settings(args)
    config = config_from_settings(settings)
    config.validate()
    report = run_campaign(config)
    sys.stdout.write(report.to_table())
    return EXIT_OK


def _cmd_collect(args) -> int:
    settings = resolve_settings(args)
    settings["oracle"] = "uniform"
    config = config_from_settings(settings)
    config.validate()
    result = run_collect_then_train(config)
    sys.stdout.write(result.report.to_table())
    print(f"dataset samples   {len(result.dataset)} (train {len(result.train)}, valid {len(result.valid)})")
    return EXIT_OK


def _cmd_train(args) -> int:
    records = coll.read_records(args.records)
    model, dataset, train, valid = train_from_records(
        records,
        args.out,
        instruction=args.instruction,
        max_seed_bytes=args.max_seed_bytes,
        split_ratio=args.split_ratio,
        rng_seed=args.rng_seed,
    )
    print(f"trained on {model.total} effective mutations; {len(dataset)} samples "
          f"(train {len(train)}, valid {len(valid)})")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = Path(args.out) / "report.json"
    doc = read_report(path)
    stats = metrics.stats_from_json(doc)
    if args.coverage_summary:
        metrics.ingest_coverage_summary(stats, json.loads(Path(args.coverage_summary).read_text()))
        doc["external_coverage"] = stats.external_coverage
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if args.format == "json":
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    else:
        sys.stdout.write(metrics.render_report(stats, "table"))
    return EXIT_OK


COMMANDS = {
    "targets": _cmd_targets,
    "fuzz": _cmd_fuzz,
    "collect": _cmd_collect,
    "train": _cmd_train,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"mutafuzz: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidConfig, UnknownTarget) as e:
        print(f"mutafuzz: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, NoRecords, MutaFuzzError) as e:
        print(f"mutafuzz: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
