import json
import subprocess
import sys

import pytest

from mutafuzz.cli import main
from mutafuzz.oracle import CountModel


def fuzz_args(seed_dir, out, *extra):
    return ["fuzz", "--target", "builtin:magic_header", "--oracle", "uniform", "--seed-dir", str(seed_dir),
            "--budget-execs", "10000", "--rng-seed", "42", "--out", str(out), *extra]


def test_fuzz_smoke(tmp_path, magic_seeds, capsys):
    assert main(fuzz_args(magic_seeds, tmp_path / "out")) == 0
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["executions"] == 10000
    assert doc["config"]["rng_seed"] == 42
    assert "bitflip 1/1" in capsys.readouterr().out


def test_fuzz_without_target(capsys):
    assert main(["fuzz"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err and "--target" in err


def test_unknown_flag_and_subcommand(capsys):
    assert main(["fuzz", "--bogus"]) == 1
    assert main(["nosuch"]) == 1
    assert main([]) == 1


def test_targets(capsys, tmp_path):
    assert main(["targets", "--write-seeds", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 4
    for name in ("mini_elf", "mini_xml", "mini_jpeg_segments", "magic_header"):
        assert any(line.startswith(name) for line in lines)
        assert (tmp_path / name / "seed").stat().st_size > 0


def test_config_precedence(tmp_path, magic_seeds):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        f'target = "builtin:magic_header"\nseed-dir = "{magic_seeds}"\n'
        f'budget_execs = 300\nrng_seed = 7\ntop_p = 0.5\nout = "{tmp_path / "o1"}"\n'
    )
    assert main(["fuzz", "--config", str(cfg)]) == 0
    doc = json.loads((tmp_path / "o1" / "report.json").read_text())["config"]
    assert (doc["budget_execs"], doc["rng_seed"], doc["top_p"], doc["k_max"]) == (300, 7, 0.5, 16)

    assert main(["fuzz", "--config", str(cfg), "--rng-seed", "9", "--out", str(tmp_path / "o2")]) == 0
    doc = json.loads((tmp_path / "o2" / "report.json").read_text())["config"]
    assert (doc["budget_execs"], doc["rng_seed"], doc["top_p"]) == (300, 9, 0.5)


def test_bad_config_file(tmp_path, magic_seeds, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 1\n")
    assert main(["fuzz", "--config", str(bad)]) == 1
    bad.write_text("not toml [\n")
    assert main(["fuzz", "--config", str(bad)]) == 1
    assert main(["fuzz", "--config", str(tmp_path / "missing.toml")]) == 1


def test_invalid_values_are_usage_errors(tmp_path, magic_seeds):
    base = fuzz_args(magic_seeds, tmp_path / "o")
    assert main(base + ["--top-p", "0"]) == 1
    assert main(base + ["--oracle", "count"]) == 1
    assert main([*base[:2], "builtin:nope", *base[3:]]) == 1
    assert main(fuzz_args(tmp_path / "missing", tmp_path / "o")) == 1


def test_campaign_failure_exit_code(tmp_path, magic_seeds):
    args = fuzz_args(magic_seeds, tmp_path / "o")
    args[2] = "ext:/nonexistent/bin @@"
    assert main(args) == 2


def test_collect_train_fuzz_report(tmp_path, elf_seeds, capsys):
    out = tmp_path / "collect"
    assert main(["collect", "--target", "builtin:mini_elf", "--seed-dir", str(elf_seeds),
                 "--budget-execs", "50000", "--rng-seed", "1", "--out", str(out)]) == 0
    assert (out / "fuzz-instruct.jsonl").read_text().strip()
    model = CountModel.load(out / "model.bin")
    assert model.total > 0

    retrained = tmp_path / "retrained"
    assert main(["train", "--records", str(out / "records.jsonl"), "--out", str(retrained), "--rng-seed", "1"]) == 0
    assert (retrained / "model.bin").read_bytes() == (out / "model.bin").read_bytes()
    assert (retrained / "train.jsonl").read_bytes() == (out / "train.jsonl").read_bytes()

    fuzzed = tmp_path / "fuzzed"
    assert main(["fuzz", "--target", "builtin:mini_elf", "--seed-dir", str(elf_seeds), "--oracle", "count",
                 "--model", str(out / "model.bin"), "--budget-execs", "2000", "--out", str(fuzzed)]) == 0
    capsys.readouterr()

    summary = tmp_path / "cov.json"
    summary.write_text(json.dumps({"line_rate": 0.31}))
    assert main(["report", "--out", str(fuzzed), "--format", "json", "--coverage-summary", str(summary)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["executions"] == 2000 and doc["external_coverage"] == {"line_rate": 0.31}
    assert main(["report", "--out", str(fuzzed)]) == 0
    assert "line_rate" in capsys.readouterr().out


def test_collect_nothing_found(tmp_path):
    seeds = tmp_path / "s"
    seeds.mkdir()
    (seeds / "a").write_bytes(bytes(6))
    assert main(["collect", "--target", "builtin:mini_elf", "--seed-dir", str(seeds),
                 "--budget-execs", "100", "--out", str(tmp_path / "o")]) == 2


def test_report_missing_dir(tmp_path):
    assert main(["report", "--out", str(tmp_path / "nothing")]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mutafuzz", "targets"], capture_output=True, text=True)
    assert proc.returncode == 0 and "magic_header" in proc.stdout


@pytest.mark.parametrize("flag", ["--help", "-h"])
def test_help(flag, capsys):
    assert main([flag]) == 0
