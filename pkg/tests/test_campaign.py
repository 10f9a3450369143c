import json
import time

import pytest

import mutafuzz.campaign as campaign_mod
from mutafuzz.campaign import CampaignConfig, load_seeds, read_report, run_campaign, run_collect_then_train
from mutafuzz.collector import read_jsonl, train_size
from mutafuzz.corpus import Corpus, TestCase
from mutafuzz.errors import InvalidConfig, NoRecords, TargetSpawnFailure
from mutafuzz.harness import TargetSpec, execute
from mutafuzz.metrics import epm, input_gain_series, stats_from_trace
from mutafuzz.oracle import CountModel, OracleConfig
from conftest import write_seed_dir


def config(seed_dir, target="builtin:magic_header", **kw):
    kw.setdefault("budget_execs", 2000)
    return CampaignConfig(target=TargetSpec.parse(target), seed_dir=str(seed_dir), **kw)


def assert_trace_consistent(report):
    brute = stats_from_trace(report.trace)
    inc = report.stats
    assert brute.attempts == inc.attempts
    assert brute.effective == inc.effective
    assert (brute.crashes_raw, brute.crashes_deduped) == (inc.crashes_raw, inc.crashes_deduped)
    assert epm(brute) == epm(inc)
    assert brute.timeouts == inc.timeouts
    assert input_gain_series(brute, 100, inc.executions) == input_gain_series(inc, 100)


def test_validation(tmp_path, magic_seeds):
    with pytest.raises(InvalidConfig):
        run_campaign(config(magic_seeds, oracle="count"))
    with pytest.raises(InvalidConfig):
        run_campaign(config(magic_seeds, oracle="remote"))
    with pytest.raises(InvalidConfig):
        run_campaign(config(magic_seeds, budget_execs=None))
    with pytest.raises(InvalidConfig):
        run_campaign(config(tmp_path / "missing"))
    with pytest.raises(InvalidConfig):
        run_campaign(config(write_seed_dir(tmp_path / "empty", b"")))


def test_load_seeds_sorted_and_skips_empty(tmp_path):
    d = write_seed_dir(tmp_path / "s", b"b", b"", b"a")
    assert load_seeds(d) == [("seed0", b"b"), ("seed2", b"a")]


def test_budget_zero_is_empty(tmp_path, magic_seeds):
    report = run_campaign(config(magic_seeds, budget_execs=0, output_dir=str(tmp_path / "out")))
    assert report.stats.executions == 0 and report.trace == [] and report.calibration_execs == 0
    doc = read_report(tmp_path / "out" / "report.json")
    assert doc["executions"] == 0 and doc["epm"]["average"] == 0.0


def test_deterministic_rerun(tmp_path, magic_seeds):
    a = run_campaign(config(magic_seeds, rng_seed=5, output_dir=str(tmp_path / "out")))
    first = (tmp_path / "out" / "report.json").read_bytes()
    b = run_campaign(config(magic_seeds, rng_seed=5, output_dir=str(tmp_path / "out")))
    assert (tmp_path / "out" / "report.json").read_bytes() == first
    assert a.trace == b.trace
    c = run_campaign(config(magic_seeds, rng_seed=6))
    assert c.trace != a.trace


def test_parallel_workers_match_serial(magic_seeds):
    serial = run_campaign(config(magic_seeds, rng_seed=3, budget_execs=1500))
    parallel = run_campaign(config(magic_seeds, rng_seed=3, budget_execs=1500, workers=4))
    assert parallel.trace == serial.trace
    assert parallel.to_json().replace('"workers": 4', '"workers": 1') == serial.to_json()


def test_conservation_and_trace_equivalence(monkeypatch, elf_seeds):
    calls = []
    real = campaign_mod.execute

    def counting(target, data):
        calls.append(data)
        return real(target, data)

    monkeypatch.setattr(campaign_mod, "execute", counting)
    report = run_campaign(config(elf_seeds, target="builtin:mini_elf", budget_execs=3000, rng_seed=1))
    assert sum(report.stats.attempts) == len(calls) - report.calibration_execs == 3000
    assert report.stats.executions == 3000
    assert_trace_consistent(report)
    series = input_gain_series(report.stats, 100)
    assert series[-1] == len(report.corpus.queue) - report.corpus.initial_count


def test_queue_replays_to_same_novelty(elf_seeds):
    report = run_campaign(config(elf_seeds, target="builtin:mini_elf", budget_execs=4000, rng_seed=2))
    target = report.config.target
    assert len(report.corpus.queue) > report.corpus.initial_count
    fresh = Corpus()
    for tc in report.corpus.queue:
        outcome = execute(target, tc.data)
        if tc.is_initial:
            fresh.add_initial(tc.data, outcome)
        else:
            assert fresh.enqueue_if_effective(TestCase(-1, tc.data), outcome).kind == "queued"
            assert tc.parent_id < tc.id


def test_crashes_recorded_including_duplicates(magic_seeds):
    report = run_campaign(config(magic_seeds, budget_execs=40000, rng_seed=0))
    assert report.stats.crashes_deduped >= 1
    crashes = [r for r in report.records if r.outcome == "crash"]
    assert len(crashes) == report.stats.crashes_raw >= report.stats.crashes_deduped
    assert_trace_consistent(report)


def test_outputs_written(tmp_path, magic_seeds):
    out = tmp_path / "out"
    report = run_campaign(config(magic_seeds, budget_execs=3000, output_dir=str(out), write_trace=True))
    names = {p.name for p in out.iterdir()}
    assert {"queue", "crashes", "report.json", "report.txt", "input_gain.csv", "records.jsonl",
            "fuzz-instruct.jsonl", "fuzz-instruct.txt", "trace.jsonl"} <= names
    assert len(list((out / "queue").iterdir())) == len(report.corpus.queue)
    doc = json.loads((out / "report.json").read_text())
    assert doc["config"]["target"] == "builtin:magic_header"
    assert doc["config"]["budget_execs"] == 3000
    assert doc["queue"]["total"] == len(report.corpus.queue)
    assert len(read_jsonl(out / "trace.jsonl")) == 3000


def test_time_budget(magic_seeds):
    start = time.monotonic()
    report = run_campaign(config(magic_seeds, budget_execs=None, budget_seconds=0.3))
    assert time.monotonic() - start < 5
    assert report.stats.executions > 0


def test_remote_pairs_drive_the_campaign(stub_server, magic_seeds):
    server = stub_server(lambda body: {"pairs": [[10, 1], [4, 2], [9, 7]]})
    report = run_campaign(config(magic_seeds, oracle="remote", endpoint=server.url, budget_execs=30))
    assert report.degradation_windows == []
    # [9, 7] needs 4 bytes from position 7 of an 8-byte seed and is dropped
    strategies = {(int(t.detail.strategy), t.detail.position + 1) for t in report.trace}
    assert strategies == {(10, 1), (4, 2)}
    assert server.requests[0]["bytes_hex"] == "00 00 00 00 00 00 00 00"


def test_remote_empty_plans_fall_back_after_a_queue_cycle(stub_server, magic_seeds):
    server = stub_server(lambda body: {"pairs": []})
    report = run_campaign(config(magic_seeds, oracle="remote", endpoint=server.url, budget_execs=50))
    assert report.stats.executions == 50


def test_remote_outage_degrades_for_the_whole_run(stub_server, magic_seeds):
    server = stub_server(lambda body: {"pairs": [[4, 1]]})
    url = server.url
    server.shutdown()
    report = run_campaign(config(magic_seeds, oracle="remote", endpoint=url, budget_execs=100, remote_timeout=0.5))
    assert report.stats.executions == 100
    assert len(report.degradation_windows) == 1
    w = report.degradation_windows[0]
    assert w["start_exec"] == 1 and w["end_exec"] == 100


def test_remote_errors_open_and_close_a_window(stub_server, magic_seeds):
    calls = {"n": 0}

    def respond(body):
        calls["n"] += 1
        return 503 if calls["n"] in (2, 3) else {"pairs": [[4, 1], [4, 2]]}

    server = stub_server(respond)
    report = run_campaign(config(magic_seeds, oracle="remote", endpoint=server.url, budget_execs=40,
                                 oracle_config=OracleConfig(k_max=16)))
    # query 1 plans 2 execs; queries 2 and 3 fail and fall back to 16 uniform pairs each
    assert report.degradation_windows[0]["start_exec"] == 3
    assert report.degradation_windows[0]["end_exec"] == 34
    assert "503" in report.degradation_windows[0]["reason"]
    assert report.stats.executions == 40


def test_spawn_failure_flushes_partial_report(tmp_path, magic_seeds):
    cfg = CampaignConfig(TargetSpec.parse("ext:/nonexistent/bin @@"), str(magic_seeds), budget_execs=10,
                         output_dir=str(tmp_path / "out"))
    with pytest.raises(TargetSpawnFailure):
        run_campaign(cfg)
    doc = read_report(tmp_path / "out" / "report.json")
    assert doc["aborted"]


def test_external_target_campaign(tmp_path, magic_seeds):
    cfg = CampaignConfig(TargetSpec.parse("ext:/bin/true @@"), str(magic_seeds), budget_execs=20)
    report = run_campaign(cfg)
    assert report.stats.executions == 20
    assert report.stats.edges_total == 0
    assert_trace_consistent(report)


def test_collect_then_train(tmp_path, elf_seeds):
    out = tmp_path / "out"
    result = run_collect_then_train(config(elf_seeds, target="builtin:mini_elf", budget_execs=20000,
                                           output_dir=str(out), oracle="count", model_path="ignored"))
    assert result.report.config.oracle == "uniform"
    model = CountModel.load(out / "model.bin")
    assert model.total == len(result.report.records) > 0
    n = len(read_jsonl(out / "fuzz-instruct.jsonl"))
    assert n == len(result.dataset) >= 2
    assert len(read_jsonl(out / "train.jsonl")) == train_size(n, 0.9)
    assert len(read_jsonl(out / "valid.jsonl")) == n - train_size(n, 0.9)


def test_collect_with_nothing_found(tmp_path):
    seeds = write_seed_dir(tmp_path / "s", b"\x00" * 6)
    with pytest.raises(NoRecords):
        run_collect_then_train(config(seeds, target="builtin:mini_elf", budget_execs=200))


def test_count_oracle_campaign_uses_model(tmp_path, elf_seeds):
    out = tmp_path / "c"
    run_collect_then_train(config(elf_seeds, target="builtin:mini_elf", budget_execs=5000, output_dir=str(out)))
    report = run_campaign(config(elf_seeds, target="builtin:mini_elf", budget_execs=2000,
                                 oracle="count", model_path=str(out / "model.bin"),
                                 oracle_config=OracleConfig(k_max=8)))
    assert report.stats.executions == 2000
    assert_trace_consistent(report)
