"""
Run one input against a target and report status plus coverage.

Built-in targets run in-process and are deterministic.  External targets are
command templates in which a single ``@@`` token is replaced with the path of
a temp file holding the input; a run that dies from a signal is a crash.  An
instrumented external target may dump its 64 KiB edge map into the file named
by ``MUTAFUZZ_COV_FILE``; otherwise its coverage is empty.
"""

from __future__ import annotations

import os
import resource
import shlex
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass, field

from mutafuzz.corpus import MAP_SIZE, CoverageMap
from mutafuzz.errors import InputTooLarge, InvalidConfig, TargetSpawnFailure, UnknownTarget
from mutafuzz.targets import BUILTIN_TARGETS, TargetCrash

COV_FILE_ENV = "MUTAFUZZ_COV_FILE"
WORKDIR_ENV = "MUTAFUZZ_WORKDIR"
DEFAULT_TIMEOUT_MS = 1000
DEFAULT_MAX_INPUT = 1 << 20


@dataclass(frozen=True)
class TargetSpec:
    kind: str  # "builtin" | "external"
    name: str | None = None
    command: str | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    mem_limit: int | None = None
    workdir: str | None = None
    max_input: int = DEFAULT_MAX_INPUT

    def __post_init__(self):
        if self.kind == "builtin":
            if self.name not in BUILTIN_TARGETS:
                raise UnknownTarget(f"no built-in target named {self.name!r}")
        elif self.kind == "external":
            if not self.command or self.command.count("@@") != 1:
                raise InvalidConfig("external command template needs exactly one '@@'")
        else:
            raise InvalidConfig(f"unknown target kind {self.kind!r}")
        if self.timeout_ms <= 0:
            raise InvalidConfig("timeout must be positive")

    @classmethod
    def parse(cls, text: str, **kwargs) -> TargetSpec:
        """Parse ``builtin:NAME`` or ``ext:COMMAND @@`` (``external:`` also accepted)."""
        kind, sep, rest = text.partition(":")
        if not sep:
            raise InvalidConfig(f"target {text!r} must look like builtin:NAME or ext:COMMAND")
        if kind == "builtin":
            return cls("builtin", name=rest, **kwargs)
        if kind in ("ext", "external"):
            return cls("external", command=rest, **kwargs)
        raise InvalidConfig(f"unknown target kind {kind!r}")

    def __str__(self) -> str:
        return f"builtin:{self.name}" if self.kind == "builtin" else f"ext:{self.command}"

    @property
    def edges_total(self) -> int:
        return len(BUILTIN_TARGETS[self.name].edges) if self.kind == "builtin" else 0

    @property
    def program(self) -> str:
        if self.kind == "builtin":
            return self.name
        return os.path.basename(shlex.split(self.command)[0])


@dataclass
class RunOutcome:
    status: str  # "ok" | "crash" | "timeout"
    coverage: CoverageMap
    signal_or_code: str | None = None
    crash_site: str | None = None
    duration_us: int = field(default=0, compare=False)

    @property
    def crashed(self) -> bool:
        return self.status == "crash"


def list_builtin_targets() -> list[tuple[str, str]]:
    return [(t.name, f"{t.description}; planted crash: {t.crash}") for t in BUILTIN_TARGETS.values()]


def execute(target: TargetSpec, data: bytes) -> RunOutcome:
    if len(data) > target.max_input:
        raise InputTooLarge(f"input of {len(data)} bytes exceeds {target.max_input}")
    if target.kind == "builtin":
        return _execute_builtin(target.name, data)
    return _execute_external(target, data)


def _execute_builtin(name: str, data: bytes) -> RunOutcome:
    t = BUILTIN_TARGETS[name]
    slots = t.slots
    hits: dict[int, int] = {}

    def hit(label: str) -> None:
        s = slots[label]
        hits[s] = hits.get(s, 0) + 1

    start = time.perf_counter_ns()
    status, sig, site = "ok", None, None
    try:
        t.run(data, hit)
    except TargetCrash as crash:
        status, sig, site = "crash", crash.signal, crash.site
    duration = (time.perf_counter_ns() - start) // 1000
    return RunOutcome(status, CoverageMap(hits), sig, site, duration)


def _workdir(target: TargetSpec) -> str:
    path = target.workdir or os.environ.get(WORKDIR_ENV) or tempfile.gettempdir()
    os.makedirs(path, exist_ok=True)
    return path


def _limit_memory(limit: int):
    def apply():
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))

    return apply


def _execute_external(target: TargetSpec, data: bytes) -> RunOutcome:
    workdir = _workdir(target)
    fd, input_path = tempfile.mkstemp(prefix="cur_input_", dir=workdir)
    cov_fd, cov_path = tempfile.mkstemp(prefix="cov_", dir=workdir)
    os.close(cov_fd)
    os.unlink(cov_path)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        argv = [tok.replace("@@", input_path) for tok in shlex.split(target.command)]
        env = dict(os.environ, **{COV_FILE_ENV: cov_path})
        start = time.perf_counter_ns()
        try:
            proc = subprocess.Popen(
                argv,
                stdin=subprocess.DEVNULL,
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
                env=env,
                cwd=workdir,
                start_new_session=True,
                preexec_fn=_limit_memory(target.mem_limit) if target.mem_limit else None,
            )
        except OSError as e:
            raise TargetSpawnFailure(f"cannot start {argv[0]!r}: {e}") from e
        try:
            rc = proc.wait(timeout=target.timeout_ms / 1000)
        except subprocess.TimeoutExpired:
            _kill_group(proc)
            duration = (time.perf_counter_ns() - start) // 1000
            return RunOutcome("timeout", CoverageMap(), None, None, duration)
        duration = (time.perf_counter_ns() - start) // 1000
        coverage = _read_coverage(cov_path)
        if rc < 0:
            try:
                sig = signal.Signals(-rc).name
            except ValueError:
                sig = f"signal {-rc}"
            return RunOutcome("crash", coverage, sig, None, duration)
        return RunOutcome("ok", coverage, str(rc), None, duration)
    finally:
        for path in (input_path, cov_path):
            try:
                os.unlink(path)
            except FileNotFoundError:
                pass


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except ProcessLookupError:
        pass
    proc.wait()


def _read_coverage(path: str) -> CoverageMap:
    try:
        with open(path, "rb") as f:
            raw = f.read(MAP_SIZE + 1)
    except FileNotFoundError:
        return CoverageMap()
    if len(raw) != MAP_SIZE:
        return CoverageMap()
    return CoverageMap.from_bytes(raw)
