import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from mutafuzz.targets import BUILTIN_TARGETS


class StubOracleServer:
    """Local HTTP endpoint answering every POST with ``respond(request_body)``.

    An integer return value is sent as an HTTP error status.
    """

    def __init__(self, respond):
        self.respond = respond
        self.requests: list[dict] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                stub.requests.append(body)
                payload = stub.respond(body)
                if isinstance(payload, int):
                    self.send_error(payload)
                    return
                raw = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/predict"
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        self.running = True

    def shutdown(self):
        if self.running:
            self.server.shutdown()
            self.server.server_close()
            self.running = False


@pytest.fixture
def stub_server():
    servers = []

    def start(respond):
        s = StubOracleServer(respond)
        servers.append(s)
        return s

    yield start
    for s in servers:
        s.shutdown()


def write_seed_dir(path, *seeds):
    path.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(seeds):
        (path / f"seed{i}").write_bytes(s)
    return path


@pytest.fixture
def magic_seeds(tmp_path):
    return write_seed_dir(tmp_path / "seeds_magic", bytes(8))


@pytest.fixture
def elf_seeds(tmp_path):
    return write_seed_dir(tmp_path / "seeds_elf", BUILTIN_TARGETS["mini_elf"].seed())


# -- acceptance reporting ----------------------------------------------------------

_CRITERIA_LINES: list[str] = []


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        extra = f" ({'; '.join(self.details)})" if self.details else ""
        if exc_type is not None:
            extra += f" [{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}]"
        line = f"[{status}] criterion {self.number}: {self.title}{extra}"
        _CRITERIA_LINES.append(line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
