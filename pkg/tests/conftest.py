import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from ragcap import build_store


def oracle_cosine(a, b):
    """Independent double-precision cosine (math.fsum accumulation)."""
    num = math.fsum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(math.fsum(float(x) * float(x) for x in a))
    nb = math.sqrt(math.fsum(float(x) * float(x) for x in b))
    return max(-1.0, min(1.0, num / (na * nb)))


def random_store(n, dim, seed, label="store", prefix="c", source="fixture"):
    rng = np.random.default_rng(seed)
    records = [
        (f"{prefix}{i:04d}", f"{label} caption {i:04d}", rng.normal(size=dim), source)
        for i in range(n)
    ]
    return build_store(records, label=label)


def unit_with_cosine(s, dim=8, axis=0, other=1):
    """Unit vector whose cosine with e_axis is exactly s (within float64)."""
    v = np.zeros(dim)
    v[axis] = s
    v[other] = math.sqrt(max(0.0, 1.0 - s * s))
    return v


@pytest.fixture(scope="session")
def fixture_store():
    """The 50-caption fixture corpus used across the suite."""
    return random_store(50, 32, seed=20240917, label="fixture", prefix="fx")


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length) or b"{}")
        with self.server.lock:
            self.server.request_count += 1
            self.server.concurrent += 1
            self.server.max_concurrent = max(
                self.server.max_concurrent, self.server.concurrent
            )
            self.server.auth_headers.append(self.headers.get("Authorization"))
        try:
            status, payload = self.server.script(self.server.request_count, body)
        finally:
            with self.server.lock:
                self.server.concurrent -= 1
        raw = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


class StubServer:
    """Scriptable local HTTP endpoint.

    ``script(request_number, body) -> (status, payload)`` where payload is a
    JSON-serializable object or raw bytes.
    """

    def __init__(self, script):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self.httpd.script = script
        self.httpd.lock = threading.Lock()
        self.httpd.request_count = 0
        self.httpd.concurrent = 0
        self.httpd.max_concurrent = 0
        self.httpd.auth_headers = []
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}/generate"

    @property
    def request_count(self):
        return self.httpd.request_count

    @property
    def max_concurrent(self):
        return self.httpd.max_concurrent

    @property
    def auth_headers(self):
        return list(self.httpd.auth_headers)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
