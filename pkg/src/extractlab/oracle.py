"""Budget-metered black-box access to a frozen victim model.

The session is the only channel between attacker and victim: it labels
queries, enforces the query budget atomically, and optionally logs
responses. Coverage is an evaluator-side metric and never leaks to the
attacker through the query interface.
"""

import base64
import hashlib
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests

from .audio import Waveform
from .corpus import LabelHistogram
from .models import KnaggCNN, predict_soft


class BudgetExhaustedError(RuntimeError):
    def __init__(self, remaining: int, requested: int):
        super().__init__(f"budget refused: {requested} queries requested, {remaining} remaining")
        self.remaining = remaining
        self.requested = requested


class MalformedQueryError(ValueError):
    pass


@dataclass(frozen=True)
class CoverageReport:
    unique_predicted: int
    unique_victim_train: int
    ratio: float
    volume: int


def coverage_from_labels(hard_labels, unique_victim_train: int, volume: int | None = None) -> CoverageReport:
    labels = np.asarray(hard_labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("coverage needs a non-empty query set")
    if unique_victim_train < 1:
        raise ValueError("victim training label count must be >= 1")
    unique = int(np.unique(labels).size)
    return CoverageReport(
        unique_predicted=unique,
        unique_victim_train=unique_victim_train,
        ratio=unique / unique_victim_train,
        volume=int(volume if volume is not None else labels.size),
    )


class OracleSession:
    """Wraps a trained victim as a thread-safe labeled-query service."""

    def __init__(
        self,
        victim: KnaggCNN,
        label_mode: str = "soft",
        budget_limit: int | None = None,
        train_histogram: LabelHistogram | None = None,
        log_path=None,
    ):
        if label_mode not in ("soft", "hard"):
            raise ValueError(f"label_mode must be 'soft' or 'hard', got {label_mode!r}")
        victim.eval()
        for p in victim.parameters():
            p.requires_grad_(False)
        self.victim = victim
        self.label_mode = label_mode
        self.budget_limit = budget_limit
        self.train_histogram = train_histogram
        self.queries_used = 0
        self._lock = threading.Lock()
        self._log_path = str(log_path) if log_path else None
        self._log_lock = threading.Lock()

    @property
    def input_len(self) -> int:
        return self.victim.cfg.input_len

    @property
    def n_classes(self) -> int:
        return self.victim.cfg.n_classes

    def remaining(self) -> int | None:
        if self.budget_limit is None:
            return None
        return self.budget_limit - self.queries_used

    def _admit(self, count: int) -> None:
        # check-and-increment under one lock: no lost updates, no over-admission
        with self._lock:
            if self.budget_limit is not None and self.queries_used + count > self.budget_limit:
                raise BudgetExhaustedError(self.budget_limit - self.queries_used, count)
            self.queries_used += count

    def query(self, waveforms) -> np.ndarray:
        """Label a batch. Soft mode: (B, C) probability vectors summing to 1.
        Hard mode: (B,) argmax ids, ties broken toward the lowest id.

        Malformed input is rejected before any budget is consumed.
        """
        if isinstance(waveforms, Waveform):
            waveforms = [waveforms]
        if len(waveforms) == 0:
            raise MalformedQueryError("empty batch")
        arrays = []
        for w in waveforms:
            samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float32)
            if samples.ndim != 1 or samples.size != self.input_len:
                raise MalformedQueryError(
                    f"query length {samples.size} does not match victim input {self.input_len}"
                )
            arrays.append(samples)
        self._admit(len(arrays))
        X = np.stack(arrays).astype(np.float32)
        probs = predict_soft(self.victim, X)
        hard = np.argmax(probs, axis=1).astype(np.int64)
        if self._log_path:
            with self._log_lock, open(self._log_path, "a") as fh:
                for samples, label in zip(arrays, hard):
                    digest = hashlib.sha1(samples.tobytes()).hexdigest()
                    fh.write(json.dumps({"query_sha1": digest, "label": int(label)}) + "\n")
        return probs if self.label_mode == "soft" else hard

    def coverage_of(self, waveforms) -> CoverageReport:
        """Evaluator-side coverage of a query set; consumes no budget."""
        if self.train_histogram is None:
            raise ValueError("session has no victim training histogram")
        X = np.stack([w.samples for w in waveforms]).astype(np.float32)
        hard = np.argmax(predict_soft(self.victim, X), axis=1)
        return coverage_from_labels(
            hard, int(np.count_nonzero(self.train_histogram.counts)), volume=len(waveforms)
        )


# ---------------------------------------------------------------------------
# HTTP face: POST /v1/query, GET /v1/budget
# ---------------------------------------------------------------------------


def _decode_samples(body: dict) -> np.ndarray:
    if "samples" in body:
        return np.asarray(body["samples"], dtype=np.float32)
    if "samples_b64" in body:
        return np.frombuffer(base64.b64decode(body["samples_b64"]), dtype="<f4").copy()
    raise MalformedQueryError("body must contain 'samples' or 'samples_b64'")


def _make_handler(session: OracleSession):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _send(self, code: int, payload: dict) -> None:
            data = json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path == "/v1/budget":
                self._send(200, {"used": session.queries_used, "limit": session.budget_limit})
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/v1/query":
                self._send(404, {"error": "not found"})
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                if "sample_rate" not in body:
                    raise MalformedQueryError("missing sample_rate")
                samples = _decode_samples(body)
                result = session.query([samples])
            except BudgetExhaustedError as exc:
                self._send(429, {"error": str(exc), "remaining": max(0, exc.remaining)})
                return
            except (MalformedQueryError, ValueError, KeyError, json.JSONDecodeError) as exc:
                self._send(400, {"error": str(exc)})
                return
            if session.label_mode == "soft":
                self._send(200, {"probabilities": [float(v) for v in result[0]]})
            else:
                self._send(200, {"label": int(result[0])})

        def log_message(self, fmt, *args):
            pass

    return Handler


class OracleServer:
    def __init__(self, session: OracleSession, host: str = "127.0.0.1", port: int = 0):
        self.session = session
        self.httpd = ThreadingHTTPServer((host, port), _make_handler(session))
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "OracleServer":
        self._thread.start()
        return self

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self) -> "OracleServer":
        return self.start()

    def __exit__(self, *exc):
        self.close()


def serve(session: OracleSession, host: str = "127.0.0.1", port: int = 0) -> OracleServer:
    """Start the HTTP oracle in a background thread; budget semantics are
    identical to in-process query()."""
    return OracleServer(session, host, port).start()


class RemoteOracleClient:
    """Attacker-side client with the same query() surface as OracleSession."""

    def __init__(self, url: str, label_mode: str = "soft", sample_rate: int = 16000, retries: int = 3):
        self.url = url.rstrip("/")
        self.label_mode = label_mode
        self.sample_rate = sample_rate
        self.retries = retries
        self._session = requests.Session()

    def _request(self, method: str, path: str, **kwargs):
        last = None
        for _ in range(self.retries):
            try:
                return self._session.request(method, self.url + path, timeout=30, **kwargs)
            except requests.ConnectionError as exc:
                last = exc
        raise ConnectionError(f"oracle unreachable after {self.retries} attempts: {last}")

    def budget(self) -> dict:
        resp = self._request("GET", "/v1/budget")
        resp.raise_for_status()
        return resp.json()

    @property
    def queries_used(self) -> int:
        return int(self.budget()["used"])

    def remaining(self) -> int | None:
        b = self.budget()
        if b["limit"] is None:
            return None
        return int(b["limit"]) - int(b["used"])

    def query(self, waveforms) -> np.ndarray:
        if isinstance(waveforms, Waveform):
            waveforms = [waveforms]
        results = []
        for w in waveforms:
            samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float32)
            body = {
                "sample_rate": self.sample_rate,
                "samples_b64": base64.b64encode(samples.astype("<f4").tobytes()).decode(),
            }
            resp = self._request("POST", "/v1/query", json=body)
            if resp.status_code == 429:
                raise BudgetExhaustedError(int(resp.json().get("remaining", 0)), 1)
            if resp.status_code == 400:
                raise MalformedQueryError(resp.json().get("error", "bad request"))
            resp.raise_for_status()
            payload = resp.json()
            if self.label_mode == "soft":
                results.append(np.asarray(payload["probabilities"], dtype=np.float32))
            else:
                results.append(payload["label"])
        if self.label_mode == "soft":
            return np.stack(results)
        return np.asarray(results, dtype=np.int64)
