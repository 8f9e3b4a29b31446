"""Local chat-completions test double with scripted, reproducible answer statistics.

The harness marks each request in-band with a first text line such as
``[item:<id>]`` (answer requests), ``[judge:<id>]`` (verification) or
``[modality:<id>]`` (modality tagging). The mock keys its behaviour on that
marker, so the whole pipeline runs hermetically with known Pass@K.
"""

from __future__ import annotations

import json
import logging
import random
import re
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterable

from supportscope._io import ValidationError, read_json

logger = logging.getLogger(__name__)

UNIFORM_WRONG = "UNIFORM_WRONG"

_MARKER = re.compile(r"^\[(item|judge|modality):([^\]\n]+)\]")
_OPTION_LINE = re.compile(r"^([A-Z])\. ", re.MULTILINE)
_JUDGE_KEY = re.compile(r"Correct option:\s*([A-Z])")


@dataclass
class ScriptedModelSpec:
    default_p_correct: float = 0.5
    per_item_p: dict[str, float] = field(default_factory=dict)
    answer_key: dict[str, str] = field(default_factory=dict)
    distractor_policy: str = UNIFORM_WRONG
    malformed_rate: float = 0.0
    error_rate: float = 0.0
    rng_seed: int = 0
    latency_s: float = 0.0
    judge_verdicts: dict[str, str] = field(default_factory=dict)  # correct letter -> verdict text
    judge_default: str = "YES"
    modality_answers: dict[str, str] = field(default_factory=dict)  # item_id -> reply text
    modality_default: str = "none"

    def __post_init__(self):
        probs = {"default_p_correct": self.default_p_correct, "malformed_rate": self.malformed_rate,
                 "error_rate": self.error_rate}
        probs.update({f"per_item_p[{k}]": v for k, v in self.per_item_p.items()})
        for name, value in probs.items():
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name}={value} is not a probability")
        if self.distractor_policy != UNIFORM_WRONG:
            raise ValidationError(f"unsupported distractor_policy {self.distractor_policy!r}")
        if self.latency_s < 0:
            raise ValidationError("latency_s must be >= 0")

    def p_for(self, item_id: str) -> float:
        return self.per_item_p.get(item_id, self.default_p_correct)

    @classmethod
    def for_items(cls, items: Iterable, p: float = 0.5, **kwargs) -> "ScriptedModelSpec":
        """Build a spec whose answer key comes from McqItem-like objects."""
        key = {it.item_id: it.correct_letter for it in items}
        return cls(default_p_correct=p, answer_key=key, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptedModelSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown mock spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ScriptedModelSpec":
        return cls.from_dict(read_json(path))


def sharpened(spec: ScriptedModelSpec, item_ids: Iterable[str], threshold: float = 0.3,
              pull: float = 0.75) -> ScriptedModelSpec:
    """Scripted RL-style sharpening: items above ``threshold`` move toward p=1, the rest drop to 0."""
    new_p = {}
    for item_id in item_ids:
        p = spec.p_for(item_id)
        new_p[item_id] = p + pull * (1.0 - p) if p > threshold else 0.0
    return replace(spec, per_item_p=new_p)


def _user_text(body: dict) -> str:
    msgs = body.get("messages") or []
    if not msgs:
        return ""
    content = msgs[-1].get("content", "")
    if isinstance(content, str):
        return content
    return "\n".join(part.get("text", "") for part in content if part.get("type") == "text")


def _completion(text: str, model: str, counter: int) -> bytes:
    payload = {
        "id": f"mock-{counter}",
        "object": "chat.completion",
        "model": model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    }
    return json.dumps(payload, sort_keys=True).encode("utf-8")


def _error(status: int, message: str) -> tuple[int, bytes]:
    return status, json.dumps({"error": {"message": message}}).encode("utf-8")


class ScriptedModel:
    """Pure response function: ``respond(body, counter)`` depends only on the spec and its arguments."""

    def __init__(self, spec: ScriptedModelSpec):
        self.spec = spec

    def respond(self, body: dict, counter: int) -> tuple[int, bytes]:
        spec = self.spec
        rng = random.Random(f"{spec.rng_seed}:{counter}")
        if rng.random() < spec.error_rate:
            return _error(500, "scripted server error")
        text = _user_text(body)
        m = _MARKER.match(text)
        if not m:
            return _error(400, "request carries no [item:...] marker")
        kind, item_id = m.group(1), m.group(2)
        model = str(body.get("model", "mock"))

        if kind == "modality":
            return 200, _completion(spec.modality_answers.get(item_id, spec.modality_default), model, counter)
        if kind == "judge":
            j = _JUDGE_KEY.search(text)
            verdict = spec.judge_verdicts.get(j.group(1), spec.judge_default) if j else spec.judge_default
            return 200, _completion(verdict, model, counter)

        correct = spec.answer_key.get(item_id)
        if correct is None:
            return _error(400, f"no answer key for item {item_id!r}")
        if rng.random() < spec.malformed_rate:
            return 200, _completion("<think>scripted</think>I am not sure.", model, counter)
        letters = sorted(set(_OPTION_LINE.findall(text)) | {correct})
        if rng.random() < spec.p_for(item_id):
            letter = correct
        else:
            wrong = [x for x in letters if x != correct]
            letter = rng.choice(wrong) if wrong else correct
        return 200, _completion(f"<think>scripted</think><answer>{letter}</answer>", model, counter)


class MockServer:
    """A running mock; use as a context manager or call :meth:`stop`."""

    def __init__(self, spec: ScriptedModelSpec, port: int = 0, host: str = "127.0.0.1"):
        self.model = ScriptedModel(spec)
        self._counter = 0
        self._lock = threading.Lock()
        self.in_flight = 0
        self.high_water = 0
        self.log: list[tuple[int, dict, int, bytes]] = []
        self.record_log = False
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"
            disable_nagle_algorithm = True

            def log_message(self, fmt, *args):
                logger.debug("mock %s", fmt % args)

            def do_POST(self):
                with server._lock:
                    server.in_flight += 1
                    server.high_water = max(server.high_water, server.in_flight)
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    raw = self.rfile.read(length)
                    if self.path.rstrip("/") != "/v1/chat/completions":
                        status, payload = _error(404, f"unknown route {self.path}")
                    else:
                        try:
                            body = json.loads(raw)
                        except json.JSONDecodeError:
                            body = None
                        if not isinstance(body, dict):
                            status, payload = _error(400, "body is not a JSON object")
                        else:
                            with server._lock:
                                counter = server._counter
                                server._counter += 1
                            status, payload = server.model.respond(body, counter)
                            if server.record_log:
                                with server._lock:
                                    server.log.append((counter, body, status, payload))
                    if server.model.spec.latency_s:
                        time.sleep(server.model.spec.latency_s)
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                finally:
                    with server._lock:
                        server.in_flight -= 1

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._httpd.daemon_threads = True
        self.host, self.port = self._httpd.server_address[:2]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    @property
    def request_count(self) -> int:
        return self._counter

    @property
    def spec(self) -> ScriptedModelSpec:
        return self.model.spec

    @spec.setter
    def spec(self, value: ScriptedModelSpec):
        self.model = ScriptedModel(value)

    def reset_stats(self):
        with self._lock:
            self.high_water = 0
            self.log.clear()

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(spec: ScriptedModelSpec, port: int = 0) -> MockServer:
    return MockServer(spec, port)
