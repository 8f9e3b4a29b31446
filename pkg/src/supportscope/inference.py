"""Chat-completions client: prompt rendering, greedy / K-sample runs, retries, resumable output."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Sequence

import httpx

from supportscope._io import ValidationError

if TYPE_CHECKING:
    from supportscope.datasets import McqItem

logger = logging.getLogger(__name__)

GREEDY = "GREEDY"
SAMPLED = "SAMPLED"

ANSWER_INSTRUCTION = (
    "Reason step by step inside <think></think> tags, then give only the letter "
    "of the correct option inside <answer></answer> tags."
)
DEFAULT_TEMPLATE = "{question}\n{options}"

_MIME = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}
_RETRYABLE_STATUS = {408, 409, 425, 429}


@dataclass
class EndpointConfig:
    base_url: str
    model_name: str
    api_key: str | None = field(default=None, repr=False)
    timeout: float = 120.0
    max_retries: int = 3
    max_concurrency: int = 8
    max_tokens: int = 1024
    backoff_base: float = 1.0

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValidationError("endpoint.max_concurrency must be >= 1")
        if self.max_retries < 0:
            raise ValidationError("endpoint.max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValidationError("endpoint.timeout must be > 0")
        if self.max_tokens < 1:
            raise ValidationError("endpoint.max_tokens must be >= 1")
        if self.backoff_base < 0:
            raise ValidationError("endpoint.backoff_base must be >= 0")
        self.base_url = self.base_url.rstrip("/")

    @property
    def fingerprint(self) -> str:
        return f"{self.base_url}#{self.model_name}"

    @property
    def url(self) -> str:
        return f"{self.base_url}/v1/chat/completions"


@dataclass
class SamplingPlan:
    mode: str = SAMPLED
    k: int = 16
    temperature: float = 0.7
    top_p: float = 0.9
    seed_base: int = 0

    def __post_init__(self):
        if self.mode == GREEDY:
            self.k = 1
            self.temperature = 0.0
        elif self.mode == SAMPLED:
            if self.k < 1:
                raise ValidationError("sampling.k must be >= 1")
            if not self.temperature > 0:
                raise ValidationError("sampling.temperature must be > 0 for sampled runs")
            if not 0 < self.top_p <= 1:
                raise ValidationError("sampling.top_p must be in (0, 1]")
        else:
            raise ValidationError(f"sampling mode must be GREEDY or SAMPLED, got {self.mode!r}")

    @classmethod
    def greedy(cls, seed_base: int = 0) -> "SamplingPlan":
        return cls(mode=GREEDY, k=1, temperature=0.0, top_p=1.0, seed_base=seed_base)


@dataclass
class RawResponse:
    item_id: str
    sample_index: int
    mode: str
    text: str
    request_seed: int
    latency_ms: int
    endpoint_error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RawResponse":
        return cls(
            item_id=str(d["item_id"]),
            sample_index=int(d["sample_index"]),
            mode=str(d["mode"]),
            text=str(d.get("text", "")),
            request_seed=int(d.get("request_seed", 0)),
            latency_ms=int(d.get("latency_ms", 0)),
            endpoint_error=d.get("endpoint_error"),
        )


@dataclass
class PromptTemplate:
    text: str = DEFAULT_TEMPLATE
    embed_item_marker: bool = True

    def __post_init__(self):
        for placeholder in ("{question}", "{options}"):
            if placeholder not in self.text:
                raise ValidationError(f"prompt template is missing the {placeholder} placeholder")


@dataclass
class RunSummary:
    requested: int = 0
    skipped_existing: int = 0
    completed: int = 0
    failed: int = 0
    retries: int = 0
    elapsed_s: float = 0.0

    @property
    def failure_fraction(self) -> float:
        done = self.completed + self.failed
        return self.failed / done if done else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failure_fraction"] = self.failure_fraction
        return d


@dataclass
class ChatResult:
    text: str | None
    error: str | None
    latency_ms: int
    attempts: int


# ------------------------------------------------------------------ prompts


def image_content_part(path: str | os.PathLike) -> dict:
    ext = Path(path).suffix.lower()
    if ext not in _MIME:
        raise ValidationError(f"unsupported image extension {ext!r} for {path}")
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read image {path}: {exc.strerror}") from None
    uri = f"data:{_MIME[ext]};base64," + base64.b64encode(data).decode("ascii")
    return {"type": "image_url", "image_url": {"url": uri}}


def render_options(item: "McqItem") -> str:
    return "\n".join(f"{letter}. {text}" for letter, text in item.options)


def render_text(item: "McqItem", template: PromptTemplate) -> str:
    body = template.text.format(question=item.question, options=render_options(item))
    text = f"{body}\n{ANSWER_INSTRUCTION}"
    if template.embed_item_marker:
        text = f"[item:{item.item_id}]\n{text}"
    return text


def render_prompt(item: "McqItem", template: PromptTemplate | None = None, model: str | None = None) -> dict:
    """Build the request body (without sampling fields) for one item."""
    template = template or PromptTemplate()
    content = [image_content_part(item.image_path), {"type": "text", "text": render_text(item, template)}]
    body = {"messages": [{"role": "user", "content": content}]}
    if model is not None:
        body = {"model": model, **body}
    return body


def stable_hash(item_id: str) -> int:
    return int.from_bytes(hashlib.sha256(item_id.encode("utf-8")).digest()[:4], "big")


def request_seed(plan: SamplingPlan, item_id: str, sample_index: int) -> int:
    return plan.seed_base + stable_hash(item_id) * plan.k + sample_index


def sampling_fields(temperature: float, top_p: float | None, max_tokens: int, seed: int | None) -> dict:
    fields: dict = {"temperature": temperature}
    if top_p is not None and temperature > 0:
        fields["top_p"] = top_p
    fields["max_tokens"] = max_tokens
    if seed is not None:
        fields["seed"] = seed
    fields["n"] = 1
    return fields


# ------------------------------------------------------------------ transport


class ChatClient:
    """Thread-safe chat-completions caller with retries and full-jitter backoff."""

    def __init__(self, endpoint: EndpointConfig, sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self._sleep = sleep
        self._jitter = random.Random()
        self._lock = threading.Lock()
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key:
            headers["Authorization"] = f"Bearer {endpoint.api_key}"
        limits = httpx.Limits(
            max_connections=endpoint.max_concurrency, max_keepalive_connections=endpoint.max_concurrency
        )
        self._http = httpx.Client(headers=headers, timeout=endpoint.timeout, limits=limits)

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _backoff(self, attempt: int) -> float:
        with self._lock:
            return self._jitter.uniform(0.0, self.endpoint.backoff_base * 2.0**attempt)

    def complete(self, body: dict) -> ChatResult:
        body = {"model": self.endpoint.model_name, **body}
        payload = json.dumps(body).encode("utf-8")
        error = "no attempt made"
        start = time.monotonic()
        attempts = 0
        for attempt in range(self.endpoint.max_retries + 1):
            attempts += 1
            try:
                resp = self._http.post(self.endpoint.url, content=payload)
            except httpx.HTTPError as exc:
                error = f"{type(exc).__name__}: {exc}"
                retryable = True
            else:
                if resp.status_code == 200:
                    try:
                        text = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError):
                        error = "malformed completion payload"
                        retryable = True
                    else:
                        if isinstance(text, str) and text:
                            return ChatResult(text, None, _ms_since(start), attempts)
                        error = "empty completion"
                        retryable = True
                else:
                    error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                    retryable = resp.status_code >= 500 or resp.status_code in _RETRYABLE_STATUS
            if not retryable or attempt == self.endpoint.max_retries:
                break
            self._sleep(self._backoff(attempt))
        return ChatResult(None, error, _ms_since(start), attempts)


def _ms_since(start: float) -> int:
    return int(round((time.monotonic() - start) * 1000))


def chat_many(
    message_lists: Sequence[list[dict]],
    endpoint: EndpointConfig,
    temperature: float = 0.0,
    top_p: float | None = None,
) -> list[ChatResult]:
    """Send independent single-turn requests with bounded concurrency; results keep input order."""
    if not message_lists:
        return []
    extra = sampling_fields(temperature, top_p, endpoint.max_tokens, None)
    with ChatClient(endpoint) as client, ThreadPoolExecutor(endpoint.max_concurrency) as pool:
        futures = [pool.submit(client.complete, {"messages": m, **extra}) for m in message_lists]
        return [f.result() for f in futures]


# ------------------------------------------------------------------ runs


def _truncate_partial_tail(path: Path) -> None:
    """Drop a trailing line cut short by an interrupted writer."""
    if not path.exists() or path.stat().st_size == 0:
        return
    with open(path, "rb+") as fh:
        fh.seek(-1, os.SEEK_END)
        if fh.read(1) == b"\n":
            return
        fh.seek(0)
        cut = fh.read().rfind(b"\n") + 1
        fh.truncate(cut)
        logger.warning("dropped truncated trailing record in %s", path)


def load_responses(path: str | os.PathLike) -> list[RawResponse]:
    """Load a response file, one record per (item_id, sample_index).

    When a pair appears more than once (a failed request retried on resume),
    the first successful record wins, else the last failure. Output is sorted
    by ``(item_id, sample_index)``.
    """
    best: dict[tuple[str, int], RawResponse] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = RawResponse.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                if not line.endswith("\n"):
                    continue  # interrupted tail
                raise ValidationError(f"{path}:{lineno}: malformed response record") from None
            key = (rec.item_id, rec.sample_index)
            prev = best.get(key)
            if prev is None or prev.endpoint_error is not None:
                best[key] = rec
    return [best[k] for k in sorted(best)]


def run_plan(
    items: Sequence["McqItem"],
    endpoint: EndpointConfig,
    plan: SamplingPlan,
    out: str | os.PathLike,
    template: PromptTemplate | None = None,
    retry_failed: bool = False,
    on_record: Callable[[RawResponse], None] | None = None,
) -> RunSummary:
    """Run ``plan`` over ``items``, appending one RawResponse line per request to ``out``.

    Pairs already present in ``out`` are skipped, so an interrupted run can be
    resumed by calling again with the same arguments.
    """
    if not items:
        raise ValidationError("no items to evaluate")
    template = template or PromptTemplate()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _truncate_partial_tail(out)

    done: set[tuple[str, int]] = set()
    if out.exists():
        for rec in load_responses(out):
            if rec.mode != plan.mode:
                raise ValidationError(f"{out} holds {rec.mode} records; refusing to mix with a {plan.mode} plan")
            if rec.endpoint_error is None or not retry_failed:
                done.add((rec.item_id, rec.sample_index))

    summary = RunSummary()
    todo = []
    for item in items:
        for s in range(plan.k):
            summary.requested += 1
            if (item.item_id, s) in done:
                summary.skipped_existing += 1
            else:
                todo.append((item, s))
    if not todo:
        return summary

    top_p = plan.top_p if plan.mode == SAMPLED else None
    rendered: dict[str, dict] = {}
    tally = threading.Lock()
    start = time.monotonic()

    def job(item: "McqItem", s: int) -> RawResponse:
        seed = request_seed(plan, item.item_id, s)
        body = {**rendered[item.item_id], **sampling_fields(plan.temperature, top_p, endpoint.max_tokens, seed)}
        res = client.complete(body)
        with tally:
            summary.retries += res.attempts - 1
        return RawResponse(item.item_id, s, plan.mode, res.text or "", seed, res.latency_ms, res.error)

    # render once up front so image errors surface before any network call
    for item in {it.item_id: it for it, _ in todo}.values():
        rendered[item.item_id] = render_prompt(item, template)

    with ChatClient(endpoint) as client, open(out, "a", encoding="utf-8", newline="\n") as fh:
        pool = ThreadPoolExecutor(endpoint.max_concurrency)
        try:
            futures = [pool.submit(job, item, s) for item, s in todo]
            for fut in as_completed(futures):
                rec = fut.result()
                fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
                fh.flush()
                if rec.endpoint_error is None:
                    summary.completed += 1
                else:
                    summary.failed += 1
                if on_record is not None:
                    on_record(rec)
        finally:
            pool.shutdown(wait=True, cancel_futures=True)
            summary.elapsed_s = time.monotonic() - start
    return summary
