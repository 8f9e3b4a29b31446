"""Answer extraction and correctness verdicts, with an optional judge fallback."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

from supportscope._io import ValidationError, read_jsonl, write_jsonl
from supportscope.datasets import McqItem
from supportscope.inference import EndpointConfig, RawResponse, chat_many, render_options

CORRECT = "CORRECT"
WRONG = "WRONG"
UNPARSEABLE = "UNPARSEABLE"
ENDPOINT_ERROR = "ENDPOINT_ERROR"
VERDICTS = (CORRECT, WRONG, UNPARSEABLE, ENDPOINT_ERROR)

RULE = "RULE"
JUDGE = "JUDGE"
RULE_ONLY = "RULE_ONLY"
RULE_THEN_JUDGE = "RULE_THEN_JUDGE"

MAX_PARSE_CHARS = 200_000

_ANSWER_SPAN = re.compile(r"<\s*answer\s*>(.*?)<\s*/\s*answer\s*>", re.IGNORECASE | re.DOTALL)
_LEADING_LETTER = re.compile(r"^[\s\"'`*(\[]*(?:option\s+)?([A-Za-z])(?![A-Za-z0-9])", re.IGNORECASE)

JUDGE_TEMPLATE = (
    "You are grading a multiple-choice answer.\n"
    "Question: {question}\n"
    "Options:\n{options}\n"
    "Correct option: {correct}\n"
    "Model response:\n{response}\n"
    "Does the response select the correct option? Reply with YES or NO only."
)


@dataclass
class SampleRecord:
    item_id: str
    sample_index: int
    mode: str
    raw_text: str
    parsed_letter: str | None
    verdict: str
    verifier: str
    judge_raw: str | None = None
    note: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        try:
            rec = cls(**{k: d.get(k) for k in cls.__dataclass_fields__})
        except TypeError as exc:
            raise ValidationError(f"malformed sample record: {exc}") from None
        if rec.verdict not in VERDICTS:
            raise ValidationError(f"unknown verdict {rec.verdict!r} for item {rec.item_id!r}")
        return rec

    @property
    def is_correct(self) -> bool:
        return self.verdict == CORRECT


def parse_answer(text: str) -> str | None:
    """Return the option letter committed to in the last ``<answer>`` span, if any.

    >>> parse_answer("<think>...</think><answer> b) melanoma </answer>")
    'B'
    """
    if not isinstance(text, str):
        return None
    if len(text) > MAX_PARSE_CHARS:
        text = text[-MAX_PARSE_CHARS:]
    spans = _ANSWER_SPAN.findall(text)
    if not spans:
        return None
    m = _LEADING_LETTER.match(spans[-1])
    return m.group(1).upper() if m else None


def judge_prompt(item: McqItem, response_text: str, embed_marker: bool = True) -> str:
    text = JUDGE_TEMPLATE.format(
        question=item.question, options=render_options(item), correct=item.correct_letter, response=response_text
    )
    return f"[judge:{item.item_id}]\n{text}" if embed_marker else text


def judge_verdict(text: str) -> str:
    word = text.strip().strip(".!\"'*").strip().upper()
    if word == "YES":
        return CORRECT
    if word == "NO":
        return WRONG
    return UNPARSEABLE


def _rule_record(rec: RawResponse, item: McqItem) -> SampleRecord:
    if rec.endpoint_error is not None:
        return SampleRecord(rec.item_id, rec.sample_index, rec.mode, rec.text, None, ENDPOINT_ERROR, RULE,
                            note=rec.endpoint_error)
    letter = parse_answer(rec.text)
    if letter is None:
        verdict = UNPARSEABLE
    else:
        verdict = CORRECT if letter == item.correct_letter else WRONG
    return SampleRecord(rec.item_id, rec.sample_index, rec.mode, rec.text, letter, verdict, RULE)


def verify(
    records: Sequence[RawResponse],
    items: Mapping[str, McqItem],
    policy: str = RULE_ONLY,
    judge: EndpointConfig | None = None,
    embed_marker: bool = True,
) -> list[SampleRecord]:
    """Turn raw responses into verdicts.

    Under RULE_THEN_JUDGE only UNPARSEABLE records go to the judge; a
    successful rule parse is never overridden.
    """
    if policy not in (RULE_ONLY, RULE_THEN_JUDGE):
        raise ValidationError(f"unknown verification policy {policy!r}")
    if policy == RULE_THEN_JUDGE and judge is None:
        raise ValidationError("policy RULE_THEN_JUDGE needs a judge endpoint")
    missing = sorted({r.item_id for r in records} - set(items))
    if missing:
        raise ValidationError(f"{len(missing)} responses reference unknown items (first: {missing[0]!r})")

    ordered = sorted(records, key=lambda r: (r.mode, r.item_id, r.sample_index))
    out = [_rule_record(r, items[r.item_id]) for r in ordered]
    if policy == RULE_ONLY:
        return out

    pending = [i for i, rec in enumerate(out) if rec.verdict == UNPARSEABLE]
    messages = [
        [{"role": "user", "content": [{"type": "text", "text": judge_prompt(items[out[i].item_id], out[i].raw_text,
                                                                             embed_marker)}]}]
        for i in pending
    ]
    for i, res in zip(pending, chat_many(messages, judge, temperature=0.0)):
        rec = out[i]
        if res.error is not None:
            rec.note = f"judge error: {res.error}"
            continue
        rec.verifier = JUDGE
        rec.judge_raw = res.text
        rec.verdict = judge_verdict(res.text)
    return out


def verdict_counts(records: Sequence[SampleRecord]) -> dict[str, int]:
    counts = dict.fromkeys(VERDICTS, 0)
    for r in records:
        counts[r.verdict] += 1
    return counts


def save_records(records: Sequence[SampleRecord], path) -> None:
    write_jsonl(path, (r.to_dict() for r in records))


def load_records(path) -> list[SampleRecord]:
    return [SampleRecord.from_dict(d) for d in read_jsonl(path)]
