"""Manifest ingestion, MCQ conversion, modality tagging and balanced subsets."""

from __future__ import annotations

import json
import logging
import random
import re
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from supportscope._io import ValidationError, iter_jsonl, read_jsonl, write_jsonl
from supportscope.inference import EndpointConfig, chat_many, image_content_part

logger = logging.getLogger(__name__)

LETTERS = string.ascii_uppercase
MAX_CLASSES = len(LETTERS)
NONE_LABEL = "none"
DEFAULT_VOCABULARY = ("mri", "ct", "ultrasound", "x-ray", "microscopy", "dermatology", "oct")
DEFAULT_QUESTION = "Which option best describes this image?"

MODALITY_PROMPT = (
    "Classify the imaging modality of this medical question and image.\n"
    "Question: {question}\n"
    "Choose exactly one of: {vocabulary}.\n"
    "If the modality is uncommon, ambiguous, or not clearly specified, answer: none.\n"
    "Reply with the category name only."
)


@dataclass
class ManifestEntry:
    item_id: str
    image_path: str
    label_index: int
    modality: str | None = None  # per-item override of the header modality


@dataclass
class DatasetManifest:
    task_id: str
    modality: str
    class_names: list[str]
    items: list[ManifestEntry] = field(default_factory=list)
    root: Path = field(default=Path("."), compare=False, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def modality_of(self, entry: ManifestEntry) -> str:
        return entry.modality if entry.modality is not None else self.modality


@dataclass
class McqItem:
    item_id: str
    task_id: str
    image_path: str
    question: str
    options: list[tuple[str, str]]
    correct_letter: str
    modality: str
    shuffle_seed_used: int | None

    def option_text(self, letter: str) -> str:
        for opt_letter, text in self.options:
            if opt_letter == letter:
                return text
        raise KeyError(letter)

    @property
    def correct_text(self) -> str:
        return self.option_text(self.correct_letter)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["options"] = [[letter, text] for letter, text in self.options]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "McqItem":
        try:
            item = cls(
                item_id=str(d["item_id"]),
                task_id=str(d["task_id"]),
                image_path=str(d["image_path"]),
                question=str(d["question"]),
                options=[(str(a), str(b)) for a, b in d["options"]],
                correct_letter=str(d["correct_letter"]),
                modality=str(d["modality"]),
                shuffle_seed_used=d.get("shuffle_seed_used"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed McqItem {d.get('item_id', '?')}: {exc!r}") from None
        letters = [letter for letter, _ in item.options]
        if letters != list(LETTERS[: len(letters)]):
            raise ValidationError(f"item {item.item_id}: option letters must run A, B, ... in order")
        if item.correct_letter not in letters:
            raise ValidationError(f"item {item.item_id}: correct_letter {item.correct_letter!r} not among options")
        return item


@dataclass
class ModalityTag:
    item_id: str
    predicted_modality: str
    raw_judge_output: str
    note: str | None = None


# ---------------------------------------------------------------- manifests


def _validate_header(header: dict, path) -> tuple[str, str, list[str]]:
    for key in ("task_id", "modality", "class_names"):
        if key not in header:
            raise ValidationError(f"{path}:1: header is missing key {key!r}")
    names = header["class_names"]
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ValidationError(f"{path}:1: class_names must be a list of strings")
    if len(names) < 2:
        raise ValidationError(f"{path}:1: need at least 2 classes, got {len(names)}")
    if len(names) > MAX_CLASSES:
        raise ValidationError(f"{path}:1: {len(names)} classes exceeds the {MAX_CLASSES}-letter option limit")
    if any(not n.strip() for n in names):
        raise ValidationError(f"{path}:1: class_names must be non-empty")
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}:1: class_names must be unique")
    return str(header["task_id"]), str(header["modality"]), list(names)


def load_manifest(
    path: str | Path,
    check_images: bool = False,
    vocabulary: Iterable[str] | None = None,
) -> DatasetManifest:
    """Read and validate a manifest (JSON header line followed by one entry per line).

    ``image_path`` values are resolved against the manifest's directory when
    ``check_images`` is set. ``vocabulary``, when given, restricts modality
    values (``"none"`` is always allowed).
    """
    path = Path(path)
    allowed = None if vocabulary is None else {v.lower() for v in vocabulary} | {NONE_LABEL}
    rows = iter_jsonl(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise ValidationError(f"{path}: empty manifest (no header line)") from None
    task_id, modality, names = _validate_header(header, path)
    manifest = DatasetManifest(task_id=task_id, modality=modality, class_names=names, root=path.parent)
    if allowed is not None and modality.lower() not in allowed:
        raise ValidationError(f"{path}:1: modality {modality!r} not in vocabulary")

    seen: set[str] = set()
    for lineno, obj in rows:
        try:
            item_id = obj["item_id"]
            image_path = obj["image_path"]
            label = obj["label_index"]
        except KeyError as exc:
            raise ValidationError(f"{path}:{lineno}: missing key {exc.args[0]!r}") from None
        if not isinstance(item_id, str) or not item_id:
            raise ValidationError(f"{path}:{lineno}: item_id must be a non-empty string")
        if not isinstance(label, int) or isinstance(label, bool):
            raise ValidationError(f"{path}:{lineno}: label_index must be an integer (item {item_id})")
        if item_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate item_id {item_id!r}")
        if not 0 <= label < len(names):
            raise ValidationError(
                f"{path}:{lineno}: label out of range for item {item_id!r} "
                f"(label_index={label}, classes={len(names)})"
            )
        entry_modality = obj.get("modality")
        if entry_modality is not None:
            entry_modality = str(entry_modality)
            if allowed is not None and entry_modality.lower() not in allowed:
                raise ValidationError(f"{path}:{lineno}: modality {entry_modality!r} not in vocabulary")
        if check_images and not (manifest.root / image_path).is_file():
            raise ValidationError(f"{path}:{lineno}: missing image file {image_path!r} for item {item_id!r}")
        seen.add(item_id)
        manifest.items.append(ManifestEntry(item_id, str(image_path), label, entry_modality))
    return manifest


def dump_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    header = {"task_id": manifest.task_id, "modality": manifest.modality, "class_names": manifest.class_names}
    rows = []
    for e in manifest.items:
        row = {"item_id": e.item_id, "image_path": e.image_path, "label_index": e.label_index}
        if e.modality is not None and e.modality != manifest.modality:
            row["modality"] = e.modality
        rows.append(row)
    write_jsonl(path, [header, *rows])


# -------------------------------------------------------------- conversion


def _option_permutation(n: int, seed: int, item_id: str) -> list[int]:
    order = list(range(n))
    # str seeds go through sha512, so this is stable across processes
    random.Random(f"{seed}:{item_id}").shuffle(order)
    return order


def convert_to_mcq(
    manifest: DatasetManifest,
    option_shuffle: bool = False,
    seed: int = 0,
    question: str = DEFAULT_QUESTION,
) -> list[McqItem]:
    out = []
    n = manifest.n_classes
    for entry in manifest.items:
        order = _option_permutation(n, seed, entry.item_id) if option_shuffle else list(range(n))
        options = [(LETTERS[pos], manifest.class_names[cls]) for pos, cls in enumerate(order)]
        correct = LETTERS[order.index(entry.label_index)]
        image = entry.image_path
        if not Path(image).is_absolute():
            image = (manifest.root / image).as_posix()
        out.append(
            McqItem(
                item_id=entry.item_id,
                task_id=manifest.task_id,
                image_path=image,
                question=question,
                options=options,
                correct_letter=correct,
                modality=manifest.modality_of(entry),
                shuffle_seed_used=seed if option_shuffle else None,
            )
        )
    return out


def save_items(items: Sequence[McqItem], path: str | Path) -> None:
    write_jsonl(path, (it.to_dict() for it in items))


def load_items(path: str | Path) -> list[McqItem]:
    items = [McqItem.from_dict(d) for d in read_jsonl(path)]
    ids = [(it.task_id, it.item_id) for it in items]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate (task_id, item_id) pairs")
    return items


# ---------------------------------------------------------------- balancing


def _allocate(sizes: dict[str, int], total_n: int) -> dict[str, int]:
    groups = sorted(sizes)
    base, rem = divmod(total_n, len(groups))
    quota = {g: base + (1 if i < rem else 0) for i, g in enumerate(groups)}
    take = {g: min(quota[g], sizes[g]) for g in groups}
    shortfall = total_n - sum(take.values())
    while shortfall:
        progressed = False
        for g in groups:
            if shortfall and take[g] < sizes[g]:
                take[g] += 1
                shortfall -= 1
                progressed = True
        if not progressed:
            break
    return take


def balanced_subset(
    items: Sequence[McqItem],
    total_n: int,
    seed: int = 0,
    group_by: str = "modality",
) -> list[McqItem]:
    """Select ``total_n`` items spread as evenly as supply allows across groups.

    Groups get ``total_n // G`` each, the remainder going one apiece to the
    lexicographically first groups. Short groups are taken whole and their
    shortfall handed out round-robin to groups that still have items.
    Items tagged ``"none"`` are dropped first when grouping by modality.
    """
    if group_by == "modality":
        key = lambda it: it.modality  # noqa: E731
        pool = [it for it in items if it.modality.lower() != NONE_LABEL]
    elif group_by == "label":
        key = lambda it: it.correct_text  # noqa: E731
        pool = list(items)
    else:
        raise ValidationError(f"group_by must be 'modality' or 'label', got {group_by!r}")

    groups: dict[str, list[McqItem]] = {}
    for it in pool:
        groups.setdefault(key(it), []).append(it)
    sizes = {g: len(v) for g, v in groups.items()}
    if total_n < 1:
        raise ValidationError("total_n must be positive")
    if total_n < len(groups):
        raise ValidationError(f"total_n={total_n} is smaller than the number of groups ({len(groups)})")
    if total_n > len(pool):
        avail = ", ".join(f"{g}={sizes[g]}" for g in sorted(sizes))
        raise ValidationError(f"total_n={total_n} exceeds available items {len(pool)} ({avail})")

    take = _allocate(sizes, total_n)
    chosen = []
    for g in sorted(groups):
        members = sorted(groups[g], key=lambda it: (it.task_id, it.item_id))
        random.Random(f"{seed}:{g}").shuffle(members)
        chosen.extend(members[: take[g]])
    return sorted(chosen, key=lambda it: (key(it), it.item_id, it.task_id))


# ------------------------------------------------------------------ tagging


def match_modality(text: str, vocabulary: Sequence[str]) -> str:
    """Map judge text to a vocabulary term; anything that is not a clean match is ``"none"``."""
    norm = text.strip()
    m = re.search(r"<answer>(.*?)</answer>", norm, flags=re.IGNORECASE | re.DOTALL)
    if m:
        norm = m.group(1)
    norm = norm.strip().strip(".\"'`*").strip().lower()
    norm = re.sub(r"^(modality|answer|category)\s*:\s*", "", norm)
    by_lower = {v.lower(): v.lower() for v in vocabulary}
    return by_lower.get(norm, NONE_LABEL)


def modality_request(item: McqItem, vocabulary: Sequence[str], embed_marker: bool = True) -> list[dict]:
    text = MODALITY_PROMPT.format(question=item.question, vocabulary=", ".join(vocabulary))
    if embed_marker:
        text = f"[modality:{item.item_id}]\n" + text
    content = [image_content_part(item.image_path), {"type": "text", "text": text}]
    return [{"role": "user", "content": content}]


def tag_modalities(
    items: Sequence[McqItem],
    judge: EndpointConfig,
    vocabulary: Sequence[str] = DEFAULT_VOCABULARY,
    embed_marker: bool = True,
) -> list[ModalityTag]:
    if not vocabulary:
        raise ValidationError("modality vocabulary must be non-empty")
    requests = []
    for it in items:
        try:
            requests.append(modality_request(it, vocabulary, embed_marker))
        except (OSError, ValidationError) as exc:
            requests.append(exc)
    to_send = [(i, r) for i, r in enumerate(requests) if not isinstance(r, Exception)]
    results = chat_many([r for _, r in to_send], judge, temperature=0.0)
    replies: dict[int, tuple[str | None, str | None]] = {}
    for (i, _), res in zip(to_send, results):
        replies[i] = (res.text, res.error)

    tags = []
    for i, it in enumerate(items):
        if isinstance(requests[i], Exception):
            tags.append(ModalityTag(it.item_id, NONE_LABEL, "", note=f"request not built: {requests[i]}"))
            continue
        text, error = replies[i]
        if error is not None:
            tags.append(ModalityTag(it.item_id, NONE_LABEL, "", note=f"judge error: {error}"))
        else:
            tags.append(ModalityTag(it.item_id, match_modality(text, vocabulary), text))
    return tags


def save_tags(tags: Sequence[ModalityTag], path: str | Path) -> None:
    rows = []
    for t in tags:
        row = {"item_id": t.item_id, "predicted_modality": t.predicted_modality, "raw_judge_output": t.raw_judge_output}
        if t.note is not None:
            row["note"] = t.note
        rows.append(row)
    write_jsonl(path, rows)


def load_tags(path: str | Path) -> list[ModalityTag]:
    return [
        ModalityTag(d["item_id"], d["predicted_modality"], d.get("raw_judge_output", ""), d.get("note"))
        for d in read_jsonl(path)
    ]


def apply_tags(items: Sequence[McqItem], tags: Sequence[ModalityTag]) -> list[McqItem]:
    """Return copies of ``items`` whose modality is replaced by the tag prediction."""
    by_id = {t.item_id: t.predicted_modality for t in tags}
    missing = [it.item_id for it in items if it.item_id not in by_id]
    if missing:
        raise ValidationError(f"{len(missing)} items have no modality tag (first: {missing[0]!r})")
    out = []
    for it in items:
        d = it.to_dict()
        d["modality"] = by_id[it.item_id]
        out.append(McqItem.from_dict(d))
    return out


def manifest_to_json(manifest: DatasetManifest) -> str:
    """Canonical text form, used for round-trip comparisons."""
    return json.dumps(
        {
            "task_id": manifest.task_id,
            "modality": manifest.modality,
            "class_names": manifest.class_names,
            "items": [[e.item_id, e.image_path, e.label_index, manifest.modality_of(e)] for e in manifest.items],
        },
        sort_keys=True,
    )
