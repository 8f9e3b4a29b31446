"""Acc@1, unbiased Pass@K, the support gap, and item-level bootstrap intervals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from supportscope._io import ValidationError
from supportscope.inference import GREEDY, SAMPLED
from supportscope.verification import ENDPOINT_ERROR, UNPARSEABLE, SampleRecord

ESTIMATOR = "unbiased-shared-pool"
DEFAULT_KS = (1, 2, 4, 8, 16)
DEFAULT_BOOTSTRAP = 1000


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimate of P(at least one of k draws is correct) from c correct out of n.

    Uses the product form of ``1 - C(n-c, k) / C(n, k)``.
    """
    if k > n:
        raise ValidationError(f"insufficient samples: k={k} > n={n}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not 0 <= c <= n:
        raise ValidationError(f"need 0 <= c <= n, got c={c}, n={n}")
    if n - c < k:
        return 1.0
    prod = 1.0
    for i in range(n - c + 1, n + 1):
        prod *= 1.0 - k / i
    return 1.0 - prod


@dataclass
class ItemOutcome:
    item_id: str
    n: int
    c: int
    greedy_correct: bool | None = None
    task_id: str | None = None

    def __post_init__(self):
        if not 0 <= self.c <= self.n:
            raise ValidationError(f"item {self.item_id}: need 0 <= c <= n (c={self.c}, n={self.n})")

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "n": self.n, "c": self.c, "greedy_correct": self.greedy_correct,
                "task_id": self.task_id}


@dataclass
class SupportEstimate:
    task_id: str
    A: float
    S: dict[int, float]
    G: dict[int, float]
    n_items: int
    k_max: int
    ci: dict[str, tuple[float, float]] = field(default_factory=dict)
    unparseable_rate: float = 0.0
    error_rate: float = 0.0
    modality: str | None = None
    a_source: str = "greedy"
    estimator: str = ESTIMATOR
    missing_greedy: list[str] = field(default_factory=list)
    n_records: int = 0
    n_unparseable: int = 0
    n_endpoint_error: int = 0
    bootstrap_resamples: int = DEFAULT_BOOTSTRAP
    bootstrap_seed: int = 0
    outcomes: list[ItemOutcome] = field(default_factory=list, repr=False)
    metadata_digest: str | None = None

    @property
    def ks(self) -> list[int]:
        return sorted(self.S)

    @classmethod
    def from_reported(cls, task_id: str, acc1: float, pass_at: Mapping[int, float] | None = None,
                      modality: str | None = None) -> "SupportEstimate":
        """Wrap externally reported values (fractions in [0, 1]) without item data."""
        S = {int(k): float(v) for k, v in (pass_at or {}).items()}
        return cls(task_id=task_id, A=float(acc1), S=S, G={k: v - float(acc1) for k, v in S.items()},
                   n_items=0, k_max=max(S, default=0), modality=modality, a_source="reported",
                   estimator="reported", bootstrap_resamples=0)

    def to_dict(self, include_outcomes: bool = True) -> dict:
        d = {
            "task_id": self.task_id,
            "modality": self.modality,
            "A": self.A,
            "S": {str(k): v for k, v in sorted(self.S.items())},
            "G": {str(k): v for k, v in sorted(self.G.items())},
            "n_items": self.n_items,
            "k_max": self.k_max,
            "ci": {m: [lo, hi] for m, (lo, hi) in sorted(self.ci.items())},
            "unparseable_rate": self.unparseable_rate,
            "error_rate": self.error_rate,
            "a_source": self.a_source,
            "estimator": self.estimator,
            "missing_greedy": list(self.missing_greedy),
            "n_records": self.n_records,
            "n_unparseable": self.n_unparseable,
            "n_endpoint_error": self.n_endpoint_error,
            "bootstrap_resamples": self.bootstrap_resamples,
            "bootstrap_seed": self.bootstrap_seed,
            "metadata_digest": self.metadata_digest,
        }
        if include_outcomes:
            d["outcomes"] = [o.to_dict() for o in self.outcomes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SupportEstimate":
        try:
            return cls(
                task_id=str(d["task_id"]),
                A=float(d["A"]),
                S={int(k): float(v) for k, v in d.get("S", {}).items()},
                G={int(k): float(v) for k, v in d.get("G", {}).items()},
                n_items=int(d.get("n_items", 0)),
                k_max=int(d.get("k_max", 0)),
                ci={m: (float(v[0]), float(v[1])) for m, v in d.get("ci", {}).items()},
                unparseable_rate=float(d.get("unparseable_rate", 0.0)),
                error_rate=float(d.get("error_rate", 0.0)),
                modality=d.get("modality"),
                a_source=d.get("a_source", "greedy"),
                estimator=d.get("estimator", ESTIMATOR),
                missing_greedy=list(d.get("missing_greedy", [])),
                n_records=int(d.get("n_records", 0)),
                n_unparseable=int(d.get("n_unparseable", 0)),
                n_endpoint_error=int(d.get("n_endpoint_error", 0)),
                bootstrap_resamples=int(d.get("bootstrap_resamples", 0)),
                bootstrap_seed=int(d.get("bootstrap_seed", 0)),
                outcomes=[ItemOutcome(**o) for o in d.get("outcomes", [])],
                metadata_digest=d.get("metadata_digest"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed SupportEstimate: {exc!r}") from None


def outcomes_from_records(records: Sequence[SampleRecord], task_id: str | None = None) -> list[ItemOutcome]:
    by_item: dict[str, ItemOutcome] = {}
    seen_greedy: set[str] = set()
    for r in sorted(records, key=lambda r: (r.item_id, r.mode, r.sample_index)):
        o = by_item.setdefault(r.item_id, ItemOutcome(r.item_id, 0, 0, None, task_id))
        if r.mode == GREEDY:
            if r.item_id in seen_greedy:
                raise ValidationError(f"item {r.item_id!r} has more than one greedy record")
            seen_greedy.add(r.item_id)
            o.greedy_correct = r.is_correct
        elif r.mode == SAMPLED:
            o.n += 1
            o.c += int(r.is_correct)
        else:
            raise ValidationError(f"unknown record mode {r.mode!r}")
    return [by_item[k] for k in sorted(by_item)]


def _percentile_ci(samples: np.ndarray) -> tuple[float, float]:
    lo, hi = np.nanpercentile(samples, [2.5, 97.5])
    return float(lo), float(hi)


def _nanmean_rows(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    picked = values[idx]
    valid = ~np.isnan(picked)
    counts = valid.sum(axis=1)
    sums = np.where(valid, picked, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def estimate_from_outcomes(
    task_id: str,
    outcomes: Sequence[ItemOutcome],
    ks: Sequence[int],
    strict: bool = True,
    n_bootstrap: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    modality: str | None = None,
) -> SupportEstimate:
    ks = list(ks)
    if ks != sorted(set(ks)):
        raise ValidationError(f"ks must be strictly ascending, got {ks}")
    if not outcomes:
        raise ValidationError("no records")
    sampled = [o for o in outcomes if o.n > 0]
    if ks and not sampled:
        raise ValidationError("no sampled records, but Pass@K was requested")
    if strict and len({o.n for o in sampled}) > 1:
        raise ValidationError(f"mixed sample counts across items: {sorted({o.n for o in sampled})} (use lenient mode)")
    for o in sampled:
        if ks and o.n < ks[-1]:
            raise ValidationError(f"insufficient samples for item {o.item_id!r}: n={o.n} < K={ks[-1]}")

    n = len(outcomes)
    greedy = np.array([np.nan if o.greedy_correct is None else float(o.greedy_correct) for o in outcomes])
    has_greedy = ~np.isnan(greedy)
    pass1 = np.array([o.c / o.n if o.n else np.nan for o in outcomes])
    passk = np.array([[pass_at_k(o.n, o.c, k) if o.n else np.nan for k in ks] for o in outcomes]).reshape(n, len(ks))

    if has_greedy.any():
        a_source, a_values = "greedy", greedy
        missing = [o.item_id for o in outcomes if o.greedy_correct is None]
    else:
        a_source, a_values = "pass@1", pass1
        missing = []

    def point(values: np.ndarray) -> float:
        return float(np.nanmean(values))

    A = point(a_values)
    S = {k: point(passk[:, j]) for j, k in enumerate(ks)}
    G = {k: S[k] - A for k in ks}

    ci: dict[str, tuple[float, float]] = {}
    if n_bootstrap > 0:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, size=(n_bootstrap, n))
        a_boot = _nanmean_rows(a_values, idx)
        ci["acc@1"] = _percentile_ci(a_boot)
        for j, k in enumerate(ks):
            s_boot = _nanmean_rows(passk[:, j], idx)
            ci[f"pass@{k}"] = _percentile_ci(s_boot)
            ci[f"gap@{k}"] = _percentile_ci(s_boot - a_boot)

    return SupportEstimate(
        task_id=task_id,
        A=A,
        S=S,
        G=G,
        n_items=n,
        k_max=max((o.n for o in sampled), default=0),
        ci=ci,
        modality=modality,
        a_source=a_source,
        missing_greedy=missing,
        bootstrap_resamples=n_bootstrap,
        bootstrap_seed=seed,
        outcomes=list(outcomes),
    )


def estimate_support(
    records: Sequence[SampleRecord],
    ks: Sequence[int] = DEFAULT_KS,
    task_id: str = "task",
    strict: bool = True,
    n_bootstrap: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    modality: str | None = None,
) -> SupportEstimate:
    """Estimate Acc@1, Pass@K and the gap for one task from verified records.

    UNPARSEABLE and ENDPOINT_ERROR records count as incorrect; their rates are
    reported separately.
    """
    if not records:
        raise ValidationError("no records")
    outcomes = outcomes_from_records(records, task_id)
    est = estimate_from_outcomes(task_id, outcomes, ks, strict, n_bootstrap, seed, modality)
    est.n_records = len(records)
    est.n_unparseable = sum(r.verdict == UNPARSEABLE for r in records)
    est.n_endpoint_error = sum(r.verdict == ENDPOINT_ERROR for r in records)
    est.unparseable_rate = est.n_unparseable / est.n_records
    est.error_rate = est.n_endpoint_error / est.n_records
    return est


def aggregate_by_group(
    estimates: Sequence[SupportEstimate],
    grouping: Mapping[str, str],
    n_bootstrap: int | None = None,
    seed: int | None = None,
) -> dict[str, SupportEstimate]:
    """Pool task estimates into groups (item-weighted), re-bootstrapping over the pooled items."""
    unknown = sorted(e.task_id for e in estimates if e.task_id not in grouping)
    if unknown:
        raise ValidationError(f"tasks missing from grouping: {unknown}")
    members: dict[str, list[SupportEstimate]] = {}
    for e in estimates:
        if not e.outcomes:
            raise ValidationError(f"estimate {e.task_id!r} carries no item outcomes; cannot pool")
        members.setdefault(grouping[e.task_id], []).append(e)

    out = {}
    for group in sorted(members):
        ests = members[group]
        ks = ests[0].ks
        if any(e.ks != ks for e in ests):
            raise ValidationError(f"group {group!r}: member estimates use different K sets")
        pooled = [o for e in sorted(ests, key=lambda e: e.task_id) for o in e.outcomes]
        g = estimate_from_outcomes(
            group,
            pooled,
            ks,
            strict=False,
            n_bootstrap=ests[0].bootstrap_resamples if n_bootstrap is None else n_bootstrap,
            seed=ests[0].bootstrap_seed if seed is None else seed,
            modality=group,
        )
        g.n_records = sum(e.n_records for e in ests)
        g.n_unparseable = sum(e.n_unparseable for e in ests)
        g.n_endpoint_error = sum(e.n_endpoint_error for e in ests)
        if g.n_records:
            g.unparseable_rate = g.n_unparseable / g.n_records
            g.error_rate = g.n_endpoint_error / g.n_records
        out[group] = g
    return out
