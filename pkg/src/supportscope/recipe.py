"""Boundary-aware bridge/sharpen decisions and before/after post-training deltas."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

from supportscope._io import ValidationError
from supportscope.stats import SupportEstimate

BRIDGE = "BRIDGE"
SHARPEN = "SHARPEN"

IN_DOMAIN = "IN_DOMAIN"
WITHIN_MODALITY = "WITHIN_MODALITY"
CROSS_MODALITY = "CROSS_MODALITY"
REGIMES = (IN_DOMAIN, WITHIN_MODALITY, CROSS_MODALITY)


@dataclass
class RecipeConfig:
    tau: float | None = None
    k_ref: int = 16
    collapse_margin: float = 0.02

    def __post_init__(self):
        if self.tau is not None and not 0.0 < self.tau <= 1.0:
            raise ValidationError(f"tau must be in (0, 1], got {self.tau}")
        if self.k_ref < 1:
            raise ValidationError("k_ref must be >= 1")
        if self.collapse_margin < 0:
            raise ValidationError("collapse_margin must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RecipeDecision:
    task_id: str
    verdict: str
    s_k: float
    a: float
    g_k: float
    rationale: str
    config: RecipeConfig
    metadata_digest: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = self.config.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RecipeDecision":
        return cls(
            task_id=d["task_id"], verdict=d["verdict"], s_k=float(d["s_k"]), a=float(d["a"]),
            g_k=float(d["g_k"]), rationale=d.get("rationale", ""), config=RecipeConfig(**d["config"]),
            metadata_digest=d.get("metadata_digest"),
        )


@dataclass
class DeltaReport:
    train_task: str
    eval_task: str
    regime: str
    k_ref: int
    delta_a: float
    delta_s_k: float
    before_a: float
    before_s_k: float
    after_a: float
    after_s_k: float
    collapse_flag: bool
    collapse_margin: float
    before_ref: str | None = None
    after_ref: str | None = None
    metadata_digest: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeltaReport":
        return cls(**{k: d.get(k) for k in cls.__dataclass_fields__})


def _s_at(estimate: SupportEstimate, k: int) -> float:
    try:
        return estimate.S[k]
    except KeyError:
        raise ValidationError(f"estimate for {estimate.task_id!r} has no Pass@{k} (has {estimate.ks})") from None


def decide(estimate: SupportEstimate, config: RecipeConfig) -> RecipeDecision:
    """Bridge when Pass@k_ref falls short of tau, otherwise sharpen (ties sharpen)."""
    if config.tau is None:
        raise ValidationError("tau is required to make a bridge/sharpen decision")
    s = _s_at(estimate, config.k_ref)
    a = estimate.A
    k = config.k_ref
    if s < config.tau:
        verdict = BRIDGE
        why = f"Pass@{k}={s:.4f} < tau={config.tau:.4f}: support is weak, expand coverage before RL"
    else:
        verdict = SHARPEN
        why = (f"Pass@{k}={s:.4f} >= tau={config.tau:.4f}: support is sufficient, sharpen to close "
               f"gap G@{k}={s - a:.4f} while monitoring Pass@{k}")
    return RecipeDecision(estimate.task_id, verdict, s, a, s - a, why, config, estimate.metadata_digest)


def classify_regime(train_task: str, eval_task: str, modalities: Mapping[str, str]) -> str:
    for t in (train_task, eval_task):
        if not modalities.get(t):
            raise ValidationError(f"no modality recorded for task {t!r}")
    if train_task == eval_task:
        return IN_DOMAIN
    if modalities[train_task].lower() == modalities[eval_task].lower():
        return WITHIN_MODALITY
    return CROSS_MODALITY


def compare_runs(
    before: SupportEstimate,
    after: SupportEstimate,
    config: RecipeConfig,
    modalities: Mapping[str, str],
    train_task: str,
) -> DeltaReport:
    """Deltas in Acc@1 and Pass@k_ref on one eval task, flagging support collapse."""
    if before.task_id != after.task_id:
        raise ValidationError(f"task mismatch: before={before.task_id!r}, after={after.task_id!r}")
    k = config.k_ref
    sb, sa = _s_at(before, k), _s_at(after, k)
    delta_s = sa - sb
    return DeltaReport(
        train_task=train_task,
        eval_task=after.task_id,
        regime=classify_regime(train_task, after.task_id, modalities),
        k_ref=k,
        delta_a=after.A - before.A,
        delta_s_k=delta_s,
        before_a=before.A,
        before_s_k=sb,
        after_a=after.A,
        after_s_k=sa,
        collapse_flag=delta_s < -config.collapse_margin,
        collapse_margin=config.collapse_margin,
        before_ref=before.metadata_digest,
        after_ref=after.metadata_digest,
    )
