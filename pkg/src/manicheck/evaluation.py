"""Scoring, metrics, benchmark adapters, and the evaluation driver."""
from __future__ import annotations

import json
import logging
import re
import statistics
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .models import (
    ClaimKind,
    ClaimRecord,
    Document,
    ManipulationSpan,
    Prediction,
    Veracity,
    Verdict,
    VerdictLabel,
)
from .pipeline import Mode, PipelineConfig, ProviderSet, detect

log = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    """Counts with the fake class as positive."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class Metrics:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    accuracy: Optional[float]

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "accuracy": self.accuracy}


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    """Micro precision/recall/F1/accuracy; undefined ratios are reported as None."""
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp > 0 else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn > 0 else None
    if precision is None and recall is None:
        f1 = None
    else:
        p = precision or 0.0
        r = recall or 0.0
        f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    accuracy = (cm.tp + cm.tn) / cm.total if cm.total > 0 else None
    return Metrics(precision=precision, recall=recall, f1=f1, accuracy=accuracy)


_DIGIT_GROUP_RE = re.compile(r"(?<=\d)[,  '](?=\d)")


def _normalize_fragment(text: str) -> str:
    text = unicodedata.normalize("NFC", text).casefold()
    return re.sub(r"\s+", " ", text).strip()


def _degroup(text: str) -> str:
    return _DIGIT_GROUP_RE.sub("", text)


def _mentions(haystack: str, needle: str) -> bool:
    if needle in haystack:
        return True
    return _degroup(needle) in _degroup(haystack)


def validate_explanation(prediction_raw: str, manipulation: ManipulationSpan) -> bool:
    """True iff the output names both the original context item and its replacement."""
    haystack = _normalize_fragment(prediction_raw)
    return (_mentions(haystack, _normalize_fragment(manipulation.original))
            and _mentions(haystack, _normalize_fragment(manipulation.replacement)))


@dataclass(frozen=True)
class ScoreResult:
    accepted: bool
    predicted_positive: bool
    explanation_valid: Optional[bool]


def _predicted_positive(majority: VerdictLabel, ground_truth: Veracity) -> bool:
    """Map the majority to the fake/truth axis; non-conclusive counts as wrong."""
    if majority is VerdictLabel.FALSE:
        return True
    if majority is VerdictLabel.TRUE:
        return False
    return ground_truth is Veracity.TRUE  # wrong side of the ground truth


def score_claim(claim: ClaimRecord, prediction: Prediction,
                explanation_source: str = "all_runs") -> ScoreResult:
    """Accept/reject one prediction under the conservative scoring rules.

    For context-altered claims a correct fake verdict is only accepted when
    the output names both the altered item and its original.
    """
    ground_fake = claim.label is Veracity.FALSE
    predicted_positive = _predicted_positive(prediction.majority, claim.label)
    accepted = predicted_positive == ground_fake
    explanation_valid: Optional[bool] = None
    if (claim.kind is ClaimKind.CONTEXT_ALTERED and claim.manipulation is not None
            and prediction.majority is VerdictLabel.FALSE):
        if explanation_source == "majority_runs":
            raws = " ".join(v.raw for v in prediction.runs if v.label is prediction.majority)
        else:
            raws = " ".join(v.raw for v in prediction.runs)
        explanation_valid = validate_explanation(raws, claim.manipulation)
        if accepted and not explanation_valid:
            accepted = False
    return ScoreResult(accepted=accepted, predicted_positive=predicted_positive,
                       explanation_valid=explanation_valid)


@dataclass
class ClaimOutcome:
    claim_id: str
    ground_truth: Veracity
    kind: Optional[ClaimKind]
    majority: VerdictLabel
    accepted: bool
    explanation_valid: Optional[bool] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "ground_truth": self.ground_truth.value,
            "kind": self.kind.value if self.kind else None,
            "majority": self.majority.value,
            "accepted": self.accepted,
            "explanation_valid": self.explanation_valid,
            "error": self.error,
        }


def _quantiles(values: Sequence[float]) -> dict:
    if not values:
        return {"median": None, "p25": None, "p75": None}
    if len(values) == 1:
        v = values[0]
        return {"median": v, "p25": v, "p75": v}
    p25, p50, p75 = statistics.quantiles(values, n=4, method="inclusive")
    return {"median": p50, "p25": p25, "p75": p75}


@dataclass
class EvalReport:
    mode: str
    config_digest: str
    per_claim: List[ClaimOutcome]
    confusion: ConfusionMatrix
    metrics: Metrics
    per_kind_accuracy: Dict[str, float]
    non_conclusive_rate_runs: float
    non_conclusive_rate_majority: float
    timing: Dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "config_digest": self.config_digest,
            "per_claim": [o.to_dict() for o in self.per_claim],
            "confusion": self.confusion.to_dict(),
            "metrics": self.metrics.to_dict(),
            "per_kind_accuracy": self.per_kind_accuracy,
            "non_conclusive_rate_runs": self.non_conclusive_rate_runs,
            "non_conclusive_rate_majority": self.non_conclusive_rate_majority,
            "timing": self.timing,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n",
                              encoding="utf-8")


@dataclass(frozen=True)
class _Scored:
    outcome: ClaimOutcome
    prediction: Optional[Prediction]


def _aggregate(scored: List[_Scored], mode: str, config_digest: str) -> EvalReport:
    scored = sorted(scored, key=lambda s: s.outcome.claim_id)
    cm = ConfusionMatrix()
    kind_totals: Dict[str, List[int]] = {}
    run_labels: List[VerdictLabel] = []
    majorities: List[VerdictLabel] = []
    build_times: List[float] = []
    infer_times: List[float] = []
    for entry in scored:
        outcome = entry.outcome
        ground_fake = outcome.ground_truth is Veracity.FALSE
        if ground_fake:
            if outcome.accepted:
                cm.tp += 1
            else:
                cm.fn += 1
        else:
            if outcome.accepted:
                cm.tn += 1
            else:
                cm.fp += 1
        if outcome.kind is not None:
            totals = kind_totals.setdefault(outcome.kind.value, [0, 0])
            totals[0] += int(outcome.accepted)
            totals[1] += 1
        majorities.append(outcome.majority)
        if entry.prediction is not None:
            run_labels.extend(v.label for v in entry.prediction.runs)
            build_times.append(entry.prediction.elapsed.context_build_seconds)
            infer_times.append(entry.prediction.elapsed.inference_seconds)
    per_kind = {kind: hit / total for kind, (hit, total) in sorted(kind_totals.items())}
    nc_runs = (sum(1 for l in run_labels if l is VerdictLabel.NON_CONCLUSIVE) / len(run_labels)
               if run_labels else 0.0)
    nc_majority = (sum(1 for l in majorities if l is VerdictLabel.NON_CONCLUSIVE) / len(majorities)
                   if majorities else 0.0)
    return EvalReport(
        mode=mode,
        config_digest=config_digest,
        per_claim=[s.outcome for s in scored],
        confusion=cm,
        metrics=compute_metrics(cm),
        per_kind_accuracy=per_kind,
        non_conclusive_rate_runs=nc_runs,
        non_conclusive_rate_majority=nc_majority,
        timing={"context_build": _quantiles(build_times), "inference": _quantiles(infer_times)},
    )


def _error_outcome(claim_id: str, ground_truth: Veracity, kind: Optional[ClaimKind],
                   error: str) -> _Scored:
    # A failed pipeline run counts like a non-conclusive majority: always wrong.
    return _Scored(
        outcome=ClaimOutcome(claim_id=claim_id, ground_truth=ground_truth, kind=kind,
                             majority=VerdictLabel.NON_CONCLUSIVE, accepted=False, error=error),
        prediction=None,
    )


def evaluate_dataset(claims: Sequence[ClaimRecord], config: PipelineConfig,
                     providers: ProviderSet,
                     explanation_source: str = "all_runs") -> EvalReport:
    """Run the full pipeline over a dataset and score it; errors never abort the batch."""

    def one(claim: ClaimRecord) -> _Scored:
        try:
            prediction = detect(claim.headline, config, providers, region=claim.region)
        except Exception as exc:  # noqa: BLE001 - recorded per claim
            log.warning("pipeline error for %s: %s", claim.id, exc)
            return _error_outcome(claim.id, claim.label, claim.kind, str(exc))
        result = score_claim(claim, prediction, explanation_source=explanation_source)
        outcome = ClaimOutcome(claim_id=claim.id, ground_truth=claim.label, kind=claim.kind,
                               majority=prediction.majority, accepted=result.accepted,
                               explanation_valid=result.explanation_valid)
        return _Scored(outcome=outcome, prediction=prediction)

    scored = _run_concurrently(one, claims, config.parallel)
    return _aggregate(scored, mode=config.mode.value, config_digest=config.digest())


def _run_concurrently(fn, items, parallel: int) -> list:
    if parallel <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(fn, items))


def run_ablation(claims: Sequence[ClaimRecord], config: PipelineConfig,
                 providers: ProviderSet) -> EvalReport:
    """Same protocol with no retrieval: the no-context prompt variant throughout."""
    import dataclasses

    ablation_config = dataclasses.replace(config, mode=Mode.ABLATION)
    return evaluate_dataset(claims, ablation_config, providers)


# ---------------------------------------------------------------------------
# External benchmark adapters
# ---------------------------------------------------------------------------

class CollapseScheme(str, Enum):
    BINARY = "binary"
    SIX_WAY = "sixway"
    THREE_WAY = "threeway"


@dataclass(frozen=True)
class BenchmarkAdapterConfig:
    scheme: CollapseScheme = CollapseScheme.BINARY
    evidence_mode: bool = False


@dataclass(frozen=True)
class BenchmarkItem:
    claim: str
    label: Veracity
    evidence: Tuple[str, ...] = ()


class BenchmarkFormatError(Exception):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


_SIX_WAY_MAP = {
    "true": Veracity.TRUE,
    "mostly-true": Veracity.TRUE,
    "false": Veracity.FALSE,
    "pants-fire": Veracity.FALSE,
    "pants-on-fire": Veracity.FALSE,
}
_SIX_WAY_DROP = {"half-true", "barely-true"}
_THREE_WAY_MAP = {"true": Veracity.TRUE, "false": Veracity.FALSE}
_THREE_WAY_DROP = {"half-true"}
_BINARY_MAP = {"true": Veracity.TRUE, "false": Veracity.FALSE}


def _normalize_label(label: str) -> str:
    return re.sub(r"[\s_]+", "-", label.strip().lower())


def load_benchmark(path: str | Path, config: BenchmarkAdapterConfig) -> List[BenchmarkItem]:
    """Load a normalized benchmark JSONL, collapsing its label scheme to binary."""
    if config.scheme is CollapseScheme.BINARY:
        mapping, dropped = _BINARY_MAP, set()
    elif config.scheme is CollapseScheme.SIX_WAY:
        mapping, dropped = _SIX_WAY_MAP, _SIX_WAY_DROP
    else:
        mapping, dropped = _THREE_WAY_MAP, _THREE_WAY_DROP
    items: List[BenchmarkItem] = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BenchmarkFormatError(f"invalid JSON: {exc}", line_number) from exc
            label = _normalize_label(str(row.get("label", "")))
            if label in dropped:
                continue
            if label not in mapping:
                raise BenchmarkFormatError(f"unknown label {row.get('label')!r}", line_number)
            evidence = tuple(row["evidence"]) if config.evidence_mode and row.get("evidence") else ()
            items.append(BenchmarkItem(claim=row["claim"], label=mapping[label], evidence=evidence))
    return items


def _evidence_documents(item: BenchmarkItem) -> List[Document]:
    return [
        Document(url=f"evidence://{i}", rank=i, title=f"evidence {i}", text=text, fetched_at="")
        for i, text in enumerate(item.evidence, start=1)
    ]


def run_benchmark(items: Sequence[BenchmarkItem], config: PipelineConfig,
                  providers: ProviderSet, adapter: BenchmarkAdapterConfig) -> EvalReport:
    """Evaluate benchmark claims; evidence mode replaces retrieval with given texts."""

    def one(pair) -> _Scored:
        index, item = pair
        claim_id = f"bench-{index:05d}"
        try:
            documents = _evidence_documents(item) if adapter.evidence_mode else None
            prediction = detect(item.claim, config, providers, documents=documents)
        except Exception as exc:  # noqa: BLE001 - recorded per claim
            log.warning("pipeline error for %s: %s", claim_id, exc)
            return _error_outcome(claim_id, item.label, None, str(exc))
        ground_fake = item.label is Veracity.FALSE
        predicted_positive = _predicted_positive(prediction.majority, item.label)
        outcome = ClaimOutcome(claim_id=claim_id, ground_truth=item.label, kind=None,
                               majority=prediction.majority,
                               accepted=predicted_positive == ground_fake)
        return _Scored(outcome=outcome, prediction=prediction)

    scored = _run_concurrently(one, list(enumerate(items)), config.parallel)
    mode = "benchmark-evidence" if adapter.evidence_mode else "benchmark"
    return _aggregate(scored, mode=mode, config_digest=config.digest())
