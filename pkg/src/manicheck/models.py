"""Shared domain types: claims, documents, chunks, verdicts, predictions."""
from __future__ import annotations

import dataclasses
import json
import unicodedata
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple


class Veracity(str, Enum):
    TRUE = "true"
    FALSE = "false"


class ClaimKind(str, Enum):
    ORIGINAL = "original"
    NEGATION = "negation"
    CONTEXT_ALTERED = "context_altered"


#: Ground-truth label implied by each claim kind.
EXPECTED_LABEL = {
    ClaimKind.ORIGINAL: Veracity.TRUE,
    ClaimKind.NEGATION: Veracity.FALSE,
    ClaimKind.CONTEXT_ALTERED: Veracity.FALSE,
}


class VerdictLabel(str, Enum):
    TRUE = "true"
    FALSE = "false"
    NON_CONCLUSIVE = "non_conclusive"


@dataclass(frozen=True)
class ManipulationSpan:
    """The (original, replacement) pair behind a context-altered headline."""

    original: str
    replacement: str


@dataclass(frozen=True)
class ClaimRecord:
    id: str
    headline: str
    kind: ClaimKind
    label: Veracity
    provider: str
    region: str
    published_date: date
    origin_id: Optional[str] = None
    manipulation: Optional[ManipulationSpan] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "headline": self.headline,
            "kind": self.kind.value,
            "label": self.label.value,
            "provider": self.provider,
            "region": self.region,
            "published_date": self.published_date.isoformat(),
            "origin_id": self.origin_id,
            "manipulation": (
                {"original": self.manipulation.original, "replacement": self.manipulation.replacement}
                if self.manipulation
                else None
            ),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClaimRecord":
        manipulation = None
        if data.get("manipulation"):
            manipulation = ManipulationSpan(
                original=data["manipulation"]["original"],
                replacement=data["manipulation"]["replacement"],
            )
        return cls(
            id=data["id"],
            headline=data["headline"],
            kind=ClaimKind(data["kind"]),
            label=Veracity(data["label"]),
            provider=data["provider"],
            region=data["region"],
            published_date=date.fromisoformat(data["published_date"]),
            origin_id=data.get("origin_id"),
            manipulation=manipulation,
        )


def normalize_headline(text: str) -> str:
    """NFC-normalize and trim a headline as stored in the dataset."""
    return unicodedata.normalize("NFC", text).strip()


def validate_claim_record(record: ClaimRecord) -> List[str]:
    """Return a description of every invariant the record violates (empty = valid)."""
    violations: List[str] = []
    if not record.headline.strip():
        violations.append("headline: must be non-empty after trimming")
    expected = EXPECTED_LABEL[record.kind]
    if record.label != expected:
        violations.append(
            f"label: kind {record.kind.value} requires label {expected.value}, got {record.label.value}"
        )
    if record.kind is ClaimKind.CONTEXT_ALTERED and record.manipulation is None:
        violations.append("manipulation: required for context_altered")
    if record.kind is ClaimKind.ORIGINAL and record.manipulation is not None:
        violations.append("manipulation: must be absent for original")
    if record.kind is not ClaimKind.ORIGINAL and not record.origin_id:
        violations.append("origin_id: required for derived claims")
    span = record.manipulation
    if span is not None:
        if span.original.strip().lower() == span.replacement.strip().lower():
            violations.append("manipulation: original and replacement must differ")
        if span.replacement not in record.headline:
            violations.append("manipulation: replacement occurs in headline")
        # The original must be gone once the replacement span is masked out;
        # checking the raw headline would wrongly flag e.g. 150 -> 1500.
        elif span.original in record.headline.replace(span.replacement, "\x00"):
            violations.append("manipulation: original must not occur in headline")
    return violations


def load_claims(path: str | Path) -> List[ClaimRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ClaimRecord.from_dict(json.loads(line)))
    return records


def dump_claims(records: Iterable[ClaimRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class Document:
    """Plain text extracted from one fetched search result."""

    url: str
    rank: int
    title: str
    text: str
    fetched_at: str

    def with_rank(self, rank: int) -> "Document":
        return dataclasses.replace(self, rank=rank)


@dataclass(frozen=True)
class Chunk:
    doc_index: int
    seq: int
    text: str
    char_start: int


@dataclass(frozen=True)
class EmbeddedChunk:
    chunk: Chunk
    vector: Tuple[float, ...]


@dataclass(frozen=True)
class Verdict:
    """One parsed LLM run."""

    label: VerdictLabel
    explanation: str
    raw: str


@dataclass(frozen=True)
class Timing:
    context_build_seconds: float = 0.0
    inference_seconds: float = 0.0


@dataclass(frozen=True)
class Prediction:
    """Majority aggregate over the repeated inference runs of one claim."""

    runs: Tuple[Verdict, ...]
    majority: VerdictLabel
    context_digest: Tuple[Tuple[str, int], ...] = ()
    elapsed: Timing = field(default_factory=Timing)
    warnings: Tuple[str, ...] = ()

    def to_dict(self, include_timing: bool = True) -> dict:
        data = {
            "majority": self.majority.value,
            "runs": [
                {"label": v.label.value, "explanation": v.explanation, "raw": v.raw}
                for v in self.runs
            ],
            "context_digest": [[url, rank] for url, rank in self.context_digest],
            "warnings": list(self.warnings),
        }
        if include_timing:
            data["elapsed"] = {
                "context_build_seconds": self.elapsed.context_build_seconds,
                "inference_seconds": self.elapsed.inference_seconds,
            }
        return data


def majority_label(labels: Sequence[VerdictLabel]) -> VerdictLabel:
    """Label held by a strict majority of runs, else non-conclusive."""
    threshold = len(labels) // 2 + 1
    for candidate in VerdictLabel:
        if sum(1 for l in labels if l is candidate) >= threshold:
            return candidate
    return VerdictLabel.NON_CONCLUSIVE
