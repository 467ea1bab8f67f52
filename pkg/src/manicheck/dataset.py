"""Dataset creation: RSS ingestion, LLM-assisted derivation, and assembly."""
from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import date, datetime
from email.utils import parsedate_to_datetime
from enum import Enum
from html import unescape
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from .inference import LLMProvider, final_token
from .models import (
    ClaimKind,
    ClaimRecord,
    ManipulationSpan,
    Veracity,
    normalize_headline,
    validate_claim_record,
)

log = logging.getLogger(__name__)

ATOM_NS = "{http://www.w3.org/2005/Atom}"


class FeedFormatError(Exception):
    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class GenerationError(Exception):
    """LLM output unusable as a negation; kept for manual review."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class ExtractionError(Exception):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class AlterationError(Exception):
    pass


class AssemblyError(Exception):
    pass


@dataclass(frozen=True)
class FeedEntry:
    title: str
    summary: Optional[str]
    published_date: date
    provider: str
    region: str
    link: Optional[str] = None


class ContextKind(str, Enum):
    PERSON_NAME = "person_name"
    TITLE = "title"
    COUNTRY = "country"
    STATE = "state"
    CITY = "city"
    QUANTITY = "quantity"
    UNIT = "unit"
    DATE_TIME = "date_time"
    OTHER = "other"


@dataclass(frozen=True)
class ContextItem:
    kind: ContextKind
    text: str


@dataclass(frozen=True)
class AlterationDirective:
    origin_id: str
    original: str
    replacement: str
    rationale: Optional[str] = None
    offset: Optional[int] = None  # disambiguates repeated occurrences


def _strip_html(text: str) -> str:
    return re.sub(r"\s+", " ", re.sub(r"<[^>]+>", " ", unescape(text))).strip()


def _parse_feed_date(raw: Optional[str]) -> Optional[date]:
    if not raw:
        return None
    raw = raw.strip()
    try:
        return parsedate_to_datetime(raw).date()
    except (TypeError, ValueError):
        pass
    try:
        return datetime.fromisoformat(raw.replace("Z", "+00:00")).date()
    except ValueError:
        return None


def _byte_offset(feed_bytes: bytes, line: int, column: int) -> int:
    lines = feed_bytes.split(b"\n")
    return sum(len(l) + 1 for l in lines[:line - 1]) + column


def ingest_rss(feed_bytes: bytes, provider: str, region: str,
               today: Optional[date] = None) -> List[FeedEntry]:
    """Parse an RSS 2.0 or Atom feed into entries; missing dates default to today."""
    try:
        root = ET.fromstring(feed_bytes)
    except ET.ParseError as exc:
        line, column = exc.position
        raise FeedFormatError(f"unparseable feed XML: {exc.msg if hasattr(exc, 'msg') else exc}",
                              _byte_offset(feed_bytes, line, column)) from exc
    today = today or date.today()
    entries: List[FeedEntry] = []
    items = root.findall(".//item")
    if items:  # RSS 2.0
        for item in items:
            title = _strip_html(item.findtext("title") or "")
            if not title:
                continue
            summary = _strip_html(item.findtext("description") or "") or None
            published = _parse_feed_date(item.findtext("pubDate"))
            if published is None:
                log.warning("feed item %r has no parseable date; using %s", title, today)
                published = today
            entries.append(FeedEntry(title=title, summary=summary, published_date=published,
                                     provider=provider, region=region,
                                     link=(item.findtext("link") or "").strip() or None))
        return entries
    for entry in root.findall(f"{ATOM_NS}entry"):  # Atom
        title = _strip_html(entry.findtext(f"{ATOM_NS}title") or "")
        if not title:
            continue
        summary = _strip_html(entry.findtext(f"{ATOM_NS}summary") or "") or None
        published = _parse_feed_date(
            entry.findtext(f"{ATOM_NS}published") or entry.findtext(f"{ATOM_NS}updated")
        )
        if published is None:
            log.warning("feed entry %r has no parseable date; using %s", title, today)
            published = today
        link_el = entry.find(f"{ATOM_NS}link")
        entries.append(FeedEntry(title=title, summary=summary, published_date=published,
                                 provider=provider, region=region,
                                 link=link_el.get("href") if link_el is not None else None))
    return entries


_TERMINAL_PUNCT = (".", "!", "?")


def make_headline(entry: FeedEntry) -> str:
    """Title alone, or title and summary joined as sentences."""
    title = normalize_headline(entry.title)
    summary = normalize_headline(entry.summary or "")
    if not summary:
        return title
    if title.endswith(_TERMINAL_PUNCT):
        return f"{title} {summary}"
    return f"{title}. {summary}"


CLAIM_FILTER_SYSTEM = """\
You review news headlines for a fact-checking pipeline. Decide whether the \
given headline is an informative, self-contained declarative claim whose \
veracity can be assessed. Questions, teasers, and incomplete statements do \
not qualify. Explain briefly, then end your output with a single word, \
"Yes" or "No", with nothing after it.
"""

NEGATION_SYSTEM = """\
You rewrite news headlines for a research dataset. Identify the sentiment of \
the given headline and produce its negation by reversing that sentiment, \
keeping all other context unchanged. Output only the negated headline on a \
single line, with no quotes and no commentary.
"""

EXTRACTION_SYSTEM = """\
You extract the key context items from a news headline: persons' names and \
titles, geographical terms (country, state, city), quantities, units, and \
dates. Output a JSON array of objects with fields "kind" and "text", where \
"kind" is one of person_name, title, country, state, city, quantity, unit, \
date_time, other, and "text" is the exact fragment from the headline. Output \
the JSON array only.
"""

_HEADLINE_USER = "The news headline is: {HEADLINE}"


def headline_prompt(system: str, headline: str) -> Tuple[str, str]:
    """The (system, user) pair sent for one dataset-processing step; scripted
    transcripts are keyed off these texts."""
    return system, _HEADLINE_USER.replace("{HEADLINE}", headline)


def _ask(provider: LLMProvider, system: str, headline: str, temperature: float = 0.1) -> str:
    system_text, user_text = headline_prompt(system, headline)
    return provider.complete(system_text, user_text, temperature)


def filter_claimworthy(headline: str, provider: LLMProvider) -> bool:
    """True iff the LLM judges the headline a self-contained assessable claim."""
    if not headline.strip():
        raise ValueError("headline must be non-empty")
    raw = _ask(provider, CLAIM_FILTER_SYSTEM, headline)
    token = (final_token(raw) or "").lower()
    if token == "yes":
        return True
    if token != "no":
        log.warning("unparseable claim-worthiness answer %r for %r; excluding", raw, headline)
    return False


_QUOTE_CHARS = "\"'“”‘’"


def generate_negation(headline: str, provider: LLMProvider) -> str:
    """Ask the LLM for a sentiment-reversed headline; reject unusable outputs."""
    raw = _ask(provider, NEGATION_SYSTEM, headline)
    cleaned = raw.strip().strip(_QUOTE_CHARS).strip()
    if not cleaned:
        raise GenerationError("empty negation output", raw)
    if "\n" in cleaned:
        raise GenerationError("negation output spans multiple lines", raw)
    if cleaned.lower() == headline.strip().lower():
        raise GenerationError("negation identical to input", raw)
    return cleaned


def extract_key_context(headline: str, provider: LLMProvider) -> List[ContextItem]:
    """Ask the LLM for key context items; items not present in the headline are dropped."""
    raw = _ask(provider, EXTRACTION_SYSTEM, headline)
    payload = raw.strip()
    if payload.startswith("```"):
        payload = re.sub(r"^```[a-z]*\s*|\s*```$", "", payload)
    try:
        rows = json.loads(payload)
        if not isinstance(rows, list):
            raise ValueError("not a JSON array")
    except ValueError as exc:
        raise ExtractionError(f"non-JSON extraction response: {exc}", raw) from exc
    items: List[ContextItem] = []
    for row in rows:
        text = str(row.get("text", ""))
        if text not in headline:
            log.warning("dropping extracted item %r: not found in headline", text)
            continue
        try:
            kind = ContextKind(str(row.get("kind", "other")).lower())
        except ValueError:
            kind = ContextKind.OTHER
        items.append(ContextItem(kind=kind, text=text))
    return items


def entry_to_record(entry: FeedEntry, sequence: int) -> ClaimRecord:
    """Build the Original claim record for one feed entry."""
    record_id = f"{entry.provider.lower().replace(' ', '-')}-{entry.published_date.isoformat()}-{sequence:04d}"
    return ClaimRecord(
        id=record_id,
        headline=make_headline(entry),
        kind=ClaimKind.ORIGINAL,
        label=Veracity.TRUE,
        provider=entry.provider,
        region=entry.region,
        published_date=entry.published_date,
    )


def make_negation_record(origin: ClaimRecord, negation_headline: str) -> ClaimRecord:
    return ClaimRecord(
        id=f"{origin.id}-neg",
        headline=normalize_headline(negation_headline),
        kind=ClaimKind.NEGATION,
        label=Veracity.FALSE,
        provider=origin.provider,
        region=origin.region,
        published_date=origin.published_date,
        origin_id=origin.id,
    )


def apply_alteration(origin: ClaimRecord, directive: AlterationDirective) -> ClaimRecord:
    """Replace the directive's context item in the origin headline, producing a fake."""
    if origin.kind is not ClaimKind.ORIGINAL:
        raise AlterationError(f"{origin.id}: alterations apply to original claims only")
    original, replacement = directive.original, directive.replacement
    if original.strip().lower() == replacement.strip().lower():
        raise AlterationError(f"{origin.id}: original and replacement are identical")
    headline = origin.headline
    count = headline.count(original)
    if count == 0:
        raise AlterationError(f"{origin.id}: {original!r} not found in headline")
    if directive.offset is not None:
        if headline[directive.offset:directive.offset + len(original)] != original:
            raise AlterationError(f"{origin.id}: {original!r} not at offset {directive.offset}")
        start = directive.offset
    elif count > 1:
        raise AlterationError(
            f"{origin.id}: {original!r} occurs {count} times; an offset-qualified directive is required"
        )
    else:
        start = headline.index(original)
    altered = headline[:start] + replacement + headline[start + len(original):]
    record = ClaimRecord(
        id=f"{origin.id}-alt",
        headline=altered,
        kind=ClaimKind.CONTEXT_ALTERED,
        label=Veracity.FALSE,
        provider=origin.provider,
        region=origin.region,
        published_date=origin.published_date,
        origin_id=origin.id,
        manipulation=ManipulationSpan(original=original, replacement=replacement),
    )
    violations = validate_claim_record(record)
    if violations:
        raise AlterationError(f"{origin.id}: altered record invalid: {violations}")
    return record


def assemble_dataset(
    originals: Iterable[ClaimRecord],
    negations: Iterable[ClaimRecord],
    alterations: Iterable[ClaimRecord],
) -> Tuple[List[ClaimRecord], Dict[str, Dict[str, int]]]:
    """Merge the three sets into one ordered dataset plus summary counts."""
    originals = list(originals)
    origin_ids = {r.id for r in originals}
    records = originals + list(negations) + list(alterations)
    for record in records:
        if record.kind is not ClaimKind.ORIGINAL and record.origin_id not in origin_ids:
            raise AssemblyError(f"{record.id}: origin_id {record.origin_id!r} does not resolve")
        violations = validate_claim_record(record)
        if violations:
            raise AssemblyError(f"{record.id}: invalid record: {violations}")
    records.sort(key=lambda r: r.id)
    counts: Dict[str, Dict[str, int]] = {"kind": {}, "provider": {}, "region": {}}
    for record in records:
        counts["kind"][record.kind.value] = counts["kind"].get(record.kind.value, 0) + 1
        counts["provider"][record.provider] = counts["provider"].get(record.provider, 0) + 1
        counts["region"][record.region] = counts["region"].get(record.region, 0) + 1
    return records, counts


# ---------------------------------------------------------------------------
# Review round-trip: proposals go out to a human-edited JSONL and only
# approved rows come back into assembly.
# ---------------------------------------------------------------------------

def export_review_rows(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_review_rows(path: str | Path) -> List[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def negation_review_row(origin: ClaimRecord, proposed: str) -> dict:
    return {"origin_id": origin.id, "kind": ClaimKind.NEGATION.value,
            "proposed_headline": proposed, "approved": False, "note": ""}


def alteration_review_row(origin: ClaimRecord, item: ContextItem) -> dict:
    return {"origin_id": origin.id, "kind": ClaimKind.CONTEXT_ALTERED.value,
            "original": item.text, "context_kind": item.kind.value,
            "replacement": "", "approved": False, "note": ""}


def records_from_review(originals: List[ClaimRecord], rows: Iterable[dict],
                        ) -> Tuple[List[ClaimRecord], List[ClaimRecord]]:
    """Turn approved review rows into negation and context-altered records."""
    by_id = {r.id: r for r in originals}
    negations: List[ClaimRecord] = []
    alterations: List[ClaimRecord] = []
    for row in rows:
        if not row.get("approved"):
            continue
        origin = by_id.get(row["origin_id"])
        if origin is None:
            raise AssemblyError(f"review row references unknown origin {row['origin_id']!r}")
        if row["kind"] == ClaimKind.NEGATION.value:
            negations.append(make_negation_record(origin, row["proposed_headline"]))
        elif row["kind"] == ClaimKind.CONTEXT_ALTERED.value:
            directive = AlterationDirective(
                origin_id=origin.id,
                original=row["original"],
                replacement=row["replacement"],
                offset=row.get("offset"),
            )
            alterations.append(apply_alteration(origin, directive))
        else:
            raise AssemblyError(f"review row has unknown kind {row['kind']!r}")
    return negations, alterations
