"""Phase 1: web search, page fetching, and visible-text extraction."""
from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Tuple

from .models import Document

log = logging.getLogger(__name__)

#: Query is truncated to this many whitespace-delimited words (common engine limit).
QUERY_WORD_LIMIT = 32

#: Over-fetch factor: request this many times k hits to survive blocked sites.
HIT_HEADROOM = 3


class SearchError(Exception):
    pass


class FetchError(Exception):
    """A single URL could not be turned into a Document; callers skip it."""

    def __init__(self, url: str, cause: str):
        super().__init__(f"fetch failed for {url}: {cause}")
        self.url = url
        self.cause = cause


class EmptyContextError(Exception):
    """No document could be collected for the claim."""


@dataclass(frozen=True)
class SearchHit:
    url: str
    title: str
    snippet: str
    rank: int


@dataclass(frozen=True)
class FetchPolicy:
    timeout_seconds: float = 10.0
    max_bytes: int = 2_000_000
    user_agent: str = "manicheck/0.1"
    cache_dir: Optional[Path] = None
    no_fetch: bool = False

    def __post_init__(self):
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")
        if self.max_bytes < 4096:
            raise ValueError("max_bytes must be at least 4096")


class SearchProvider(Protocol):
    def search(self, query: str, max_results: int, locale: Optional[str] = None) -> List[SearchHit]:
        ...


class MockSearchProvider:
    """Serves search hits from a JSON fixture mapping exact query strings to hit arrays."""

    def __init__(self, fixture: str | Path | Dict[str, list]):
        if isinstance(fixture, (str, Path)):
            with open(fixture, encoding="utf-8") as fh:
                self._table = json.load(fh)
        else:
            self._table = dict(fixture)
        self.calls = 0
        self._lock = threading.Lock()

    def search(self, query: str, max_results: int, locale: Optional[str] = None) -> List[SearchHit]:
        with self._lock:
            self.calls += 1
        if query not in self._table:
            raise SearchError(f"no fixture entry for query: {query!r}")
        hits = []
        for i, row in enumerate(self._table[query][:max_results], start=1):
            hits.append(
                SearchHit(url=row["link"], title=row.get("title", ""), snippet=row.get("snippet", ""), rank=i)
            )
        return hits


class HttpSearchProvider:
    """Live search API client: GET with {q, num, gl} returning a JSON hit array."""

    def __init__(self, api_url: str, api_key: Optional[str] = None, timeout: float = 10.0):
        self.api_url = api_url
        self.api_key = api_key
        self.timeout = timeout
        self.calls = 0

    def search(self, query: str, max_results: int, locale: Optional[str] = None) -> List[SearchHit]:
        import httpx

        self.calls += 1
        params = {"q": query, "num": str(max_results)}
        if locale:
            params["gl"] = locale
        if self.api_key:
            params["api_key"] = self.api_key
        try:
            resp = httpx.get(self.api_url, params=params, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
        except Exception as exc:  # noqa: BLE001 - normalized below
            raise SearchError(f"search request failed: {exc}") from exc
        rows = _find_hit_array(payload)
        hits = []
        for i, row in enumerate(rows[:max_results], start=1):
            hits.append(
                SearchHit(url=row["link"], title=row.get("title", ""), snippet=row.get("snippet", ""), rank=i)
            )
        return hits


def _find_hit_array(payload) -> list:
    if isinstance(payload, list):
        return payload
    if isinstance(payload, dict):
        for key in ("organic_results", "results", "items"):
            if isinstance(payload.get(key), list):
                return payload[key]
        for value in payload.values():
            if isinstance(value, list) and value and isinstance(value[0], dict) and "link" in value[0]:
                return value
    raise SearchError("search response contains no hit array")


def build_search_query(claim: str, region: Optional[str] = None, published: Optional[date] = None,
                       word_limit: int = QUERY_WORD_LIMIT) -> str:
    """Trim the claim to the engine word limit; region/date never enter the query text."""
    words = claim.split()
    if not words:
        raise ValueError("claim must be non-empty")
    return " ".join(words[:word_limit])


def cache_key(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()


# Elements whose entire content is dropped from extracted text.
_SKIP_ELEMENTS = {"script", "style", "nav", "header", "footer", "aside", "noscript", "template", "svg"}
# Elements that terminate the current output line.
_BLOCK_ELEMENTS = {
    "p", "div", "br", "h1", "h2", "h3", "h4", "h5", "h6", "li", "ul", "ol", "dl", "dt", "dd",
    "table", "tr", "th", "td", "section", "article", "blockquote", "pre", "figure", "figcaption",
    "main", "form", "hr", "address",
}


class _TextExtractor(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self._skip_depth = 0
        self._in_title = False
        self._line: List[str] = []
        self.lines: List[str] = []
        self.title = ""

    def _flush(self):
        text = re.sub(r"\s+", " ", "".join(self._line)).strip()
        if text:
            self.lines.append(text)
        self._line = []

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_ELEMENTS:
            self._skip_depth += 1
        elif tag == "title":
            self._in_title = True
        elif tag in _BLOCK_ELEMENTS:
            self._flush()

    def handle_endtag(self, tag):
        if tag in _SKIP_ELEMENTS:
            self._skip_depth = max(0, self._skip_depth - 1)
        elif tag == "title":
            self._in_title = False
        elif tag in _BLOCK_ELEMENTS:
            self._flush()

    def handle_data(self, data):
        if self._in_title:
            self.title += data
        elif self._skip_depth == 0:
            self._line.append(data)

    def close(self):
        super().close()
        self._flush()


def extract_text(html: str) -> Tuple[str, str]:
    """Return (title, visible text) with boilerplate elements dropped.

    Block elements are separated by single newlines; whitespace inside a
    line collapses to single spaces.
    """
    parser = _TextExtractor()
    parser.feed(html)
    parser.close()
    return parser.title.strip(), "\n".join(parser.lines).strip()


class Fetcher(Protocol):
    def get(self, url: str, policy: FetchPolicy) -> Tuple[int, bytes]:
        ...


class HttpFetcher:
    def __init__(self):
        self.calls = 0

    def get(self, url: str, policy: FetchPolicy) -> Tuple[int, bytes]:
        import httpx

        self.calls += 1
        try:
            resp = httpx.get(
                url,
                timeout=policy.timeout_seconds,
                headers={"User-Agent": policy.user_agent},
                follow_redirects=True,
            )
        except Exception as exc:  # noqa: BLE001 - normalized below
            raise FetchError(url, f"transport error: {exc}") from exc
        return resp.status_code, resp.content


@dataclass
class FileFetcher:
    """Offline fetcher backed by a url -> local HTML file mapping (tests/fixtures)."""

    pages: Dict[str, Path]
    calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def get(self, url: str, policy: FetchPolicy) -> Tuple[int, bytes]:
        with self._lock:
            self.calls += 1
        path = self.pages.get(url)
        if path is None or not Path(path).exists():
            return 404, b""
        return 200, Path(path).read_bytes()


def _cache_path(policy: FetchPolicy, url: str) -> Optional[Path]:
    if policy.cache_dir is None:
        return None
    return Path(policy.cache_dir) / f"{cache_key(url)}.json"


def fetch_and_extract(url: str, policy: FetchPolicy, fetcher: Optional[Fetcher] = None) -> Document:
    """Fetch one URL and extract its visible text; cache hits skip the network."""
    if not re.match(r"^https?://", url):
        raise FetchError(url, "not an http(s) URL")
    cached = _cache_path(policy, url)
    if cached is not None and cached.exists():
        data = json.loads(cached.read_text(encoding="utf-8"))
        return Document(url=data["url"], rank=1, title=data["title"], text=data["text"],
                        fetched_at=data["fetched_at"])
    if policy.no_fetch:
        raise FetchError(url, "not in cache and fetching is disabled")
    if fetcher is None:
        fetcher = HttpFetcher()
    status, body = fetcher.get(url, policy)
    if not 200 <= status < 300:
        raise FetchError(url, f"HTTP status {status}")
    if len(body) > policy.max_bytes:
        raise FetchError(url, f"body exceeds {policy.max_bytes} bytes")
    title, text = extract_text(body.decode("utf-8", errors="replace"))
    if not text:
        raise FetchError(url, "no visible text extracted")
    fetched_at = datetime.now(timezone.utc).isoformat()
    if cached is not None:
        cached.parent.mkdir(parents=True, exist_ok=True)
        tmp = cached.with_suffix(f".{threading.get_ident()}.tmp")
        tmp.write_text(
            json.dumps({"url": url, "fetched_at": fetched_at, "title": title, "text": text},
                       ensure_ascii=False),
            encoding="utf-8",
        )
        tmp.replace(cached)
    return Document(url=url, rank=1, title=title, text=text, fetched_at=fetched_at)


def collect_top_k(claim: str, k: int, provider: SearchProvider, policy: FetchPolicy,
                  fetcher: Optional[Fetcher] = None, locale: Optional[str] = None) -> List[Document]:
    """Walk search hits in rank order, skipping failed fetches, until k documents exist."""
    if k < 1:
        raise ValueError("k must be at least 1")
    query = build_search_query(claim)
    hits = provider.search(query, HIT_HEADROOM * k, locale=locale)
    documents: List[Document] = []
    seen = set()
    for hit in hits:
        if hit.url in seen:
            continue
        seen.add(hit.url)
        try:
            doc = fetch_and_extract(hit.url, policy, fetcher=fetcher)
        except FetchError as exc:
            log.warning("skipping %s: %s", hit.url, exc.cause)
            continue
        documents.append(doc.with_rank(hit.rank))
        if len(documents) == k:
            break
    if not documents:
        raise EmptyContextError(f"no documents collected for query: {query!r}")
    return documents
