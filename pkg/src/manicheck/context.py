"""RAG context construction: recursive chunking, embedding, and top-n retrieval."""
from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

from .models import Chunk, Document, EmbeddedChunk
from .retrieval import EmptyContextError

EMBED_BATCH_SIZE = 64
DEFAULT_MAX_CONTEXT_CHARS = 4000


@dataclass(frozen=True)
class SplitterConfig:
    chunk_size: int = 100
    overlap: int = 20
    separators: Tuple[str, ...] = ("\n\n", "\n", " ", "")

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError("overlap must be non-negative and smaller than chunk_size")
        if self.separators[-1] != "":
            raise ValueError("last separator must be the empty string (hard split)")


def _split_pieces(text: str, sep: str) -> List[Tuple[int, str]]:
    """Split on sep, each piece keeping its trailing separator, with offsets."""
    pieces = []
    start = 0
    while True:
        idx = text.find(sep, start)
        if idx == -1:
            if start < len(text):
                pieces.append((start, text[start:]))
            return pieces
        end = idx + len(sep)
        pieces.append((start, text[start:end]))
        start = end


def _hard_slices(text: str, offset: int, chunk_size: int, overlap: int) -> List[Tuple[int, str]]:
    stride = chunk_size - overlap
    out = []
    start = 0
    while True:
        out.append((offset + start, text[start:start + chunk_size]))
        if start + chunk_size >= len(text):
            return out
        start += stride


def _split(text: str, offset: int, seps: Sequence[str], cfg: SplitterConfig) -> List[Tuple[int, str]]:
    if not text:
        return []
    if len(text) <= cfg.chunk_size:
        return [(offset, text)]
    sep = next((s for s in seps if s and s in text), "")
    if sep == "":
        return _hard_slices(text, offset, cfg.chunk_size, cfg.overlap)
    remaining = seps[seps.index(sep) + 1:]
    pieces = _split_pieces(text, sep)

    out: List[Tuple[int, str]] = []
    window_start = offset  # absolute offset of the window's first character
    window_len = 0  # total chars in window (carry + new content)
    carry_len = 0  # chars at window front carried over from the previous chunk

    def emit():
        nonlocal window_start, window_len, carry_len
        if window_len > carry_len:  # never emit a pure-overlap window
            out.append((window_start, text[window_start - offset:window_start - offset + window_len]))
        end = window_start + window_len
        carry_len = min(cfg.overlap, window_len)
        window_start = end - carry_len
        window_len = carry_len

    for piece_off, piece in pieces:
        abs_off = offset + piece_off
        if len(piece) > cfg.chunk_size:
            emit()
            sub = _split(piece, abs_off, remaining, cfg)
            out.extend(sub)
            # restart the window with the overlap tail of the last emitted chunk
            last_off, last_text = sub[-1]
            carry_len = min(cfg.overlap, len(last_text))
            window_start = last_off + len(last_text) - carry_len
            window_len = carry_len
            continue
        if window_len + len(piece) > cfg.chunk_size:
            emit()
            # trim the carried tail from the left so the piece still fits
            if window_len + len(piece) > cfg.chunk_size:
                drop = window_len + len(piece) - cfg.chunk_size
                window_start += drop
                window_len -= drop
                carry_len -= drop
        window_len += len(piece)
    emit()
    return out


def split_recursive(text: str, config: Optional[SplitterConfig] = None, doc_index: int = 0) -> List[Chunk]:
    """Deterministic recursive character splitter with overlapping windows."""
    cfg = config or SplitterConfig()
    spans = _split(text, 0, cfg.separators, cfg)
    return [
        Chunk(doc_index=doc_index, seq=seq, text=t, char_start=off)
        for seq, (off, t) in enumerate(spans)
    ]


class EmbeddingProvider(Protocol):
    @property
    def dimension(self) -> int:
        ...

    def embed(self, texts: List[str]) -> List[List[float]]:
        ...


def _char_weight(c: str) -> float:
    """Stable per-character weight in [-1, 1); independent of PYTHONHASHSEED."""
    digest = hashlib.blake2b(c.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2 ** 63 - 1.0


class Mock16Embedder:
    """Deterministic 16-d embedding: per-character accumulation, L2-normalized.

    Offers stable geometry for offline tests; carries no semantics.
    """

    dimension = 16

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def embed(self, texts: List[str]) -> List[List[float]]:
        with self._lock:
            self.calls += 1
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> List[float]:
        vec = [0.0] * self.dimension
        for i, c in enumerate(text):
            vec[i % self.dimension] += _char_weight(c) / (1 + i)
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            vec = [0.0] * self.dimension
            vec[0] = 1.0
            return vec
        return [v / norm for v in vec]


class HttpEmbedder:
    """Live embedding API client: POST {model, input} -> {embeddings}."""

    def __init__(self, api_url: str, model: str, timeout: float = 30.0):
        self.api_url = api_url
        self.model = model
        self.timeout = timeout
        self.calls = 0
        self._dimension: Optional[int] = None

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            self._dimension = len(self.embed(["probe"])[0])
        return self._dimension

    def embed(self, texts: List[str]) -> List[List[float]]:
        import httpx

        self.calls += 1
        resp = httpx.post(self.api_url, json={"model": self.model, "input": texts}, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()["embeddings"]


class EmbeddingError(Exception):
    def __init__(self, message: str, chunk_ids: List[Tuple[int, int]]):
        super().__init__(message)
        self.chunk_ids = chunk_ids


def embed_batch(chunks: List[Chunk], provider: EmbeddingProvider,
                batch_size: int = EMBED_BATCH_SIZE) -> List[EmbeddedChunk]:
    """Embed chunk texts in order, at most batch_size texts per provider call."""
    out: List[EmbeddedChunk] = []
    for start in range(0, len(chunks), batch_size):
        batch = chunks[start:start + batch_size]
        try:
            vectors = provider.embed([c.text for c in batch])
        except Exception as exc:
            ids = [(c.doc_index, c.seq) for c in batch]
            raise EmbeddingError(f"embedding failed for chunks {ids}: {exc}", ids) from exc
        for chunk, vector in zip(batch, vectors):
            out.append(EmbeddedChunk(chunk=chunk, vector=tuple(vector)))
    return out


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    dot = sum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(y * y for y in b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return dot / (norm_a * norm_b)


@dataclass
class VectorIndex:
    """Append-only in-memory index; built per claim, queried, then discarded."""

    entries: List[EmbeddedChunk] = field(default_factory=list)

    def add(self, entry: EmbeddedChunk) -> None:
        if self.entries and len(entry.vector) != len(self.entries[0].vector):
            raise ValueError("all index entries must share one dimension")
        self.entries.append(entry)

    def extend(self, entries: Sequence[EmbeddedChunk]) -> None:
        for entry in entries:
            self.add(entry)

    def __len__(self) -> int:
        return len(self.entries)


def retrieve_top_n(index: VectorIndex, query_vector: Sequence[float], n: int) -> List[EmbeddedChunk]:
    """Top-n entries by cosine similarity; ties broken by lower insertion index."""
    if not index.entries:
        raise EmptyContextError("vector index is empty")
    scored = [
        (cosine_similarity(entry.vector, query_vector), i)
        for i, entry in enumerate(index.entries)
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [index.entries[i] for _, i in scored[:n]]


def assemble_context(chunks: Sequence[EmbeddedChunk], max_chars: int = DEFAULT_MAX_CONTEXT_CHARS) -> str:
    """Concatenate chunk texts with source prefixes, truncating at chunk boundaries."""
    parts: List[str] = []
    total = 0
    for embedded in chunks:
        part = f"[source {embedded.chunk.doc_index + 1}] {embedded.chunk.text}"
        cost = len(part) + (2 if parts else 0)  # blank-line separator
        if total + cost > max_chars:
            break
        parts.append(part)
        total += cost
    return "\n\n".join(parts)


def documents_to_index(documents: Sequence[Document], splitter: SplitterConfig,
                       provider: EmbeddingProvider) -> VectorIndex:
    """Chunk and embed a retrieval batch into a fresh per-claim index."""
    chunks: List[Chunk] = []
    for doc_index, doc in enumerate(documents):
        chunks.extend(split_recursive(doc.text, splitter, doc_index=doc_index))
    index = VectorIndex()
    index.extend(embed_batch(chunks, provider))
    return index
