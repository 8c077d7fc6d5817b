"""Dense retrieval over tool and example corpora.

Embeds texts through a pluggable provider, ranks by cosine similarity, and
selects top-k. Ships a deterministic hashing provider for network-free tests
and a client for any OpenAI-compatible embeddings endpoint. Corpora are
immutable after indexing and carry the provider id plus registry version so
stale caches are rejected instead of silently reused.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path


class RetrievalError(ValueError):
    pass


def cosine(a: list[float], b: list[float]) -> float:
    """dot(a, b) / (|a| * |b|); errors on dimension mismatch or zero vectors."""
    if len(a) != len(b):
        raise RetrievalError(f"dimension mismatch: {len(a)} vs {len(b)}")
    dot = sum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(y * y for y in b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise RetrievalError("cosine of a zero vector is undefined")
    return dot / (norm_a * norm_b)


class HashEmbeddingProvider:
    """Deterministic test provider: hashed character trigrams projected into a
    fixed-dimension space, then L2-normalized. CI-stable, no network."""

    def __init__(self, dimension: int = 64, seed: int = 0):
        self.dimension = dimension
        self.seed = seed
        self.provider_id = f"hash-trigram-{dimension}-{seed}"

    def embed(self, text: str) -> list[float]:
        if not text:
            raise RetrievalError("cannot embed empty text")
        padded = f"##{text.lower()}##"
        values = [0.0] * self.dimension
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3]
            digest = hashlib.sha256(f"{self.seed}:{gram}".encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dimension
            sign = 1.0 if digest[4] & 1 else -1.0
            values[bucket] += sign
        norm = math.sqrt(sum(v * v for v in values))
        if norm == 0.0:
            values[0] = 1.0
            norm = 1.0
        return [v / norm for v in values]


class RemoteEmbeddingProvider:
    """OpenAI-compatible embeddings endpoint (POST {base}/v1/embeddings)."""

    def __init__(self, model: str | None = None, api_base: str | None = None,
                 api_key: str | None = None, timeout: float | None = None):
        self.model = model or os.environ.get("CHAINPLAN_EMBED_MODEL", "text-embedding-ada-002")
        self.api_base = (api_base or os.environ.get("CHAINPLAN_API_BASE")
                         or os.environ.get("OPENAI_API_BASE", "https://api.openai.com")).rstrip("/")
        self.api_key = api_key or os.environ.get("CHAINPLAN_API_KEY") or os.environ.get("OPENAI_API_KEY", "")
        self.timeout = timeout if timeout is not None else float(os.environ.get("CHAINPLAN_TIMEOUT", "30"))
        self.provider_id = f"remote-{self.model}"
        self.dimension: int | None = None

    def embed(self, text: str) -> list[float]:
        if not text:
            raise RetrievalError("cannot embed empty text")
        from .llm import post_json  # shared transport with retry

        body = post_json(
            f"{self.api_base}/v1/embeddings",
            {"model": self.model, "input": text},
            api_key=self.api_key,
            timeout=self.timeout,
        )
        try:
            vector = [float(v) for v in body["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError) as exc:
            raise RetrievalError(f"malformed embeddings response: {exc}") from exc
        if self.dimension is None:
            self.dimension = len(vector)
        return vector


@dataclass(frozen=True)
class CorpusItem:
    id: str
    text: str
    vector: tuple[float, ...]


@dataclass(frozen=True)
class Corpus:
    kind: str  # "tools" | "examples"
    items: tuple[CorpusItem, ...]
    provider_id: str
    registry_version: str
    dimension: int

    def __len__(self) -> int:
        return len(self.items)


def index_corpus(provider, items: list[tuple[str, str]], kind: str = "tools",
                 registry_version: str = "") -> Corpus:
    """One vector per (id, text) item, order preserved; ids must be unique."""
    seen: set[str] = set()
    indexed: list[CorpusItem] = []
    dimension = getattr(provider, "dimension", None)
    for item_id, text in items:
        if item_id in seen:
            raise RetrievalError(f"duplicate corpus id {item_id!r}")
        seen.add(item_id)
        try:
            vector = provider.embed(text)
        except RetrievalError:
            raise
        except Exception as exc:
            raise RetrievalError(f"provider failed on item {item_id!r}: {exc}") from exc
        if dimension is None:
            dimension = len(vector)
        if len(vector) != dimension:
            raise RetrievalError(
                f"provider returned dimension {len(vector)} for item {item_id!r}, expected {dimension}"
            )
        if not all(math.isfinite(v) for v in vector):
            raise RetrievalError(f"non-finite embedding for item {item_id!r}")
        indexed.append(CorpusItem(id=item_id, text=text, vector=tuple(vector)))
    return Corpus(
        kind=kind,
        items=tuple(indexed),
        provider_id=provider.provider_id,
        registry_version=registry_version,
        dimension=dimension or 0,
    )


def retrieve_top_k(query: str, corpus: Corpus, provider, k: int) -> list[tuple[str, float]]:
    """The k highest-cosine items, descending score, ties broken by ascending
    id; the whole corpus when it holds fewer than k items."""
    if k < 1:
        raise RetrievalError("k must be at least 1")
    if not corpus.items:
        raise RetrievalError("cannot retrieve from an empty corpus")
    if corpus.provider_id != provider.provider_id:
        raise RetrievalError(
            f"corpus indexed with provider {corpus.provider_id!r}, queried with {provider.provider_id!r}"
        )
    query_vec = provider.embed(query)
    scored = [(item.id, cosine(query_vec, list(item.vector))) for item in corpus.items]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def top_n_recall(retrieved: list[str], needed: set[str], n: int) -> float:
    """Fraction of needed ids present in the first n retrieved ids."""
    if not needed:
        raise RetrievalError("needed set must not be empty")
    head = set(retrieved[:n])
    return len(needed & head) / len(needed)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    doc = {
        "provider": corpus.provider_id,
        "dimension": corpus.dimension,
        "registry_version": corpus.registry_version,
        "kind": corpus.kind,
        "items": [
            {"id": item.id, "text": item.text, "vector": list(item.vector)}
            for item in corpus.items
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_corpus(path: str | Path, expect_registry_version: str | None = None) -> Corpus:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if expect_registry_version is not None and doc["registry_version"] != expect_registry_version:
        raise RetrievalError(
            f"stale corpus: indexed for registry {doc['registry_version']!r}, "
            f"current is {expect_registry_version!r}"
        )
    return Corpus(
        kind=doc["kind"],
        items=tuple(
            CorpusItem(id=i["id"], text=i["text"], vector=tuple(float(v) for v in i["vector"]))
            for i in doc["items"]
        ),
        provider_id=doc["provider"],
        registry_version=doc["registry_version"],
        dimension=int(doc["dimension"]),
    )


def tool_embedding_text(spec, include_arguments: bool = True) -> str:
    """Text embedded for a tool: name and description, optionally joined with
    argument names and descriptions for better disambiguation."""
    parts = [f"{spec.name}: {spec.description}"]
    if include_arguments:
        for arg in spec.arguments:
            parts.append(f"{arg.name}: {arg.description}" if arg.description else arg.name)
    return " | ".join(parts)
