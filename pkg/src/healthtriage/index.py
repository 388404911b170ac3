"""Knowledge corpus chunking, embedding, and exact top-k cosine retrieval."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BadPolicy, DimMismatch, EmptyCorpus, EmptyIndex, EmptyQuery, IoError, VersionMismatch
from .providers import Provider, text_digest

INDEX_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ChunkPolicy:
    chunk_size_chars: int = 512
    overlap_chars: int = 64

    def __post_init__(self):
        if self.chunk_size_chars < 1:
            raise BadPolicy("chunk_size_chars must be >= 1")
        if not (0 <= self.overlap_chars < self.chunk_size_chars):
            raise BadPolicy("overlap_chars must satisfy 0 <= overlap < chunk_size")


@dataclass
class KnowledgeChunk:
    chunk_id: int
    doc_id: str
    text: str
    embedding: np.ndarray | None = None


@dataclass(frozen=True)
class ScoredChunk:
    chunk: KnowledgeChunk
    score: float


def chunk_document(doc_id: str, text: str, policy: ChunkPolicy) -> list[KnowledgeChunk]:
    """Sliding-window split; the final partial window is kept if non-empty.

    Concatenating the chunks with overlaps removed reconstructs the input.
    Character positions count Unicode scalar values.
    """
    size = policy.chunk_size_chars
    stride = size - policy.overlap_chars
    chunks = []
    start = 0
    while start < len(text):
        piece = text[start:start + size]
        chunks.append(KnowledgeChunk(chunk_id=len(chunks), doc_id=doc_id, text=piece))
        start += stride
    return chunks


@dataclass
class VectorIndex:
    chunks: list[KnowledgeChunk]
    embed_dim: int
    build_digest: str
    policy: ChunkPolicy
    # (n_chunks, embed_dim) row-per-chunk matrix kept alongside for fast scans
    matrix: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.matrix is None and self.chunks:
            self.matrix = np.stack([c.embedding for c in self.chunks])


def build_index(
    corpus: list[tuple[str, str]],
    policy: ChunkPolicy,
    provider: Provider,
) -> VectorIndex:
    """Chunk and embed every document; chunk ids are dense in ingestion order."""
    if not corpus:
        raise EmptyCorpus("corpus is empty")
    chunks: list[KnowledgeChunk] = []
    for doc_id, text in corpus:
        for piece in chunk_document(doc_id, text, policy):
            chunks.append(KnowledgeChunk(
                chunk_id=len(chunks),
                doc_id=doc_id,
                text=piece.text,
                embedding=provider.embed(piece.text),
            ))
    digest_payload = json.dumps(
        {
            "policy": [policy.chunk_size_chars, policy.overlap_chars],
            "provider": provider.config.to_dict(),
            "corpus": [[doc_id, text_digest(text)] for doc_id, text in corpus],
        },
        sort_keys=True,
    )
    return VectorIndex(
        chunks=chunks,
        embed_dim=provider.config.embed_dim,
        build_digest=text_digest(digest_payload),
        policy=policy,
    )


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit-norm vectors."""
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def retrieve(index: VectorIndex, query: str, k: int, provider: Provider) -> list[ScoredChunk]:
    """Exact top-k by cosine, ordered by (score desc, chunk_id asc).

    Equivalent to an exhaustive scan of the index; k=0 returns no context.
    """
    if not index.chunks:
        raise EmptyIndex("index has no chunks")
    if not query.strip():
        raise EmptyQuery("query is empty")
    if k <= 0:
        return []
    qvec = provider.embed(query)
    if qvec.shape[0] != index.embed_dim:
        raise DimMismatch("query embedding dimension does not match index")
    # Per-chunk dot products keep scores bit-identical to a plain exhaustive
    # scan (a matmul would accumulate in a different order).
    scores = np.array([np.dot(c.embedding, qvec) for c in index.chunks])
    # chunk_id ascending is the array order, so a stable sort on -score
    # yields the (score desc, chunk_id asc) ordering.
    order = np.argsort(-scores, kind="stable")[:k]
    return [ScoredChunk(chunk=index.chunks[i], score=float(scores[i])) for i in order]


def save_index(index: VectorIndex, path) -> None:
    payload = {
        "schema_version": INDEX_SCHEMA_VERSION,
        "policy": {
            "chunk_size_chars": index.policy.chunk_size_chars,
            "overlap_chars": index.policy.overlap_chars,
        },
        "embed_dim": index.embed_dim,
        "build_digest": index.build_digest,
        "chunks": [
            {
                "chunk_id": c.chunk_id,
                "doc_id": c.doc_id,
                "text": c.text,
                "embedding": c.embedding.tolist(),
            }
            for c in index.chunks
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_index(path) -> VectorIndex:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot load index from {path}: {exc}") from exc
    if payload.get("schema_version") != INDEX_SCHEMA_VERSION:
        raise VersionMismatch(f"index schema {payload.get('schema_version')} unsupported")
    embed_dim = payload["embed_dim"]
    chunks = []
    for rec in payload["chunks"]:
        vec = np.asarray(rec["embedding"], dtype=np.float64)
        if vec.shape != (embed_dim,):
            raise DimMismatch("stored chunk dimension does not match index embed_dim")
        chunks.append(KnowledgeChunk(rec["chunk_id"], rec["doc_id"], rec["text"], vec))
    return VectorIndex(
        chunks=chunks,
        embed_dim=embed_dim,
        build_digest=payload["build_digest"],
        policy=ChunkPolicy(**payload["policy"]),
    )


def load_corpus(path) -> list[tuple[str, str]]:
    """Corpus input: a directory of plain-text files or a JSONL of {doc_id, text}."""
    if os.path.isdir(path):
        docs = []
        for root, _dirs, files in os.walk(path):
            for name in sorted(files):
                full = os.path.join(root, name)
                rel = os.path.relpath(full, path)
                with open(full, encoding="utf-8") as fh:
                    docs.append((rel, fh.read()))
        docs.sort(key=lambda pair: pair[0])
        if not docs:
            raise EmptyCorpus(f"no documents under {path}")
        return docs
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            docs.append((rec["doc_id"], rec["text"]))
    if not docs:
        raise EmptyCorpus(f"no documents in {path}")
    return docs
