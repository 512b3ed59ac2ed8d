"""Literature search stack: embeddings, exact flat index, contrastive loss,
and per-step reference attachment.

Similarity is raw dot product and search is an exhaustive scan, so results
are exact by construction.  A deterministic hash-based embedder ships so
everything runs without a model.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import DimensionMismatch, EmptyIndex, InvariantViolation, MissingFinal
from .protocol import Responder, Transcript

DEFAULT_DIMENSION = 2048  # hidden size of the reference embedding model
SOURCES = ("PubMed", "StatPearls", "textbook", "other")

_MAGIC = b"DXFI"
_VERSION = 1


@runtime_checkable
class EmbeddingPort(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Deterministic test embedder: text -> seeded pseudo-random unit vector."""

    def __init__(self, dimension: int = 64, salt: str = ""):
        self.dimension = dimension
        self.salt = salt

    def embed(self, text: str) -> np.ndarray:
        digest = hashlib.sha256((self.salt + text).encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.dimension)
        return (v / np.linalg.norm(v)).astype(np.float32)


@dataclass
class IndexedParagraph:
    doc_id: str
    source: str
    text: str
    vector: np.ndarray

    def __post_init__(self):
        if self.source not in SOURCES:
            raise InvariantViolation(f"source must be one of {SOURCES}, got {self.source!r}")
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if self.vector.ndim != 1:
            raise DimensionMismatch("paragraph vector must be one-dimensional")


@dataclass
class FlatIndex:
    """Append-only exact index; search scans every entry.

    Safe for concurrent readers; additions need exclusive access
    (single-writer contract).
    """

    dimension: int
    entries: list[IndexedParagraph] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, doc_id: str) -> IndexedParagraph | None:
        for e in self.entries:
            if e.doc_id == doc_id:
                return e
        return None

    def matrix(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, self.dimension), dtype=np.float32)
        return np.stack([e.vector for e in self.entries])

    # -- persistence: packed little-endian float32 + JSONL metadata sidecar --

    def save(self, base: str | Path) -> None:
        base = Path(base)
        count = len(self.entries)
        with open(base.with_suffix(".bin"), "wb") as fh:
            fh.write(struct.pack("<4sIII", _MAGIC, _VERSION, self.dimension, count))
            if count:
                fh.write(self.matrix().astype("<f4").tobytes(order="C"))
        with open(base.with_suffix(".meta.jsonl"), "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(
                    json.dumps(
                        {"doc_id": e.doc_id, "source": e.source, "text": e.text},
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, base: str | Path) -> "FlatIndex":
        base = Path(base)
        with open(base.with_suffix(".bin"), "rb") as fh:
            magic, version, dim, count = struct.unpack("<4sIII", fh.read(16))
            if magic != _MAGIC or version != _VERSION:
                raise InvariantViolation(f"unrecognized index file {base}")
            data = np.frombuffer(fh.read(), dtype="<f4")
        if data.size != count * dim:
            raise InvariantViolation("index payload size does not match header")
        vectors = data.reshape(count, dim)
        entries = []
        with open(base.with_suffix(".meta.jsonl"), encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        if len(rows) != count:
            raise InvariantViolation("metadata sidecar does not match vector count")
        for row, vec in zip(rows, vectors):
            entries.append(
                IndexedParagraph(
                    doc_id=row["doc_id"], source=row["source"], text=row["text"], vector=vec
                )
            )
        return cls(dimension=dim, entries=entries)


def index_add(
    index: FlatIndex, paragraphs: Sequence[dict], embedder: EmbeddingPort
) -> FlatIndex:
    """Embed and append paragraphs ({doc_id, source, text}) to the index."""
    if embedder.dimension != index.dimension:
        raise DimensionMismatch(
            f"embedder dimension {embedder.dimension} != index dimension {index.dimension}"
        )
    for p in paragraphs:
        vector = np.asarray(embedder.embed(p["text"]), dtype=np.float32)
        if vector.shape != (index.dimension,):
            raise DimensionMismatch(
                f"vector shape {vector.shape} != ({index.dimension},) for {p['doc_id']!r}"
            )
        index.entries.append(
            IndexedParagraph(
                doc_id=str(p["doc_id"]),
                source=p.get("source", "other"),
                text=p["text"],
                vector=vector,
            )
        )
    return index


def search_topk(
    index: FlatIndex, query: str, k: int, embedder: EmbeddingPort
) -> list[tuple[str, float]]:
    """Exact top-k by descending dot product; ties break on doc_id ascending.

    Scores are per-entry float64 dot products so the ranking is
    reproducible regardless of how a verifier batches the same scan.
    """
    if k < 1:
        raise InvariantViolation("k must be >= 1")
    if not index.entries:
        raise EmptyIndex("search against an empty index")
    q = np.asarray(embedder.embed(query), dtype=np.float64)
    if q.shape != (index.dimension,):
        raise DimensionMismatch(f"query dimension {q.shape} != ({index.dimension},)")
    scores = [float(np.dot(np.asarray(e.vector, dtype=np.float64), q)) for e in index.entries]
    order = sorted(range(len(scores)), key=lambda i: (scores[i] * -1, index.entries[i].doc_id))
    return [(index.entries[i].doc_id, scores[i]) for i in order[:k]]


def format_citation(entry: IndexedParagraph) -> str:
    flat = " ".join(entry.text.split())
    return f"{entry.doc_id} ({entry.source}): {flat}"


def attach_references(
    t: Transcript,
    index: FlatIndex,
    embedder: EmbeddingPort,
    physician_log: dict[int, str],
) -> Transcript:
    """Reference every step: top-1 literature hit for LLM steps, the logged
    physician action for physician steps.  Returns a new transcript."""
    if t.final is None:
        raise MissingFinal("references attach to a finalized transcript")
    if not index.entries:
        raise EmptyIndex("cannot attach references from an empty index")
    references: list[tuple[int, str]] = []
    for step in t.steps:
        if step.responder is Responder.PHYSICIAN:
            if step.index not in physician_log:
                raise InvariantViolation(f"no logged physician action for step {step.index}")
            references.append((step.index, " ".join(physician_log[step.index].split())))
        else:
            doc_id, _score = search_topk(index, step.question, 1, embedder)[0]
            references.append((step.index, format_citation(index.get(doc_id))))
    return Transcript(
        instruction=t.instruction,
        steps=[replace(s) for s in t.steps],
        final=replace(t.final),
        references=references,
    )


# --- in-batch contrastive loss ---

def contrastive_loss(Q: np.ndarray, P: np.ndarray) -> float:
    """Mean softmax cross-entropy of each query against its own paragraph,
    with the batch's other paragraphs as negatives."""
    return contrastive_loss_and_grad(Q, P)[0]


def contrastive_loss_and_grad(
    Q: np.ndarray, P: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus gradients w.r.t. every query/paragraph vector entry."""
    Q = np.asarray(Q, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if Q.ndim != 2 or P.ndim != 2 or Q.shape != P.shape:
        raise DimensionMismatch(f"query batch {Q.shape} and paragraph batch {P.shape} must match")
    b = Q.shape[0]
    if b < 1:
        raise DimensionMismatch("batch must contain at least one pair")
    scores = Q @ P.T  # (b, b)
    row_max = scores.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(scores - row_max).sum(axis=1))
    loss = float(np.mean(lse - np.diag(scores)))
    softmax = np.exp(scores - lse[:, None])
    dscores = (softmax - np.eye(b)) / b
    return loss, dscores @ P, dscores.T @ Q
