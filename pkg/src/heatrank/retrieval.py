"""Cosine-similarity index with query expansion and heat re-ranking."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import ImageVector
from .diffusion import DiffusionConfig
from .errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    EmptyRanking,
    IoFailure,
    NormViolation,
    SingularSystem,
    TruncatedFile,
)

INDEX_MAGIC = b"HIDX"
INDEX_VERSION = 1
_INDEX_HEADER = struct.Struct("<4sIII")  # magic, version, D, count

#: shortlist size refined by heat re-ranking
DEFAULT_TOPK = 800
#: number of top-ranked vectors averaged into the expanded query
DEFAULT_N_QE = 10

_MU_SLACK = 1e-9


@dataclass(frozen=True)
class Index:
    """Immutable collection of unit-norm image vectors, searched by linear scan."""

    ids: tuple[str, ...]
    vectors: np.ndarray  # (n, D) float32, rows unit-norm
    _id_array: np.ndarray = field(init=False, repr=False, compare=False)
    _row_of: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_id_array", np.array(self.ids, dtype=np.str_))
        object.__setattr__(
            self, "_row_of", {img_id: i for i, img_id in enumerate(self.ids)}
        )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def row(self, image_id: str) -> np.ndarray:
        return self.vectors[self._row_of[image_id]]


@dataclass(frozen=True)
class RankedResult:
    """Ordered (image-id, score) list for one query."""

    entries: tuple[tuple[str, float], ...]
    query_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")
        if len({i for i, _ in self.entries}) != len(self.entries):
            raise ValueError("duplicate image id in ranking")

    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def build_index(ids: Sequence[str], vectors: np.ndarray) -> Index:
    """Validate ids/vectors and freeze them into an Index.

    Vectors are stored (and persisted) as float32; rows must be unit-norm
    within 1e-6.
    """
    ids = tuple(str(i) for i in ids)
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DuplicateId(f"duplicate image id {dup!r}")
    v = np.asarray(vectors)
    if v.ndim != 2:
        raise DimMismatch(f"vectors must be a 2-d array, got shape {v.shape}")
    if v.shape[0] != len(ids):
        raise DimMismatch(f"{len(ids)} ids for {v.shape[0]} vectors")
    v = np.ascontiguousarray(v, dtype=np.float32)
    norms = np.sqrt(np.einsum("ij,ij->i", v, v, dtype=np.float64))
    worst = int(np.argmax(np.abs(norms - 1.0)))
    if abs(norms[worst] - 1.0) > 1e-6:
        raise NormViolation(
            f"vector for id {ids[worst]!r} has norm {norms[worst]:.8f}"
        )
    return Index(ids=ids, vectors=v)


def save_index(idx: Index, path: str | Path) -> None:
    """Persist the index in the HIDX layout (little-endian)."""
    path = Path(path)
    parts = [_INDEX_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, idx.dim, len(idx))]
    for image_id, row in zip(idx.ids, idx.vectors):
        raw = image_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"image id too long to persist: {image_id[:40]!r}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(np.ascontiguousarray(row, dtype="<f4").tobytes())
    blob = b"".join(parts)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(blob)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_index(path: str | Path) -> Index:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if len(data) < _INDEX_HEADER.size:
        raise TruncatedFile(f"{path}: file ends inside the header", offset=len(data))
    magic, version, dim, count = _INDEX_HEADER.unpack_from(data, 0)
    if magic != INDEX_MAGIC:
        raise BadMagic(f"{path}: expected magic {INDEX_MAGIC!r}, got {magic!r}", offset=0)
    if version != INDEX_VERSION:
        raise BadMagic(f"{path}: unsupported version {version}", offset=4)
    ids = []
    vectors = np.empty((count, dim), dtype=np.float32)
    off = _INDEX_HEADER.size
    for i in range(count):
        if off + 2 > len(data):
            raise TruncatedFile(f"{path}: row {i} id length missing", offset=off)
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        end = off + id_len + 4 * dim
        if end > len(data):
            raise TruncatedFile(f"{path}: row {i} is incomplete", offset=len(data))
        ids.append(data[off : off + id_len].decode("utf-8"))
        off += id_len
        vectors[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
        off += 4 * dim
    if off != len(data):
        raise TruncatedFile(
            f"{path}: {len(data) - off} trailing bytes after last row", offset=off
        )
    return build_index(ids, vectors)


def _require_query(idx: Index, q: ImageVector) -> np.ndarray:
    if q.dim != idx.dim:
        raise DimMismatch(f"query dim {q.dim} != index dim {idx.dim}")
    norm = np.linalg.norm(q.values)
    if abs(norm - 1.0) > 1e-6:
        raise NormViolation(f"query vector has norm {norm:.8f}")
    return q.values


def search(idx: Index, q: ImageVector, query_id: str = "") -> RankedResult:
    """Exhaustive cosine scan, scores descending, ties by ascending id.

    Scoring runs in float32 (the index storage precision); exactly equal
    scores order by image id, so rankings are reproducible.
    """
    qv = _require_query(idx, q)
    scores = (idx.vectors @ qv.astype(np.float32)).astype(np.float64)
    order = np.lexsort((idx._id_array, -scores))
    entries = [(idx.ids[i], float(scores[i])) for i in order]
    return RankedResult(entries=tuple(entries), query_id=query_id)


def expand_query(
    q: ImageVector, ranked: RankedResult, idx: Index, n_qe: int = DEFAULT_N_QE
) -> ImageVector:
    """Average the query with its top-ranked vectors and re-normalize."""
    if n_qe < 1:
        raise ValueError(f"n_qe must be >= 1, got {n_qe}")
    if len(ranked) == 0:
        raise EmptyRanking("cannot expand a query from an empty ranking")
    take = min(n_qe, len(ranked))
    top = np.stack(
        [idx.row(image_id).astype(np.float64) for image_id, _ in ranked.entries[:take]]
    )
    mean = (q.values + top.sum(axis=0)) / (take + 1)
    norm = np.linalg.norm(mean)
    if norm == 0:
        raise EmptyRanking("expanded query collapsed to the zero vector")
    return ImageVector(mean / norm, stage=q.stage)


def temperature_gains(
    q1: np.ndarray, q2: np.ndarray, cfg: DiffusionConfig | None = None
) -> np.ndarray:
    """Steady-state temperature gain of each shortlist image.

    ``q1`` holds query-to-result similarities, ``q2`` the symmetric
    result-to-result similarities with zero diagonal. The query is the heat
    source: mu = (I - Lambda^-1 Q2)^-1 (Lambda^-1 Q1) with the diagonal
    a_m = q1[m] + sum(q2[m, :]) + lam. With similarities clamped to >= 0
    every gain lies in [0, 1].
    """
    cfg = cfg or DiffusionConfig()
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    k = q1.shape[0]
    if k == 0:
        return np.empty(0)
    if cfg.clamp_negative:
        q1 = np.clip(q1, 0.0, None)
        q2 = np.clip(q2, 0.0, None)
    a = q1 + q2.sum(axis=1) + cfg.lam
    lhs = -(q2 / a[:, None])
    np.fill_diagonal(lhs, 1.0)
    rhs = q1 / a
    try:
        mu = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularSystem(str(e)) from e
    residual = np.linalg.norm(lhs @ mu - rhs)
    if residual > cfg.solve_tolerance * max(1.0, np.linalg.norm(rhs)):
        raise SingularSystem(f"rerank residual {residual:.3g} exceeds tolerance")
    if cfg.clamp_negative:
        if mu.min(initial=0.0) < -_MU_SLACK or mu.max(initial=0.0) > 1.0 + _MU_SLACK:
            raise SingularSystem(
                f"temperature gains escaped [0, 1]: [{mu.min():.6g}, {mu.max():.6g}]"
            )
        mu = np.clip(mu, 0.0, 1.0)
    return mu


def _centered_similarities(
    qv: np.ndarray, vecs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    mean = (qv + vecs.sum(axis=0)) / (vecs.shape[0] + 1)
    qc = qv - mean
    vc = vecs - mean
    qn = np.linalg.norm(qc)
    vn = np.linalg.norm(vc, axis=1)
    # a vector equal to the common mean has no direction: similarity 0
    qu = qc / qn if qn > 0 else np.zeros_like(qc)
    safe = np.where(vn > 0, vn, 1.0)
    vu = vc / safe[:, None]
    vu[vn == 0] = 0.0
    q1 = vu @ qu
    q2 = vu @ vu.T
    q2 = (q2 + q2.T) / 2.0
    np.fill_diagonal(q2, 0.0)
    return q1, q2


def rerank_heat(
    q: ImageVector,
    topk: Sequence[tuple[str, ImageVector]],
    cfg: DiffusionConfig | None = None,
    query_id: str = "",
) -> RankedResult:
    """Reorder a shortlist by temperature gain with the query as heat source.

    The query and shortlist vectors are first centered by their common
    mean; similarities are taken between the centered vectors. Shortlists
    of size 0 or 1 are returned unchanged (centering two vectors
    degenerates). Ties break by ascending image id.
    """
    cfg = cfg or DiffusionConfig()
    k = len(topk)
    if k <= 1:
        return RankedResult(
            entries=tuple((image_id, 0.0) for image_id, _ in topk), query_id=query_id
        )
    vecs = np.stack([v.values for _, v in topk]).astype(np.float64)
    q1, q2 = _centered_similarities(np.asarray(q.values, dtype=np.float64), vecs)
    mu = temperature_gains(q1, q2, cfg)
    ids = np.array([image_id for image_id, _ in topk], dtype=np.str_)
    order = np.lexsort((ids, -mu))
    return RankedResult(
        entries=tuple((str(ids[i]), float(mu[i])) for i in order), query_id=query_id
    )


def shortlist(idx: Index, ranked: RankedResult, k: int) -> list[tuple[str, ImageVector]]:
    """The top-k (id, vector) pairs of a ranking, re-normalized in float64."""
    out = []
    for image_id, _ in ranked.entries[: min(k, len(ranked))]:
        row = idx.row(image_id).astype(np.float64)
        out.append(
            (image_id, ImageVector(row / np.linalg.norm(row), stage="whitened"))
        )
    return out


def full_query(
    idx: Index,
    q: ImageVector,
    *,
    use_qe: bool = False,
    use_her: bool = False,
    k: int = DEFAULT_TOPK,
    n_qe: int = DEFAULT_N_QE,
    cfg: DiffusionConfig | None = None,
    query_id: str = "",
) -> RankedResult:
    """Search, optionally expand-and-requery, optionally heat-rerank the top k.

    k = 0 disables re-ranking; k larger than the database is truncated.
    Entries past the re-ranked prefix keep their order, with scores shifted
    down where needed so the final score sequence stays non-increasing.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    cfg = cfg or DiffusionConfig()
    ranked = search(idx, q, query_id=query_id)
    source = q
    if use_qe:
        source = expand_query(q, ranked, idx, n_qe)
        ranked = search(idx, source, query_id=query_id)
    keff = min(k, len(ranked))
    if not use_her or keff <= 1:
        return ranked
    prefix = rerank_heat(source, shortlist(idx, ranked, keff), cfg, query_id=query_id)
    tail = ranked.entries[keff:]
    if tail:
        floor = prefix.entries[-1][1]
        shift = max(0.0, tail[0][1] - floor)
        tail = tuple((image_id, s - shift) for image_id, s in tail)
    return RankedResult(entries=prefix.entries + tuple(tail), query_id=query_id)
