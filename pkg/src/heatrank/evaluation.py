"""Retrieval quality measurement under the buildings-benchmark protocol.

Ground truth lives in per-query text files (`<q>_query.txt` with
"name x1 y1 x2 y2", plus `<q>_good.txt`, `<q>_ok.txt`, `<q>_junk.txt`).
Good and ok ids count as positives; junk ids are deleted from a ranking
before average precision is accumulated. Some collections additionally
remove the query image itself from its own ranking.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

from .errors import MalformedQueryLine, MissingList, NoPositives
from .retrieval import RankedResult

ApVariant = Literal["trapezoidal", "precision-at-hit"]


@dataclass(frozen=True)
class GroundTruth:
    """Relevance labels for one query."""

    query_id: str
    query_image_id: str
    bbox: tuple[float, float, float, float] | None
    positives: frozenset[str]
    junk: frozenset[str]

    def __post_init__(self):
        overlap = self.positives & self.junk
        if overlap:
            raise ValueError(
                f"query {self.query_id}: ids both positive and junk: {sorted(overlap)[:3]}"
            )


def _read_ids(path: Path, query_id: str) -> frozenset[str]:
    if not path.is_file():
        raise MissingList(f"query {query_id}: missing {path.name}")
    return frozenset(line.strip() for line in path.read_text().splitlines() if line.strip())


def load_groundtruth(directory: str | Path) -> list[GroundTruth]:
    """Parse every `<q>_query.txt` in a directory with its three id lists."""
    directory = Path(directory)
    out = []
    for qf in sorted(directory.glob("*_query.txt")):
        query_id = qf.name[: -len("_query.txt")]
        lines = [ln for ln in qf.read_text().splitlines() if ln.strip()]
        if len(lines) != 1:
            raise MalformedQueryLine(
                f"{qf.name}: expected one 'name x1 y1 x2 y2' line, got {len(lines)}"
            )
        tokens = lines[0].split()
        if len(tokens) != 5:
            raise MalformedQueryLine(f"{qf.name}: expected 5 fields, got {len(tokens)}")
        try:
            bbox = tuple(float(t) for t in tokens[1:])
        except ValueError as e:
            raise MalformedQueryLine(f"{qf.name}: bad bounding box: {e}") from e
        good = _read_ids(directory / f"{query_id}_good.txt", query_id)
        ok = _read_ids(directory / f"{query_id}_ok.txt", query_id)
        junk = _read_ids(directory / f"{query_id}_junk.txt", query_id)
        out.append(
            GroundTruth(
                query_id=query_id,
                query_image_id=tokens[0],
                bbox=bbox,
                positives=good | ok,
                junk=junk,
            )
        )
    return out


def average_precision(
    ranked: RankedResult,
    gt: GroundTruth,
    remove_self: bool = False,
    variant: ApVariant = "trapezoidal",
) -> float:
    """AP of one ranking after junk (and optionally the query image) removal.

    The trapezoidal variant walks the filtered list accumulating
    (recall - old_recall) * (old_precision + precision) / 2 with
    old_precision starting at 1; it is the classic buildings-benchmark
    scoring. "precision-at-hit" averages precision at the positives
    instead, for ablation.
    """
    if len(ranked) == 0:
        raise ValueError("ranking is empty")
    if not gt.positives:
        raise NoPositives(f"query {gt.query_id} has no positive images")
    drop = set(gt.junk)
    if remove_self:
        drop.add(gt.query_image_id)
    kept = [image_id for image_id, _ in ranked.entries if image_id not in drop]
    n_pos = len(gt.positives)
    hits = 0
    if variant == "precision-at-hit":
        total = 0.0
        for rank, image_id in enumerate(kept, start=1):
            if image_id in gt.positives:
                hits += 1
                total += hits / rank
        return total / n_pos
    ap = 0.0
    old_recall = 0.0
    old_precision = 1.0
    for rank, image_id in enumerate(kept, start=1):
        if image_id in gt.positives:
            hits += 1
        recall = hits / n_pos
        precision = hits / rank
        ap += (recall - old_recall) * (old_precision + precision) / 2.0
        old_recall = recall
        old_precision = precision
    return ap


def mean_average_precision(
    results: Iterable[tuple[RankedResult, GroundTruth]],
    remove_self: bool = False,
    variant: ApVariant = "trapezoidal",
) -> float:
    """Arithmetic mean of per-query APs."""
    aps = [
        average_precision(ranked, gt, remove_self=remove_self, variant=variant)
        for ranked, gt in results
    ]
    if not aps:
        raise ValueError("no queries to evaluate")
    return sum(aps) / len(aps)
