"""Seeded synthetic fixtures: bursty feature sets and retrieval benchmarks.

Images are simulated as feature sets built from sparse non-negative
prototypes: a few class-signature features that make same-class images
findable, plus a shared "clutter" prototype repeated many times per image
(windows, sky, grass). The clutter group is the planted burst: it carries
no class information but dominates an unweighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import DEFAULT_ALPHA, hew_vector, suma_vector
from .diffusion import DiffusionConfig
from .evaluation import GroundTruth, average_precision
from .retrieval import build_index, search
from .tensor_io import FeatureSet


def random_feature_set(rng: np.random.Generator, n: int, dim: int) -> FeatureSet:
    """n random non-negative features (magnitude-of-gaussian entries)."""
    f = np.abs(rng.standard_normal((n, dim))).astype(np.float32)
    f[np.all(f == 0, axis=1), 0] = 1.0
    return FeatureSet(features=f, dropped_count=0)


def _sparse_prototype(rng: np.random.Generator, dim: int, support: int) -> np.ndarray:
    v = np.zeros(dim)
    v[rng.choice(dim, size=support, replace=False)] = rng.uniform(0.5, 1.0, support)
    return v / np.linalg.norm(v)


def _noisy_copy(
    rng: np.random.Generator, proto: np.ndarray, noise: float
) -> np.ndarray:
    direction = rng.uniform(0.0, 1.0, proto.shape[0])
    direction *= noise * np.linalg.norm(proto) / np.linalg.norm(direction)
    return proto + direction


@dataclass(frozen=True)
class RetrievalBenchmark:
    """A database of labelled feature sets with by-construction ground truth."""

    image_ids: tuple[str, ...]
    image_sets: tuple[FeatureSet, ...]
    query_sets: tuple[FeatureSet, ...]
    groundtruth: tuple[GroundTruth, ...]


def make_retrieval_benchmark(
    seed: int,
    n_classes: int = 20,
    images_per_class: int = 10,
    n_queries: int = 20,
    dim: int = 64,
    signature_size: int = 3,
    clutter_range: tuple[int, int] = (4, 28),
    distractors: int = 2,
    noise: float = 0.05,
) -> RetrievalBenchmark:
    """Plant class signatures under bursty clutter.

    Every image holds its class's signature features once, a seeded number
    of near-identical copies of one clutter prototype shared by all
    classes, and a couple of random distractors. Queries are fresh draws
    from the first ``n_queries`` classes; positives are exactly the class
    members.
    """
    if n_queries > n_classes:
        raise ValueError("need at least one class per query")
    rng = np.random.default_rng(seed)
    clutter = _sparse_prototype(rng, dim, support=4)
    signatures = [
        [_sparse_prototype(rng, dim, support=4) for _ in range(signature_size)]
        for _ in range(n_classes)
    ]

    def sample(cls: int) -> FeatureSet:
        rows = [
            _noisy_copy(rng, proto * rng.uniform(0.8, 1.2), noise)
            for proto in signatures[cls]
        ]
        burst = rng.integers(clutter_range[0], clutter_range[1] + 1)
        rows += [
            _noisy_copy(rng, clutter * rng.uniform(0.8, 1.2), noise)
            for _ in range(burst)
        ]
        rows += [_sparse_prototype(rng, dim, support=4) for _ in range(distractors)]
        return FeatureSet(features=np.array(rows, dtype=np.float32), dropped_count=0)

    image_ids = []
    image_sets = []
    members: dict[int, list[str]] = {c: [] for c in range(n_classes)}
    for cls in range(n_classes):
        for i in range(images_per_class):
            image_id = f"img_c{cls:02d}_{i:02d}"
            image_ids.append(image_id)
            image_sets.append(sample(cls))
            members[cls].append(image_id)

    query_sets = []
    groundtruth = []
    for j in range(n_queries):
        cls = j % n_classes
        query_sets.append(sample(cls))
        groundtruth.append(
            GroundTruth(
                query_id=f"q{j:02d}",
                query_image_id=f"q{j:02d}",
                bbox=None,
                positives=frozenset(members[cls]),
                junk=frozenset(),
            )
        )
    return RetrievalBenchmark(
        image_ids=tuple(image_ids),
        image_sets=tuple(image_sets),
        query_sets=tuple(query_sets),
        groundtruth=tuple(groundtruth),
    )


def make_demo_fixture(seed: int = 42) -> RetrievalBenchmark:
    """The 5-image fixture used by `eval --synthetic demo5`.

    Two well-separated classes (3 + 2 images) with light clutter; a correct
    pipeline ranks every class member first, so the fixture's mAP is 1.
    """
    full = make_retrieval_benchmark(
        seed,
        n_classes=2,
        images_per_class=3,
        n_queries=2,
        dim=32,
        clutter_range=(2, 6),
        noise=0.02,
    )
    dropped = full.image_ids[-1]
    gts = tuple(
        GroundTruth(
            query_id=gt.query_id,
            query_image_id=gt.query_image_id,
            bbox=gt.bbox,
            positives=gt.positives - {dropped},
            junk=gt.junk,
        )
        for gt in full.groundtruth
    )
    return RetrievalBenchmark(
        image_ids=full.image_ids[:5],
        image_sets=full.image_sets[:5],
        query_sets=full.query_sets,
        groundtruth=gts,
    )


def _vector_for(method: str, fs: FeatureSet, cfg: DiffusionConfig, alpha: float):
    if method == "hew":
        return hew_vector(fs, cfg, alpha)
    if method == "suma":
        return suma_vector(fs, alpha)
    raise ValueError(f"unknown aggregation method {method!r}")


def benchmark_map(
    bench: RetrievalBenchmark,
    method: str,
    cfg: DiffusionConfig | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> float:
    """mAP of one aggregation method over a synthetic benchmark."""
    cfg = cfg or DiffusionConfig()
    vectors = np.stack(
        [_vector_for(method, fs, cfg, alpha).values for fs in bench.image_sets]
    )
    idx = build_index(bench.image_ids, vectors)
    aps = []
    for fs, gt in zip(bench.query_sets, bench.groundtruth):
        q = _vector_for(method, fs, cfg, alpha)
        ranked = search(idx, q, query_id=gt.query_id)
        aps.append(average_precision(ranked, gt))
    return sum(aps) / len(aps)
