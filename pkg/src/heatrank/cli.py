"""Command-line front door: aggregate, fit-pca, index, query, eval, bench.

Option values resolve as CLI flag > config file (line-oriented key=value,
via --config) > built-in default. Worker-pool size falls back to the
HEATRANK_THREADS environment variable when --threads is absent.
"""

from __future__ import annotations

import argparse
import os
import re
import statistics
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import synthetic
from .aggregation import DEFAULT_ALPHA, ImageVector, hew_vector, suma_vector
from .diffusion import (
    DiffusionConfig,
    heat_weights,
    similarity_matrix,
    temperatures_fast,
)
from .errors import HeatrankError
from .evaluation import average_precision, load_groundtruth
from .retrieval import (
    DEFAULT_N_QE,
    DEFAULT_TOPK,
    build_index,
    expand_query,
    full_query,
    load_index,
    rerank_heat,
    save_index,
    search,
    shortlist,
)
from .tensor_io import flatten, read_feature_tensor
from .whitening import DEFAULT_EIG_FLOOR, fit_pca, load_pca, save_pca, transform

DEFAULT_DIM = 512
DEFAULT_SEED = 42


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved run parameters shared by the pipeline commands."""

    lam: float = 1.0
    alpha: float = DEFAULT_ALPHA
    k: int = DEFAULT_TOPK
    n_qe: int = DEFAULT_N_QE
    dim: int = DEFAULT_DIM
    ap_variant: str = "trapezoidal"
    clamp_negative: bool = True
    seed: int = DEFAULT_SEED

    def diffusion(self) -> DiffusionConfig:
        return DiffusionConfig(lam=self.lam, clamp_negative=self.clamp_negative)


def _read_config_file(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise HeatrankError(f"config file not found: {p}")
    out = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise HeatrankError(f"{p}:{lineno}: expected key=value, got {line!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


class _Resolver:
    """CLI flag > config file > default, with typed conversion."""

    def __init__(self, args: argparse.Namespace, file_cfg: dict[str, str]):
        self.args = args
        self.file_cfg = file_cfg

    def get(self, key: str, default, cast=None):
        cli = getattr(self.args, key, None)
        if cli is not None:
            return cli
        if key in self.file_cfg:
            raw = self.file_cfg[key]
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw) if cast else raw
        return default

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            lam=self.get("lam", 1.0, float),
            alpha=self.get("alpha", DEFAULT_ALPHA, float),
            k=self.get("k", DEFAULT_TOPK, int),
            n_qe=self.get("n_qe", DEFAULT_N_QE, int),
            dim=self.get("dim", DEFAULT_DIM, int),
            ap_variant=self.get("ap_variant", "trapezoidal"),
            clamp_negative=self.get("clamp_negative", True, bool),
            seed=self.get("seed", DEFAULT_SEED, int),
        )

    def threads(self) -> int:
        cli = getattr(self.args, "threads", None)
        if cli is not None:
            return cli
        env = os.environ.get("HEATRANK_THREADS")
        if env:
            return int(env)
        if "threads" in self.file_cfg:
            return int(self.file_cfg["threads"])
        return os.cpu_count() or 1


def _save_npy_atomic(values: np.ndarray, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            np.save(f, values)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_vector(path: Path) -> ImageVector:
    values = np.load(path)
    stage = "alpha-normalized" if values.min(initial=0.0) >= 0 else "whitened"
    return ImageVector(np.asarray(values, dtype=np.float64), stage=stage)


def _missing(path: Path, what: str, producer: str) -> HeatrankError:
    return HeatrankError(
        f"{what} not found: {path} (produce it with `heatrank {producer}`)"
    )


def cmd_aggregate(res: _Resolver) -> int:
    cfg = res.pipeline()
    tensor_dir = Path(res.get("tensors", None) or "")
    out_dir = Path(res.get("out", None) or "")
    method = res.get("method", "hew")
    if not tensor_dir.is_dir():
        raise HeatrankError(f"tensor directory not found: {tensor_dir}")
    files = sorted(tensor_dir.glob("*.hft1"))
    if not files:
        raise HeatrankError(f"no .hft1 tensor files in {tensor_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    dcfg = cfg.diffusion()

    def one(path: Path) -> tuple[Path, str | None]:
        try:
            fs = flatten(read_feature_tensor(path))
            if method == "hew":
                vec = hew_vector(fs, dcfg, cfg.alpha)
            else:
                vec = suma_vector(fs, cfg.alpha)
            _save_npy_atomic(vec.values, out_dir / f"{path.stem}.npy")
            return path, None
        except HeatrankError as e:
            return path, str(e)

    failures = []
    with ThreadPoolExecutor(max_workers=res.threads()) as pool:
        for path, err in pool.map(one, files):
            if err is None:
                print(f"aggregated {path.stem}")
            else:
                failures.append((path, err))
    for path, err in failures:
        print(f"FAILED {path.name}: {err}", file=sys.stderr)
    print(f"wrote {len(files) - len(failures)}/{len(files)} vectors to {out_dir}")
    return 1 if failures else 0


def _load_vector_dir(vec_dir: Path) -> tuple[list[str], list[ImageVector]]:
    files = sorted(vec_dir.glob("*.npy"))
    if not files:
        raise _missing(vec_dir, "vector directory (no .npy files)", "aggregate")
    return [f.stem for f in files], [_load_vector(f) for f in files]


def cmd_fit_pca(res: _Resolver) -> int:
    vec_dir = Path(res.get("vectors", None) or "")
    out = Path(res.get("out", None) or "")
    if not vec_dir.is_dir():
        raise _missing(vec_dir, "vector directory", "aggregate")
    ids, vectors = _load_vector_dir(vec_dir)
    model = fit_pca(
        vectors,
        eig_floor=res.get("eig_floor", DEFAULT_EIG_FLOOR, float),
        trained_on=res.get("label", vec_dir.name),
    )
    save_pca(model, out)
    print(f"fitted PCA on {len(ids)} vectors (D0={model.source_dim}) -> {out}")
    return 0


def _build_index_from_dir(
    vec_dir: Path, pca_path: str | None, dim: int
) -> "tuple[list[str], np.ndarray]":
    ids, vectors = _load_vector_dir(vec_dir)
    if pca_path:
        model = load_pca(pca_path)
        vectors = [transform(model, v, dim) for v in vectors]
    return ids, np.stack([v.values for v in vectors])


def cmd_index(res: _Resolver) -> int:
    cfg = res.pipeline()
    vec_dir = Path(res.get("vectors", None) or "")
    out = Path(res.get("out", None) or "")
    pca_path = res.get("pca", None)
    if not vec_dir.is_dir():
        raise _missing(vec_dir, "vector directory", "aggregate")
    if pca_path and not Path(pca_path).is_file():
        raise _missing(Path(pca_path), "PCA model", "fit-pca")
    ids, matrix = _build_index_from_dir(vec_dir, pca_path, cfg.dim)
    idx = build_index(ids, matrix)
    save_index(idx, out)
    print(f"indexed {len(idx)} vectors (D={idx.dim}) -> {out}")
    return 0


def _prepare_query(res: _Resolver, cfg: PipelineConfig) -> ImageVector:
    vec_path = res.get("vector", None)
    tensor_path = res.get("tensor", None)
    if vec_path:
        q = _load_vector(Path(vec_path))
    elif tensor_path:
        fs = flatten(read_feature_tensor(tensor_path))
        method = res.get("method", "hew")
        q = (
            hew_vector(fs, cfg.diffusion(), cfg.alpha)
            if method == "hew"
            else suma_vector(fs, cfg.alpha)
        )
    else:
        raise HeatrankError("query needs --vector FILE or --tensor FILE")
    pca_path = res.get("pca", None)
    if pca_path:
        if not Path(pca_path).is_file():
            raise _missing(Path(pca_path), "PCA model", "fit-pca")
        q = transform(load_pca(pca_path), q, cfg.dim)
    return q


def cmd_query(res: _Resolver) -> int:
    cfg = res.pipeline()
    index_path = Path(res.get("index", None) or "")
    if not index_path.is_file():
        raise _missing(index_path, "index file", "index")
    idx = load_index(index_path)
    q = _prepare_query(res, cfg)
    ranked = full_query(
        idx,
        q,
        use_qe=bool(res.get("qe", False, bool)),
        use_her=bool(res.get("her", False, bool)),
        k=cfg.k,
        n_qe=cfg.n_qe,
        cfg=cfg.diffusion(),
    )
    limit = res.get("top", None, int) or len(ranked)
    lines = [
        f"{rank} {image_id} {score:.6f}"
        for rank, (image_id, score) in enumerate(ranked.entries[:limit], start=1)
    ]
    out_path = res.get("out", None)
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text)
        print(f"wrote {len(lines)} results to {out_path}")
    else:
        sys.stdout.write(text)
    return 0


def _parse_sweep(spec: str) -> tuple[str, list[int]]:
    param, sep, rest = spec.partition("=")
    param = param.strip()
    rest = rest.strip()
    if not sep or param not in ("k", "D"):
        raise HeatrankError(f"sweep must be k=... or D=..., got {spec!r}")
    m = re.fullmatch(r"(\d+)\.\.(\d+)\s*(?:step\s+|:)(\d+)", rest)
    if m:
        start, stop, step = (int(g) for g in m.groups())
        if step <= 0:
            raise HeatrankError("sweep step must be positive")
        return param, list(range(start, stop + 1, step))
    try:
        return param, [int(v) for v in rest.split(",") if v.strip()]
    except ValueError as e:
        raise HeatrankError(f"bad sweep values in {spec!r}: {e}") from e


def _eval_once(idx, queries, cfg: PipelineConfig, res: _Resolver, k: int, threads: int):
    dcfg = cfg.diffusion()
    use_qe = bool(res.get("qe", False, bool))
    use_her = bool(res.get("her", False, bool))
    remove_self = bool(res.get("remove_self", False, bool))

    def one(item):
        gt, q = item
        ranked = full_query(
            idx, q, use_qe=use_qe, use_her=use_her, k=k, n_qe=cfg.n_qe,
            cfg=dcfg, query_id=gt.query_id,
        )
        return gt.query_id, average_precision(
            ranked, gt, remove_self=remove_self, variant=cfg.ap_variant
        )

    with ThreadPoolExecutor(max_workers=threads) as pool:
        pairs = list(pool.map(one, queries))
    m = sum(ap for _, ap in pairs) / len(pairs)
    return pairs, m


def cmd_eval(res: _Resolver) -> int:
    cfg = res.pipeline()
    synth = res.get("synthetic", None)
    if synth:
        return _eval_synthetic(res, cfg, synth)

    gt_dir = Path(res.get("gt", None) or "")
    if not gt_dir.is_dir():
        raise HeatrankError(f"ground-truth directory not found: {gt_dir}")
    gts = load_groundtruth(gt_dir)
    if not gts:
        raise HeatrankError(f"no *_query.txt files in {gt_dir}")

    queries_dir = Path(res.get("queries", None) or "")
    if not queries_dir.is_dir():
        raise _missing(queries_dir, "query vector directory", "aggregate")
    pca_path = res.get("pca", None)
    model = None
    if pca_path:
        if not Path(pca_path).is_file():
            raise _missing(Path(pca_path), "PCA model", "fit-pca")
        model = load_pca(pca_path)

    def query_vec(gt, dim: int) -> ImageVector:
        for name in (gt.query_id, gt.query_image_id):
            p = queries_dir / f"{name}.npy"
            if p.is_file():
                v = _load_vector(p)
                return transform(model, v, dim) if model else v
        raise _missing(
            queries_dir / f"{gt.query_id}.npy", "query vector", "aggregate"
        )

    index_path = res.get("index", None)
    vec_dir = res.get("vectors", None)
    sweep_spec = res.get("sweep", None)
    threads = res.threads()
    report_lines: list[str] = []

    def load_idx(dim: int):
        if vec_dir:
            ids, matrix = _build_index_from_dir(Path(vec_dir), pca_path, dim)
            return build_index(ids, matrix)
        if not index_path or not Path(index_path).is_file():
            raise _missing(Path(index_path or "<unset>"), "index file", "index")
        return load_index(index_path)

    if sweep_spec:
        param, values = _parse_sweep(sweep_spec)
        if param == "D" and not (vec_dir and pca_path):
            raise HeatrankError("sweeping D needs --vectors and --pca to rebuild the index")
        report_lines.append(f"{param}\tmAP")
        for value in values:
            if param == "k":
                idx = load_idx(cfg.dim)
                queries = [(gt, query_vec(gt, cfg.dim)) for gt in gts]
                _, m = _eval_once(idx, queries, cfg, res, k=value, threads=threads)
            else:
                idx = load_idx(value)
                queries = [(gt, query_vec(gt, value)) for gt in gts]
                _, m = _eval_once(idx, queries, cfg, res, k=cfg.k, threads=threads)
            report_lines.append(f"{value}\t{m:.4f}")
            print(report_lines[-1])
    else:
        idx = load_idx(cfg.dim)
        queries = [(gt, query_vec(gt, cfg.dim)) for gt in gts]
        pairs, m = _eval_once(idx, queries, cfg, res, k=cfg.k, threads=threads)
        for query_id, ap in pairs:
            report_lines.append(f"query {query_id} ap={ap:.4f}")
        report_lines.append(f"queries={len(pairs)}")
        report_lines.append(f"mAP={m:.4f}")
        print(f"mAP={m:.4f}")

    report_path = res.get("report", None)
    if report_path:
        Path(report_path).write_text("\n".join(report_lines) + "\n")
        print(f"report written to {report_path}")
    return 0


def _eval_synthetic(res: _Resolver, cfg: PipelineConfig, kind: str) -> int:
    if kind == "demo5":
        bench = synthetic.make_demo_fixture(cfg.seed)
        for method in ("hew", "suma"):
            m = synthetic.benchmark_map(bench, method, cfg.diffusion(), cfg.alpha)
            print(f"method={method} mAP={m:.4f}")
        return 0
    if kind == "bench":
        seeds = res.get("seeds", 20, int)
        rows = []
        for seed in range(cfg.seed, cfg.seed + seeds):
            bench = synthetic.make_retrieval_benchmark(seed)
            hew = synthetic.benchmark_map(bench, "hew", cfg.diffusion(), cfg.alpha)
            suma = synthetic.benchmark_map(bench, "suma", cfg.diffusion(), cfg.alpha)
            rows.append((seed, hew, suma))
            print(f"seed={seed} mAP_hew={hew:.4f} mAP_suma={suma:.4f}")
        med_h = statistics.median(r[1] for r in rows)
        med_s = statistics.median(r[2] for r in rows)
        print(f"median mAP_hew={med_h:.4f} mAP_suma={med_s:.4f}")
        return 0 if med_h >= med_s else 1
    raise HeatrankError(f"unknown synthetic fixture {kind!r} (demo5 or bench)")


def cmd_bench(res: _Resolver) -> int:
    cfg = res.pipeline()
    n = res.get("n", 3072, int)
    channels = res.get("channels", 512, int)
    db_size = res.get("db_size", 10000, int)
    rng = np.random.default_rng(cfg.seed)

    fs = synthetic.random_feature_set(rng, n, channels)
    print(f"representation: |V|={n}, K={channels}")
    t0 = time.perf_counter()
    suma_vector(fs, cfg.alpha)
    t_suma = time.perf_counter() - t0

    t0 = time.perf_counter()
    p = similarity_matrix(fs)
    t_sim = time.perf_counter() - t0
    t0 = time.perf_counter()
    psi = temperatures_fast(p, cfg.diffusion())
    t_temp = time.perf_counter() - t0
    t0 = time.perf_counter()
    from .aggregation import aggregate

    aggregate(fs, heat_weights(psi), cfg.alpha)
    t_agg = time.perf_counter() - t0
    print(f"  suma: {t_suma * 1000:.1f} ms")
    print(
        f"  hew:  {(t_sim + t_temp + t_agg) * 1000:.1f} ms "
        f"(similarity {t_sim * 1000:.1f}, temperatures {t_temp * 1000:.1f}, "
        f"aggregate {t_agg * 1000:.1f})"
    )

    lambdas = [float(x) for x in str(res.get("lambdas", "0.25,0.5,1,2,4")).split(",")]
    print("lambda sensitivity (same feature set):")
    print("  lambda\ttemps_ms\tpsi_max\tw_min\tw_mean")
    for lam in lambdas:
        dcfg = DiffusionConfig(lam=lam, clamp_negative=cfg.clamp_negative)
        t0 = time.perf_counter()
        psi_l = temperatures_fast(p, dcfg)
        dt = (time.perf_counter() - t0) * 1000
        w = heat_weights(psi_l)
        print(f"  {lam:g}\t{dt:.1f}\t{psi_l.max():.3f}\t{w.min():.4f}\t{w.mean():.4f}")

    print(f"query: db={db_size}, D={cfg.dim}, k={cfg.k}, n_qe={cfg.n_qe}")
    db = rng.standard_normal((db_size, cfg.dim))
    db /= np.linalg.norm(db, axis=1, keepdims=True)
    idx = build_index([f"img{i:06d}" for i in range(db_size)], db)
    qv = rng.standard_normal(cfg.dim)
    q = ImageVector(qv / np.linalg.norm(qv), stage="whitened")

    t0 = time.perf_counter()
    ranked = search(idx, q)
    t_search = time.perf_counter() - t0
    t0 = time.perf_counter()
    expanded = expand_query(q, ranked, idx, cfg.n_qe)
    ranked_qe = search(idx, expanded)
    t_qe = time.perf_counter() - t0
    keff = min(cfg.k, len(ranked_qe))
    top = shortlist(idx, ranked_qe, keff)
    t0 = time.perf_counter()
    rerank_heat(expanded, top, cfg.diffusion())
    t_her = time.perf_counter() - t0
    print(f"  search: {t_search * 1000:.1f} ms")
    print(f"  qe+research: {t_qe * 1000:.1f} ms")
    print(f"  her (k={keff}): {t_her * 1000:.1f} ms")
    print(f"  total qe+her query: {(t_search + t_qe + t_her) * 1000:.1f} ms")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--lambda", dest="lam", type=float, help="dissipation (default 1.0)")
    p.add_argument("--alpha", type=float, help="power-normalization exponent (default 0.5)")
    p.add_argument("--seed", type=int, help="RNG seed for synthetic data (default 42)")
    p.add_argument("--threads", type=int, help="worker pool size (env HEATRANK_THREADS)")
    p.add_argument(
        "--no-clamp", dest="clamp_negative", action="store_const", const=False,
        help="keep negative centered similarities",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="heatrank",
        description="Heat-diffusion feature weighting and re-ranked cosine retrieval.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", help="turn HFT1 tensors into image vectors")
    p.add_argument("--tensors", required=True, help="directory of .hft1 files")
    p.add_argument("--out", required=True, help="output directory for .npy vectors")
    p.add_argument("--method", choices=("hew", "suma"), default=None,
                   help="aggregation method (default hew)")
    _add_common(p)
    p.set_defaults(fn=cmd_aggregate)

    p = sub.add_parser("fit-pca", help="learn whitening on a vector directory")
    p.add_argument("--vectors", required=True)
    p.add_argument("--out", required=True, help="output .hpca model file")
    p.add_argument("--eig-floor", dest="eig_floor", type=float)
    p.add_argument("--label", help="dataset label stored on the model")
    _add_common(p)
    p.set_defaults(fn=cmd_fit_pca)

    p = sub.add_parser("index", help="build and persist a search index")
    p.add_argument("--vectors", required=True)
    p.add_argument("--out", required=True, help="output .hidx file")
    p.add_argument("--pca", help="apply this whitening model")
    p.add_argument("-D", "--dim", type=int, help="retained components (default 512)")
    _add_common(p)
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("query", help="rank the index against one query")
    p.add_argument("--index", required=True)
    p.add_argument("--vector", help="query vector .npy")
    p.add_argument("--tensor", help="query tensor .hft1 (aggregated on the fly)")
    p.add_argument("--method", choices=("hew", "suma"), default=None)
    p.add_argument("--pca")
    p.add_argument("-D", "--dim", type=int)
    p.add_argument("--qe", action="store_const", const=True, help="query expansion")
    p.add_argument("--her", action="store_const", const=True, help="heat re-ranking")
    p.add_argument("-k", type=int, help="re-ranked shortlist size (default 800)")
    p.add_argument("--n-qe", dest="n_qe", type=int, help="vectors averaged by QE")
    p.add_argument("--top", type=int, help="print only the first N results")
    p.add_argument("--out", help="write results to a file instead of stdout")
    _add_common(p)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("eval", help="mAP over a ground-truth query set")
    p.add_argument("--index")
    p.add_argument("--vectors", help="raw vector dir (rebuild index, needed for D sweeps)")
    p.add_argument("--queries", help="directory of query vector .npy files")
    p.add_argument("--gt", help="ground-truth directory")
    p.add_argument("--pca")
    p.add_argument("-D", "--dim", type=int)
    p.add_argument("--qe", action="store_const", const=True)
    p.add_argument("--her", action="store_const", const=True)
    p.add_argument("-k", type=int)
    p.add_argument("--n-qe", dest="n_qe", type=int)
    p.add_argument("--remove-self", dest="remove_self", action="store_const", const=True)
    p.add_argument("--ap-variant", dest="ap_variant",
                   choices=("trapezoidal", "precision-at-hit"))
    p.add_argument("--sweep", help='e.g. "k=0..800 step 100" or "D=32,64,128,256,512"')
    p.add_argument("--report", help="write the line report to this file")
    p.add_argument("--synthetic", choices=("demo5", "bench"),
                   help="evaluate a built-in synthetic fixture instead")
    p.add_argument("--seeds", type=int, help="seed count for --synthetic bench")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="timing report for representation and querying")
    p.add_argument("--n", type=int, help="features per image (default 3072)")
    p.add_argument("--channels", type=int, help="feature dimensionality (default 512)")
    p.add_argument("--db-size", dest="db_size", type=int, help="synthetic index size")
    p.add_argument("-D", "--dim", type=int)
    p.add_argument("-k", type=int)
    p.add_argument("--n-qe", dest="n_qe", type=int)
    p.add_argument("--lambdas", help="comma list for the sensitivity table")
    _add_common(p)
    p.set_defaults(fn=cmd_bench)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        res = _Resolver(args, _read_config_file(getattr(args, "config", None)))
        return args.fn(res)
    except HeatrankError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
