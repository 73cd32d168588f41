import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatrank.aggregation import ImageVector
from heatrank.diffusion import DiffusionConfig
from heatrank.errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    EmptyRanking,
    NormViolation,
    TruncatedFile,
)
from heatrank.retrieval import (
    DEFAULT_N_QE,
    DEFAULT_TOPK,
    RankedResult,
    build_index,
    expand_query,
    full_query,
    load_index,
    rerank_heat,
    save_index,
    search,
    shortlist,
    temperature_gains,
)

CFG = DiffusionConfig(lam=1.0)


def unit(values):
    v = np.asarray(values, dtype=np.float64)
    return ImageVector(v / np.linalg.norm(v), stage="whitened")


def basis_index():
    e1, e2 = np.eye(2)
    mixed = (e1 + e2) / np.sqrt(2)
    return build_index(["a_e1", "b_e2", "c_mix"], np.stack([e1, e2, mixed]))


def random_index(rng, n, dim):
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return build_index([f"img{i:04d}" for i in range(n)], v)


class TestBuildIndex:
    def test_three_rows(self):
        idx = basis_index()
        assert len(idx) == 3 and idx.dim == 2

    def test_duplicate_id(self):
        with pytest.raises(DuplicateId):
            build_index(["x", "x"], np.eye(2))

    def test_norm_violation(self):
        with pytest.raises(NormViolation):
            build_index(["x", "y"], np.array([[1.0, 0.0], [1.0, 1.0]]))

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            build_index(["x", "y", "z"], np.eye(2))

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        idx = random_index(rng, 17, 5)
        p = tmp_path / "db.hidx"
        save_index(idx, p)
        back = load_index(p)
        assert back.ids == idx.ids
        assert np.array_equal(
            back.vectors.view(np.uint32), idx.vectors.view(np.uint32)
        )

    def test_load_errors(self, tmp_path):
        p = tmp_path / "db.hidx"
        p.write_bytes(b"XIDX" + bytes(12))
        with pytest.raises(BadMagic):
            load_index(p)
        rng = np.random.default_rng(0)
        save_index(random_index(rng, 3, 4), p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(TruncatedFile):
            load_index(p)


class TestSearch:
    def test_exact_match_ranks_first(self):
        idx = basis_index()
        r = search(idx, unit([1.0, 0.0]))
        assert r.entries[0][0] == "a_e1"
        assert r.entries[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_hand_order_and_scores(self):
        r = search(basis_index(), unit([1.0, 0.0]))
        assert r.ids() == ["a_e1", "c_mix", "b_e2"]
        scores = [s for _, s in r.entries]
        assert scores == pytest.approx([1.0, 1 / np.sqrt(2), 0.0], abs=1e-7)

    def test_tie_broken_by_ascending_id(self):
        v = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        idx = build_index(["zeta", "alpha", "mid"], v)
        r = search(idx, unit([1.0, 0.0]))
        assert r.ids()[:2] == ["alpha", "zeta"]

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        idx = random_index(rng, 40, 8)
        q = unit(rng.standard_normal(8))
        assert search(idx, q).entries == search(idx, q).entries

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            search(basis_index(), unit([1.0, 0.0, 0.0]))

    def test_non_unit_query_rejected(self):
        with pytest.raises(NormViolation):
            search(basis_index(), ImageVector(np.array([2.0, 0.0]), stage="raw-aggregate"))


class TestExpandQuery:
    def test_consensus_idempotent(self):
        q = unit([1.0, 0.0])
        idx = build_index(["a", "b"], np.array([[1.0, 0.0], [1.0, 0.0]]))
        r = search(idx, q)
        out = expand_query(q, r, idx, n_qe=2)
        np.testing.assert_allclose(out.values, q.values, atol=1e-12)

    def test_two_vector_average(self):
        idx = build_index(["b_e2"], np.array([[0.0, 1.0]]))
        q = unit([1.0, 0.0])
        out = expand_query(q, search(idx, q), idx, n_qe=1)
        np.testing.assert_allclose(out.values, [1 / np.sqrt(2)] * 2, atol=1e-12)

    def test_default_n_qe_is_ten(self):
        assert DEFAULT_N_QE == 10

    def test_empty_ranking(self):
        q = unit([1.0, 0.0])
        idx = basis_index()
        with pytest.raises(EmptyRanking):
            expand_query(q, RankedResult(entries=()), idx)

    def test_bad_n_qe(self):
        q = unit([1.0, 0.0])
        idx = basis_index()
        with pytest.raises(ValueError):
            expand_query(q, search(idx, q), idx, n_qe=0)


class TestTemperatureGains:
    def test_diagonal_system(self):
        mu = temperature_gains(np.array([0.6, 0.5]), np.zeros((2, 2)), CFG)
        assert mu == pytest.approx([0.375, 1 / 3], abs=1e-12)

    def test_symmetric_tie(self):
        mu = temperature_gains(
            np.array([0.5, 0.5]), np.array([[0.0, 0.9], [0.9, 0.0]]), CFG
        )
        assert mu == pytest.approx([1 / 3, 1 / 3], abs=1e-12)

    def test_empty(self):
        assert temperature_gains(np.zeros(0), np.zeros((0, 0)), CFG).size == 0

    def test_clamps_negative_similarities(self):
        mu_neg = temperature_gains(np.array([-0.2, 0.5]), np.zeros((2, 2)), CFG)
        mu_zero = temperature_gains(np.array([0.0, 0.5]), np.zeros((2, 2)), CFG)
        np.testing.assert_allclose(mu_neg, mu_zero, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 30))
    def test_gains_in_unit_interval(self, seed, k):
        rng = np.random.default_rng(seed)
        q1 = rng.uniform(-1, 1, k)
        q2 = rng.uniform(-1, 1, (k, k))
        q2 = (q2 + q2.T) / 2
        np.fill_diagonal(q2, 0.0)
        mu = temperature_gains(q1, q2, CFG)
        assert np.all(mu >= 0.0) and np.all(mu <= 1.0)

    def test_q2_zero_order_follows_q1(self):
        rng = np.random.default_rng(77)
        q1 = rng.uniform(0, 1, 12)
        mu = temperature_gains(q1, np.zeros((12, 12)), CFG)
        np.testing.assert_array_equal(np.argsort(-mu), np.argsort(-q1))


class TestRerankHeat:
    def test_k0_and_k1_identity(self):
        q = unit([1.0, 0.0])
        assert rerank_heat(q, [], CFG).entries == ()
        single = [("only", unit([0.0, 1.0]))]
        assert rerank_heat(q, single, CFG).ids() == ["only"]

    def test_output_is_permutation(self):
        rng = np.random.default_rng(3)
        q = unit(rng.standard_normal(6))
        topk = [
            (f"v{i}", unit(rng.standard_normal(6)))
            for i in range(15)
        ]
        out = rerank_heat(q, topk, CFG)
        assert sorted(out.ids()) == sorted(i for i, _ in topk)

    def test_scores_non_increasing(self):
        rng = np.random.default_rng(13)
        q = unit(rng.standard_normal(4))
        topk = [(f"v{i}", unit(rng.standard_normal(4))) for i in range(9)]
        out = rerank_heat(q, topk, CFG)
        scores = [s for _, s in out.entries]
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_identical_vectors_tie_orders_by_id(self):
        # all centered vectors vanish: gains all zero, pure id order
        v = unit([1.0, 0.0])
        out = rerank_heat(v, [("z", v), ("a", v), ("m", v)], CFG)
        assert out.ids() == ["a", "m", "z"]


class TestFullQuery:
    def test_plain_equals_search(self):
        rng = np.random.default_rng(21)
        idx = random_index(rng, 30, 5)
        q = unit(rng.standard_normal(5))
        assert (
            full_query(idx, q, use_qe=False, use_her=False).entries
            == search(idx, q).entries
        )

    def test_default_k(self):
        assert DEFAULT_TOPK == 800

    def test_k_truncated_to_database(self):
        rng = np.random.default_rng(2)
        idx = random_index(rng, 12, 4)
        q = unit(rng.standard_normal(4))
        out = full_query(idx, q, use_her=True, k=1000)
        assert len(out) == 12

    def test_k0_means_no_rerank(self):
        rng = np.random.default_rng(4)
        idx = random_index(rng, 25, 4)
        q = unit(rng.standard_normal(4))
        no_her = full_query(idx, q, use_qe=True, use_her=False, k=800)
        k0 = full_query(idx, q, use_qe=True, use_her=True, k=0)
        assert no_her.entries == k0.entries

    def test_tail_keeps_order_after_rerank(self):
        rng = np.random.default_rng(6)
        idx = random_index(rng, 40, 6)
        q = unit(rng.standard_normal(6))
        base = full_query(idx, q, use_qe=True, use_her=False)
        out = full_query(idx, q, use_qe=True, use_her=True, k=10)
        assert out.ids()[10:] == base.ids()[10:]
        assert sorted(out.ids()[:10]) == sorted(base.ids()[:10])
        scores = [s for _, s in out.entries]
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_negative_k_rejected(self):
        rng = np.random.default_rng(1)
        idx = random_index(rng, 5, 3)
        with pytest.raises(ValueError):
            full_query(idx, unit(rng.standard_normal(3)), k=-1)

    def test_shortlist_vectors_unit_norm(self):
        rng = np.random.default_rng(30)
        idx = random_index(rng, 10, 5)
        r = search(idx, unit(rng.standard_normal(5)))
        for _, v in shortlist(idx, r, 6):
            assert np.linalg.norm(v.values) == pytest.approx(1.0, abs=1e-12)

    def test_k_sweep_valid_for_every_k(self):
        # k sweep over {0, 100, ..., 800} on a db smaller than max k:
        # every run must return a valid full-length permutation
        rng = np.random.default_rng(60)
        idx = random_index(rng, 200, 8)
        q = unit(rng.standard_normal(8))
        all_ids = sorted(idx.ids)
        for k in range(0, 801, 100):
            out = full_query(idx, q, use_qe=True, use_her=True, k=k)
            assert sorted(out.ids()) == all_ids
            scores = [s for _, s in out.entries]
            assert all(a >= b for a, b in zip(scores, scores[1:]))


class TestRankedResult:
    def test_rejects_increasing_scores(self):
        with pytest.raises(ValueError):
            RankedResult(entries=(("a", 0.1), ("b", 0.5)))

    def test_rejects_duplicate_ids(self):
        with pytest.raises(ValueError):
            RankedResult(entries=(("a", 0.5), ("a", 0.1)))
