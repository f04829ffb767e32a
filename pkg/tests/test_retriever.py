import logging
import random

import numpy as np
import pytest

from genki.corpus import Passage
from genki.retriever import (
    DenseIndex,
    HashEmbedder,
    IndexFormatError,
    load_index,
    save_index,
    similarity,
    top_k,
)


def index_from_rows(rows, ids):
    return DenseIndex(np.asarray(rows, dtype=np.float32), list(ids))


class TestSimilarity:
    def test_orthogonal(self):
        assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_arithmetic(self):
        assert similarity(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = rng.normal(size=64)
            b = rng.normal(size=64)
            oracle = 0.0
            for x, y in zip(a, b):
                oracle += float(x) * float(y)
            got = similarity(a, b)
            assert abs(got - oracle) <= 1e-6 * max(1.0, abs(oracle))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            similarity(np.array([1.0]), np.array([1.0, 2.0]))


class TestTopK:
    def test_hand_scores(self):
        index = index_from_rows([[0.9], [0.1], [0.5]], ["p0", "p1", "p2"])
        results = top_k(index, np.array([1.0]), 2)
        assert [r.passage_id for r in results] == ["p0", "p2"]
        assert [r.rank for r in results] == [1, 2]

    def test_k_beyond_count_returns_all(self):
        index = index_from_rows([[0.2], [0.8]], ["a", "b"])
        results = top_k(index, np.array([1.0]), 10)
        assert [r.passage_id for r in results] == ["b", "a"]

    def test_tie_broken_by_id(self):
        index = index_from_rows([[1.0], [1.0]], ["z", "a"])
        results = top_k(index, np.array([1.0]), 2)
        assert [r.passage_id for r in results] == ["a", "z"]

    def test_k_zero_rejected(self):
        index = index_from_rows([[1.0]], ["a"])
        with pytest.raises(ValueError):
            top_k(index, np.array([1.0]), 0)

    def test_dim_mismatch_rejected(self):
        index = index_from_rows([[1.0, 0.0]], ["a"])
        with pytest.raises(ValueError):
            top_k(index, np.array([1.0]), 1)

    def test_matches_full_scan_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            count = int(rng.integers(1, 40))
            dim = int(rng.integers(1, 16))
            matrix = rng.normal(size=(count, dim)).astype(np.float32)
            if count >= 4:
                matrix[1] = matrix[0]  # force at least one exact tie
            ids = [f"p{i:03d}" for i in range(count)]
            index = DenseIndex(matrix, ids)
            query = rng.normal(size=dim)
            k = int(rng.integers(1, count + 3))
            scores = [float(np.dot(matrix[i].astype(np.float64), query)) for i in range(count)]
            oracle = sorted(zip(scores, ids), key=lambda t: (-t[0], t[1]))[: min(k, count)]
            got = top_k(index, query, k)
            assert [r.passage_id for r in got] == [pid for _, pid in oracle]
            # scores agree to rounding; bit-equality is not promised across kernels
            for result, (score, _) in zip(got, oracle):
                assert result.score == pytest.approx(score, rel=1e-9, abs=1e-12)

    def test_insertion_order_invariance(self):
        rng = np.random.default_rng(5)
        matrix = rng.normal(size=(12, 4)).astype(np.float32)
        matrix[3] = matrix[7]
        ids = [f"p{i}" for i in range(12)]
        query = rng.normal(size=4)
        base = [(r.passage_id, r.score) for r in top_k(DenseIndex(matrix, ids), query, 12)]
        order = list(range(12))
        random.Random(9).shuffle(order)
        shuffled = DenseIndex(matrix[order], [ids[i] for i in order])
        redo = [(r.passage_id, r.score) for r in top_k(shuffled, query, 12)]
        assert redo == base


class TestDenseIndexValidation:
    def test_row_id_mismatch(self):
        with pytest.raises(ValueError):
            DenseIndex(np.zeros((2, 3), dtype=np.float32), ["only"])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            DenseIndex(np.zeros((0, 3), dtype=np.float32), [])

    def test_nonfinite_rejected(self):
        matrix = np.array([[np.inf, 0.0]], dtype=np.float32)
        with pytest.raises(ValueError):
            DenseIndex(matrix, ["a"])

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            DenseIndex(np.zeros((2, 2), dtype=np.float32), ["a", "a"])

    def test_build_from_passages(self):
        embedder = HashEmbedder(dim=32, seed=0)
        passages = [Passage("p1", "alpha beta."), Passage("p2", "gamma delta.")]
        index = DenseIndex.build(passages, embedder)
        assert index.count == 2
        assert index.dim == 32


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        matrix = rng.normal(size=(3, 4)).astype(np.float32)
        index = DenseIndex(matrix, ["a", "b", "c"])
        path = tmp_path / "x.idx"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.ids == index.ids
        assert loaded.matrix.tobytes() == index.matrix.tobytes()

    def test_save_load_save_identical_bytes(self, tmp_path):
        rng = np.random.default_rng(8)
        index = DenseIndex(rng.normal(size=(5, 3)).astype(np.float32), list("abcde"))
        p1, p2 = tmp_path / "a.idx", tmp_path / "b.idx"
        save_index(index, p1)
        save_index(load_index(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_magic(self, tmp_path):
        index = DenseIndex(np.ones((1, 2), dtype=np.float32), ["a"])
        path = tmp_path / "x.idx"
        save_index(index, path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(IndexFormatError):
            load_index(path)

    def test_truncated_file(self, tmp_path):
        index = DenseIndex(np.ones((2, 2), dtype=np.float32), ["a", "b"])
        path = tmp_path / "x.idx"
        save_index(index, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 3])
        with pytest.raises(IndexFormatError):
            load_index(path)

    def test_trailing_bytes(self, tmp_path):
        index = DenseIndex(np.ones((1, 2), dtype=np.float32), ["a"])
        path = tmp_path / "x.idx"
        save_index(index, path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(IndexFormatError):
            load_index(path)

    def test_unicode_ids(self, tmp_path):
        index = DenseIndex(np.ones((1, 2), dtype=np.float32), ["文档一"])
        path = tmp_path / "x.idx"
        save_index(index, path)
        assert load_index(path).ids == ["文档一"]


class TestHashEmbedder:
    def test_deterministic(self):
        embedder = HashEmbedder(dim=64, seed=1)
        a = embedder.embed_passage("abc def")
        b = embedder.embed_passage("abc def")
        assert np.array_equal(a, b)

    def test_question_passage_agree_on_same_text(self):
        embedder = HashEmbedder(dim=64, seed=1)
        assert np.array_equal(embedder.embed_question("x y"), embedder.embed_passage("x y"))

    def test_unit_norm(self):
        embedder = HashEmbedder(dim=128, seed=0)
        vec = embedder.embed_passage("some words to hash")
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-6)

    def test_empty_text_zero_vector_flagged(self, caplog):
        embedder = HashEmbedder(dim=16, seed=0)
        with caplog.at_level(logging.WARNING, logger="genki.retriever"):
            vec = embedder.embed_question("")
        assert not vec.any()
        assert embedder.empty_count == 1

    def test_shared_tokens_score_higher(self):
        embedder = HashEmbedder(dim=512, seed=0)
        query = embedder.embed_question("solar panel efficiency")
        close = embedder.embed_passage("solar panel output")
        far = embedder.embed_passage("medieval castle moat")
        assert similarity(query, close) > similarity(query, far)

    def test_seed_changes_embedding(self):
        a = HashEmbedder(dim=64, seed=0).embed_passage("word")
        b = HashEmbedder(dim=64, seed=1).embed_passage("word")
        assert not np.array_equal(a, b)
