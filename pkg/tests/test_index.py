import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from healthtriage.errors import BadPolicy, DimMismatch, EmptyCorpus, EmptyQuery, VersionMismatch
from healthtriage.index import (
    ChunkPolicy,
    build_index,
    chunk_document,
    cosine,
    load_index,
    retrieve,
    save_index,
)


class TestChunking:
    def test_single_window(self):
        chunks = chunk_document("d", "0123456789", ChunkPolicy(10, 0))
        assert [c.text for c in chunks] == ["0123456789"]

    def test_overlap_trace(self):
        chunks = chunk_document("d", "abcdefghij", ChunkPolicy(4, 1))
        assert [c.text for c in chunks] == ["abcd", "defg", "ghij", "j"]

    def test_bad_policy(self):
        with pytest.raises(BadPolicy):
            ChunkPolicy(4, 4)
        with pytest.raises(BadPolicy):
            ChunkPolicy(0, 0)

    def test_window_arithmetic_three_docs(self, provider):
        corpus = [(f"doc{i}", "x" * 1200) for i in range(3)]
        index = build_index(corpus, ChunkPolicy(512, 64), provider)
        assert len(index.chunks) == 9
        per_doc = [sum(1 for c in index.chunks if c.doc_id == d) for d, _ in corpus]
        assert per_doc == [3, 3, 3]

    @given(
        st.text(min_size=1, max_size=200),
        st.integers(min_value=1, max_value=30),
        st.integers(min_value=0, max_value=29),
    )
    @settings(max_examples=120, deadline=None)
    def test_reconstruction_property(self, text, size, overlap):
        if overlap >= size:
            overlap = size - 1
        policy = ChunkPolicy(size, overlap)
        chunks = chunk_document("d", text, policy)
        rebuilt = chunks[0].text if chunks else ""
        for c in chunks[1:]:
            rebuilt += c.text[overlap:]
        assert rebuilt == text
        for c in chunks:
            assert 1 <= len(c.text) <= size


class TestBuildIndex:
    def test_small_doc(self, provider):
        index = build_index([("d", "a short paragraph")], ChunkPolicy(), provider)
        assert len(index.chunks) >= 1
        assert index.embed_dim == 256

    def test_dense_chunk_ids(self, provider):
        corpus = [("a", "x" * 900), ("b", "y" * 900)]
        index = build_index(corpus, ChunkPolicy(512, 64), provider)
        assert [c.chunk_id for c in index.chunks] == list(range(len(index.chunks)))

    def test_rebuild_same_digest(self, provider):
        corpus = [("a", "hello world"), ("b", "more text")]
        i1 = build_index(corpus, ChunkPolicy(), provider)
        i2 = build_index(corpus, ChunkPolicy(), provider)
        assert i1.build_digest == i2.build_digest

    def test_empty_corpus(self, provider):
        with pytest.raises(EmptyCorpus):
            build_index([], ChunkPolicy(), provider)


class TestCosine:
    def test_self_similarity(self, provider):
        v = provider.embed("some text here")
        assert abs(cosine(v, v) - 1.0) <= 1e-9

    def test_orthogonal_basis(self):
        e0 = np.zeros(4)
        e0[0] = 1.0
        e1 = np.zeros(4)
        e1[1] = 1.0
        assert cosine(e0, e1) == 0.0

    def test_hand_dot_product(self):
        a = np.array([1.0, 2.0, 2.0]) / 3.0
        b = np.array([2.0, 1.0, 2.0]) / 3.0
        assert abs(cosine(a, b) - 8.0 / 9.0) <= 1e-12

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            cosine(np.zeros(3), np.zeros(4))


class TestRetrieve:
    def test_single_chunk(self, provider):
        index = build_index([("d", "only block")], ChunkPolicy(), provider)
        results = retrieve(index, "anything", 3, provider)
        assert len(results) == 1
        assert results[0].chunk.text == "only block"

    def test_matches_brute_force(self, provider):
        rng = np.random.default_rng(3)
        corpus = [
            (f"d{i}", " ".join(f"w{rng.integers(0, 400)}" for _ in range(12)))
            for i in range(300)
        ]
        index = build_index(corpus, ChunkPolicy(256, 0), provider)
        for qi in range(10):
            query = " ".join(f"w{rng.integers(0, 400)}" for _ in range(6))
            got = [(s.chunk.chunk_id, s.score) for s in retrieve(index, query, 3, provider)]
            qvec = provider.embed(query)
            scored = [(float(np.dot(c.embedding, qvec)), c.chunk_id) for c in index.chunks]
            expect = [(cid, score) for score, cid in sorted(scored, key=lambda t: (-t[0], t[1]))[:3]]
            assert got == expect

    def test_tie_breaks_by_chunk_id(self, provider):
        corpus = [("a", "identical text"), ("b", "identical text"), ("c", "unrelated thing")]
        index = build_index(corpus, ChunkPolicy(), provider)
        results = retrieve(index, "identical text", 2, provider)
        assert [r.chunk.chunk_id for r in results] == [0, 1]
        assert results[0].score == results[1].score

    def test_scores_non_increasing(self, provider):
        corpus = [(f"d{i}", f"topic {i} words here") for i in range(20)]
        index = build_index(corpus, ChunkPolicy(), provider)
        results = retrieve(index, "topic words", 10, provider)
        scores = [r.score for r in results]
        assert scores == sorted(scores, reverse=True)

    def test_empty_query(self, provider):
        index = build_index([("d", "text")], ChunkPolicy(), provider)
        with pytest.raises(EmptyQuery):
            retrieve(index, "  ", 3, provider)

    def test_k_zero_returns_nothing(self, provider):
        index = build_index([("d", "text")], ChunkPolicy(), provider)
        assert retrieve(index, "text", 0, provider) == []


class TestPersistence:
    def test_round_trip(self, provider, tmp_path):
        index = build_index([("a", "first doc"), ("b", "second doc")], ChunkPolicy(), provider)
        path = tmp_path / "index.json"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.build_digest == index.build_digest
        assert loaded.embed_dim == index.embed_dim
        assert [c.text for c in loaded.chunks] == [c.text for c in index.chunks]
        got = retrieve(loaded, "first doc", 1, provider)
        assert got[0].chunk.doc_id == "a"

    def test_version_check(self, provider, tmp_path):
        import json

        index = build_index([("a", "doc")], ChunkPolicy(), provider)
        path = tmp_path / "index.json"
        save_index(index, path)
        payload = json.loads(path.read_text())
        payload["schema_version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(VersionMismatch):
            load_index(path)


class TestLoadCorpus:
    def test_directory_form(self, tmp_path):
        from healthtriage.index import load_corpus

        (tmp_path / "sub").mkdir()
        (tmp_path / "a.txt").write_text("first doc")
        (tmp_path / "sub" / "b.txt").write_text("second doc")
        docs = load_corpus(tmp_path)
        assert docs == [("a.txt", "first doc"), ("sub/b.txt", "second doc")]

    def test_jsonl_form(self, tmp_path):
        import json

        from healthtriage.index import load_corpus

        path = tmp_path / "corpus.jsonl"
        path.write_text(json.dumps({"doc_id": "x", "text": "doc body"}) + "\n")
        assert load_corpus(path) == [("x", "doc body")]

    def test_empty_directory(self, tmp_path):
        from healthtriage.index import load_corpus

        with pytest.raises(EmptyCorpus):
            load_corpus(tmp_path)
