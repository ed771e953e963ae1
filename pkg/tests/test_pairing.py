import numpy as np
import pytest

from papercode.code_ingest import FunctionUnit
from papercode.embedding import EmbeddingVector, cosine
from papercode.ioutil import ValidationError
from papercode.pairing import (
    FunctionIndex,
    generate_annotation_tasks,
    retrieve_top_k,
    task_id_for,
)


def _unit_vec(values, unit_id):
    arr = np.asarray(values, dtype=np.float64)
    return EmbeddingVector(unit_id=unit_id, values=arr / np.linalg.norm(arr))


def _random_pool(rng, n, dim=12, prefix="f"):
    return [_unit_vec(rng.normal(size=dim), f"{prefix}{i:04d}") for i in range(n)]


def brute_force_rank(query, pool, k):
    """Independent oracle: per-pair cosine plus a full Python sort."""
    scored = [(v.unit_id, cosine(query, v)) for v in pool]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def test_pool_of_one():
    pool = [_unit_vec([1, 0, 0], "only")]
    got = retrieve_top_k(_unit_vec([1, 1, 0], "s"), FunctionIndex(pool), k=10)
    assert len(got.ranked) == 1
    assert got.ranked[0][0] == "only"


def test_planted_duplicate_scores_one():
    rng = np.random.default_rng(0)
    query = _unit_vec(rng.normal(size=8), "s")
    pool = _random_pool(rng, 20, dim=8)
    pool.append(EmbeddingVector(unit_id="twin", values=query.values.copy()))
    got = retrieve_top_k(query, FunctionIndex(pool), k=5)
    assert got.ranked[0][0] == "twin"
    assert got.ranked[0][1] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("n,k", [(10, 3), (100, 10), (500, 10), (1000, 10)])
def test_matches_brute_force_on_random_pools(n, k):
    rng = np.random.default_rng(n * 7 + k)
    query = _unit_vec(rng.normal(size=16), "s")
    pool = _random_pool(rng, n, dim=16)
    got = retrieve_top_k(query, FunctionIndex(pool), k=k)
    expected = brute_force_rank(query, pool, k)
    assert [fid for fid, _ in got.ranked] == [fid for fid, _ in expected]
    for (_, a), (_, b) in zip(got.ranked, expected):
        assert a == pytest.approx(b, abs=1e-9)


def test_tie_cases_break_by_ascending_id():
    base = np.asarray([3.0, 4.0, 0.0])
    # four exact duplicates under different ids, plus one weaker candidate
    pool = [
        EmbeddingVector("dup-c", base / 5.0),
        EmbeddingVector("dup-a", base / 5.0),
        EmbeddingVector("dup-d", base / 5.0),
        EmbeddingVector("dup-b", base / 5.0),
        _unit_vec([0.0, 1.0, 5.0], "weak"),
    ]
    query = _unit_vec([3.0, 4.0, 0.1], "s")
    got = retrieve_top_k(query, FunctionIndex(pool), k=4)
    assert [fid for fid, _ in got.ranked] == ["dup-a", "dup-b", "dup-c", "dup-d"]
    expected = brute_force_rank(query, pool, 4)
    assert [fid for fid, _ in got.ranked] == [fid for fid, _ in expected]


def test_scores_non_increasing_and_within_unit_range():
    rng = np.random.default_rng(5)
    query = _unit_vec(rng.normal(size=10), "s")
    got = retrieve_top_k(query, FunctionIndex(_random_pool(rng, 64, dim=10)), k=10)
    scores = [s for _, s in got.ranked]
    assert all(a >= b for a, b in zip(scores, scores[1:]))
    assert all(-1.0 <= s <= 1.0 for s in scores)


def test_prefix_stability_when_k_grows():
    rng = np.random.default_rng(11)
    query = _unit_vec(rng.normal(size=10), "s")
    index = FunctionIndex(_random_pool(rng, 50, dim=10))
    small = retrieve_top_k(query, index, k=5)
    large = retrieve_top_k(query, index, k=15)
    assert large.ranked[:5] == small.ranked


def test_empty_index_errors():
    with pytest.raises(ValidationError):
        FunctionIndex([])


def test_k_must_be_positive():
    pool = [_unit_vec([1, 0], "a")]
    with pytest.raises(ValidationError):
        retrieve_top_k(_unit_vec([1, 0], "s"), FunctionIndex(pool), k=0)


def test_dimension_mismatch_errors():
    pool = [_unit_vec([1, 0, 0], "a")]
    with pytest.raises(ValidationError):
        retrieve_top_k(_unit_vec([1, 0], "s"), FunctionIndex(pool), k=1)


# --- task generation -------------------------------------------------------------------


class _Sentence:
    def __init__(self, sentence_id, text, keyword_hits):
        self.sentence_id = sentence_id
        self.text = text
        self.keyword_hits = keyword_hits


def _function_unit(function_id, name="pkg.fn"):
    return FunctionUnit(
        function_id=function_id, project_id="p1", qualified_name=name,
        file_path="pkg/mod.py", start_line=1, end_line=3,
        raw_body="def fn():\n    a = 1\n    return a",
        normalized_body="def fn():\n    a = 1\n    return a",
        doc_comment=None, decorator_names=[], is_method=False,
        trivial=False, complexity=1,
    )


def _ranked(sentence_id, function_ids):
    from papercode.pairing import RankedCandidates
    return RankedCandidates(
        sentence_id=sentence_id,
        ranked=[(fid, 1.0 - 0.01 * i) for i, fid in enumerate(function_ids)],
        k=10,
    )


def test_one_task_per_retrievable_sentence():
    sentences = {f"s{i}": _Sentence(f"s{i}", f"text {i}", ["compute"]) for i in range(5)}
    functions = {f"f{i}": _function_unit(f"f{i}") for i in range(5)}
    ranked = [_ranked(f"s{i}", [f"f{i}", "f0"]) for i in range(5)]
    tasks, skips = generate_annotation_tasks(ranked, sentences, functions)
    assert len(tasks) == 5
    assert skips == []
    assert all(t.status == "open" for t in tasks)
    assert tasks[0].function_id == ranked[0].ranked[0][0]


def test_sentence_without_candidates_is_skipped_with_record():
    sentences = {"s0": _Sentence("s0", "text", [])}
    tasks, skips = generate_annotation_tasks([_ranked("s0", [])], sentences, {})
    assert tasks == []
    assert skips == [{"sentence_id": "s0", "reason": "no candidates"}]


def test_task_ids_stable_across_regeneration():
    sentences = {"s0": _Sentence("s0", "text", [])}
    functions = {"f0": _function_unit("f0")}
    first, _ = generate_annotation_tasks([_ranked("s0", ["f0"])], sentences, functions)
    second, _ = generate_annotation_tasks([_ranked("s0", ["f0"])], sentences, functions)
    assert first[0].task_id == second[0].task_id
    assert first[0].task_id == task_id_for("s0", "f0")


def test_task_carries_display_context():
    sentences = {"s0": _Sentence("s0", "the text", ["align"])}
    functions = {"f0": _function_unit("f0", name="Widget.run")}
    tasks, _ = generate_annotation_tasks([_ranked("s0", ["f0"])], sentences, functions)
    task = tasks[0]
    assert task.sentence_text == "the text"
    assert task.qualified_name == "Widget.run"
    assert task.keyword_hits == ["align"]
    record = task.to_record()
    assert record["context"]["file_path"] == "pkg/mod.py"


def test_provider_substitutability_for_retrieval(tmp_path):
    """Any provider serving the same unit vectors yields identical rankings."""
    from papercode.embedding import FileProvider, LexicalProvider, write_vectors

    corpus = [f"token{i} shared word extra{i % 3}" for i in range(12)]
    provider = LexicalProvider.fit(corpus)
    units = [(f"f{i:02d}", corpus[i]) for i in range(12)]
    vectors, _ = provider.embed_units(units)
    store = tmp_path / "funcs.vec"
    write_vectors(store, provider.dim, vectors)
    served, _ = FileProvider(store).embed_units(units)

    query_vec, _ = provider.embed_units([("q", "shared word token3")])
    lexical_rank = retrieve_top_k(query_vec[0], FunctionIndex(vectors), k=5)
    file_rank = retrieve_top_k(query_vec[0], FunctionIndex(served), k=5)
    assert [fid for fid, _ in lexical_rank.ranked] == [fid for fid, _ in file_rank.ranked]
    for (_, a), (_, b) in zip(lexical_rank.ranked, file_rank.ranked):
        assert a == pytest.approx(b, abs=1e-6)  # f32 storage round-trip
