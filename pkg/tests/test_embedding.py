import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from papercode.embedding import (
    EmbeddingVector,
    FileProvider,
    LexicalProvider,
    RemoteProvider,
    cosine,
    embed_lexical,
    fit_lexical,
    read_vectors,
    read_vectors_text,
    tokenize_mixed,
    write_vectors,
    write_vectors_text,
)
from papercode.ioutil import ValidationError


# --- tokenizer -------------------------------------------------------------------


def test_camel_case_split():
    assert tokenize_mixed("computeAlignmentScore") == ["compute", "alignment", "score"]


def test_snake_case_and_numbers():
    assert tokenize_mixed("read_count = 0") == ["read", "count", "0"]


def test_acronym_boundary():
    assert tokenize_mixed("HTTPServer") == ["http", "server"]


def test_shared_subtoken_between_paraphrases():
    a = tokenize_mixed("normalize the raw alignment scores")
    b = tokenize_mixed("score_normalizer(raw_values)")
    assert set(a) & set(b)


# --- fit_lexical --------------------------------------------------------------------


def test_idf_token_in_every_document():
    state = fit_lexical(["apple pie", "apple tart", "apple cake"])
    col = state.vocabulary["apple"]
    assert state.idf[col] == pytest.approx(math.log(4 / 4) + 1.0)  # == 1.0


def test_idf_closed_form_rare_token():
    # token in exactly 1 of N=100 docs: idf = ln(101/2) + 1 = 4.92197...
    corpus = ["common word here"] * 99 + ["common rareword here"]
    state = fit_lexical(corpus)
    col = state.vocabulary["rareword"]
    assert state.idf[col] == pytest.approx(math.log(101 / 2) + 1.0, abs=1e-12)
    assert state.idf[col] == pytest.approx(4.9220, abs=1e-4)


def test_fit_deterministic():
    corpus = ["alpha beta", "beta gamma", "gamma alpha"]
    a, b = fit_lexical(corpus), fit_lexical(corpus)
    assert a.vocabulary == b.vocabulary
    assert np.array_equal(a.idf, b.idf)


def test_fit_empty_corpus_errors():
    with pytest.raises(ValidationError):
        fit_lexical([])


# --- embed -------------------------------------------------------------------------


def test_lexical_vector_matches_hand_computed_tfidf():
    # vocabulary over 3 docs: alpha df=2, beta df=2, gamma df=1
    state = fit_lexical(["alpha beta", "beta gamma", "alpha alpha"])
    idf_alpha = math.log(4 / 3) + 1.0
    idf_beta = math.log(4 / 3) + 1.0
    vec = embed_lexical(state, "alpha beta")
    expected = np.zeros(state.dim)
    expected[state.vocabulary["alpha"]] = 1 * idf_alpha
    expected[state.vocabulary["beta"]] = 1 * idf_beta
    expected /= np.linalg.norm(expected)
    assert np.allclose(vec, expected, atol=1e-12)


def test_duplicate_texts_identical_vectors():
    provider = LexicalProvider.fit(["one two three", "two three four"])
    vectors, _ = provider.embed_units([("a", "two three"), ("b", "two three")])
    assert np.array_equal(vectors[0].values, vectors[1].values)


def test_vectors_unit_norm():
    provider = LexicalProvider.fit(["alpha beta gamma", "delta epsilon"])
    vectors, _ = provider.embed_units([("a", "alpha delta"), ("b", "beta beta gamma")])
    for vector in vectors:
        assert abs(np.linalg.norm(vector.values) - 1.0) <= 1e-6


def test_unembeddable_flagged_never_zero_vector():
    provider = LexicalProvider.fit(["alpha beta"])
    vectors, skipped = provider.embed_units([("ok", "alpha"), ("nope", "zzz qqq")])
    assert [v.unit_id for v in vectors] == ["ok"]
    assert skipped == ["nope"]


def test_token_order_invariance():
    provider = LexicalProvider.fit(["alpha beta gamma delta"])
    vectors, _ = provider.embed_units([("a", "alpha beta gamma"), ("b", "gamma beta alpha")])
    assert np.array_equal(vectors[0].values, vectors[1].values)


def test_feature_hashing_fixed_dim():
    state = fit_lexical(["alpha beta gamma", "delta epsilon zeta"], hash_dim=16)
    assert state.dim == 16
    vec = embed_lexical(state, "alpha delta")
    assert vec.shape == (16,)
    assert abs(np.linalg.norm(vec) - 1.0) <= 1e-6


# --- cosine -------------------------------------------------------------------------


def _unit(values, unit_id="u"):
    arr = np.asarray(values, dtype=np.float64)
    return EmbeddingVector(unit_id=unit_id, values=arr / np.linalg.norm(arr))


def test_cosine_self_similarity():
    v = _unit([0.3, 0.4, 0.5])
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)


def test_cosine_orthogonal_one_hots():
    assert cosine(_unit([1, 0, 0]), _unit([0, 1, 0])) == 0.0


def test_cosine_dimension_mismatch():
    with pytest.raises(ValidationError):
        cosine(_unit([1, 0]), _unit([1, 0, 0]))


def test_cosine_matches_full_formula_on_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        a = rng.normal(size=8)
        b = rng.normal(size=8)
        u, v = _unit(a), _unit(b)
        full = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert abs(cosine(u, v) - full) <= 1e-9


# --- vector stores ----------------------------------------------------------------------


def test_binary_store_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    vectors = [_unit(rng.normal(size=6), f"id{i}") for i in range(5)]
    path = tmp_path / "x.vec"
    write_vectors(path, 6, vectors)
    dim, loaded = read_vectors(path)
    assert dim == 6
    assert [v.unit_id for v in loaded] == [f"id{i}" for i in range(5)]
    for original, restored in zip(vectors, loaded):
        assert np.allclose(original.values, restored.values, atol=1e-6)
        assert abs(np.linalg.norm(restored.values) - 1.0) <= 1e-6


def test_text_store_round_trip(tmp_path):
    vectors = [_unit([1, 2, 2], "a"), _unit([3, 0, 4], "b")]
    path = tmp_path / "x.vec.txt"
    write_vectors_text(path, 3, vectors)
    dim, loaded = read_vectors_text(path)
    assert dim == 3
    assert np.allclose(loaded[0].values, vectors[0].values, atol=1e-12)


def test_file_provider_missing_ids_error(tmp_path):
    path = tmp_path / "x.vec"
    write_vectors(path, 3, [_unit([1, 2, 2], "present")])
    provider = FileProvider(path)
    with pytest.raises(ValidationError, match="missing-one"):
        provider.embed_units([("present", ""), ("missing-one", "")])


def test_file_provider_renormalizes(tmp_path):
    path = tmp_path / "x.vec"
    write_vectors(path, 3, [_unit([5, 0, 0], "a")])
    provider = FileProvider(path)
    vectors, _ = provider.embed_units([("a", "")])
    assert abs(np.linalg.norm(vectors[0].values) - 1.0) <= 1e-6


# --- remote provider -----------------------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    fail_first = 0

    def log_message(self, *args):
        pass

    def do_POST(self):
        cls = type(self)
        if cls.fail_first > 0:
            cls.fail_first -= 1
            self.send_response(500)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        vectors = [[float(len(t)), 1.0, 0.5] for t in payload["texts"]]
        body = json.dumps({"vectors": vectors}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


@pytest.fixture()
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def test_remote_provider_batches_and_normalizes(stub_server):
    provider = RemoteProvider(stub_server, batch_size=2, max_retries=0)
    vectors, skipped = provider.embed_units([("a", "xx"), ("b", "yyy"), ("c", "z")])
    assert skipped == []
    assert [v.unit_id for v in vectors] == ["a", "b", "c"]
    for vector in vectors:
        assert abs(np.linalg.norm(vector.values) - 1.0) <= 1e-6


def test_remote_provider_retries_with_backoff(stub_server):
    _StubHandler.fail_first = 2
    provider = RemoteProvider(stub_server, max_retries=3, backoff=0.01)
    vectors, _ = provider.embed_units([("a", "xx")])
    assert len(vectors) == 1


def test_remote_provider_gives_up_after_retries(stub_server):
    _StubHandler.fail_first = 99
    provider = RemoteProvider(stub_server, max_retries=1, backoff=0.01)
    with pytest.raises(ValidationError, match="unreachable after retries"):
        provider.embed_units([("a", "xx")])
    _StubHandler.fail_first = 0
