import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brsm.data import (
    EOS,
    UNK,
    BadMagicError,
    DimensionOverflowError,
    EmbeddingError,
    IdxArray,
    IdxError,
    ImagePool,
    InputScaler,
    TruncatedError,
    Vocabulary,
    detokenize,
    load_embedding_file,
    markov_corpus,
    read_idx,
    read_idx_file,
    repeat_corpus,
    synthetic_embedding,
    synthetic_embedding_table,
    token_stream,
    tokenize,
    write_idx,
)
from brsm.dense import make_rng


def _bits(vec):
    return "".join(str(int(v)) for v in vec)


def test_read_idx_labels_fixture():
    arr = read_idx(bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 3]))
    assert not arr.is_images
    np.testing.assert_array_equal(arr.scaled(), [7, 3])


def test_read_idx_images_and_scaling():
    payload = struct.pack(">iiii", 2051, 1, 2, 2) + bytes([0, 128, 255, 1])
    arr = read_idx(payload)
    assert arr.is_images and arr.data.shape == (1, 2, 2)
    assert arr.scaled()[0, 1, 0] == 1.0
    assert write_idx(arr) == payload


def test_read_idx_errors():
    with pytest.raises(TruncatedError):
        read_idx(b"")
    with pytest.raises(BadMagicError):
        read_idx(struct.pack(">i", 1234) + b"\0" * 8)
    with pytest.raises(TruncatedError):
        read_idx(struct.pack(">ii", 2049, 5) + b"\1\2")
    with pytest.raises(TruncatedError):
        read_idx(struct.pack(">i", 2051) + b"\0\0")
    with pytest.raises(DimensionOverflowError):
        read_idx(struct.pack(">iiii", 2051, 60000, 28, 28) + b"\0" * 10)
    with pytest.raises(IdxError):
        read_idx(struct.pack(">ii", 2049, 1) + b"\1\2")


@given(st.lists(st.integers(0, 255), min_size=0, max_size=50))
def test_idx_round_trip(values):
    arr = IdxArray(2049, np.array(values, dtype=np.uint8))
    payload = write_idx(arr)
    assert write_idx(read_idx(payload)) == payload


def test_read_idx_file_gz(tmp_path):
    payload = struct.pack(">ii", 2049, 3) + bytes([1, 2, 3])
    (tmp_path / "l.gz").write_bytes(gzip.compress(payload))
    (tmp_path / "l").write_bytes(payload)
    np.testing.assert_array_equal(read_idx_file(tmp_path / "l.gz").data, [1, 2, 3])
    np.testing.assert_array_equal(read_idx_file(tmp_path / "l").data, [1, 2, 3])


def test_pool_from_idx_files(tmp_path):
    imgs = struct.pack(">iiii", 2051, 3, 2, 2) + bytes(range(12))
    labels = struct.pack(">ii", 2049, 3) + bytes([1, 0, 1])
    (tmp_path / "i").write_bytes(imgs)
    (tmp_path / "l").write_bytes(labels)
    pool = ImagePool.from_idx_files(tmp_path / "i", tmp_path / "l")
    assert pool.sizes() == {0: 1, 1: 2}
    np.testing.assert_allclose(pool.observe(1, "fixed"), np.arange(4) / 255)


def test_observe_modes():
    rng = make_rng(0)
    pool = ImagePool.synthetic(rng, per_label=6, dim=12)
    a = pool.observe(3, "fixed")
    np.testing.assert_array_equal(a, pool.observe(3, "fixed"))
    seen = {pool.observe(3, "random", rng).tobytes() for _ in range(200)}
    assert len(seen) == 6
    single = ImagePool({0: np.ones((1, 4)), 1: np.zeros((1, 4))})
    np.testing.assert_array_equal(single.observe(1, "random", rng), single.observe(1, "fixed"))
    batch = pool.observe(np.array([1, 2, 3]), "fixed")
    assert batch.shape == (3, 12)
    with pytest.raises(KeyError):
        single.observe(5, "fixed")
    with pytest.raises(ValueError):
        pool.observe(1, "sometimes", rng)


def test_synthetic_pair_shares_prototypes():
    train, held = ImagePool.synthetic_pair(make_rng(0), per_label=200, dim=50, noise=0.1)
    assert train.sizes() == held.sizes()
    for label in range(10):
        assert not np.array_equal(train.by_label[label], held.by_label[label])
        np.testing.assert_allclose(train.by_label[label].mean(0), held.by_label[label].mean(0), atol=0.05)
    assert all(((v >= 0) & (v <= 1)).all() for v in train.by_label.values())


def test_input_scaler_unit_norm():
    data = make_rng(0).uniform(0, 1, size=(500, 784))
    scaler = InputScaler.fit(data)
    out = scaler(data)
    assert abs(out.mean()) < 1e-12
    assert np.mean(np.sum(out**2, axis=1)) == pytest.approx(1.0, rel=1e-9)


def test_synthetic_embedding_strings():
    assert _bits(synthetic_embedding(1)) == "0000000000000111111111111110"
    assert _bits(synthetic_embedding(99)) == "0000000110001111111110011100"
    assert _bits(synthetic_embedding(0)) == "0" * 14 + "1" * 14
    with pytest.raises(ValueError):
        synthetic_embedding(2**14)
    with pytest.raises(ValueError):
        synthetic_embedding(5, vocab_size=5)


def test_synthetic_embedding_injective_and_balanced():
    table = synthetic_embedding_table(2**14)
    assert (table.sum(axis=1) == 14).all()
    assert len({row.tobytes() for row in table}) == 2**14


def test_embedding_file_examples():
    t = load_embedding_file("a 1 0\nb 0 1\n")
    assert len(t) == 2 and t.dim == 2
    np.testing.assert_array_equal(t["b"], [0, 1])
    rows = "\n".join(f"w{i} " + " ".join(["0.5"] * 100) for i in range(2))
    assert load_embedding_file("2 100\n" + rows).dim == 100
    with pytest.raises(EmbeddingError):
        load_embedding_file("")
    with pytest.raises(EmbeddingError):
        load_embedding_file("a 1 0\nb 1\n")
    with pytest.raises(EmbeddingError):
        load_embedding_file("a 1 x\n")


def test_embedding_duplicates_last_wins(caplog):
    t = load_embedding_file("a 1 0\na 0 1\n")
    np.testing.assert_array_equal(t["a"], [0, 1])
    assert "duplicate" in caplog.text


def test_embedding_for_vocabulary():
    t = load_embedding_file("a 1 0\nb 0 1\n")
    np.testing.assert_array_equal(t.for_vocabulary(Vocabulary(["b", "a"])), [[0, 1], [1, 0]])
    with pytest.raises(EmbeddingError):
        t.for_vocabulary(Vocabulary(["c"]))


def test_token_stream_examples():
    vocab = Vocabulary(["a", "b"])
    np.testing.assert_array_equal(token_stream("a b a", vocab), [0, 1, 0])
    with_unk = Vocabulary(["a", UNK])
    np.testing.assert_array_equal(token_stream("a zzz", with_unk), [0, 1])
    with pytest.raises(KeyError):
        token_stream("zzz", vocab)
    with_eos = Vocabulary(["a", EOS])
    np.testing.assert_array_equal(token_stream("a a\na", with_eos), [0, 0, 1, 0, 1])


def test_tokenize_round_trip():
    text = "the cat sat\non the mat\n\nend"
    toks = tokenize(text)
    assert toks.count(EOS) == 3
    again = tokenize(detokenize(toks))
    assert len(again) == len(toks)


def test_vocabulary_build_order():
    vocab = Vocabulary.build(["b", "a", "b", "c"])
    assert vocab.tokens == ["b", "a", "c"]
    assert vocab.decode(vocab.encode(["c", "b"])) == ["c", "b"]


def test_synthetic_corpora_deterministic():
    assert markov_corpus(make_rng(0), n_tokens=500) == markov_corpus(make_rng(0), n_tokens=500)
    text = repeat_corpus(make_rng(1), n_tokens=600)
    assert len(text.split()) >= 600
