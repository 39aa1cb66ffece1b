import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkfuse.errors import ContractError, DataError
from chunkfuse.tokenizer import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    Vocabulary,
    build_vocabulary,
    normalize,
    tokenize,
)


def test_special_id_layout():
    assert (PAD_ID, UNK_ID, CLS_ID, SEP_ID) == (0, 1, 2, 3)


def test_normalize_folds_case_and_strips_punctuation():
    assert normalize("Chest, PAIN!") == ["chest", "pain"]
    assert normalize("don't stop") == ["dont", "stop"]
    assert normalize("a-b c") == ["ab", "c"]
    assert normalize("   \t\n ") == []


def test_tiny_corpus_vocabulary():
    vocab = build_vocabulary(["a b a"], max_size=6)
    assert set(vocab.token_to_id) == {"a", "b"}
    assert vocab.token_to_id["a"] == 4  # higher frequency ranks first
    assert vocab.token_to_id["b"] == 5
    assert len(vocab) == 6


def test_frequency_tie_broken_lexicographically():
    vocab = build_vocabulary(["y x", "x y"], max_size=5)  # room for one token
    assert set(vocab.token_to_id) == {"x"}


def test_build_is_order_independent():
    docs = ["b c d", "a a b", "c"]
    assert build_vocabulary(docs, 20) == build_vocabulary(list(reversed(docs)), 20)


def test_build_preconditions():
    with pytest.raises(ContractError):
        build_vocabulary([], 10)
    with pytest.raises(ContractError):
        build_vocabulary(["a"], 3)


def test_tokenize_examples():
    vocab = build_vocabulary(["chest pain chest"], max_size=10)
    assert tokenize("", vocab).ids == ()
    seq = tokenize("Chest PAIN chest", vocab, source_note="n1")
    chest, pain = vocab.token_to_id["chest"], vocab.token_to_id["pain"]
    assert seq.ids == (chest, pain, chest)
    assert seq.source_note == "n1"
    assert tokenize("zzzunseen chest", vocab).ids == (UNK_ID, chest)


def test_vocabulary_file_roundtrip(tmp_path):
    vocab = build_vocabulary(["gamma alpha beta gamma beta gamma"], max_size=20)
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    lines = path.read_text().splitlines()
    assert lines[:4] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    assert lines[4] == "gamma"  # line number = id
    assert Vocabulary.load(path) == vocab


def test_load_rejects_bad_header_and_duplicates(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("[PAD]\n[CLS]\n[UNK]\n[SEP]\na\n")
    with pytest.raises(DataError):
        Vocabulary.load(bad)
    dup = tmp_path / "dup.txt"
    dup.write_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\na\na\n")
    with pytest.raises(DataError):
        Vocabulary.load(dup)


def test_vocabulary_rejects_sparse_ids():
    with pytest.raises(ContractError):
        Vocabulary(token_to_id={"a": 5})
    with pytest.raises(ContractError):
        Vocabulary(token_to_id={"a": 2})


texts = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=0, max_size=200
)


@settings(max_examples=200)
@given(texts)
def test_tokenize_length_matches_normalization(text):
    vocab = build_vocabulary(["some shared words"], max_size=10)
    seq = tokenize(text, vocab)
    assert len(seq) == len(normalize(text))
    assert all(i not in (PAD_ID, CLS_ID, SEP_ID) for i in seq.ids)
    assert seq.ids == tokenize(text, vocab).ids  # pure function
