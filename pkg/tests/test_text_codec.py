"""Tests for the word vocabulary and magnitude-token ids."""

import pytest

from src.errors import EmptyCorpus, OutOfRange
from src.text_codec import (
    CLS_ID,
    N_SPECIAL,
    UNK_ID,
    TokenKind,
    Vocabulary,
    build_vocab,
    encode_text,
    format_number,
    magnitude_token_id,
    table_corpus,
    tokenize,
)
from src.table_store import MISSING_TEXT


@pytest.fixture
def vocab():
    return build_vocab(["Blood Pressure", "blood sugar", "gender"], max_words=10, n_bin=256)


class TestTokenize:
    def test_lowercases_and_splits(self):
        assert tokenize("Blood-Pressure (mmHg)") == ["blood", "pressure", "mmhg"]

    def test_idempotent(self):
        for text in ("Body Mass_Index", "123.8", "  a  b  ", "über Straße"):
            once = tokenize(text)
            assert tokenize(" ".join(once)) == once

    def test_empty(self):
        assert tokenize("") == []
        assert tokenize("--") == []


class TestBuildVocab:
    def test_words(self):
        v = build_vocab(["Blood Pressure", "blood sugar"], max_words=10, n_bin=4)
        assert set(v.words) == {"blood", "pressure", "sugar"}
        assert v.words[0] == "blood"

    def test_truncation(self):
        v = build_vocab(["Blood Pressure", "blood sugar"], max_words=1, n_bin=4)
        assert v.words == ["blood"]
        assert encode_text(v, "pressure").ids == [UNK_ID]

    def test_magnitude_block(self, vocab):
        assert vocab.vocab_size - vocab.magnitude_base == 257
        assert vocab.missing_id == vocab.magnitude_base + 256
        assert not vocab.is_magnitude(vocab.magnitude_base - 1)
        assert vocab.is_magnitude(vocab.missing_id)

    def test_ids_disjoint(self, vocab):
        word_ids = set(vocab.word_to_id.values())
        assert min(word_ids) == N_SPECIAL
        assert max(word_ids) < vocab.magnitude_base
        assert CLS_ID not in word_ids

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            build_vocab([], max_words=10, n_bin=4)

    def test_deterministic_serialization(self):
        corpus = ["b a", "c a", "a d"]
        a = build_vocab(corpus, 10, 8)
        b = build_vocab(list(corpus), 10, 8)
        assert a.dumps() == b.dumps()
        assert Vocabulary.from_json(a.to_json()) == a


class TestEncodeText:
    def test_two_words(self, vocab):
        seq = encode_text(vocab, "Blood Pressure")
        assert seq.ids == [vocab.word_to_id["blood"], vocab.word_to_id["pressure"]]
        assert len(seq) == 2
        assert seq.kinds == [TokenKind.WORD, TokenKind.WORD]

    def test_single_word(self, vocab):
        assert encode_text(vocab, "gender").ids == [vocab.word_to_id["gender"]]

    def test_empty_text(self, vocab):
        assert encode_text(vocab, "").ids == [UNK_ID]

    def test_never_emits_magnitude_ids(self, vocab):
        for text in ("blood", "zzz unknown", "256", ""):
            assert all(not vocab.is_magnitude(i) for i in encode_text(vocab, text).ids)


class TestMagnitudeTokenId:
    def test_range(self, vocab):
        assert magnitude_token_id(vocab, 0) == vocab.magnitude_base
        assert magnitude_token_id(vocab, 255) == vocab.magnitude_base + 255
        assert magnitude_token_id(vocab, 256) == vocab.missing_id

    @pytest.mark.parametrize("k", [-1, 257])
    def test_out_of_range(self, vocab, k):
        with pytest.raises(OutOfRange):
            magnitude_token_id(vocab, k)


class TestCorpus:
    def test_format_number(self):
        assert format_number(123.8) == "123.8"
        assert format_number(5.0) == "5"

    def test_table_corpus(self, mixed_dataset):
        texts = table_corpus(mixed_dataset)
        assert texts[0] == MISSING_TEXT
        assert {"blood pressure", "age", "smoker", "notes", "yes", "no", "mild cough"} <= set(texts)
        assert not any(t[0].isdigit() for t in texts)

    def test_table_corpus_with_numbers(self, mixed_dataset):
        texts = table_corpus(mixed_dataset, include_numbers=True)
        assert format_number(mixed_dataset.frame["age"].iloc[0]) in texts
