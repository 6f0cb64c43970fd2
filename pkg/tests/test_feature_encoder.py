"""Tests for embedding tables and intra-feature attention."""

import pytest
import torch

from src.errors import IdOutOfBounds, ShapeMismatch
from src.feature_encoder import (
    EmbeddingTables,
    FeatureTokens,
    IntraFeatureAttention,
    embed_feature,
    fuse_sample,
    ifa_fuse,
)
from src.text_codec import build_vocab, encode_text


@pytest.fixture
def vocab():
    return build_vocab(["blood pressure", "gender", "male female", "age"], max_words=20, n_bin=8)


@pytest.fixture
def tables(vocab):
    return EmbeddingTables(vocab.n_word_ids, vocab.n_bin, d=8, max_name_len=4, init_std=0.5)


@pytest.fixture
def ifa():
    return IntraFeatureAttention(d=8, n_heads=2)


def _numeric(vocab, name, k, multiplier=1.0):
    return FeatureTokens(name=encode_text(vocab, name), magnitude=k, multiplier=multiplier)


def _text(vocab, name, value):
    return FeatureTokens(name=encode_text(vocab, name), text=encode_text(vocab, value))


class TestEmbedFeature:
    def test_positions(self, vocab, tables):
        _, positions = embed_feature(_numeric(vocab, "blood pressure", 3), tables)
        assert positions.tolist() == [1, 2, 0]

    def test_identity_multiplier(self, vocab, tables):
        e, _ = embed_feature(_numeric(vocab, "age", 5), tables)
        assert torch.equal(e[-1], tables.magnitude_table[5])

    def test_half_multiplier(self, vocab, tables):
        e, _ = embed_feature(_numeric(vocab, "age", 5, multiplier=0.5), tables)
        assert torch.equal(e[-1], 0.5 * tables.magnitude_table[5])

    def test_text_value(self, vocab, tables):
        e, positions = embed_feature(_text(vocab, "gender", "male"), tables)
        assert e.shape == (2, 8)
        assert positions.tolist() == [1, 0]
        assert torch.equal(e[1], tables.word_table[vocab.word_to_id["male"]])

    def test_bin_out_of_bounds(self, vocab, tables):
        with pytest.raises(IdOutOfBounds):
            embed_feature(_numeric(vocab, "age", 9), tables)

    def test_long_name_truncated(self, vocab, tables):
        ft = FeatureTokens(name=encode_text(vocab, "blood pressure blood pressure age"), magnitude=0)
        e, positions = embed_feature(ft, tables)
        assert e.shape[0] == tables.max_name_len + 1
        assert positions.max() == tables.max_name_len

    def test_needs_exactly_one_value(self, vocab):
        with pytest.raises(ValueError):
            FeatureTokens(name=encode_text(vocab, "age"))


class TestLookup:
    def test_routes_magnitude_ids(self, vocab, tables):
        ids = torch.tensor([vocab.word_to_id["age"], vocab.magnitude_base + 2, vocab.missing_id])
        rows = tables.lookup(ids)
        assert torch.equal(rows[0], tables.word_table[vocab.word_to_id["age"]])
        assert torch.equal(rows[1], tables.magnitude_table[2])
        assert torch.equal(rows[2], tables.magnitude_table[-1])

    @pytest.mark.parametrize("bad", [-1, 10_000])
    def test_out_of_bounds(self, tables, bad):
        with pytest.raises(IdOutOfBounds):
            tables.lookup(torch.tensor([bad]))


class TestIfaFuse:
    def test_zero_logits_average_values(self, vocab):
        tables = EmbeddingTables(vocab.n_word_ids, vocab.n_bin, d=4, max_name_len=4, init_std=1.0)
        attn = IntraFeatureAttention(d=4, n_heads=1)
        with torch.no_grad():
            attn.w_q.weight.zero_()
            attn.w_k.weight.zero_()
            attn.w_v.weight.copy_(torch.eye(4))
            attn.w_o.weight.copy_(torch.eye(4))
        e, positions = embed_feature(_numeric(vocab, "age", 1), tables)
        out = ifa_fuse(e, positions, attn, tables)
        expected = torch.stack([tables.cls_vector, e[0], e[1]]).mean(dim=0)
        torch.testing.assert_close(out, expected)

    def test_tied_name_tokens_swap(self, vocab, tables, ifa):
        e, positions = embed_feature(_numeric(vocab, "blood pressure", 2), tables)
        with torch.no_grad():
            tables.position_table[2].copy_(tables.position_table[1])
            e = e.clone()
            e[1] = e[0]
        swapped = positions.clone()
        swapped[[0, 1]] = swapped[[1, 0]]
        torch.testing.assert_close(ifa_fuse(e, positions, ifa, tables), ifa_fuse(e, swapped, ifa, tables))

    def test_shape_mismatch(self, vocab, tables, ifa):
        e, positions = embed_feature(_numeric(vocab, "age", 1), tables)
        with pytest.raises(ShapeMismatch):
            ifa_fuse(e, positions[:-1], ifa, tables)

    def test_heads_must_divide_width(self):
        with pytest.raises(ShapeMismatch):
            IntraFeatureAttention(d=8, n_heads=3)

    def test_value_position_changes_output(self, vocab, tables, ifa):
        e, positions = embed_feature(_numeric(vocab, "blood pressure", 2), tables)
        plain = ifa_fuse(e, positions, ifa, tables)
        with_pos = ifa_fuse(e, positions, ifa, tables, value_position=True)
        assert not torch.allclose(plain, with_pos)


class TestFuseSample:
    def test_shape_and_cls_row(self, vocab, tables, ifa):
        x = fuse_sample([_numeric(vocab, "age", 1), _text(vocab, "gender", "female")], ifa, tables)
        assert x.shape == (3, 8)
        assert torch.equal(x[0], tables.cls_vector)

    def test_single_feature(self, vocab, tables, ifa):
        assert fuse_sample([_numeric(vocab, "age", 1)], ifa, tables).shape == (2, 8)

    def test_features_isolated(self, vocab, tables, ifa):
        a = fuse_sample([_numeric(vocab, "age", 1), _text(vocab, "gender", "female")], ifa, tables)
        b = fuse_sample([_numeric(vocab, "age", 1), _text(vocab, "gender", "male")], ifa, tables)
        assert torch.equal(a[1], b[1])
        assert not torch.equal(a[2], b[2])

    def test_empty_row(self, tables, ifa):
        with pytest.raises(ShapeMismatch):
            fuse_sample([], ifa, tables)
