"""Tests for the encoder, prediction heads and losses."""

import math

import pytest
import torch

from src.backbone import (
    MagnitudeRegHead,
    PredictionHead,
    TabularEncoder,
    TripletSampler,
    backward,
    encode,
    predict,
    supervised_loss,
    total_loss,
    triplet_hinge,
    triplet_margin,
    triplet_reg_loss,
)
from src.errors import GraphReuse, LengthMismatch, ShapeMismatch
from src.table_store import TaskType


class TestEncoder:
    def test_permutation_invariance(self):
        for case in range(100):
            gen = torch.Generator().manual_seed(case)
            torch.manual_seed(case)
            encoder = TabularEncoder(d=16, n_heads=4, n_layers=2, d_ff=32, dropout=0.1).eval()
            head = PredictionHead(16, dropout=0.1)
            n = int(torch.randint(2, 9, (1,), generator=gen))
            x = torch.randn(3, 1 + n, 16, generator=gen)
            perm = torch.cat([torch.zeros(1, dtype=torch.long), 1 + torch.randperm(n, generator=gen)])
            with torch.no_grad():
                a = predict(encoder(x), head, train_mode=False)
                b = predict(encoder(x[:, perm]), head, train_mode=False)
            assert float((a - b).abs().max()) < 1e-5, case

    def test_duplicated_feature_changes_output(self):
        encoder = TabularEncoder(d=16, n_heads=4, n_layers=2, d_ff=32, dropout=0.0).eval()
        x = torch.randn(4, 16)
        doubled = torch.cat([x, x[2:3]], dim=0)
        with torch.no_grad():
            assert not torch.allclose(encode(x, encoder), encode(doubled, encoder), atol=1e-6)

    def test_zero_layers_is_identity(self):
        encoder = TabularEncoder(d=8, n_heads=2, n_layers=0)
        x = torch.randn(3, 4, 8)
        assert torch.equal(encoder(x), x[:, 0])
        assert torch.equal(encode(x[1], encoder), x[1, 0])

    def test_eval_mode_deterministic(self):
        encoder = TabularEncoder(d=8, n_heads=2, n_layers=2, d_ff=16, dropout=0.5).eval()
        x = torch.randn(2, 5, 8)
        with torch.no_grad():
            assert torch.equal(encoder(x), encoder(x))

    def test_padding_rows_ignored(self):
        encoder = TabularEncoder(d=8, n_heads=2, n_layers=2, d_ff=16, dropout=0.0).eval()
        x = torch.randn(1, 4, 8)
        padded = torch.cat([x, torch.randn(1, 3, 8)], dim=1)
        mask = torch.tensor([[False] * 4 + [True] * 3])
        with torch.no_grad():
            torch.testing.assert_close(encoder(padded, mask), encoder(x, torch.zeros(1, 4, dtype=torch.bool)))

    def test_needs_features(self):
        with pytest.raises(ShapeMismatch):
            TabularEncoder(d=8, n_heads=2, n_layers=1)(torch.randn(2, 1, 8))

    def test_gradcheck(self):
        encoder = TabularEncoder(d=8, n_heads=2, n_layers=1, d_ff=16, dropout=0.0).double()
        head = PredictionHead(8, dropout=0.0).double()
        x = torch.randn(2, 3, 8, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda inp: head(encoder(inp)), (x,))


class TestPredictionHead:
    def test_zero_weights(self):
        head = PredictionHead(4, dropout=0.0)
        for p in head.parameters():
            torch.nn.init.zeros_(p)
        assert torch.equal(predict(torch.randn(3, 4), head, train_mode=False), torch.zeros(3))

    def test_tanh_fixed_point(self):
        head = PredictionHead(4, dropout=0.0)
        with torch.no_grad():
            head.linear_2.weight.copy_(torch.eye(4))
            head.linear_2.bias.zero_()
            head.linear_1.weight.fill_(1.0)
            head.linear_1.bias.zero_()
        assert predict(torch.zeros(1, 4), head, train_mode=False).item() == 0.0

    def test_eval_mode_disables_dropout(self):
        head = PredictionHead(4, dropout=0.9)
        x = torch.randn(16, 4)
        assert torch.equal(predict(x, head, train_mode=False), predict(x, head, train_mode=False))


class TestSupervisedLoss:
    def test_binclass_at_half(self):
        loss = supervised_loss(torch.zeros(2), torch.tensor([1.0, 0.0]), TaskType.BINCLASS)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-6)

    def test_regression(self):
        assert supervised_loss(torch.tensor([1.0]), torch.tensor([1.0]), TaskType.REGRESSION).item() == 0.0
        assert supervised_loss(torch.tensor([0.0]), torch.tensor([2.0]), TaskType.REGRESSION).item() == 4.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            supervised_loss(torch.zeros(3), torch.zeros(2), TaskType.REGRESSION)


class TestTripletLoss:
    def test_margin_and_hinge(self):
        m = triplet_margin(10, 12, 50, 256)
        assert m == pytest.approx(38 / 256)
        assert triplet_hinge(0.3, 0.6, m) == 0.0
        assert triplet_hinge(0.6, 0.3, m) == pytest.approx(0.6 - 0.3 + 38 / 256)

    def test_satisfied_triplet_has_zero_gradient(self):
        d12 = torch.tensor([0.3], requires_grad=True)
        d13 = torch.tensor([0.6], requires_grad=True)
        triplet_hinge(d12, d13, 38 / 256).sum().backward()
        assert d12.grad.item() == 0.0 and d13.grad.item() == 0.0

    def test_identical_rows_give_margin(self):
        table = torch.ones(9, 4).requires_grad_()
        triplets = torch.tensor([[0, 1, 5], [7, 6, 2]])
        loss = triplet_reg_loss(table, triplets, MagnitudeRegHead(4), n_bin=8)
        expected = (triplet_margin(0, 1, 5, 8) + triplet_margin(7, 6, 2, 8)) / 2
        assert loss.item() == pytest.approx(expected, abs=1e-6)

    def test_unsampled_rows_get_zero_gradient(self):
        table = torch.randn(9, 4, requires_grad=True)
        triplets = torch.tensor([[0, 1, 5]])
        triplet_reg_loss(table, triplets, MagnitudeRegHead(4), n_bin=8).backward()
        untouched = [2, 3, 4, 6, 7, 8]
        assert torch.equal(table.grad[untouched], torch.zeros(len(untouched), 4))

    def test_sampler_orders_by_distance(self):
        sampler = TripletSampler(triplets_per_step=200, seed=3)
        t = sampler.sample(16)
        assert t.shape == (200, 3)
        assert bool(((t[:, 0] - t[:, 1]).abs() < (t[:, 0] - t[:, 2]).abs()).all())
        assert int(t.max()) < 16

    def test_sampler_seeded(self):
        assert torch.equal(TripletSampler(8, seed=1).sample(32), TripletSampler(8, seed=1).sample(32))

    def test_sampler_needs_three_bins(self):
        with pytest.raises(ValueError):
            TripletSampler().sample(2)

    def test_nonnegative(self):
        table = torch.randn(33, 8)
        loss = triplet_reg_loss(table, TripletSampler(64, seed=0), MagnitudeRegHead(8))
        assert loss.item() >= 0.0


class TestTotalLossAndBackward:
    def test_total_loss(self):
        assert total_loss(1.0, 0.5, 0.1) == pytest.approx(1.05)
        assert total_loss(1.0, 0.5, 0.0) == 1.0
        assert total_loss(1.0, 0.0, 0.1) == 1.0

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 0.5, -0.1)

    def test_square_derivative(self):
        w = torch.tensor(3.0, requires_grad=True)
        backward(w * w)
        assert w.grad.item() == 6.0

    def test_graph_reuse(self):
        w = torch.tensor(3.0, requires_grad=True)
        loss = w * w
        backward(loss)
        with pytest.raises(GraphReuse):
            backward(loss)
