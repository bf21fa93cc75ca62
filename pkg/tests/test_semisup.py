import math

import numpy as np
import pytest

from graphmi import tensor as T
from graphmi.data import make_batch
from graphmi.infomax import unsup_loss
from graphmi.semisup import (SemiModel, combined_loss, draw_layer,
                             error_ratio, star_loss, star_terms,
                             supervised_loss, transfer_loss,
                             transfer_pair_weights)
from graphmi.tensor import Tensor

from oracles import gradcheck, mse_loop, randomize_params
from test_encoder import random_graph


def toy_model(seed=0, dim=2, hidden=3, layers=2, target_dim=1, lam=0.5,
              **kwargs):
    rng = np.random.default_rng(seed)
    return SemiModel(dim, hidden, layers, target_dim, rng, lam=lam, **kwargs)


def labeled_graphs(rng, count, dim=2, target_dim=1):
    graphs = []
    for _ in range(count):
        g = random_graph(rng, int(rng.integers(3, 6)), dim=dim)
        g.targets = rng.normal(size=target_dim)
        graphs.append(g)
    return graphs


class TestSupervisedLoss:
    def test_zero_when_predictions_match(self):
        rng = np.random.default_rng(0)
        model = toy_model()
        graphs = labeled_graphs(rng, 3)
        batch = make_batch(graphs)
        preds = model.predict(batch)
        for g, p in zip(graphs, preds):
            g.targets = p.copy()
        assert supervised_loss(model, make_batch(graphs)).item() == 0.0

    def test_single_graph_squared_error(self):
        rng = np.random.default_rng(1)
        model = toy_model()
        g = random_graph(rng, 4, dim=2)
        g.targets = np.array([2.0])
        # Force the head to output exactly 0.
        model.head.w.values[...] = 0.0
        model.head.b.values[...] = 0.0
        assert supervised_loss(model, make_batch([g])).item() == 4.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        model = toy_model(target_dim=3)
        graphs = labeled_graphs(rng, 5, target_dim=3)
        batch = make_batch(graphs)
        loss = supervised_loss(model, batch).item()
        oracle = mse_loop(model.predict(batch), batch.targets)
        assert loss == pytest.approx(oracle, abs=1e-12)

    def test_missing_targets(self):
        rng = np.random.default_rng(3)
        model = toy_model()
        with pytest.raises(ValueError):
            supervised_loss(model, make_batch([random_graph(rng, 4)]))

    def test_gradcheck(self):
        rng = np.random.default_rng(4)
        model = toy_model(seed=4)
        batch = make_batch(labeled_graphs(rng, 3))
        params = (model.sup_encoder.parameters("sup")
                  + model.head.parameters("head"))
        randomize_params(params, rng)
        gradcheck(lambda: supervised_loss(model, batch), params)


class TestCombinedLoss:
    def test_lambda_zero_equals_supervised(self):
        rng = np.random.default_rng(5)
        model = toy_model(seed=5, lam=0.0)
        lab = make_batch(labeled_graphs(rng, 3))
        unlab = make_batch([random_graph(rng, 5, dim=2) for _ in range(3)])
        total = combined_loss(model, lab, unlab)
        assert total.item() == supervised_loss(model, lab).item()
        # And unlabeled data contributes no gradient anywhere.
        params = model.parameters()
        T.zero_grads(params)
        T.backward(total)
        grads_with = {n: (p.grad.copy() if p.grad is not None else None)
                      for n, p in params}
        T.zero_grads(params)
        T.backward(supervised_loss(model, lab))
        for name, p in params:
            if grads_with[name] is None:
                assert p.grad is None or not np.any(p.grad)
            else:
                np.testing.assert_array_equal(p.grad, grads_with[name])

    def test_lambda_one_empty_labeled_equals_unsup_loss(self):
        rng = np.random.default_rng(6)
        model = toy_model(seed=6, lam=1.0)
        unlab = make_batch([random_graph(rng, 4, dim=2) for _ in range(3)])
        total = combined_loss(model, None, unlab)
        reference = unsup_loss(model.sup_encoder, model.patch_disc, unlab)
        assert total.item() == reference.item()

    def test_gradcheck(self):
        rng = np.random.default_rng(7)
        model = toy_model(seed=7, lam=0.3)
        lab = make_batch(labeled_graphs(rng, 2))
        unlab = make_batch([random_graph(rng, 4, dim=2) for _ in range(2)])
        params = (model.sup_encoder.parameters("sup")
                  + model.head.parameters("head")
                  + model.patch_disc.parameters("pdisc"))
        randomize_params(params, rng)
        gradcheck(lambda: combined_loss(model, lab, unlab), params)


class TestTransferWeights:
    def test_pair_counts(self):
        sizes = np.array([3, 5, 4, 6])
        pos, neg = transfer_pair_weights(sizes, size_weight=True)
        assert (pos > 0).sum() == 4          # B diagonal positives
        assert (neg > 0).sum() == 16 - 4     # B^2 - B negatives
        assert np.all(np.diag(neg) == 0)

    def test_zero_scores_give_two_log_two_per_graph(self):
        model = toy_model(seed=8)
        for disc in model.layer_discs:
            for _, p in disc.parameters():
                p.values[...] = 0.0
        sizes = np.array([3, 4])
        sup_g = Tensor(np.random.default_rng(0).normal(size=(2, 3)))
        uns_g = Tensor(np.random.default_rng(1).normal(size=(2, 3)))
        loss = transfer_loss(model, sup_g, uns_g, sizes, layer=0)
        expected = np.mean([2 * math.log(2) / s for s in sizes])
        assert loss.item() == pytest.approx(expected, abs=1e-12)

    def test_size_weight_flag(self):
        model = toy_model(seed=9, transfer_size_weight=False)
        for disc in model.layer_discs:
            for _, p in disc.parameters():
                p.values[...] = 0.0
        sizes = np.array([3, 4])
        rng = np.random.default_rng(2)
        loss = transfer_loss(model, Tensor(rng.normal(size=(2, 3))),
                             Tensor(rng.normal(size=(2, 3))), sizes, layer=0)
        assert loss.item() == pytest.approx(2 * math.log(2), abs=1e-12)


class TestStarLoss:
    def test_lambda_zero_decouples_encoders(self):
        rng = np.random.default_rng(10)
        model = toy_model(seed=10, lam=0.0)
        lab = make_batch(labeled_graphs(rng, 3))
        unlab = make_batch([random_graph(rng, 4, dim=2) for _ in range(3)])
        params = model.parameters()

        T.zero_grads(params)
        t1, t2, t3, _ = star_terms(model, lab, unlab, np.random.default_rng(0))
        assert t3 is None
        T.backward(T.add(t1, t2))
        full = {n: (p.grad.copy() if p.grad is not None else None)
                for n, p in params}

        # Supervised-side gradients must come from term1 alone...
        T.zero_grads(params)
        T.backward(supervised_loss(model, lab))
        for name, p in params:
            if name.startswith(("sup.", "head.")):
                np.testing.assert_array_equal(p.grad, full[name])
            elif full[name] is not None:
                # ...and term1 must not touch the unsupervised side.
                if p.grad is not None:
                    assert not np.any(p.grad)

        # Unsupervised-side gradients must come from term2 alone.
        T.zero_grads(params)
        t1b, t2b, _, _ = star_terms(model, lab, unlab, np.random.default_rng(0))
        T.backward(t2b)
        for name, p in params:
            if name.startswith(("uns.", "pdisc.")):
                np.testing.assert_array_equal(p.grad, full[name])

    def test_transfer_pair_counts_and_layer_draw(self):
        rng = np.random.default_rng(11)
        model = toy_model(seed=11, lam=0.7, layers=3)
        lab = make_batch(labeled_graphs(rng, 2))
        unlab = make_batch([random_graph(rng, 4, dim=2) for _ in range(2)])
        _, _, t3, layer = star_terms(model, lab, unlab,
                                     np.random.default_rng(42))
        assert t3 is not None
        assert layer == draw_layer(np.random.default_rng(42), 3)

    def test_layer_draw_frequencies(self):
        rng = np.random.default_rng(12)
        counts = np.zeros(3)
        draws = 10_000
        for _ in range(draws):
            counts[draw_layer(rng, 3)] += 1
        freqs = counts / draws
        np.testing.assert_allclose(freqs, 1 / 3, atol=0.02)

    def test_full_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        model = toy_model(seed=13, lam=0.4, dim=2, hidden=2, layers=2)
        lab = make_batch(labeled_graphs(rng, 2))
        unlab = make_batch([random_graph(rng, 3, dim=2) for _ in range(2)])
        randomize_params(model.parameters(), rng)
        # Recreating the generator fixes the drawn layer across evaluations.
        gradcheck(lambda: star_loss(model, lab, unlab,
                                    np.random.default_rng(7)),
                  model.parameters())

    def test_deterministic_given_rng_state(self):
        rng = np.random.default_rng(14)
        model = toy_model(seed=14, lam=0.2)
        lab = make_batch(labeled_graphs(rng, 3))
        unlab = make_batch([random_graph(rng, 4, dim=2) for _ in range(2)])
        a = star_loss(model, lab, unlab, np.random.default_rng(3)).item()
        b = star_loss(model, lab, unlab, np.random.default_rng(3)).item()
        assert a == b

    def test_all_layers_mode(self):
        rng = np.random.default_rng(15)
        model = toy_model(seed=15, lam=0.4, transfer_all_layers=True)
        lab = make_batch(labeled_graphs(rng, 2))
        unlab = make_batch([random_graph(rng, 4, dim=2) for _ in range(2)])
        _, _, t3, _ = star_terms(model, lab, unlab, np.random.default_rng(0))
        assert t3 is not None and np.isfinite(t3.item())


class TestErrorRatio:
    def test_equal_maes_give_one(self):
        assert error_ratio(0.3201, 0.3201) == pytest.approx(1.00)

    def test_improvement_below_one(self):
        assert round(error_ratio(0.99 * 0.3201, 0.3201), 2) == 0.99

    def test_zero_numerator(self):
        assert error_ratio(0.0, 0.5) == 0.0

    def test_nonpositive_denominator(self):
        with pytest.raises(ValueError):
            error_ratio(0.1, 0.0)
        with pytest.raises(ValueError):
            error_ratio(0.1, -1.0)
