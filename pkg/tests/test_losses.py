import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from conftest import bce_pairs, hinge_pairs, small_inputs, small_model
from zeroshot.errors import ConfigurationError, ContractError
from zeroshot.losses import (
    batch_loss,
    bce_loss,
    euclidean_loss,
    euclidean_surrogate,
    hinge_loss,
    make_pair_batch,
    sample_minibatch,
)
from zeroshot.mathcore import Tensor, grad_check
from zeroshot.mathcore import tensor as T


class TestBCE:
    def test_single_pair(self):
        assert bce_loss(np.zeros((1, 1)), np.ones((1, 1))).item() == pytest.approx(math.log(2))

    def test_saturation(self):
        v = bce_loss(np.full((1, 1), 50.0), np.ones((1, 1))).item()
        assert 0.0 <= v < 1e-20

    def test_two_by_two(self):
        y = np.array([[1.0, -1.0], [-1.0, 1.0]])
        v = bce_loss(y, np.eye(2)).item()
        assert v == pytest.approx(4 * math.log(1 + math.exp(-1)), abs=1e-15)
        assert round(v, 4) == 1.2530

    def test_huge_scores_finite(self):
        y = Tensor(np.array([[1e6, -1e6], [-1e6, 1e6]]), requires_grad=True)
        loss = bce_loss(y, np.array([[0.0, 1.0], [1.0, 0.0]]))
        (g,) = T.gradients(loss, [y])
        assert np.isfinite(loss.item()) and np.all(np.isfinite(g))
        assert loss.item() == pytest.approx(4e6)

    def test_indicator_check(self):
        with pytest.raises(ContractError):
            bce_loss(np.zeros((1, 2)), np.array([[1.0, -1.0]]))

    @given(st.lists(st.floats(-30, 30), min_size=4, max_size=4), st.integers(0, 15))
    def test_matches_pairwise(self, ys, bits):
        y = np.array(ys).reshape(2, 2)
        I = np.array([(bits >> i) & 1 for i in range(4)], float).reshape(2, 2)
        assert bce_loss(y, I).item() == pytest.approx(bce_pairs(y, I), rel=1e-12, abs=1e-12)


class TestHinge:
    @pytest.mark.parametrize("y, I, expected", [(2.0, 1, 0.0), (0.3, 1, 0.7), (-0.5, -1, 0.5)])
    def test_examples(self, y, I, expected):
        assert hinge_loss([[y]], [[I]]).item() == pytest.approx(expected, abs=1e-15)

    def test_bad_indicator_and_margin(self):
        with pytest.raises(ContractError):
            hinge_loss([[0.0]], [[0.0]])
        with pytest.raises(ConfigurationError):
            hinge_loss([[0.0]], [[1.0]], margin=0.0)

    def test_zero_gradient_beyond_margin(self, rng):
        y = Tensor(np.array([[3.0, -0.2], [-4.0, 0.5]]), requires_grad=True)
        I = np.array([[1.0, -1.0], [-1.0, 1.0]])
        (g,) = T.gradients(hinge_loss(y, I), [y])
        np.testing.assert_array_equal(g, [[0.0, 1.0], [0.0, -1.0]])
        assert grad_check(lambda s: hinge_loss(s, I), y.data) < 1e-8


class TestEuclidean:
    def test_examples(self):
        w = np.array([[1.0, 2.0]])
        assert euclidean_loss(w, w.copy(), [[1.0]]).item() == pytest.approx(1.0)
        g = np.array([[1.0, 2.0 + 2.0]])  # squared distance 4
        assert euclidean_loss(w, g, [[-1.0]]).item() == 0.0

    def test_expansion_identity(self, rng):
        for _ in range(100):
            W, G = rng.standard_normal((3, 7)), rng.standard_normal((4, 7))
            s = euclidean_surrogate(G @ W.T, W, G).data
            dist = ((G[:, None, :] - W[None, :, :]) ** 2).sum(-1)
            np.testing.assert_allclose(s, -0.5 * dist, atol=1e-9, rtol=0)

    @pytest.mark.parametrize("kind", ["fc", "conv", "joint"])
    def test_model_vectors_reproduce_scores(self, rng, kind):
        model = small_model(kind)
        x, maps, texts = small_inputs(rng, 3, 4)
        fwd = model.forward(x, maps, texts, with_vectors=True)
        np.testing.assert_allclose(fwd.image_vectors.data @ fwd.text_vectors.data.T,
                                   fwd.scores.data, atol=1e-12, rtol=0)

    def test_nonnegative(self, rng):
        W, G = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
        assert euclidean_loss(W, G, 2 * np.eye(3) - 1).item() >= 0.0


class TestMinibatch:
    def test_class_set_is_distinct_labels(self, rng):
        labels = np.array([0, 0, 3, 3, 5, 7, 7, 7])
        batch = sample_minibatch(labels, 5, rng)
        assert len(set(batch.indices.tolist())) == 5
        assert batch.classes.tolist() == sorted(set(labels[batch.indices].tolist()))
        assert (batch.indicators.sum(axis=1) == 1).all()
        np.testing.assert_array_equal(batch.signed, 2 * batch.indicators - 1)

    def test_single_class_batch(self):
        batch = make_pair_batch(np.array([0, 1, 2]), np.array([4, 4, 4, 1]))
        assert batch.classes.tolist() == [4]
        np.testing.assert_array_equal(batch.indicators, np.ones((3, 1)))

    def test_batch_too_large(self, rng):
        with pytest.raises(ConfigurationError):
            sample_minibatch(np.zeros(3, int), 4, rng)

    def test_seeded(self):
        labels = np.arange(50) % 7
        a = [sample_minibatch(labels, 10, np.random.default_rng(5)).indices for _ in range(2)]
        np.testing.assert_array_equal(a[0], a[1])

    def test_uniform_inclusion(self):
        rng = np.random.default_rng(0)
        n, B, draws = 20, 5, 10_000
        counts = np.zeros(n)
        for _ in range(draws):
            counts[sample_minibatch(np.arange(n) % 4, B, rng).indices] += 1
        assert chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize("kind", ["bce", "hinge"])
def test_full_batch_equals_pair_sum(rng, kind):
    model = small_model("joint")
    n = 5
    x, maps, texts = small_inputs(rng, n, n)
    labels = np.arange(n)
    batch = sample_minibatch(labels, n, rng)
    got = batch_loss(model, x[batch.indices], maps[batch.indices], texts[batch.classes],
                     batch.indicators, kind).item()
    S = np.array([[model.score_matrix(x[i : i + 1], maps[i : i + 1], texts[j : j + 1])[0, 0]
                   for j in range(n)] for i in range(n)])
    ref = bce_pairs(S, np.eye(n)) if kind == "bce" else hinge_pairs(S, 2 * np.eye(n) - 1)
    assert got == pytest.approx(ref, abs=1e-12)


def test_unknown_loss(rng):
    x, maps, texts = small_inputs(rng, 2, 2)
    with pytest.raises(ConfigurationError):
        batch_loss(small_model("fc"), x, None, texts, np.eye(2), "softmax")
