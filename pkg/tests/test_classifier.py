import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from materialkit.classifier import (AdamW, ClassDescriptorBank, Encoders, MlpHead, TrainConfig,
                                    build_descriptor_bank, class_bank_scores, downsample_mask,
                                    extract_features, forward, fuse, load_checkpoint, logits,
                                    loss_and_grads, masked_max_pool, masked_mean_pool, predict,
                                    predict_features, save_checkpoint, train, train_head)
from materialkit.encoders import MockDescriptorGenerator, MockTextEncoder, MockVisionEncoder
from materialkit.errors import DimensionError, NumericError, PreconditionError

FINITE = st.floats(-1e3, 1e3, allow_nan=False, width=32)


def test_downsample_any_pixel_activates_cell():
    m = np.zeros((448, 448), bool)
    m[14 * 3 + 13, 14 * 5] = True
    p = downsample_mask(m)
    assert p.shape == (32, 32) and p.sum() == 1 and p[3, 5]


def test_max_pool_two_cells():
    grid = np.zeros((2, 2, 3))
    grid[0, 0] = [1, 5, -2]
    grid[1, 1] = [4, 0, -1]
    grid[0, 1] = [9, 9, 9]
    pmask = np.array([[True, False], [False, True]])
    assert masked_max_pool(grid, pmask).tolist() == [4, 5, -1]
    assert masked_mean_pool(grid, pmask).tolist() == [2.5, 2.5, -1.5]


def test_empty_mask_pools_everything():
    grid = np.random.default_rng(0).normal(size=(3, 3, 4))
    assert np.array_equal(masked_max_pool(grid, np.zeros((3, 3), bool)), grid.reshape(9, 4).max(0))


@settings(max_examples=80, deadline=None)
@given(arrays(np.float32, (4, 4, 5), elements=FINITE), arrays(bool, (4, 4)))
def test_max_pool_matches_exhaustive_loop(grid, pmask):
    cells = [(i, j) for i in range(4) for j in range(4) if pmask[i, j]] or \
            [(i, j) for i in range(4) for j in range(4)]
    expect = [max(grid[i, j, d] for i, j in cells) for d in range(5)]
    got = masked_max_pool(grid, pmask)
    assert got.tolist() == expect
    assert np.all(got <= grid.reshape(-1, 5).max(0))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, (3, 3, 2), elements=FINITE), arrays(bool, (3, 3)), arrays(bool, (3, 3)))
def test_max_pool_monotone_in_mask(grid, a, b):
    if not a.any():
        return
    assert np.all(masked_max_pool(grid, a) <= masked_max_pool(grid, a | b))


def test_fuse_order_and_dims():
    f = fuse(np.arange(3.0), np.arange(10.0, 12.0), 3, 2)
    assert f.tolist() == [0, 1, 2, 10, 11]
    with pytest.raises(DimensionError):
        fuse(np.zeros(767), np.zeros(512), 768, 512)


def test_default_head_shapes():
    head = MlpHead.init(1280, 512, 21)
    assert head.w1.shape == (1280, 512) and head.w2.shape == (512, 21)
    assert head.w1.dtype == np.float32
    assert np.abs(head.w1).max() <= math.sqrt(6 / 1280)
    assert not head.b1.any() and not head.b2.any()


def test_zero_head_is_uniform():
    head = MlpHead.zeros(6, 4, 3)
    p = forward(head, np.ones(6))
    assert np.allclose(p, 1 / 3)


def test_forward_matches_hand_softmax():
    head = MlpHead.zeros(2, 2, 3, activation="relu")
    head.w1[:] = np.eye(2)
    head.w2[:] = [[1, 0, 0], [0, 2, 0]]
    head.b2[:] = [0, 0, 1]
    # hidden = relu([1, 0.5]) ; logits = [1, 1, 1]
    p = forward(head, np.array([1.0, 0.5]))
    assert np.allclose(p, [1 / 3] * 3)
    p = forward(head, np.array([2.0, -1.0]))
    z = [2.0, 0.0, 1.0]
    e = [math.exp(v) for v in z]
    assert np.allclose(p, [v / sum(e) for v in e])


def test_forward_rejects_nan_and_bad_dim():
    head = MlpHead.zeros(4, 3, 2)
    with pytest.raises(NumericError):
        forward(head, np.array([0, np.nan, 0, 0]))
    with pytest.raises(DimensionError):
        forward(head, np.zeros(5))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)), st.integers(0, 50))
def test_probabilities_sum_to_one(x, seed):
    p = forward(MlpHead.init(6, 5, 4, seed=seed, dtype=np.float64), x)
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1.0)


def numeric_grads(head, x, y, h=1e-3):
    out = {}
    for name, p in head.params().items():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            lp = loss_and_grads(head, x, y)[0]
            p[i] = old - h
            lm = loss_and_grads(head, x, y)[0]
            p[i] = old
            g[i] = (lp - lm) / (2 * h)
        out[name] = g
    return out


@pytest.mark.parametrize("activation", ["gelu", "relu"])
def test_gradient_finite_difference(activation):
    rng = np.random.default_rng(7)
    head = MlpHead.init(6, 5, 3, seed=2, activation=activation, dtype=np.float64)
    head.b1[:] = rng.normal(size=5) * 0.1
    x, y = rng.normal(size=(4, 6)), rng.integers(0, 3, size=4)
    _, analytic, _ = loss_and_grads(head, x, y)
    numeric = numeric_grads(head, x, y)
    for name in analytic:
        a, n = analytic[name], numeric[name]
        assert np.linalg.norm(a - n) <= 1e-4 * max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)


def test_adamw_first_step_matches_formula():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -0.1])}
    AdamW(lr=0.1, weight_decay=0.01).step(p, g)
    # first step: m_hat = g, v_hat = g^2 -> update = lr * sign(g) (up to eps)
    expect = np.array([1.0, -2.0]) * (1 - 0.1 * 0.01) - 0.1 * np.array([0.5, -0.1]) / (np.abs([0.5, -0.1]) + 1e-8)
    assert np.allclose(p["w"], expect, rtol=0, atol=1e-12)


def test_adamw_zero_grad_only_decays():
    p = {"w": np.array([3.0])}
    AdamW(lr=0.5, weight_decay=0.1).step(p, {"w": np.array([0.0])})
    assert p["w"][0] == pytest.approx(3.0 * 0.95)


def oracle_class_bank(head, v, bank):
    """Plain-python per-class forward passes."""
    act = {"relu": lambda t: max(t, 0.0)}[head.activation]
    out = []
    for k, t in enumerate(bank):
        f = list(v) + list(t)
        hid = [act(sum(f[i] * head.w1[i, j] for i in range(len(f))) + head.b1[j])
               for j in range(head.hidden)]
        z = [sum(hid[j] * head.w2[j, c] for j in range(head.hidden)) + head.b2[c]
             for c in range(head.n_classes)]
        m = max(z)
        e = [math.exp(zi - m) for zi in z]
        out.append(e[k] / sum(e))
    return out


def four_class_fixture():
    head = MlpHead.zeros(4, 4, 4, activation="relu")
    head.w1[:] = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]
    head.w2[:] = [[2, 0, 0, 1], [0, 2, 1, 0], [1, 0, 2, 0], [0, 1, 0, 2]]
    head.b2[:] = [0.0, 0.1, 0.2, 0.3]
    bank = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [1.0, 1.0]])
    return head, bank


def test_class_bank_scores_match_enumeration():
    head, bank = four_class_fixture()
    for v in ([1.0, 0.0], [0.0, 1.0], [0.2, 0.9], [3.0, -1.0]):
        got = class_bank_scores(head, np.array([v]), bank)[0]
        assert np.allclose(got, oracle_class_bank(head, v, bank), atol=1e-12)
        b = ClassDescriptorBank(("a", "b", "c", "d"), tuple("abcd"), bank)
        pred, scores = predict_features(head, np.array([v]), b)
        oracle = oracle_class_bank(head, v, bank)
        assert pred[0] == oracle.index(max(oracle))


def test_ties_go_to_lowest_index():
    head = MlpHead.zeros(4, 2, 3)
    b = ClassDescriptorBank(("a", "b", "c"), ("a", "b", "c"), np.zeros((3, 2)))
    pred, scores = predict_features(head, np.zeros((1, 2)), b)
    assert pred[0] == 0 and np.allclose(scores, 1 / 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_class_bank_scores_vectorized_equals_loop(seed):
    rng = np.random.default_rng(seed)
    head = MlpHead.init(7, 6, 4, seed=seed, dtype=np.float64)
    vision, bank = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    got = class_bank_scores(head, vision, bank, chunk=2)
    for n in range(5):
        for k in range(4):
            p = forward(head, fuse(vision[n], bank[k]))
            assert got[n, k] == pytest.approx(p[k], abs=1e-12)


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.batch_size, cfg.epochs, cfg.hidden) == (5e-5, 64, 20, 512)
    for bad in ({"learning_rate": 0}, {"head_mode": "partial"}, {"pooling": "min"}, {"optimizer": "sgd"}):
        with pytest.raises(PreconditionError):
            TrainConfig(**bad)


def separable(n_per=20, k=3, dv=8, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(k, dv)) * 3
    labels = np.repeat(np.arange(k), n_per)
    vision = centers[labels] + rng.normal(size=(len(labels), dv)) * 0.2
    bank = np.eye(k, 4)
    return vision, labels, bank


def test_zero_epochs_returns_initial_head():
    v, y, bank = separable()
    cfg = TrainConfig(epochs=0, hidden=16, seed=3)
    a = train_head(v, y, bank, cfg)
    b = train_head(v, y, bank, cfg)
    assert a.log == [] and a.head.equals(b.head)


def test_training_learns_and_is_deterministic():
    v, y, bank = separable()
    cfg = TrainConfig(epochs=30, hidden=32, learning_rate=1e-2, batch_size=16, seed=1)
    a = train_head(v, y, bank, cfg)
    b = train_head(v, y, bank, cfg)
    assert a.head.equals(b.head) and a.log == b.log
    losses = [e["loss"] for e in a.log]
    assert losses[-1] < losses[0]
    assert a.log[-1]["train_accuracy"] == 1.0
    assert a.log[-1]["train_accuracy_class_bank"] == 1.0
    c = train_head(v, y, bank, TrainConfig(epochs=30, hidden=32, learning_rate=1e-2, batch_size=16, seed=2))
    assert not a.head.equals(c.head)


def test_float64_mode():
    v, y, bank = separable()
    r = train_head(v, y, bank, TrainConfig(epochs=2, hidden=8, dtype="float64"))
    assert r.head.w1.dtype == np.float64


def test_nan_loss_reports_context():
    v, y, bank = separable()
    v[0, 0] = np.inf
    with pytest.raises(NumericError) as info:
        train_head(v, y, bank, TrainConfig(epochs=1, hidden=8))
    assert "epoch 1" in str(info.value)


def test_small_corpus_end_to_end(small_corpus, mock_encoders, tmp_path, caplog):
    bank = build_descriptor_bank(small_corpus.taxonomy, mock_encoders.text)
    assert bank.texts[0].startswith("metal: ")
    cfg = TrainConfig(epochs=20, hidden=64, learning_rate=1e-3, batch_size=8, head_mode="full")
    result = train(small_corpus, bank, mock_encoders, cfg)
    assert result.effective_head_mode == "head" and "fine-tuned" in caplog.text
    assert result.log[-1]["train_accuracy"] >= 0.99

    save_checkpoint(tmp_path / "a.zip", result.head, small_corpus.taxonomy, mock_encoders, bank, cfg,
                    result.log)
    save_checkpoint(tmp_path / "b.zip", result.head, small_corpus.taxonomy, mock_encoders, bank, cfg,
                    result.log)
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()
    ck = load_checkpoint(tmp_path / "a.zip")
    assert ck.head.equals(result.head) and ck.taxonomy == small_corpus.taxonomy
    assert ck.meta["adapters"]["vision"] == mock_encoders.vision.adapter_id

    feats = extract_features(small_corpus, mock_encoders)
    pred, _ = predict_features(ck.head, feats, ck.bank)
    assert (pred == small_corpus.labels()).mean() >= 0.99

    from materialkit.classifier import load_pair
    image, mask = load_pair(small_corpus, small_corpus.entries[0])
    k, scores = predict(image, mask, ck.head, ck.bank, mock_encoders)
    assert k == pred[0] and scores.shape == (4,)
    k2, _ = predict(image, mask, ck.head, ck.bank, Encoders(mock_encoders.vision, mock_encoders.text, None),
                    mode="per_image_descriptor")
    assert k2 == k


def test_per_image_descriptor_training(small_corpus, mock_encoders):
    bank = build_descriptor_bank(small_corpus.taxonomy, mock_encoders.text)
    cfg = TrainConfig(epochs=2, hidden=16, text_mode="per_image_descriptor")
    result = train(small_corpus, bank, mock_encoders, cfg)
    assert mock_encoders.descriptor.calls == len(small_corpus)
    assert result.head.n_classes == 4


def test_empty_mask_ablation_changes_features(small_corpus, mock_encoders):
    a = extract_features(small_corpus, mock_encoders)
    b = extract_features(small_corpus, mock_encoders, empty_masks=True)
    assert a.shape == b.shape and not np.allclose(a, b)
    assert np.all(b >= a - 1e-12)
