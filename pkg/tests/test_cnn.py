"""Classifier: finite-difference gradients, determinism, training loop."""

import numpy as np
import pytest

from tfmd import cnn
from tfmd.cnn import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool2,
    Network,
    ReLU,
    TrainConfig,
    TrainingDiverged,
    build_default_network,
    forward,
    load_checkpoint,
    loss_and_grad,
    predict,
    save_checkpoint,
    train,
)


def tiny_net(seed=0, dtype=np.float64):
    """8x8 single-channel input, 2 classes: one of each layer type."""
    layers = [
        Conv2D(1, 2), ReLU(), MaxPool2(),
        Flatten(), Dense(2 * 4 * 4, 6), ReLU(), Dense(6, 2),
    ]
    return Network(layers, input_shape=(1, 8, 8), n_classes=2, seed=seed, dtype=dtype)


def toy_dataset(n=50, size=16, seed=0):
    """Linearly separable images: class = which quadrant is lit."""
    rng = np.random.default_rng(seed)
    images = 0.05 * rng.random((n, 3, size, size)).astype(np.float32)
    labels = rng.integers(0, 5, n)
    h = size // 2
    anchors = [(0, 0), (0, h), (h, 0), (h, h), (h // 2, h // 2)]
    for i, lab in enumerate(labels):
        y, x = anchors[lab]
        images[i, :, y : y + h, x : x + h] += 1.0
    return images, labels


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_forward_zero_everything():
    net = tiny_net()
    for p in net.params:
        p[...] = 0.0
    logits = forward(net, np.zeros((3, 1, 8, 8)))
    np.testing.assert_array_equal(logits, np.zeros((3, 2)))


def test_forward_shape_validation():
    net = tiny_net()
    with pytest.raises(ValueError):
        forward(net, np.zeros((2, 1, 8, 9)))


def test_forward_batching_invariance():
    net = tiny_net(seed=3)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 1, 8, 8))
    both = forward(net, x)
    np.testing.assert_allclose(both[0], forward(net, x[:1])[0], atol=1e-12)
    np.testing.assert_allclose(both[1], forward(net, x[1:])[0], atol=1e-12)


def test_softmax_uniform_for_equal_logits():
    probs = cnn._softmax(np.full((2, 5), 3.0))
    np.testing.assert_allclose(probs, 0.2)


def test_network_shape_audit():
    with pytest.raises(ValueError):
        Network([Conv2D(1, 2), Flatten(), Dense(10, 2)],
                input_shape=(1, 8, 8), n_classes=2)
    with pytest.raises(ValueError):
        build_default_network(input_shape=(3, 30, 30))  # not pool-divisible


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------


def test_loss_saturated_correct_prediction():
    net = tiny_net()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 1, 8, 8))
    # rig the last layer so the true class logit dominates by 1e6
    last = net.layers[-1]
    last.weight[...] = 0.0
    last.bias[:] = [1e6, 0.0]
    loss, _ = loss_and_grad(net, x, np.array([0, 0]))
    assert loss < 1e-6


def test_loss_uniform_logits():
    net = tiny_net()
    for p in net.params:
        p[...] = 0.0
    loss, _ = loss_and_grad(net, np.zeros((4, 1, 8, 8)), np.array([0, 1, 0, 1]))
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_loss_label_validation():
    net = tiny_net()
    with pytest.raises(ValueError):
        loss_and_grad(net, np.zeros((1, 1, 8, 8)), np.array([2]))


def test_gradients_match_finite_differences():
    net = tiny_net(seed=5, dtype=np.float64)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 1, 8, 8))
    y = np.array([0, 1, 1, 0])
    _, grads = loss_and_grad(net, x, y)
    eps = 1e-6
    worst = 0.0
    for pi, p in enumerate(net.params):
        flat = p.ravel()
        for i in rng.choice(flat.size, size=min(10, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + eps
            lp, _ = loss_and_grad(net, x, y)
            flat[i] = old - eps
            lm, _ = loss_and_grad(net, x, y)
            flat[i] = old
            num = (lp - lm) / (2 * eps)
            ana = grads[pi].ravel()[i]
            denom = max(abs(num) + abs(ana), 1e-8)
            worst = max(worst, abs(num - ana) / denom)
    assert worst < 1e-4


def test_maxpool_tie_gradient_splits_equally():
    pool = MaxPool2()
    x = np.ones((1, 2, 2, 1))
    pool.forward(x)
    dx = pool.backward(np.full((1, 1, 1, 1), 4.0))
    np.testing.assert_allclose(dx[0, :, :, 0], np.ones((2, 2)))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_train_lr_zero_keeps_parameters():
    net = build_default_network(seed=1, input_shape=(3, 16, 16))
    before = [p.copy() for p in net.params]
    images, labels = toy_dataset(20)
    train(net, images, labels, TrainConfig(learning_rate=0.0, epochs=2, seed=0))
    for b, p in zip(before, net.params):
        np.testing.assert_array_equal(b, p)


def test_train_overfits_separable_toy_set():
    net = build_default_network(seed=0, input_shape=(3, 16, 16))
    images, labels = toy_dataset(50)
    history = train(net, images, labels, TrainConfig(epochs=30, seed=0))
    assert history.epochs[-1]["train_acc"] == 1.0


def test_train_deterministic():
    images, labels = toy_dataset(30)
    cfg = TrainConfig(epochs=3, seed=9)
    net1 = build_default_network(seed=7, input_shape=(3, 16, 16))
    h1 = train(net1, images, labels, cfg)
    net2 = build_default_network(seed=7, input_shape=(3, 16, 16))
    h2 = train(net2, images, labels, cfg)
    for r1, r2 in zip(h1.epochs, h2.epochs):
        assert r1["train_loss"] == r2["train_loss"]
        assert r1["train_acc"] == r2["train_acc"]
    for p1, p2 in zip(net1.params, net2.params):
        np.testing.assert_array_equal(p1, p2)


def test_train_divergence_reports_state():
    net = build_default_network(seed=0, input_shape=(3, 16, 16))
    images, labels = toy_dataset(20)
    cfg = TrainConfig(learning_rate=1e12, optimizer="sgd", epochs=5, seed=0)
    with pytest.raises(TrainingDiverged) as err, np.errstate(over="ignore", invalid="ignore"):
        train(net, images, labels, cfg)
    assert "epoch" in err.value.state


def test_train_empty_dataset():
    net = tiny_net()
    with pytest.raises(ValueError):
        train(net, np.zeros((0, 1, 8, 8)), np.zeros(0, dtype=int), TrainConfig())


def test_history_csv(tmp_path):
    net = build_default_network(seed=0, input_shape=(3, 16, 16))
    images, labels = toy_dataset(20)
    history = train(net, images, labels, TrainConfig(epochs=2, seed=0),
                    val_images=images[:5], val_labels=labels[:5])
    path = tmp_path / "history.csv"
    history.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert len(lines) == 3


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def test_predict_probabilities_normalized():
    net = tiny_net(seed=2)
    rng = np.random.default_rng(3)
    labels, probs = predict(net, rng.standard_normal((7, 1, 8, 8)))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert labels.shape == (7,)


def test_predict_tie_breaks_to_lowest_index():
    net = tiny_net()
    last = net.layers[-1]
    last.weight[...] = 0.0
    last.bias[...] = 0.0
    labels, _ = predict(net, np.random.default_rng(0).standard_normal((4, 1, 8, 8)))
    assert np.all(labels == 0)


def test_predict_batch_equals_per_sample():
    net = tiny_net(seed=4)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((5, 1, 8, 8))
    batch_labels, batch_probs = predict(net, x, batch_size=2)
    for i in range(5):
        li, pi = predict(net, x[i : i + 1])
        assert li[0] == batch_labels[i]
        np.testing.assert_allclose(pi[0], batch_probs[i], atol=1e-12)


def test_softmax_shift_invariance():
    logits = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
    np.testing.assert_allclose(
        cnn._softmax(logits), cnn._softmax(logits + 100.0), atol=1e-12
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    net = build_default_network(seed=11)
    net.epoch = 4
    path = tmp_path / "model.ckpt"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.epoch == 4
    assert back.seed == 11
    for p1, p2 in zip(net.params, back.params):
        np.testing.assert_array_equal(p1.astype(np.float32), p2)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 64, 64))
    np.testing.assert_allclose(forward(net, x), forward(back, x), atol=1e-12)


def test_checkpoint_bytes_deterministic(tmp_path):
    net = build_default_network(seed=3)
    save_checkpoint(net, tmp_path / "a.ckpt")
    save_checkpoint(net, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
