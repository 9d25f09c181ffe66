import math

import numpy as np
import pytest

from helpers import random_sample
from mgnflow.autodiff import Tensor
from mgnflow.errors import InvalidConfig
from mgnflow.graph import GraphSample, detrend_fit
from mgnflow.model import ModelConfig, init_params
from mgnflow.training import (AdamState, TrainConfig, adam_step, clip_by_global_norm, cosine_lr,
                              dataset_std, inject_noise, sequence_loss, split_validation,
                              train_mgn_lstm, train_mgn_noise)


def scalar(v=0.0):
    return {"p": Tensor(np.array([v]), requires_grad=True)}


def test_adam_zero_gradient_no_decay():
    p = scalar(0.7)
    adam = AdamState()
    for _ in range(5):
        adam_step(p, {"p": np.zeros(1)}, adam, 0.1)
    assert p["p"].value[0] == 0.7


def test_adam_first_step():
    p = scalar(0.0)
    adam_step(p, {"p": np.ones(1)}, AdamState(), 0.1)
    assert p["p"].value[0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_consistent_direction():
    p = scalar(0.0)
    adam = AdamState()
    values = []
    for _ in range(3):
        adam_step(p, {"p": np.array([2.0])}, adam, 0.01)
        values.append(p["p"].value[0])
    assert values[0] < 0 and np.all(np.diff(values) < 0)


def test_decoupled_weight_decay():
    p = scalar(2.0)
    adam_step(p, {"p": np.zeros(1)}, AdamState(), 0.1, weight_decay=0.5)
    assert p["p"].value[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, rel=1e-14)


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1e-3, 1e-6) == 1e-3
    assert cosine_lr(50, 100, 1e-3, 1e-6) == pytest.approx((1e-3 + 1e-6) / 2, rel=1e-12)
    assert cosine_lr(99, 100, 1e-3, 1e-6) == pytest.approx(1e-6, abs=3e-7)
    lrs = [cosine_lr(e, 40, 1e-3, 1e-6) for e in range(40)]
    assert np.all(np.diff(lrs) < 0)


def test_clipping():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(g, 1.0) == 5.0
    np.testing.assert_allclose([g["a"][0], g["b"][0]], [0.6, 0.8])
    g = {"a": np.array([0.3])}
    clip_by_global_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_presets():
    assert (TrainConfig.preset("text").lr, TrainConfig.preset("text").lr_floor) == (1e-4, 1e-6)
    assert TrainConfig().lr == 1e-3
    with pytest.raises(InvalidConfig):
        TrainConfig.preset("fast")
    with pytest.raises(InvalidConfig):
        TrainConfig(epochs=0)


def test_noise_std_over_many_draws():
    rng = np.random.default_rng(0)
    values = rng.uniform(0, 0.8, 100_000)
    s = values.std()
    noisy = inject_noise(values, 0.05 * s, np.random.default_rng(1))
    assert abs((noisy - values).std() / (0.05 * s) - 1) < 0.05
    np.testing.assert_array_equal(inject_noise(values, 0.0, rng), values)


def test_dataset_std_pools_everything():
    a = random_sample(np.random.default_rng(0), 4, 2)
    b = random_sample(np.random.default_rng(1), 5, 2)
    assert dataset_std([a, b]) == np.concatenate([a.dynamic.ravel(), b.dynamic.ravel()]).std()


def test_validation_split():
    items = list(range(10))
    assert split_validation(items, 0.1) == (items[:9], [9])
    assert split_validation(items[:5], 0.1) == (items[:5], [])


# ------------------------------------------------------------------ sequence loss

def _setup(seed=0, n=4, n_T=2):
    rng = np.random.default_rng(seed)
    samples = [random_sample(rng, n, n_T) for _ in range(3)]
    return samples, detrend_fit(samples), init_params(ModelConfig(latent=4, layers=1,
                                                                  cheb_order=2), seed)


def _frozen(sample, values):
    """Same graph, dynamic channel replaced."""
    return GraphSample(sample.n_cells, sample.edges, sample.node_static, values,
                       sample.edge_features, sample.features, sample.variable)


def test_loss_hand_arithmetic():
    samples, stats, p = _setup(n=2, n_T=1)
    for name in ("dec.l2.W", "dec.l2.b"):
        p[name].value[:] = 0.0
    # zero decoder predicts 0 in normalized space; normalized targets 3 and 4
    mean, std = stats.mean[1, 8], stats.std[1, 8]
    s = samples[0]
    dyn = s.dynamic.copy()
    dyn[1] = [mean + 3 * std, mean + 4 * std]
    loss = sequence_loss(p, [_frozen(s, dyn)], stats).item()
    assert loss == pytest.approx(math.sqrt(12.5), rel=1e-12)


def test_perfect_model_zero_loss():
    samples, stats, p = _setup(n=3, n_T=2)
    for name in ("dec.l2.W", "dec.l2.b"):
        p[name].value[:] = 0.0
    s = samples[0]
    dyn = np.vstack([s.dynamic[0], np.tile(stats.mean[1:, 8][:, None], (1, 3))])
    assert sequence_loss(p, [_frozen(s, dyn)], stats).item() == 0.0


def test_duplicated_batch_same_loss():
    samples, stats, p = _setup()
    one = sequence_loss(p, [samples[0]], stats).item()
    two = sequence_loss(p, [samples[0], samples[0]], stats).item()
    assert two == pytest.approx(one, rel=1e-12)


def test_loss_nonnegative_and_noise_changes_inputs():
    samples, stats, p = _setup()
    clean = sequence_loss(p, samples, stats, teacher_forcing=True).item()
    a = sequence_loss(p, samples, stats, True, 0.05, np.random.default_rng([0, 0, 0, 1])).item()
    b = sequence_loss(p, samples, stats, True, 0.05, np.random.default_rng([0, 1, 0, 1])).item()
    assert clean >= 0 and a != clean and a != b


# ------------------------------------------------------------------ loops

def test_smoke_one_sample_two_epochs():
    rng = np.random.default_rng(0)
    sample = random_sample(rng, 5, 3)
    other = random_sample(rng, 5, 3)
    stats = detrend_fit([sample, other])
    cfg = TrainConfig(epochs=2, batch_size=1, val_fraction=0.0)
    res = train_mgn_lstm([sample], ModelConfig(latent=4, layers=1, cheb_order=2), cfg, stats)
    assert len(res.history) == 2 and np.all(np.isfinite(res.losses))
    assert res.best_epoch == 1


def test_training_is_deterministic_and_learns():
    rng = np.random.default_rng(1)
    samples = [random_sample(rng, 6, 3, p=0.5, sample_id=str(k)) for k in range(5)]
    mc = ModelConfig(latent=6, layers=1, cheb_order=2)
    cfg = TrainConfig(epochs=30, batch_size=2, seed=3, val_fraction=0.2)
    a = train_mgn_lstm(samples, mc, cfg)
    b = train_mgn_lstm(samples, mc, cfg)
    np.testing.assert_array_equal(a.losses, b.losses)
    assert a.losses[-1] < a.losses[0]
    assert a.val_ids == ["4"] and len(a.train_ids) == 4
    for (_, x), (_, y) in zip(a.params.items(), b.params.items()):
        np.testing.assert_array_equal(x.value, y.value)


def test_noise_baseline_reports_std():
    rng = np.random.default_rng(2)
    samples = [random_sample(rng, 6, 3) for _ in range(3)]
    res = train_mgn_noise(samples, ModelConfig(latent=4, layers=1, cheb_order=2),
                          TrainConfig(epochs=2, val_fraction=0.0))
    assert res.noise_std == pytest.approx(0.05 * dataset_std(samples), rel=1e-12)
    assert res.params.config.variant == "mgn" and "lstm.W" not in res.params.tensors


def test_zero_gradient_parameter_never_moves():
    samples, stats, p = _setup()
    frozen = p["dec.l2.b"].value.copy()
    adam = AdamState()
    for _ in range(3):
        grads = {k: np.ones_like(t.value) for k, t in p.items()}
        grads["dec.l2.b"] = np.zeros_like(frozen)
        adam_step(p, grads, adam, 0.01)
    np.testing.assert_array_equal(p["dec.l2.b"].value, frozen)
