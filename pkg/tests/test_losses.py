import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from pnbench import autodiff as ad
from pnbench.datasets import make_gaussian_classes, make_ring_ood
from pnbench.exceptions import ConfigError, ContractError, DomainError, TrainingError
from pnbench.losses import (
    TargetDirichletSpec,
    TrainConfig,
    build_in_domain_target,
    cross_entropy_loss,
    dirichlet_kl,
    learning_rate_at,
    prior_network_loss,
    sample_adversarial_epsilon,
    train,
    write_loss_trace,
)
from pnbench.models import DIRICHLET, Network, dirichlet_predictive

from helpers import numeric_gradient, relative_error


def kl_value(t, m):
    return float(dirichlet_kl(np.asarray(t, float), ad.Tensor(np.asarray(m, float))).data)


def test_cross_entropy_examples():
    assert cross_entropy_loss(np.log(np.full((1, 10), 0.1)), [3]).item() == pytest.approx(math.log(10))
    one_hot = np.log(np.array([[1e-300, 1.0, 1e-300]]))
    assert cross_entropy_loss(one_hot, [1]).item() == 0.0
    with pytest.raises(ContractError):
        cross_entropy_loss(np.zeros((1, 3)), [3])


def test_cross_entropy_gradient():
    z = np.random.default_rng(0).normal(size=(4, 5))
    y = np.array([0, 4, 2, 2])

    def f(v):
        return cross_entropy_loss(ad.log_softmax(v), y)

    assert relative_error(ad.grad(f, z), numeric_gradient(f, [z])) < 1e-5


def test_kl_self_divergence():
    assert kl_value([3.0, 1.5, 0.2], [3.0, 1.5, 0.2]) == pytest.approx(0.0, abs=1e-12)


def test_kl_against_quadrature():
    def integrand(x):
        p = 1.0
        q = 6.0 * x * (1.0 - x)
        return p * math.log(p / q)

    oracle, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    assert kl_value([1.0, 1.0], [2.0, 2.0]) == pytest.approx(oracle, abs=1e-6)
    assert oracle == pytest.approx(2.0 - math.log(6.0), abs=1e-10)


def test_kl_gradient_finite_differences():
    target = np.array([10.0, 1.0, 1.0])

    def f(m):
        return ad.sum(dirichlet_kl(target, m))

    m = np.array([3.0, 1.0, 2.0])
    assert relative_error(ad.grad(f, m), numeric_gradient(f, [m])) < 1e-5


def test_kl_nonnegative_over_random_pairs():
    rng = np.random.default_rng(0)
    t = rng.uniform(0.1, 20.0, (1000, 4))
    m = rng.uniform(0.1, 20.0, (1000, 4))
    kl = dirichlet_kl(t, ad.Tensor(m)).data
    assert np.all(kl >= -1e-9)
    assert np.all(kl > 1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.05, 100.0), min_size=2, max_size=6))
def test_kl_zero_iff_equal(alpha):
    a = np.array(alpha)
    assert abs(kl_value(a, a)) < 1e-9
    assert kl_value(a, a * 1.5) > 0


def test_kl_domain_error():
    with pytest.raises(DomainError):
        kl_value([1.0, 1.0], [1.0, 0.0])
    with pytest.raises(DomainError):
        kl_value([0.0, 1.0], [1.0, 1.0])


def test_in_domain_target():
    spec = TargetDirichletSpec(0.01, 100.0)
    np.testing.assert_allclose(build_in_domain_target(0, 3, spec).alpha, [98.0, 1.0, 1.0], rtol=1e-15)
    flat = build_in_domain_target(2, 4, TargetDirichletSpec(0.25, 100.0)).alpha
    np.testing.assert_allclose(flat, [25.0] * 4, rtol=1e-15)
    t = build_in_domain_target(1, 3, spec)
    np.testing.assert_allclose(dirichlet_predictive(t).probs, [0.01, 0.98, 0.01], rtol=1e-15)


def test_invalid_target_spec():
    with pytest.raises(ConfigError):
        build_in_domain_target(0, 3, TargetDirichletSpec(0.5, 100.0))
    with pytest.raises(ConfigError):
        build_in_domain_target(0, 3, TargetDirichletSpec(0.01, 0.0))


def _constant_head(bias):
    k = len(bias)
    return Network((2, k), head=DIRICHLET, weights=[np.zeros((2, k))], biases=[np.log(bias)])


def test_pn_loss_zero_cases():
    x = np.random.default_rng(0).uniform(-1, 1, (5, 2))
    flat = _constant_head(np.ones(3))
    assert prior_network_loss(flat, x, np.zeros(5, int), x, ood_weight=1.0).data > 0
    ood_only = prior_network_loss(flat, x[:1], [0], x, TargetDirichletSpec(1 / 3, 3.0))
    assert ood_only.item() == 0.0
    sharp = _constant_head(np.array([98.0, 1.0, 1.0]))
    assert prior_network_loss(sharp, x, np.zeros(5, int), None, ood_weight=0.0).item() == pytest.approx(
        0.0, abs=1e-10)


def test_pn_loss_contracts():
    net = _constant_head(np.ones(3))
    with pytest.raises(ContractError):
        prior_network_loss(net, np.zeros((0, 2)), [], np.zeros((2, 2)))
    with pytest.raises(ContractError):
        prior_network_loss(net, np.zeros((2, 2)), [0, 1], None, ood_weight=1.0)


def test_one_cycle_schedule():
    cfg = TrainConfig(learning_rate=0.01, peak_multiplier=10.0, cycle_epochs=20, epochs=30, final_lr=1e-6)
    assert learning_rate_at(cfg, 0) == 0.01
    assert learning_rate_at(cfg, 10) == pytest.approx(0.1)
    assert learning_rate_at(cfg, 20) == pytest.approx(0.01)
    assert learning_rate_at(cfg, 30) == pytest.approx(1e-6)
    assert learning_rate_at(cfg, 5) == pytest.approx(0.055)
    assert learning_rate_at(cfg, 15) == pytest.approx(0.055)
    assert learning_rate_at(cfg, 25) == pytest.approx(0.01 + (1e-6 - 0.01) * 0.5)
    assert learning_rate_at(TrainConfig(schedule="constant"), 17) == 0.01


def test_epsilon_sampling():
    draws = sample_adversarial_epsilon(np.random.default_rng(0), 0.15, 0.05, size=10_000)
    assert np.all(draws >= 0)
    assert abs(draws.mean() - 0.15) < 3 * 0.05 / 100
    wide = sample_adversarial_epsilon(np.random.default_rng(1), 0.0, 1.0, size=1000)
    assert np.all(wide >= 0)


def test_config_validation():
    for bad in (dict(learning_rate=0), dict(cycle_epochs=40), dict(schedule="cosine"),
                dict(optimizer="nadam"), dict(max_grad_norm=0.0), dict(momentum=1.0)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()


def test_zero_epochs_leaves_model_unchanged():
    net = Network((2, 8, 3), seed=1)
    before = [p.copy() for p in net.parameters()]
    _, trace = train(net, np.zeros((4, 2)), [0, 1, 2, 0], TrainConfig(epochs=0, cycle_epochs=1))
    assert trace == []
    for a, b in zip(before, net.parameters()):
        assert np.array_equal(a, b)


def _two_blobs(seed, r=0.5):
    means = np.array([[-r, 0.0], [r, 0.0]])
    return make_gaussian_classes(2, 2, means, 0.08, 200, seed=seed)


def test_dnn_separable_accuracy():
    data = _two_blobs(0)
    net = Network((2, 32, 32, 2), dropout_keep=0.9, seed=0)
    train(net, data.inputs, data.labels, TrainConfig(epochs=10, cycle_epochs=6))
    acc = np.mean(np.argmax(net.logits(data.inputs).data, axis=1) == data.labels)
    assert acc >= 0.99


def test_pn_concentration_direction():
    data = _two_blobs(1, r=0.35)
    ood = make_ring_ood(2, 0.9, 0.05, 400, seed=2)
    net = Network((2, 32, 32, 2), head=DIRICHLET, dropout_keep=0.9, seed=0)
    cfg = TrainConfig(learning_rate=0.005, epochs=40, cycle_epochs=26, max_grad_norm=5.0)
    train(net, data.inputs, data.labels, cfg, ood.inputs)
    test = _two_blobs(3, r=0.35)
    ring = make_ring_ood(2, 0.75, 0.05, 200, seed=4)
    a_in = np.exp(net.logits(test.inputs).data).sum(axis=1).mean()
    a_out = np.exp(net.logits(ring.inputs).data).sum(axis=1).mean()
    assert a_in > a_out


def test_pn_loss_decreases_on_two_points():
    x = np.array([[-0.5, 0.2], [0.5, -0.2]])
    y = np.array([0, 1])
    ood = np.array([[0.0, 0.9], [0.0, -0.9]])
    net = Network((2, 16, 2), head=DIRICHLET, seed=0)
    cfg = TrainConfig(learning_rate=0.01, schedule="constant", epochs=50, batch_size=2)
    _, trace = train(net, x, y, cfg, ood)
    assert len(trace) == 50
    assert trace[-1]["loss"] < trace[0]["loss"]


def test_adversarial_training_runs_and_is_deterministic():
    data = _two_blobs(0)
    ood = make_ring_ood(2, 0.9, 0.05, 100, seed=2)
    cfg = TrainConfig(epochs=2, cycle_epochs=2, adversarial=True, max_grad_norm=5.0, learning_rate=0.005)
    runs = []
    for _ in range(2):
        net = Network((2, 8, 2), head=DIRICHLET, seed=0)
        runs.append(train(net, data.inputs, data.labels, cfg, ood.inputs)[1])
    assert runs[0] == runs[1]


def test_divergence_raises_training_error():
    data = _two_blobs(0)
    ood = make_ring_ood(2, 0.9, 0.05, 100, seed=2)
    net = Network((2, 16, 2), head=DIRICHLET, seed=0)
    cfg = TrainConfig(learning_rate=1e4, schedule="constant", epochs=5)
    with pytest.raises(TrainingError) as info, np.errstate(over="ignore"):
        train(net, data.inputs, data.labels, cfg, ood.inputs)
    assert info.value.epoch is not None


def test_loss_trace_csv(tmp_path):
    path = tmp_path / "trace.csv"
    write_loss_trace([{"epoch": 0, "split": "train", "loss": 0.5, "lr": 0.01}], path)
    assert path.read_text() == "epoch,split,loss,lr\n0,train,0.5,0.01\n"
