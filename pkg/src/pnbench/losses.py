"""Training objectives, learning-rate schedule and the mini-batch trainer."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import special
from .exceptions import ConfigError, ContractError, DomainError, NumericError, TrainingError
from .models import DIRICHLET, SOFTMAX, DirichletParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TargetDirichletSpec:
    """Mean/precision recipe for the in-domain target Dirichlet."""

    smoothing: float = 0.01
    precision: float = 100.0

    def validate(self, n_classes):
        if self.smoothing < 0 or self.smoothing * (n_classes - 1) >= 1:
            raise ConfigError(f"smoothing {self.smoothing} leaves no mass for the label with K={n_classes}")
        if self.precision <= 0:
            raise ConfigError("target precision must be positive")


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    schedule: str = "one-cycle"
    peak_multiplier: float = 10.0
    cycle_epochs: int = 20
    epochs: int = 30
    final_lr: float = 1e-6
    batch_size: int = 64
    momentum: float = 0.9
    optimizer: str = "sgd"
    max_grad_norm: float | None = None
    ood_weight: float = 1.0
    adversarial: bool = False
    adv_eps_mean: float = 0.15
    adv_eps_std: float = 0.05
    seed: int = 0

    def validate(self):
        if self.learning_rate <= 0 or self.final_lr <= 0 or self.peak_multiplier <= 0:
            raise ConfigError("learning rates must be positive")
        if self.schedule not in ("constant", "one-cycle"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.schedule == "one-cycle" and not 0 < self.cycle_epochs <= max(self.epochs, 1):
            raise ConfigError("cycle_epochs must lie in (0, epochs]")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ConfigError("max_grad_norm must be positive")
        if self.ood_weight < 0 or self.adv_eps_std < 0:
            raise ConfigError("ood_weight and adv_eps_std must be nonnegative")
        return self

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- objectives


def cross_entropy_loss(log_probs, labels):
    """Mean negative log-likelihood of ``labels`` under ``log_probs`` (N, K)."""
    log_probs = ad.as_tensor(log_probs)
    labels = np.atleast_1d(np.asarray(labels))
    k = log_probs.shape[-1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise ContractError(f"labels must lie in [0, {k})")
    if log_probs.ndim == 1:
        log_probs = ad.reshape(log_probs, (1, k))
    return -ad.mean(ad.take_along(log_probs, labels))


def _target_alpha(target):
    t = target.alpha if isinstance(target, DirichletParams) else np.asarray(target, dtype=np.float64)
    if np.any(~(t > 0)):
        raise DomainError("target concentrations must be strictly positive")
    return t


def dirichlet_kl(target, model_alpha):
    """KL[Dir(target) || Dir(model)] per row, differentiable in ``model_alpha``."""
    t = _target_alpha(target)
    m = ad.as_tensor(model_alpha.alpha if isinstance(model_alpha, DirichletParams) else model_alpha)
    if np.any(~(m.data > 0)):
        raise DomainError("model concentrations must be strictly positive")
    t0 = t.sum(axis=-1, keepdims=True)
    const = special.lgamma(t0[..., 0]) - special.lgamma(t).sum(axis=-1)
    dig = special.digamma(t) - special.digamma(t0)
    m0 = ad.sum(m, axis=-1)
    return (const - ad.lgamma(m0) + ad.sum(ad.lgamma(m), axis=-1)
            + ad.sum((t - m) * dig, axis=-1))


def build_in_domain_target(label, n_classes, spec=TargetDirichletSpec()):
    """Sharp Dirichlet centred on ``label``; vectorised over an array of labels."""
    spec.validate(n_classes)
    labels = np.asarray(label)
    mean = np.full(labels.shape + (n_classes,), spec.smoothing)
    np.put_along_axis(mean, labels[..., None], 1.0 - (n_classes - 1) * spec.smoothing, axis=-1)
    return DirichletParams(spec.precision * mean)


def flat_target(n_rows, n_classes):
    return np.ones((n_rows, n_classes))


def prior_network_loss(network, x_in, y_in, x_out, spec=TargetDirichletSpec(), ood_weight=1.0,
                       masks_in=None, masks_out=None, params=None):
    """Mean in-domain KL to the sharp targets plus weighted mean OOD KL to Dir(1,...,1)."""
    x_in = np.asarray(x_in)
    if x_in.shape[0] == 0:
        raise ContractError("in-domain batch is empty")
    k = network.n_classes
    alpha_in = network.concentrations(network.logits(x_in, masks_in, params))
    loss = ad.mean(dirichlet_kl(build_in_domain_target(y_in, k, spec), alpha_in))
    if ood_weight > 0:
        if x_out is None or np.shape(x_out)[0] == 0:
            raise ContractError("OOD batch is empty but ood_weight > 0")
        alpha_out = network.concentrations(network.logits(x_out, masks_out, params))
        loss = loss + ood_weight * ad.mean(dirichlet_kl(flat_target(np.shape(x_out)[0], k), alpha_out))
    return loss


# ---------------------------------------------------------------- schedule


def learning_rate_at(config, epoch):
    """Learning rate at a (fractional) epoch.

    One-cycle: linear ramp from the base rate to ``peak_multiplier`` times it
    over half the cycle, back down over the other half, then linear decay to
    ``final_lr`` at ``epochs``.
    """
    lr0 = config.learning_rate
    if config.schedule == "constant":
        return lr0
    peak = lr0 * config.peak_multiplier
    cycle = config.cycle_epochs
    half = cycle / 2.0
    if epoch <= half:
        return lr0 + (peak - lr0) * epoch / half
    if epoch <= cycle:
        return peak - (peak - lr0) * (epoch - half) / half
    tail = config.epochs - cycle
    frac = min((epoch - cycle) / tail, 1.0) if tail > 0 else 1.0
    return lr0 + (config.final_lr - lr0) * frac


def sample_adversarial_epsilon(rng, mean, std, size=None):
    """Normal(mean, std) draws truncated at zero by rejection."""
    out = np.asarray(rng.normal(mean, std, size=size), dtype=np.float64)
    bad = out < 0
    while np.any(bad):
        out[bad] = rng.normal(mean, std, size=int(bad.sum()))
        bad = out < 0
    return out if size is not None else float(out)


class SGDMomentum:
    def __init__(self, params, momentum=0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads, lr):
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v -= lr * g
            p += v


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


OPTIMIZERS = ("sgd", "adam")


def make_optimizer(config, params):
    if config.optimizer == "adam":
        return Adam(params, beta1=config.momentum)
    return SGDMomentum(params, config.momentum)


# ---------------------------------------------------------------- trainer


def _clip_global(grads, max_norm):
    """Rescale ``grads`` jointly so their global L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm <= max_norm:
        return grads
    return [g * (max_norm / norm) for g in grads]


def _fgsm_copies(network, x, eps, box):
    """Untargeted FGSM on the predictive distribution, for adversarial OOD data."""
    from .attacks import AttackConfig, fgsm
    from .estimators import NetworkTarget

    cfg = AttackConfig(family="fgsm", epsilon=eps, clip=box)
    return fgsm(NetworkTarget(network), x, cfg).x_final


def train(network, X, y, config=None, X_ood=None, spec=TargetDirichletSpec(), box=(-1.0, 1.0)):
    """Fit ``network`` in place with the configured optimizer.

    Softmax heads minimise cross-entropy; Dirichlet heads minimise the prior
    network loss against ``X_ood`` (plus FGSM copies of each in-domain batch
    when ``config.adversarial``).  Returns ``(network, trace)`` where
    ``trace`` is a list of per-epoch dicts with keys epoch, split, loss, lr.
    """
    config = (config or TrainConfig()).validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    n = X.shape[0]
    if n == 0:
        raise ContractError("training set is empty")
    if network.head == DIRICHLET:
        spec.validate(network.n_classes)
        if config.ood_weight > 0 and (X_ood is None or len(X_ood) == 0) and not config.adversarial:
            raise ContractError("prior network training needs OOD data when ood_weight > 0")
    rng = np.random.default_rng(config.seed)
    params = network.parameters()
    opt = make_optimizer(config, params)
    steps_per_epoch = int(np.ceil(n / config.batch_size))
    ood_order = None
    if X_ood is not None and len(X_ood):
        X_ood = np.asarray(X_ood, dtype=np.float64)
        ood_order = rng.permutation(len(X_ood))
    ood_pos = 0
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for step in range(steps_per_epoch):
            lr = learning_rate_at(config, epoch + step / steps_per_epoch)
            idx = order[step * config.batch_size:(step + 1) * config.batch_size]
            xb, yb = X[idx], y[idx]
            leaves = [ad.Tensor(p, requires_grad=True) for p in params]
            masks_in = network.sample_masks(rng, (len(idx),))
            try:
                if network.head == SOFTMAX:
                    loss = cross_entropy_loss(ad.log_softmax(network.logits(xb, masks_in, leaves)), yb)
                else:
                    parts = []
                    if ood_order is not None:
                        take = np.take(ood_order, range(ood_pos, ood_pos + len(idx)), mode="wrap")
                        ood_pos = (ood_pos + len(idx)) % len(ood_order)
                        parts.append(X_ood[take])
                    if config.adversarial:
                        eps = sample_adversarial_epsilon(rng, config.adv_eps_mean, config.adv_eps_std)
                        parts.append(_fgsm_copies(network, xb, eps, box))
                    xo = np.concatenate(parts) if parts else np.empty((0, X.shape[1]))
                    masks_out = network.sample_masks(rng, (len(xo),))
                    loss = prior_network_loss(network, xb, yb, xo, spec, config.ood_weight,
                                              masks_in, masks_out, leaves)
            except (NumericError, DomainError, FloatingPointError) as exc:
                raise TrainingError(f"training diverged: {exc}", epoch=epoch) from exc
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError("non-finite training loss", epoch=epoch)
            ad.backward(loss)
            opt.step(_clip_global([leaf.grad for leaf in leaves], config.max_grad_norm), lr)
            total += value * len(idx)
        trace.append({"epoch": epoch, "split": "train", "loss": total / n,
                      "lr": learning_rate_at(config, epoch)})
        logger.debug("epoch %d loss %.6f", epoch, total / n)
    return network, trace


def write_loss_trace(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "split", "loss", "lr"], lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({k: (repr(float(v)) if k in ("loss", "lr") else v) for k, v in row.items()})
