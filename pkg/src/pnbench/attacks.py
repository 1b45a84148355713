"""L-infinity FGSM, BIM and MIM attacks with naive and detection-evading losses.

All attacks run on a batch of inputs at once.  Losses are summed over rows;
since rows never interact, the input gradient of the sum is the stack of
per-row gradients.  Every loss here is *minimised*.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import AttackError, ConfigError
from .losses import dirichlet_kl
from .models import CategoricalDist, DirichletParams

logger = logging.getLogger(__name__)

FAMILIES = ("fgsm", "bim", "mim")
UNTARGETED = "untargeted"
TARGETED = "targeted"
EVADE = "evade"
MODES = (UNTARGETED, TARGETED, EVADE)

_BALL_TOL = 1e-9


@dataclass
class AttackConfig:
    """One attack setting.

    ``iterations`` defaults to 1 for FGSM and 10 otherwise; ``step_size``
    defaults to ``epsilon / iterations``.  ``target`` is the class (scalar or
    per-row array) for targeted mode and ignored otherwise.
    """

    family: str = "fgsm"
    epsilon: float = 0.1
    iterations: int | None = None
    step_size: float | None = None
    momentum: float = 1.0
    mode: str = UNTARGETED
    target: object = None
    clip: tuple = (-1.0, 1.0)
    early_stop: bool = False

    def __post_init__(self):
        self.family = self.family.lower()
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown attack family {self.family!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if self.iterations is None:
            self.iterations = 1 if self.family == "fgsm" else 10
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.momentum < 0:
            raise ConfigError("momentum must be nonnegative")
        lo, hi = self.clip
        if not lo < hi:
            raise ConfigError(f"clip box needs lo < hi, got {self.clip}")
        if self.mode == TARGETED and self.target is None:
            raise ConfigError("targeted mode needs a target class")

    @property
    def step(self):
        if self.step_size is not None:
            if self.step_size <= 0:
                raise ConfigError("step_size must be positive")
            return float(self.step_size)
        return self.epsilon / self.iterations


@dataclass
class AttackOutcome:
    """Batch result of the generation process.

    ``x_final`` always holds the last iterate; rows with ``success`` False
    are the failure marker and :attr:`x_adv` reports them as None.
    """

    x_clean: np.ndarray
    x_final: np.ndarray
    success: np.ndarray
    target_class: np.ndarray
    final_loss: np.ndarray
    iterations: int
    config: AttackConfig = field(repr=False)

    def __post_init__(self):
        self.success = np.asarray(self.success, dtype=bool)
        self.check_invariants()

    def check_invariants(self):
        lo, hi = self.config.clip
        dev = np.abs(self.x_final - self.x_clean).max(initial=0.0)
        if dev > self.config.epsilon + _BALL_TOL:
            raise AttackError(f"iterate left the epsilon ball: {dev} > {self.config.epsilon}")
        if np.any(self.x_final < lo) or np.any(self.x_final > hi):
            raise AttackError("iterate left the clip box")

    @property
    def x_adv(self):
        return [x if ok else None for x, ok in zip(self.x_final, self.success)]

    def __len__(self):
        return len(self.success)


# ---------------------------------------------------------------- losses


def untargeted_loss(log_probs, cls):
    """+ln P(cls | x), one value per row."""
    return ad.take_along(ad.as_tensor(log_probs), np.asarray(cls))


def targeted_loss(log_probs, cls):
    """-ln P(cls | x), one value per row."""
    return -ad.take_along(ad.as_tensor(log_probs), np.asarray(cls))


def _swap_top(values, t):
    values = np.array(values, dtype=np.float64, copy=True)
    t = np.broadcast_to(np.asarray(t), values.shape[:-1])
    top = np.argmax(values, axis=-1)
    a = np.take_along_axis(values, top[..., None], axis=-1)
    b = np.take_along_axis(values, t[..., None], axis=-1)
    np.put_along_axis(values, top[..., None], b, axis=-1)
    np.put_along_axis(values, t[..., None], a, axis=-1)
    return values


def permute_categorical_target(p, t):
    """Swap the probability of the argmax class with that of class ``t``."""
    probs = p.probs if isinstance(p, CategoricalDist) else p
    return CategoricalDist(_swap_top(probs, t))


def permute_dirichlet_target(d, t):
    alpha = d.alpha if isinstance(d, DirichletParams) else d
    return DirichletParams(_swap_top(alpha, t))


def evade_loss_categorical(log_probs, target):
    """KL(target || P(y|x)) per row."""
    p_t = target.probs if isinstance(target, CategoricalDist) else np.asarray(target, dtype=np.float64)
    safe = np.where(p_t > 0, p_t, 1.0)
    const = np.sum(np.where(p_t > 0, p_t * np.log(safe), 0.0), axis=-1)
    return const - ad.sum(ad.as_tensor(log_probs) * p_t, axis=-1)


def evade_loss_dirichlet(alpha, target):
    """KL(Dir(target) || Dir(alpha)) per row."""
    return dirichlet_kl(target, alpha)


def second_most_likely(probs):
    return np.argsort(-np.asarray(probs), axis=-1, kind="stable")[..., 1]


# ---------------------------------------------------------------- objective


class _Objective:
    """Per-row loss and success predicate, fixed from the clean input."""

    def __init__(self, target, x_clean, cfg):
        self.target = target
        self.mode = cfg.mode
        clean_probs = target.predict_proba(x_clean)
        self.clean_class = np.argmax(clean_probs, axis=-1)
        n = len(x_clean)
        if cfg.mode == UNTARGETED:
            self.cls = self.clean_class
        elif cfg.mode == TARGETED:
            self.cls = np.broadcast_to(np.asarray(cfg.target, dtype=np.intp), (n,)).copy()
        else:
            self.cls = second_most_likely(clean_probs)
            if target.is_dirichlet:
                alpha = target.concentration(x_clean).data
                self.frozen = permute_dirichlet_target(alpha, self.cls)
            else:
                self.frozen = permute_categorical_target(clean_probs, self.cls)

    def rows(self, x):
        if self.mode == UNTARGETED:
            return untargeted_loss(self.target.log_predictive(x), self.cls)
        if self.mode == TARGETED:
            return targeted_loss(self.target.log_predictive(x), self.cls)
        if self.target.is_dirichlet:
            return evade_loss_dirichlet(self.target.concentration(x), self.frozen)
        return evade_loss_categorical(self.target.log_predictive(x), self.frozen)

    def gradient(self, x):
        leaf = ad.Tensor(x, requires_grad=True)
        rows = self.rows(leaf)
        ad.backward(ad.sum(rows))
        g = leaf.grad if leaf.grad is not None else np.zeros_like(x)
        if not np.all(np.isfinite(g)):
            raise AttackError("non-finite input gradient")
        return g, rows.data

    def succeeded(self, x):
        pred = np.argmax(self.target.predict_proba(x), axis=-1)
        if self.mode == UNTARGETED:
            return pred != self.clean_class
        return pred == self.cls


def success_predicate(model, x_clean, x_adv, mode=UNTARGETED, target=None):
    """Attacker-side success of ``x_adv`` relative to ``x_clean``.

    Untargeted: the predicted class changed.  Targeted: the prediction is
    ``target``.  Evade: the prediction is the clean second most likely class.
    """
    from .estimators import as_attack_target

    tgt = as_attack_target(model)
    x_clean = np.atleast_2d(np.asarray(x_clean, dtype=np.float64))
    x_adv = np.atleast_2d(np.asarray(x_adv, dtype=np.float64))
    clean_probs = tgt.predict_proba(x_clean)
    pred = np.argmax(tgt.predict_proba(x_adv), axis=-1)
    if mode == UNTARGETED:
        return pred != np.argmax(clean_probs, axis=-1)
    if mode == TARGETED:
        t = np.broadcast_to(np.asarray(target), pred.shape)
        degenerate = np.argmax(clean_probs, axis=-1) == t
        if np.any(degenerate & (pred == t)):
            logger.info("%d targeted rows already predict the target class", int(np.sum(degenerate)))
        return pred == t
    if mode == EVADE:
        t = second_most_likely(clean_probs) if target is None else np.broadcast_to(np.asarray(target), pred.shape)
        return pred == t
    raise ConfigError(f"unknown attack mode {mode!r}")


# ---------------------------------------------------------------- generators


def _project(x, x0, eps, box):
    return np.clip(np.clip(x, x0 - eps, x0 + eps), box[0], box[1])


def _run(model, x, cfg, direction_fn):
    from .estimators import as_attack_target

    target = as_attack_target(model)
    x0 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    obj = _Objective(target, x0, cfg)
    step = cfg.epsilon if cfg.family == "fgsm" else cfg.step
    xi = x0.copy()
    state = {}
    active = np.ones(len(x0), dtype=bool)
    used = 0
    for _ in range(cfg.iterations):
        g, _ = obj.gradient(xi)
        direction = direction_fn(g, state)
        x_next = _project(xi - step * direction, x0, cfg.epsilon, cfg.clip)
        xi = np.where(active[:, None], x_next, xi)
        used += 1
        if np.abs(xi - x0).max(initial=0.0) > cfg.epsilon + _BALL_TOL:
            raise AttackError("projection failed to keep the iterate in the epsilon ball")
        if cfg.early_stop:
            active &= ~obj.succeeded(xi)
            if not active.any():
                break
    final_loss = obj.rows(ad.Tensor(xi)).data
    return AttackOutcome(x0, xi, obj.succeeded(xi), obj.cls, final_loss, used, cfg)


def _sign(g, state):
    return np.sign(g)


def fgsm(model, x, cfg):
    """One signed-gradient step of size epsilon, clipped to the box."""
    cfg = _with(cfg, "fgsm", iterations=1)
    return _run(model, x, cfg, _sign)


def bim(model, x, cfg):
    """Iterated signed steps, projected onto the epsilon ball and box each step."""
    return _run(model, x, _with(cfg, "bim"), _sign)


def mim(model, x, cfg):
    """BIM with an L1-normalised momentum accumulator."""
    mu = cfg.momentum

    def direction(g, state):
        norm = np.abs(g).sum(axis=-1, keepdims=True)
        normed = np.where(norm > 0, g / np.where(norm > 0, norm, 1.0), g)
        acc = state.get("g")
        state["g"] = normed if acc is None else mu * acc + normed
        return np.sign(state["g"])

    return _run(model, x, _with(cfg, "mim"), direction)


def _with(cfg, family, **overrides):
    if cfg.family == family and all(getattr(cfg, k) == v for k, v in overrides.items()):
        return cfg
    values = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    values.update(family=family, **overrides)
    return AttackConfig(**values)


def attack(model, x, cfg):
    return {"fgsm": fgsm, "bim": bim, "mim": mim}[cfg.family](model, x, cfg)
