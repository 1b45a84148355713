"""Experiment configuration: dataclasses plus a YAML round trip."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import uncertainty as unc
from .attacks import FAMILIES
from .datasets import (
    OOD_EVAL,
    OOD_TRAIN,
    Dataset,
    default_means,
    make_gaussian_classes,
    make_ring_ood,
)
from .exceptions import ConfigError

DNN = "DNN"
MCDP = "MCDP"
PN = "PN"
PN_ADV = "PN-ADV"
KINDS = (DNN, MCDP, PN, PN_ADV)

WHITEBOX = "whitebox"
BLACKBOX = "blackbox"
EVADE_WHITEBOX = "evade-whitebox"
EVADE_BLACKBOX = "evade-blackbox"
THREAT_MODELS = (WHITEBOX, BLACKBOX, EVADE_WHITEBOX, EVADE_BLACKBOX)

DEFAULT_MEASURES = {
    DNN: unc.ENTROPY,
    MCDP: unc.MUTUAL_INFORMATION,
    PN: unc.MUTUAL_INFORMATION,
    PN_ADV: unc.MUTUAL_INFORMATION,
}

DEFAULT_PARAMS = {
    DNN: {"learning_rate": 0.01, "epochs": 30, "cycle_epochs": 20, "dropout_keep": 0.5},
    MCDP: {"n_samples": 100, "attack_samples": 10},
    PN: {"learning_rate": 0.005, "epochs": 30, "cycle_epochs": 20, "dropout_keep": 0.9,
         "max_grad_norm": 5.0},
    PN_ADV: {"learning_rate": 0.005, "epochs": 30, "cycle_epochs": 20, "dropout_keep": 0.9,
             "max_grad_norm": 5.0, "adversarial": True},
}


@dataclass
class DatasetConfig:
    """Three Gaussian classes on a 2-D plane embedded in a higher-dimensional box.

    The first ``manifold_dims`` coordinates carry the class structure with
    spread ``scale``; the remaining ones are thin noise of spread
    ``off_manifold_scale``.  OOD rings live in the same plane.
    """

    n_classes: int = 3
    n_features: int = 32
    manifold_dims: int = 2
    class_radius: float = 0.5
    scale: float = 0.1
    off_manifold_scale: float = 0.02
    n_train_per_class: int = 500
    n_test_per_class: int = 100
    ood_train_radius: float = 0.9
    ood_eval_radius: float = 0.75
    ring_thickness: float = 0.05
    n_ood_train: int = 1500
    n_ood_eval: int = 300
    seed: int = 0

    def validate(self):
        if not 2 <= self.manifold_dims <= self.n_features:
            raise ConfigError("manifold_dims must lie in [2, n_features]")
        lo = (self.ood_eval_radius - self.ring_thickness, self.ood_eval_radius + self.ring_thickness)
        hi = (self.ood_train_radius - self.ring_thickness, self.ood_train_radius + self.ring_thickness)
        if lo[1] > hi[0] and hi[1] > lo[0]:
            raise ConfigError("OOD train and eval rings must not overlap")
        return self

    def scales(self):
        s = np.full(self.n_features, float(self.off_manifold_scale))
        s[: self.manifold_dims] = self.scale
        return s

    def build(self):
        """(train, test, ood_train, ood_eval) datasets, pure in the config."""
        self.validate()
        means = default_means(self.n_classes, self.n_features, self.class_radius)
        s = self.seed
        train = make_gaussian_classes(self.n_classes, self.n_features, means, self.scales(),
                                      self.n_train_per_class, seed=s, split="train")
        test = make_gaussian_classes(self.n_classes, self.n_features, means, self.scales(),
                                     self.n_test_per_class, seed=s + 1, split="test")
        ood_train = make_ring_ood(self.n_features, self.ood_train_radius, self.ring_thickness,
                                  self.n_ood_train, seed=s + 2, role=OOD_TRAIN,
                                  plane_dims=self.manifold_dims)
        ood_eval = make_ring_ood(self.n_features, self.ood_eval_radius, self.ring_thickness,
                                 self.n_ood_eval, seed=s + 3, role=OOD_EVAL, split="test",
                                 plane_dims=self.manifold_dims)
        return train, test, ood_train, ood_eval


@dataclass
class ModelSpec:
    kind: str
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    measure: str | None = None
    params: dict = field(default_factory=dict)
    base: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"{self.kind}: seeds must be a nonempty list without repeats")
        if self.measure is None:
            self.measure = DEFAULT_MEASURES[self.kind]
        if self.measure not in unc.KINDS:
            raise ConfigError(f"unknown uncertainty measure {self.measure!r}")
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(self.params or {})
        self.params = merged
        if self.kind == MCDP and self.base is None:
            self.base = DNN
        if self.kind != MCDP and self.base is not None:
            raise ConfigError("only MCDP entries take a base model")


@dataclass
class AttackGrid:
    families: list = field(default_factory=lambda: ["fgsm", "bim", "mim"])
    epsilons: list = field(default_factory=lambda: [0.02, 0.05, 0.1, 0.2, 0.4])
    iterations: list = field(default_factory=lambda: [10])
    momentum: float = 1.0
    step_size: float | None = None

    def __post_init__(self):
        self.families = [f.lower() for f in self.families]
        for f in self.families:
            if f not in FAMILIES:
                raise ConfigError(f"unknown attack family {f!r}")
        self.epsilons = [float(e) for e in self.epsilons]
        if any(e < 0 for e in self.epsilons) or self.epsilons != sorted(self.epsilons):
            raise ConfigError("epsilon grid must be nonnegative and ascending")
        self.iterations = [int(i) for i in self.iterations]
        if any(i < 1 for i in self.iterations):
            raise ConfigError("iteration counts must be positive")

    def points(self):
        """(family, epsilon, iterations) triples; FGSM always runs one step."""
        out = []
        for fam in self.families:
            its = [1] if fam == "fgsm" else self.iterations
            for eps in self.epsilons:
                for it in its:
                    out.append((fam, eps, it))
        return out


@dataclass
class EvadeGrid:
    family: str = "mim"
    epsilon: float = 0.4
    iterations: list = field(default_factory=lambda: [10, 25, 50, 100])
    momentum: float = 1.0
    step_size: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown attack family {self.family!r}")
        if self.epsilon < 0:
            raise ConfigError("evade epsilon must be nonnegative")
        self.iterations = [int(i) for i in self.iterations]
        if any(i < 1 for i in self.iterations):
            raise ConfigError("iteration counts must be positive")

    def points(self):
        return [(self.family, self.epsilon, it) for it in self.iterations]


def _default_roster():
    return [ModelSpec(k) for k in KINDS]


@dataclass
class ExperimentConfig:
    roster: list = field(default_factory=_default_roster)
    attacks: AttackGrid = field(default_factory=AttackGrid)
    evade: EvadeGrid = field(default_factory=EvadeGrid)
    threat_models: list = field(default_factory=lambda: list(THREAT_MODELS))
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    out_dir: str = "runs/default"
    histogram_bins: int = 30
    workers: int = 1

    def __post_init__(self):
        self.roster = [m if isinstance(m, ModelSpec) else ModelSpec(**m) for m in self.roster]
        if isinstance(self.attacks, dict):
            self.attacks = AttackGrid(**self.attacks)
        if isinstance(self.evade, dict):
            self.evade = EvadeGrid(**self.evade)
        if isinstance(self.dataset, dict):
            self.dataset = DatasetConfig(**self.dataset)
        self.dataset.validate()
        kinds = [m.kind for m in self.roster]
        if len(set(kinds)) != len(kinds):
            raise ConfigError("each model kind may appear once in the roster")
        for m in self.roster:
            if m.kind == MCDP:
                if m.base not in kinds:
                    raise ConfigError("an MCDP entry needs its base DNN in the roster")
                missing = set(m.seeds) - set(self.spec(m.base).seeds)
                if missing:
                    raise ConfigError(f"MCDP seeds {sorted(missing)} have no trained base DNN")
        for t in self.threat_models:
            if t not in THREAT_MODELS:
                raise ConfigError(f"unknown threat model {t!r}")
        if self.histogram_bins < 1 or self.workers < 1:
            raise ConfigError("histogram_bins and workers must be positive")

    def spec(self, kind):
        for m in self.roster:
            if m.kind == kind:
                return m
        raise ConfigError(f"{kind} is not in the roster")

    def with_seed(self, seed):
        """Copy restricted to a single model seed."""
        d = self.to_dict()
        for m in d["roster"]:
            m["seeds"] = [int(seed)]
        return ExperimentConfig.from_dict(d)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def loads(cls, text):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())


__all__ = [
    "AttackGrid",
    "Dataset",
    "DatasetConfig",
    "EvadeGrid",
    "ExperimentConfig",
    "ModelSpec",
]
