"""Dense leaky-ReLU networks with a softmax or Dirichlet-concentration head.

The :class:`Network` holds raw parameters and the forward pass.  Prediction
helpers turn its logits into a :class:`CategoricalDist`, an
:class:`EnsemblePrediction` (Monte-Carlo dropout) or :class:`DirichletParams`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import (
    ContractError,
    CorruptFileError,
    NumericError,
    ShapeError,
    VersionError,
)

SOFTMAX = "softmax"
DIRICHLET = "dirichlet"
HEADS = (SOFTMAX, DIRICHLET)
CONCENTRATIONS = ("exp", "softplus")

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class CategoricalDist:
    """Class probabilities; the last axis indexes the K classes."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim == 0:
            raise ContractError("probs must have a class axis")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > _NORM_TOL):
            raise ContractError("probs must be nonnegative and sum to one")
        object.__setattr__(self, "probs", p)

    @property
    def n_classes(self):
        return self.probs.shape[-1]

    def argmax(self):
        return np.argmax(self.probs, axis=-1)


@dataclass(frozen=True)
class DirichletParams:
    """Dirichlet concentrations; the last axis indexes the K classes."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.ndim == 0:
            raise ContractError("alpha must have a class axis")
        if np.any(~(a > 0)) or not np.all(np.isfinite(a)):
            raise ContractError("Dirichlet concentrations must be finite and strictly positive")
        object.__setattr__(self, "alpha", a)

    @property
    def alpha0(self):
        return self.alpha.sum(axis=-1)

    @property
    def n_classes(self):
        return self.alpha.shape[-1]


@dataclass(frozen=True)
class EnsemblePrediction:
    """M member distributions (axis 0) and their arithmetic mean."""

    members: np.ndarray
    expected: CategoricalDist = field(default=None)

    def __post_init__(self):
        m = np.asarray(self.members, dtype=np.float64)
        if m.ndim < 2 or m.shape[0] == 0:
            raise ContractError("an ensemble needs at least one member")
        object.__setattr__(self, "members", m)
        if self.expected is None:
            object.__setattr__(self, "expected", CategoricalDist(m.mean(axis=0)))

    @property
    def n_members(self):
        return self.members.shape[0]


def glorot_uniform(fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Network:
    """Multilayer perceptron producing K logits.

    ``layer_sizes`` lists every width from the input to the K outputs, so
    ``(2, 64, 64, 3)`` is a two-hidden-layer net on 2-D inputs.  Hidden
    layers use leaky ReLU followed by inverted dropout when active.
    """

    def __init__(self, layer_sizes, leaky_slope=0.2, dropout_keep=1.0, head=SOFTMAX,
                 concentration="exp", seed=0, weights=None, biases=None):
        layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
            raise ContractError(f"layer_sizes must list at least two positive widths, got {layer_sizes}")
        if not 0 < dropout_keep <= 1:
            raise ContractError(f"dropout_keep must lie in (0, 1], got {dropout_keep}")
        if head not in HEADS:
            raise ContractError(f"unknown head {head!r}")
        if concentration not in CONCENTRATIONS:
            raise ContractError(f"unknown concentration map {concentration!r}")
        self.layer_sizes = layer_sizes
        self.leaky_slope = float(leaky_slope)
        self.dropout_keep = float(dropout_keep)
        self.head = head
        self.concentration = concentration
        self.seed = int(seed)
        if weights is None:
            rng = np.random.default_rng(self.seed)
            weights = [glorot_uniform(i, o, rng) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
            biases = [np.zeros(o) for o in layer_sizes[1:]]
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (layer_sizes[k], layer_sizes[k + 1]) or b.shape != (layer_sizes[k + 1],):
                raise ShapeError(f"layer {k}", w.shape, b.shape)

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_classes(self):
        return self.layer_sizes[-1]

    @property
    def hidden_sizes(self):
        return self.layer_sizes[1:-1]

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_parameters(self, params):
        params = list(params)
        self.weights = [np.array(p, dtype=np.float64) for p in params[0::2]]
        self.biases = [np.array(p, dtype=np.float64) for p in params[1::2]]

    def copy(self):
        return Network(self.layer_sizes, self.leaky_slope, self.dropout_keep, self.head,
                       self.concentration, self.seed,
                       [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def sample_masks(self, rng, batch_shape=(1,)):
        """One {0,1} dropout mask per hidden layer."""
        return [(rng.random(tuple(batch_shape) + (n,)) < self.dropout_keep).astype(np.float64)
                for n in self.hidden_sizes]

    def check_input(self, x):
        x = np.asarray(x.data if isinstance(x, ad.Tensor) else x)
        if x.ndim == 0 or x.shape[-1] != self.n_inputs:
            raise ShapeError("network input", x.shape, (self.n_inputs,))

    def logits(self, x, masks=None, params=None):
        """Forward pass returning a logits :class:`~pnbench.autodiff.Tensor`.

        ``masks`` is a list of per-hidden-layer dropout masks (broadcast
        against the activations) or None for the deterministic net.
        ``params`` substitutes graph leaves for the stored arrays.
        """
        self.check_input(x)
        h = ad.as_tensor(x)
        if params is None:
            params = self.parameters()
        n_layers = len(self.layer_sizes) - 1
        for k in range(n_layers):
            w, b = params[2 * k], params[2 * k + 1]
            h = ad.matmul(h, w) + b
            if not np.all(np.isfinite(h.data)):
                raise NumericError(f"non-finite activations in layer {k}")
            if k < n_layers - 1:
                h = ad.leaky_relu(h, self.leaky_slope)
                if masks is not None and self.dropout_keep < 1.0:
                    h = ad.dropout_mask_apply(h, masks[k], self.dropout_keep)
        return h

    def concentrations(self, logits):
        """Map logits to strictly positive Dirichlet concentrations."""
        if self.concentration == "exp":
            return ad.exp(logits)
        return ad.softplus(logits)

    def __repr__(self):
        return (f"Network(layer_sizes={self.layer_sizes}, head={self.head!r}, "
                f"dropout_keep={self.dropout_keep}, seed={self.seed})")


def predict_softmax(model, x, dropout_active=False, rng=None):
    if model.head != SOFTMAX:
        raise ContractError("predict_softmax needs a softmax-head network")
    masks = None
    if dropout_active:
        rng = np.random.default_rng(rng)
        masks = model.sample_masks(rng, np.shape(x)[:-1])
    return CategoricalDist(ad.softmax(model.logits(x, masks)).data)


def predict_mc_dropout(model, x, n_samples, seed=None):
    """Average the softmax output over ``n_samples`` dropout masks.

    Each member draws one mask set that is shared by every row of ``x``, so
    a member is one sampled sub-network.
    """
    if n_samples < 1:
        raise ContractError("n_samples must be positive")
    if model.head != SOFTMAX:
        raise ContractError("predict_mc_dropout needs a softmax-head network")
    rng = np.random.default_rng(seed)
    members = []
    for _ in range(n_samples):
        masks = model.sample_masks(rng)
        members.append(ad.softmax(model.logits(x, masks)).data)
    return EnsemblePrediction(np.stack(members))


def predict_prior_network(model, x):
    if model.head != DIRICHLET:
        raise ContractError("predict_prior_network needs a Dirichlet-head network")
    return DirichletParams(model.concentrations(model.logits(x)).data)


def dirichlet_predictive(d):
    return CategoricalDist(d.alpha / d.alpha0[..., None])


# ---------------------------------------------------------------- persistence

MAGIC = b"PNBW"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBddqI")


def save_model(model, path):
    """Write ``model`` as magic, version, hyperparameters, shape table, weights."""
    head = HEADS.index(model.head)
    conc = CONCENTRATIONS.index(model.concentration)
    n = len(model.layer_sizes)
    chunks = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, head, conc, model.leaky_slope, model.dropout_keep,
                     model.seed, n),
        struct.pack(f"<{n}I", *model.layer_sizes),
    ]
    for p in model.parameters():
        chunks.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise VersionError(f"{path}: not a pnbench weight file (bad magic)")
    if len(raw) < _HEADER.size:
        raise CorruptFileError(f"{path}: truncated header")
    _, version, head, conc, slope, keep, seed, n = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    offset = _HEADER.size
    if len(raw) < offset + 4 * n or head >= len(HEADS) or conc >= len(CONCENTRATIONS):
        raise CorruptFileError(f"{path}: truncated or invalid shape table")
    sizes = struct.unpack_from(f"<{n}I", raw, offset)
    offset += 4 * n
    expected = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:])) * 8
    if len(raw) - offset != expected:
        raise CorruptFileError(f"{path}: payload has {len(raw) - offset} bytes, expected {expected}")
    params = []
    for i, o in zip(sizes[:-1], sizes[1:]):
        for shape in ((i, o), (o,)):
            count = int(np.prod(shape))
            params.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy())
            offset += 8 * count
    return Network(sizes, slope, keep, HEADS[head], CONCENTRATIONS[conc], seed,
                   params[0::2], params[1::2])
