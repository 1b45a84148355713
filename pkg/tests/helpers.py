"""Shared oracles for the test suite."""

import numpy as np

from pnbench import autodiff as ad


def _stages(mask, idx):
    """Shape-preserving (3, 4) -> (3, 4) building blocks, one per primitive."""
    return {
        "add": lambda h, X, W, V: h + V,
        "sub": lambda h, X, W, V: h - X * 0.5,
        "mul": lambda h, X, W, V: h * X,
        "div": lambda h, X, W, V: h / (X * X + 1.5),
        "neg": lambda h, X, W, V: -h,
        "matmul": lambda h, X, W, V: ad.matmul(h, W) * 0.5,
        "exp": lambda h, X, W, V: ad.exp(ad.softmax(h) * 2.0),
        "log": lambda h, X, W, V: ad.log(ad.softmax(h) + 0.3) + h,
        "lgamma": lambda h, X, W, V: ad.lgamma(ad.softmax(h) * 2.0 + 0.5),
        "digamma": lambda h, X, W, V: ad.digamma(ad.softmax(h) * 2.0 + 0.5) + h,
        "leaky_relu": lambda h, X, W, V: ad.leaky_relu(h, 0.2),
        "softplus": lambda h, X, W, V: ad.softplus(h),
        "dropout": lambda h, X, W, V: ad.dropout_mask_apply(h, mask, 0.8),
        "max": lambda h, X, W, V: h - ad.max(h, axis=-1, keepdims=True),
        "logsumexp": lambda h, X, W, V: h - ad.logsumexp(h, axis=-1, keepdims=True) * 0.5,
        "log_softmax": lambda h, X, W, V: ad.log_softmax(h),
        "softmax": lambda h, X, W, V: ad.softmax(h) * 3.0,
        "sum": lambda h, X, W, V: h + ad.sum(h, axis=0, keepdims=True) * 0.1,
        "mean": lambda h, X, W, V: h - ad.mean(h, axis=-1, keepdims=True),
        "take": lambda h, X, W, V: h + ad.reshape(ad.take_along(h, idx), (3, 1)),
        "reshape": lambda h, X, W, V: ad.reshape(ad.reshape(h, (12,)), (3, 4)),
    }


PRIMITIVE_STAGES = tuple(_stages(None, None))


def random_graph(seed):
    """A scalar function of (X, W, V) chaining every primitive in random order.

    Returns ``(fn, inputs, order)``.
    """
    rng = np.random.default_rng(seed)
    mask = (rng.random((3, 4)) < 0.8).astype(float)
    idx = rng.integers(0, 4, size=3)
    stages = _stages(mask, idx)
    order = list(rng.permutation(list(stages)))
    order += list(rng.choice(list(stages), size=4))
    weights = rng.normal(size=(3, 4))
    inputs = [rng.uniform(-1, 1, (3, 4)), rng.normal(0, 0.5, (4, 4)), rng.uniform(-1, 1, 4)]

    def fn(X, W, V):
        h = X
        for name in order:
            h = stages[name](h, X, W, V)
        return ad.sum(h * weights)

    return fn, inputs, order


def numeric_gradient(fn, inputs, h=1e-5):
    """Central finite differences of scalar ``fn`` with respect to every input."""
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    grads = []
    for k, x in enumerate(inputs):
        g = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            orig = x[i]
            x[i] = orig + h
            up = float(fn(*[ad.Tensor(v) for v in inputs]).data)
            x[i] = orig - h
            down = float(fn(*[ad.Tensor(v) for v in inputs]).data)
            x[i] = orig
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a, b):
    a = np.concatenate([np.ravel(v) for v in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(v) for v in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def graph_gradient_error(seed):
    fn, inputs, _ = random_graph(seed)
    analytic = ad.grad(fn, *inputs)
    return relative_error(analytic, numeric_gradient(fn, inputs))


def sample_dirichlet_mi(alpha, n, rng):
    """Monte-Carlo mutual information and its standard error."""
    pi = rng.dirichlet(alpha, size=n)
    safe = np.where(pi > 0, pi, 1.0)
    h = -np.sum(np.where(pi > 0, pi * np.log(safe), 0.0), axis=1)
    mean = alpha / alpha.sum()
    total = -np.sum(mean * np.log(mean))
    return total - h.mean(), h.std(ddof=1) / np.sqrt(n)


def sample_dirichlet_entropy(alpha, n, rng):
    """Monte-Carlo differential entropy -E[ln p(pi)] and its standard error."""
    from scipy.stats import dirichlet

    pi = rng.dirichlet(alpha, size=n)
    pi = np.clip(pi, 1e-300, None)
    pi /= pi.sum(axis=1, keepdims=True)
    logp = dirichlet.logpdf(pi.T, alpha)
    return -logp.mean(), logp.std(ddof=1) / np.sqrt(n)
