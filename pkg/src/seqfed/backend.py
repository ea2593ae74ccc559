"""Numeric kernels with a numba fast path and a pure-numpy fallback.

The hot inner loops of the simulator live here: softmax cross-entropy with
its gradient, optimizer updates, and the pool distance kernels. Each kernel
has two implementations with identical semantics:

* ``numpy``  -- vectorized numpy, always available.
* ``numba``  -- ``@njit``-compiled loops, used by default when numba imports.

Selection is controlled by the ``SEQFED_BACKEND`` environment variable:
``auto`` (default; numba if importable), ``numba`` (require it) or ``numpy``.
Both paths are deterministic run-to-run; across backends results agree to
floating-point reduction-order differences (~1e-15 relative), so bitwise
reproducibility claims hold within a single backend.

Distance measures are passed as integer codes: 0 = euclidean, 1 = mean
absolute difference, 2 = cosine distance.
"""

import os

import numpy as np

from .errors import ConfigError

MEASURE_L2 = 0
MEASURE_L1 = 1
MEASURE_COSINE = 2


# ---------------------------------------------------------------- numpy path

def _softmax_xent_grad_np(logits, labels):
    n = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1)
    lse = m[:, 0] + np.log(s)
    rows = np.arange(n)
    loss = float((lse - logits[rows, labels]).mean())
    grad = e / s[:, None]
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def _sgd_update_np(params, grad, lr):
    params -= lr * grad


def _adam_update_np(params, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    g = grad + weight_decay * params
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    params -= lr * mhat / (np.sqrt(vhat) + eps)


def _pair_dist_np(a, b, code, eps):
    if code == MEASURE_L2:
        d = a - b
        return float(np.sqrt((d * d).sum()))
    if code == MEASURE_L1:
        return float(np.abs(a - b).mean())
    na = float(np.sqrt((a * a).sum()))
    nb = float(np.sqrt((b * b).sum()))
    denom = max(na * nb, eps)
    return 1.0 - float((a * b).sum()) / denom


def _pool_mean_dist_np(current, pool, code, eps):
    total = 0.0
    for k in range(pool.shape[0]):
        total += _pair_dist_np(current, pool[k], code, eps)
    return total / pool.shape[0]


def _pair_dist_grad_np(a, b, code, eps):
    if code == MEASURE_L2:
        d = a - b
        nrm = max(float(np.sqrt((d * d).sum())), eps)
        return d / nrm
    if code == MEASURE_L1:
        return np.sign(a - b) / a.shape[0]
    na = float(np.sqrt((a * a).sum()))
    nb = float(np.sqrt((b * b).sum()))
    dot = float((a * b).sum())
    denom1 = max(na * nb, eps)
    denom2 = max(na * na * na * nb, eps)
    return dot * a / denom2 - b / denom1


def _pool_mean_dist_grad_np(current, pool, code, eps):
    out = np.zeros_like(current)
    for k in range(pool.shape[0]):
        out += _pair_dist_grad_np(current, pool[k], code, eps)
    return out / pool.shape[0]


def _pairwise_dist_np(pool, code, eps):
    n = pool.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = _pair_dist_np(pool[i], pool[j], code, eps)
            out[i, j] = d
            out[j, i] = d
    return out


NUMPY_IMPL = {
    "softmax_xent_grad": _softmax_xent_grad_np,
    "sgd_update": _sgd_update_np,
    "adam_update": _adam_update_np,
    "pair_dist": _pair_dist_np,
    "pair_dist_grad": _pair_dist_grad_np,
    "pool_mean_dist": _pool_mean_dist_np,
    "pool_mean_dist_grad": _pool_mean_dist_grad_np,
    "pairwise_dist": _pairwise_dist_np,
}


# ---------------------------------------------------------------- numba path

def _build_numba_impl():
    from numba import njit

    @njit(cache=True)
    def softmax_xent_grad(logits, labels):
        n, c = logits.shape
        grad = np.empty((n, c))
        loss = 0.0
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(c):
                e = np.exp(logits[i, j] - m)
                grad[i, j] = e
                s += e
            loss += m + np.log(s) - logits[i, labels[i]]
            for j in range(c):
                grad[i, j] /= s
            grad[i, labels[i]] -= 1.0
        for i in range(n):
            for j in range(c):
                grad[i, j] /= n
        return loss / n, grad

    @njit(cache=True)
    def sgd_update(params, grad, lr):
        for i in range(params.shape[0]):
            params[i] -= lr * grad[i]

    @njit(cache=True)
    def adam_update(params, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
        bc1 = 1.0 - beta1 ** step
        bc2 = 1.0 - beta2 ** step
        for i in range(params.shape[0]):
            g = grad[i] + weight_decay * params[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            params[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)

    @njit(cache=True)
    def pair_dist(a, b, code, eps):
        p = a.shape[0]
        if code == 0:
            s = 0.0
            for i in range(p):
                d = a[i] - b[i]
                s += d * d
            return np.sqrt(s)
        if code == 1:
            s = 0.0
            for i in range(p):
                s += abs(a[i] - b[i])
            return s / p
        na = 0.0
        nb = 0.0
        dot = 0.0
        for i in range(p):
            na += a[i] * a[i]
            nb += b[i] * b[i]
            dot += a[i] * b[i]
        denom = np.sqrt(na) * np.sqrt(nb)
        if denom < eps:
            denom = eps
        return 1.0 - dot / denom

    @njit(cache=True)
    def pair_dist_grad(a, b, code, eps):
        p = a.shape[0]
        out = np.empty(p)
        if code == 0:
            s = 0.0
            for i in range(p):
                d = a[i] - b[i]
                s += d * d
            nrm = np.sqrt(s)
            if nrm < eps:
                nrm = eps
            for i in range(p):
                out[i] = (a[i] - b[i]) / nrm
            return out
        if code == 1:
            for i in range(p):
                d = a[i] - b[i]
                out[i] = np.sign(d) / p
            return out
        na = 0.0
        nb = 0.0
        dot = 0.0
        for i in range(p):
            na += a[i] * a[i]
            nb += b[i] * b[i]
            dot += a[i] * b[i]
        na = np.sqrt(na)
        nb = np.sqrt(nb)
        denom1 = na * nb
        if denom1 < eps:
            denom1 = eps
        denom2 = na * na * na * nb
        if denom2 < eps:
            denom2 = eps
        for i in range(p):
            out[i] = dot * a[i] / denom2 - b[i] / denom1
        return out

    @njit(cache=True)
    def pool_mean_dist(current, pool, code, eps):
        total = 0.0
        for k in range(pool.shape[0]):
            total += pair_dist(current, pool[k], code, eps)
        return total / pool.shape[0]

    @njit(cache=True)
    def pool_mean_dist_grad(current, pool, code, eps):
        n = pool.shape[0]
        out = np.zeros(current.shape[0])
        for k in range(n):
            g = pair_dist_grad(current, pool[k], code, eps)
            for i in range(out.shape[0]):
                out[i] += g[i]
        for i in range(out.shape[0]):
            out[i] /= n
        return out

    @njit(cache=True)
    def pairwise_dist(pool, code, eps):
        n = pool.shape[0]
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d = pair_dist(pool[i], pool[j], code, eps)
                out[i, j] = d
                out[j, i] = d
        return out

    return {
        "softmax_xent_grad": softmax_xent_grad,
        "sgd_update": sgd_update,
        "adam_update": adam_update,
        "pair_dist": pair_dist,
        "pair_dist_grad": pair_dist_grad,
        "pool_mean_dist": pool_mean_dist,
        "pool_mean_dist_grad": pool_mean_dist_grad,
        "pairwise_dist": pairwise_dist,
    }


def _select_backend():
    choice = os.environ.get("SEQFED_BACKEND", "auto").strip().lower() or "auto"
    if choice not in ("auto", "numba", "numpy"):
        raise ConfigError("SEQFED_BACKEND", f"unknown backend {choice!r}")
    if choice == "numpy":
        return "numpy", None
    try:
        impl = _build_numba_impl()
        return "numba", impl
    except ImportError:
        if choice == "numba":
            raise ConfigError("SEQFED_BACKEND", "numba requested but not importable")
        return "numpy", None


BACKEND, _numba_impl = _select_backend()
NUMBA_AVAILABLE = _numba_impl is not None
IMPLS = {"numpy": NUMPY_IMPL, "numba": _numba_impl}
_active = _numba_impl if BACKEND == "numba" else NUMPY_IMPL

softmax_xent_grad = _active["softmax_xent_grad"]
sgd_update = _active["sgd_update"]
adam_update = _active["adam_update"]
pair_dist = _active["pair_dist"]
pair_dist_grad = _active["pair_dist_grad"]
pool_mean_dist = _active["pool_mean_dist"]
pool_mean_dist_grad = _active["pool_mean_dist_grad"]
pairwise_dist = _active["pairwise_dist"]
