"""Model pool bookkeeping and the diversity-regularized objective.

The pool is an ordered list of flat parameter vectors whose first entry is
the seed model a client received. Two distance terms steer local training:
``d1`` is the mean distance from the model being trained to every pool
member (subtracted from the loss, pushing exploration away from known
solutions), ``d2`` the distance to the seed model alone (added, anchoring
the model to the inherited solution). Raw distances are rescaled by a power
of ten so their order of magnitude sits one below the task loss before they
enter the objective.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DimensionMismatchError, EmptyDataError
from .models import average_params

MEASURE_CODES = {
    "l2": backend.MEASURE_L2,
    "l1": backend.MEASURE_L1,
    "cosine": backend.MEASURE_COSINE,
}


@dataclass(frozen=True)
class RegularizerConfig:
    """Knobs for the two distance terms of the combined objective."""

    alpha: float = 0.06
    beta: float = 1.0
    enable_d1: bool = True
    enable_d2: bool = True
    measure: str = "l2"
    epsilon: float = 1e-12
    normalize: bool = True
    normalize_every_step: bool = True
    upscale_small: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.measure not in MEASURE_CODES:
            raise ValueError(f"unknown distance measure {self.measure!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def d1_active(self) -> bool:
        return self.enable_d1 and self.alpha > 0

    @property
    def d2_active(self) -> bool:
        return self.enable_d2 and self.beta > 0

    @property
    def active(self) -> bool:
        return self.d1_active or self.d2_active


class ModelPool:
    """Ordered collection of same-length parameter vectors; index 0 is the seed."""

    def __init__(self, seed_model: np.ndarray):
        self._models = [np.array(seed_model, dtype=np.float64)]
        self._matrix = None

    def append(self, model: np.ndarray):
        if model.shape[0] != self._models[0].shape[0]:
            raise DimensionMismatchError("vector length", self._models[0].shape[0],
                                         model.shape[0])
        self._models.append(np.array(model, dtype=np.float64))
        self._matrix = None

    def __len__(self) -> int:
        return len(self._models)

    def __getitem__(self, idx: int) -> np.ndarray:
        return self._models[idx]

    def __iter__(self):
        return iter(self._models)

    @property
    def matrix(self) -> np.ndarray:
        """Members stacked as a (len, P) row matrix; cached until the next append."""
        if self._matrix is None:
            self._matrix = np.ascontiguousarray(np.stack(self._models))
        return self._matrix


def pool_mean(pool: ModelPool) -> np.ndarray:
    return average_params(list(pool))


def _checked_matrix(current: np.ndarray, pool: ModelPool) -> np.ndarray:
    m = pool.matrix
    if current.shape[0] != m.shape[1]:
        raise DimensionMismatchError("vector length", m.shape[1], current.shape[0])
    return m


def distance_d1(current: np.ndarray, pool: ModelPool, measure: str = "l2",
                epsilon: float = 1e-12) -> float:
    """Mean distance from ``current`` to every pool member, seed included."""
    m = _checked_matrix(current, pool)
    return float(backend.pool_mean_dist(np.ascontiguousarray(current, dtype=np.float64),
                                        m, MEASURE_CODES[measure], epsilon))


def distance_d2(current: np.ndarray, pool: ModelPool, measure: str = "l2",
                epsilon: float = 1e-12) -> float:
    """Distance from ``current`` to the pool's seed model."""
    m = _checked_matrix(current, pool)
    return float(backend.pair_dist(np.ascontiguousarray(current, dtype=np.float64),
                                   m[0], MEASURE_CODES[measure], epsilon))


def magnitude_normalize(d: float, ell: float) -> float:
    """Rescale ``d`` by a power of ten to one order of magnitude below ``ell``.

    The returned value satisfies ``floor(log10(result)) ==
    floor(log10(ell)) - 1`` for any ``d > 0``; zero maps to zero.
    """
    value, _ = normalize_with_scale(d, ell)
    return value


def normalize_with_scale(d: float, ell: float, attenuate_only: bool = False):
    """Normalized distance plus the linear scale factor the rescaling applied.

    The scale factor is the derivative of the rescaling map, held constant
    through a gradient step (the power-of-ten exponent is piecewise
    constant in ``d``).

    With ``attenuate_only`` the exponent is clamped at zero: a distance
    already at or below the target order passes through unscaled. The
    training loop uses this mode so the distance terms stay ancillary to
    the task loss; the unclamped map would blow up the near-zero distances
    every pool model starts from (it initializes at the pool mean).
    """
    if ell <= 0:
        raise ValueError(f"cannot normalize against a non-positive loss {ell}")
    if d < 0:
        raise ValueError(f"distances are non-negative, got {d}")
    if d == 0:
        return 0.0, 1.0
    target = math.floor(math.log10(ell)) - 1
    k = math.floor(math.log10(d)) - target
    if attenuate_only and k < 0:
        k = 0
    if k > 0:
        c = 10.0 ** k
        return d / c, 1.0 / c
    c = 10.0 ** (-k)
    return d * c, c


@dataclass(frozen=True)
class RegTerms:
    """Distance terms of one training step, raw and normalized."""

    d1_raw: float = 0.0
    d1_norm: float = 0.0
    d2_raw: float = 0.0
    d2_norm: float = 0.0
    s1: float = 1.0
    s2: float = 1.0

    @property
    def scales(self):
        return self.s1, self.s2


def regularizer_terms(current: np.ndarray, pool: ModelPool, cfg: RegularizerConfig,
                      ell: float, frozen_scales=None) -> RegTerms:
    """Evaluate d1/d2 for ``current`` against ``pool``.

    ``frozen_scales`` carries per-epoch scale factors when normalization is
    not re-derived every step; otherwise scales come from the current raw
    distances.
    """
    d1_raw = d1_norm = d2_raw = d2_norm = 0.0
    s1 = s2 = 1.0
    if cfg.d1_active:
        d1_raw = distance_d1(current, pool, cfg.measure, cfg.epsilon)
        if not cfg.normalize:
            d1_norm = d1_raw
        elif frozen_scales is not None:
            s1 = frozen_scales[0]
            d1_norm = d1_raw * s1
        else:
            d1_norm, s1 = normalize_with_scale(d1_raw, ell,
                                               attenuate_only=not cfg.upscale_small)
    if cfg.d2_active:
        d2_raw = distance_d2(current, pool, cfg.measure, cfg.epsilon)
        if not cfg.normalize:
            d2_norm = d2_raw
        elif frozen_scales is not None:
            s2 = frozen_scales[1]
            d2_norm = d2_raw * s2
        else:
            d2_norm, s2 = normalize_with_scale(d2_raw, ell,
                                               attenuate_only=not cfg.upscale_small)
    return RegTerms(d1_raw, d1_norm, d2_raw, d2_norm, s1, s2)


def total_loss(ell: float, d1n: float, d2n: float, cfg: RegularizerConfig) -> float:
    """Task loss minus the weighted diversity term plus the proximity term."""
    loss = ell
    if cfg.d1_active:
        loss = loss - cfg.alpha * d1n
    if cfg.d2_active:
        loss = loss + cfg.beta * d2n
    return loss


def gradient_with_terms(grad_ell: np.ndarray, current: np.ndarray, pool: ModelPool,
                        cfg: RegularizerConfig, terms: RegTerms) -> np.ndarray:
    """Gradient of the combined objective given precomputed scale factors."""
    if not cfg.active:
        return grad_ell
    m = _checked_matrix(current, pool)
    if grad_ell.shape[0] != current.shape[0]:
        raise DimensionMismatchError("gradient length", current.shape[0],
                                     grad_ell.shape[0])
    code = MEASURE_CODES[cfg.measure]
    cur = np.ascontiguousarray(current, dtype=np.float64)
    out = grad_ell.copy()
    if cfg.d1_active:
        g1 = backend.pool_mean_dist_grad(cur, m, code, cfg.epsilon)
        out -= cfg.alpha * terms.s1 * g1
    if cfg.d2_active:
        g2 = backend.pair_dist_grad(cur, m[0], code, cfg.epsilon)
        out += cfg.beta * terms.s2 * g2
    return out


def total_gradient(grad_ell: np.ndarray, current: np.ndarray, pool: ModelPool,
                   cfg: RegularizerConfig, ell: float) -> np.ndarray:
    """Gradient of ``total_loss`` with scale factors taken from the current
    raw distances and treated as constants of the step."""
    terms = regularizer_terms(current, pool, cfg, ell)
    return gradient_with_terms(grad_ell, current, pool, cfg, terms)


def pool_pairwise_distances(pool: ModelPool, measure: str = "l2",
                            epsilon: float = 1e-12) -> np.ndarray:
    """Symmetric zero-diagonal matrix of member-to-member distances."""
    return backend.pairwise_dist(pool.matrix, MEASURE_CODES[measure], epsilon)


def write_pairwise_csv(matrix: np.ndarray, path):
    """Row-major CSV dump of a pairwise-distance matrix, header = model indices."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([str(i) for i in range(matrix.shape[0])])
        for row in matrix:
            writer.writerow([repr(float(x)) for x in row])


def read_pairwise_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyDataError(f"no rows in {path}")
    return np.array([[float(x) for x in row] for row in rows[1:]])
