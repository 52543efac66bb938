"""Classification heads: affine SoftMax and distance-based IsoMax.

Each head turns embeddings into a mean cross-entropy loss together with the
analytic gradients for the embeddings and for its own parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from isomax.errors import ContractError, DimensionError
from isomax.numeric import (
    DISTANCE_EPS,
    PROB_FLOOR,
    as_tensor,
    check_finite,
    log_sum_exp,
    pairwise_euclidean,
    stable_softmax,
)

DEFAULT_ENTROPIC_SCALE = 10.0


@dataclass
class SoftMaxHead:
    weights: np.ndarray  # N x D
    biases: np.ndarray  # N

    @classmethod
    def zeros(cls, n_classes, dim):
        return cls(np.zeros((n_classes, dim)), np.zeros(n_classes))

    @classmethod
    def init(cls, n_classes, dim, rng):
        # Xavier-normal weights, zero biases.
        std = np.sqrt(2.0 / (dim + n_classes))
        return cls(rng.normal(0.0, std, (n_classes, dim)), np.zeros(n_classes))

    @property
    def n_classes(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    def parameters(self):
        return {"head.weights": self.weights, "head.biases": self.biases}

    def logits(self, embeddings):
        f = as_tensor(embeddings, 2, "embeddings")
        if f.shape[1] != self.dim:
            raise DimensionError(f"embedding width {f.shape[1]} != head width {self.dim}")
        return f @ self.weights.T + self.biases


@dataclass
class IsoMaxHead:
    prototypes: np.ndarray  # N x D
    entropic_scale: float = DEFAULT_ENTROPIC_SCALE
    eps: float = field(default=DISTANCE_EPS, repr=False)

    def __post_init__(self):
        if not self.entropic_scale > 0:
            raise ContractError(f"entropic scale must be positive, got {self.entropic_scale}")
        self.entropic_scale = float(self.entropic_scale)

    @classmethod
    def zeros(cls, n_classes, dim, entropic_scale=DEFAULT_ENTROPIC_SCALE):
        """Prototypes start at the origin, the natural value for untrained embeddings."""
        return cls(np.zeros((n_classes, dim)), entropic_scale)

    @property
    def n_classes(self):
        return self.prototypes.shape[0]

    @property
    def dim(self):
        return self.prototypes.shape[1]

    def parameters(self):
        return {"head.prototypes": self.prototypes}

    def distances(self, embeddings):
        return pairwise_euclidean(embeddings, self.prototypes, self.eps)


@dataclass
class LossResult:
    mean_loss: float
    grad_embeddings: np.ndarray
    grad_head: dict


def param_count(head):
    return sum(p.size for p in head.parameters().values())


def _check_labels(labels, n, n_classes):
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise DimensionError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise ContractError("labels must be integers")
        y = y.astype(np.int64)
    if n and (y.min() < 0 or y.max() >= n_classes):
        raise ContractError(f"labels must lie in [0, {n_classes})")
    return y


def softmax_head_loss(head, embeddings, labels):
    f = as_tensor(embeddings, 2, "embeddings")
    n = f.shape[0]
    y = _check_labels(labels, n, head.n_classes)
    z = head.logits(f)
    rows = np.arange(n)
    loss = float(np.mean(log_sum_exp(z) - z[rows, y]))
    g = stable_softmax(z)
    g[rows, y] -= 1.0
    g /= n
    return LossResult(
        mean_loss=loss,
        grad_embeddings=check_finite(g @ head.weights, "grad_embeddings"),
        grad_head={"head.weights": g.T @ f, "head.biases": g.sum(axis=0)},
    )


def isomax_logits(head, embeddings):
    return -head.entropic_scale * head.distances(embeddings)


def isomax_loss(head, embeddings, labels):
    """Mean IsoMax loss with the entropic scale applied to the distance logits.

    The probabilities are formed first and the logarithm is taken afterwards
    as a separate step, on the clamped probability of the true class.
    """
    f = as_tensor(embeddings, 2, "embeddings")
    n = f.shape[0]
    y = _check_labels(labels, n, head.n_classes)
    d = head.distances(f)
    probs = stable_softmax(-head.entropic_scale * d)
    rows = np.arange(n)
    loss = float(np.mean(-np.log(np.maximum(probs[rows, y], PROB_FLOOR))))

    # logits are -E_s * d, so dL/dd_ij = E_s * ([j == y_i] - p_ij) / n
    g = -probs
    g[rows, y] += 1.0
    g *= head.entropic_scale / n
    diff = f[:, None, :] - head.prototypes[None, :, :]  # n x N x D
    unit = diff / d[:, :, None]
    grad_f = np.einsum("ij,ijk->ik", g, unit)
    grad_p = -np.einsum("ij,ijk->jk", g, unit)
    return LossResult(
        mean_loss=loss,
        grad_embeddings=check_finite(grad_f, "grad_embeddings"),
        grad_head={"head.prototypes": check_finite(grad_p, "grad_prototypes")},
    )


def head_loss(head, embeddings, labels):
    if isinstance(head, IsoMaxHead):
        return isomax_loss(head, embeddings, labels)
    if isinstance(head, SoftMaxHead):
        return softmax_head_loss(head, embeddings, labels)
    raise TypeError(f"unknown head type {type(head).__name__}")
