"""Multinomial softmax classifier with distillation-regularized local SGD.

The classifier is a single linear layer over a shared global class space;
clients that have only seen a subset of classes mask the softmax to their
cumulative seen-class set. The combined objective is the summed
cross-entropy on the current batch plus a weighted temperature-softened
cross-entropy against a frozen teacher snapshot, and its gradient is
computed analytically (verified against finite differences in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Hyperparams:
    """Training and benefit-quantification knobs.

    kd_weight is the coefficient on the distillation term; epsilon is the
    weight of model-parameter similarity inside the overall pairwise
    similarity (it lives here so one object configures a whole run).
    """

    kd_weight: float = 0.2
    temperature: float = 2.0
    learning_rate: float = 0.05
    local_iters: int = 100
    batch_size: int = 64
    epsilon: float = 0.2

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.kd_weight < 0 or self.epsilon < 0:
            raise ValueError("kd_weight and epsilon must be nonnegative")
        if self.local_iters < 0 or self.batch_size < 1:
            raise ValueError("bad local_iters/batch_size")


@dataclass
class Batch:
    features: np.ndarray  # (n, feature_dim)
    labels: np.ndarray  # (n,) int class ids in [0, num_classes)


@dataclass
class Classifier:
    """Linear classifier: logits = weights @ x + bias.

    Flattening order is row-major weights followed by bias; this ordering is
    the wire format every other module relies on.
    """

    weights: np.ndarray  # (num_classes, feature_dim)
    bias: np.ndarray  # (num_classes,)

    @classmethod
    def zeros(cls, num_classes: int, feature_dim: int) -> "Classifier":
        return cls(np.zeros((num_classes, feature_dim)), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "Classifier":
        return Classifier(self.weights.copy(), self.bias.copy())

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def unflatten(cls, flat, num_classes: int, feature_dim: int) -> "Classifier":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (num_classes * feature_dim + num_classes,):
            raise ValueError("flat vector has wrong length")
        w = flat[: num_classes * feature_dim].reshape(num_classes, feature_dim)
        return cls(w.copy(), flat[num_classes * feature_dim :].copy())


def forward(clf: Classifier, x) -> np.ndarray:
    """Logits for one feature vector or a (n, feature_dim) batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != clf.feature_dim:
        raise ValueError(f"feature dim {x.shape[-1]} != {clf.feature_dim}")
    return x @ clf.weights.T + clf.bias


def _masked(logits: np.ndarray, class_mask) -> np.ndarray:
    if class_mask is None:
        return logits
    out = np.where(np.asarray(class_mask, dtype=bool), logits, -np.inf)
    return out


def temp_softmax(logits, temperature: float, class_mask=None) -> np.ndarray:
    """Temperature-scaled softmax, max-shifted for stability.

    Masked-out classes get probability exactly 0 and are excluded from the
    normalization.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = _masked(np.asarray(logits, dtype=np.float64) / temperature, class_mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray, temperature: float, class_mask) -> np.ndarray:
    z = _masked(logits / temperature, class_mask)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def classification_loss(clf: Classifier, batch: Batch, class_mask=None) -> float:
    """Summed cross-entropy of true labels against the temperature-1 softmax."""
    if len(batch.labels) == 0:
        raise ValueError("empty batch")
    logp = _log_softmax(forward(clf, batch.features), 1.0, class_mask)
    return float(-logp[np.arange(len(batch.labels)), batch.labels].sum())


def distillation_loss(
    student: Classifier, teacher: Classifier, inputs, temperature: float, class_mask=None
) -> float:
    """Summed cross-entropy of the teacher's softened outputs against the student's.

    Both distributions use the same temperature; the value equals the teacher
    entropy plus KL(teacher || student), so self-distillation is the minimum.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    q = temp_softmax(forward(teacher, inputs), temperature, class_mask)
    logp = _log_softmax(forward(student, inputs), temperature, class_mask)
    # masked classes have q == 0 and logp == -inf; their contribution is 0
    return float(-(q * np.where(q > 0, logp, 0.0)).sum())


def combined_loss(
    student: Classifier,
    teacher: Classifier | None,
    batch: Batch,
    hp: Hyperparams,
    class_mask=None,
) -> float:
    """classification_loss + kd_weight * distillation_loss (no teacher: plain CE)."""
    loss = classification_loss(student, batch, class_mask)
    if teacher is not None and hp.kd_weight > 0:
        loss += hp.kd_weight * distillation_loss(
            student, teacher, batch.features, hp.temperature, class_mask
        )
    return loss


def _grad_matrices(
    student: Classifier,
    teacher: Classifier | None,
    batch: Batch,
    hp: Hyperparams,
    class_mask,
) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(batch.features, dtype=np.float64)
    z = forward(student, x)
    g_logits = temp_softmax(z, 1.0, class_mask)
    g_logits[np.arange(len(batch.labels)), batch.labels] -= 1.0
    if teacher is not None and hp.kd_weight > 0:
        p = temp_softmax(z, hp.temperature, class_mask)
        q = temp_softmax(forward(teacher, x), hp.temperature, class_mask)
        g_logits += (hp.kd_weight / hp.temperature) * (p - q)
    return g_logits.T @ x, g_logits.sum(axis=0)


def grad_combined(
    student: Classifier,
    teacher: Classifier | None,
    batch: Batch,
    hp: Hyperparams,
    class_mask=None,
) -> np.ndarray:
    """Analytic gradient of combined_loss w.r.t. the flattened classifier.

    Per sample the classification part contributes (softmax - onehot) outer x
    and the distillation part (kd_weight / temperature) * (p_student -
    p_teacher) outer x, both restricted to unmasked classes.
    """
    gw, gb = _grad_matrices(student, teacher, batch, hp, class_mask)
    return np.concatenate([gw.ravel(), gb])


def local_train(
    clf: Classifier,
    teacher: Classifier | None,
    features,
    labels,
    hp: Hyperparams,
    rng: np.random.Generator,
    class_mask=None,
) -> Classifier:
    """Run hp.local_iters SGD steps on seeded shuffled mini-batches.

    Deterministic given (clf, data, rng state). Reshuffles whenever the
    epoch cursor would run past the end of the data.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty training data")
    work = clf.copy()
    bsz = min(hp.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    for _ in range(hp.local_iters):
        if cursor + bsz > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + bsz]
        cursor += bsz
        batch = Batch(features[idx], labels[idx])
        gw, gb = _grad_matrices(work, teacher, batch, hp, class_mask)
        work.weights -= hp.learning_rate * gw
        work.bias -= hp.learning_rate * gb
    return work
