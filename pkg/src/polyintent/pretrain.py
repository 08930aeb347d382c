"""Supervised pre-training of an encoder plus linear softmax head.

The training objective is cross-entropy optionally combined with the
correlation-matrix regularizer: joint = ce + lambda * ||corr(E) - I||_F,
where the correlation matrix is estimated per mini-batch. The regularizer
depends only on the embeddings, so its gradient reaches encoder parameters
but never the classifier head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import LabeledDataset
from .encoder import EncoderModel, encode_batch
from .errors import BatchTooSmallError, NumericalInstabilityError, ValidationError
from .isotropy import isotropy_score
from .linalg import frobenius_distance_to_identity, pearson_correlation
from .optim import Adam
from .seeding import rng_for
from .tokenizer import Vocab, tokenize


@dataclass
class PretrainConfig:
    """Desk-scale defaults; learning_rate 2e-5 is the from-pretrained
    fine-tuning setting, 1e-3 suits training from random init."""

    lambda_: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValidationError(f"lambda_ must be non-negative, got {self.lambda_}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not isinstance(self.batch_size, (int, np.integer)) or self.batch_size < 2:
            raise ValidationError(f"batch_size must be an integer >= 2, got {self.batch_size!r}")
        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 0:
            raise ValidationError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")


class ClassifierHead:
    """Linear softmax head: logits = E W^T + b, W is (n_classes, d)."""

    def __init__(self, W: ad.Tensor, b: ad.Tensor):
        if W.data.ndim != 2 or b.data.ndim != 1 or W.data.shape[0] != b.data.shape[0]:
            raise ValidationError(
                f"head shapes inconsistent: W {W.data.shape}, b {b.data.shape}"
            )
        if W.data.shape[0] < 2:
            raise ValidationError(f"head needs at least 2 classes, got {W.data.shape[0]}")
        self.W = W
        self.b = b

    @property
    def n_classes(self) -> int:
        return self.W.data.shape[0]

    def parameters(self) -> list[ad.Tensor]:
        return [self.W, self.b]

    def logits(self, embeddings: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(embeddings, ad.swapaxes(self.W, 0, 1)), self.b)

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(
            ad.Tensor(self.W.data.copy(), requires_grad=True),
            ad.Tensor(self.b.data.copy(), requires_grad=True),
        )


def init_head(n_classes: int, d_model: int, seed: int = 0) -> ClassifierHead:
    rng = rng_for(seed, "head-init")
    W = ad.Tensor(rng.normal(0.0, 0.02, (n_classes, d_model)), requires_grad=True)
    b = ad.Tensor(np.zeros(n_classes), requires_grad=True)
    return ClassifierHead(W, b)


@dataclass
class TrainingReport:
    """Per-epoch metric rows; serializes to JSON lines, one epoch per line."""

    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict):
        for key, value in row.items():
            if isinstance(value, float) and not np.isfinite(value):
                raise ValidationError(f"non-finite report value for {key!r}")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    @property
    def last(self) -> dict:
        return self.rows[-1]

    def save_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path):
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        return cls(rows=rows)


def cross_entropy_loss(logits: ad.Tensor, labels) -> ad.Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels)
    n, n_classes = logits.data.shape
    if labels.shape != (n,):
        raise ValidationError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(
            f"label out of range [0, {n_classes}): min={labels.min()}, max={labels.max()}"
        )
    one_hot = np.zeros((n, n_classes))
    one_hot[np.arange(n), labels] = 1.0
    picked = ad.tensor_sum(ad.mul(ad.log_softmax(logits, axis=-1), ad.Tensor(one_hot)), axis=-1)
    return ad.neg(ad.tensor_mean(picked))


def cor_reg_loss(embeddings) -> ad.Tensor:
    """||corr(E) - I||_F on a batch of at least two embeddings."""
    E = ad.as_tensor(embeddings)
    if E.data.ndim != 2 or E.data.shape[0] < 2:
        raise BatchTooSmallError(
            f"correlation regularizer needs an n x d batch with n >= 2, got shape {E.data.shape}"
        )
    return frobenius_distance_to_identity(pearson_correlation(E))


def joint_loss(logits, labels, embeddings, lambda_: float) -> ad.Tensor:
    """ce + lambda * reg; with lambda == 0 this is exactly the cross-entropy."""
    if lambda_ < 0:
        raise ValidationError(f"lambda_ must be non-negative, got {lambda_}")
    ce = cross_entropy_loss(logits, labels)
    if lambda_ == 0:
        return ce
    return ad.add(ce, ad.mul(cor_reg_loss(embeddings), lambda_))


def _validate_labels(dataset: LabeledDataset) -> int:
    labels = np.asarray(dataset.label_ids)
    n_classes = int(labels.max()) + 1 if labels.size else 0
    present = np.unique(labels)
    if n_classes < 2:
        raise ValidationError(f"training needs at least 2 classes, got {n_classes}")
    if len(present) != n_classes or present[0] != 0:
        missing = sorted(set(range(n_classes)) - set(present.tolist()))
        raise ValidationError(f"label ids must be dense 0..{n_classes - 1}; missing {missing}")
    return n_classes


def train_supervised(
    encoder: EncoderModel,
    vocab: Vocab,
    dataset: LabeledDataset,
    config: PretrainConfig,
) -> tuple[EncoderModel, ClassifierHead, TrainingReport]:
    """Mini-batch Adam on the joint objective; inputs are never mutated.

    Shuffling, head init, and every other random choice flow from
    ``config.seed``. Each report row carries the epoch's mean cross-entropy,
    regularizer value, joint loss, training accuracy, and the isotropy score
    of the epoch's training embeddings. A final mini-batch smaller than two
    is dropped when lambda > 0 (the batch correlation needs two rows).
    """
    n_classes = _validate_labels(dataset)
    n = len(dataset)
    if n < config.batch_size:
        raise ValidationError(f"dataset size {n} smaller than batch_size {config.batch_size}")

    model = encoder.copy()
    head = init_head(n_classes, model.config.d_model, seed=config.seed)
    report = TrainingReport()
    if config.epochs == 0:
        return model, head, report

    sequences = [tokenize(text, vocab, model.config.max_len) for text in dataset.texts()]
    labels = np.asarray(dataset.label_ids)
    optimizer = Adam(
        model.parameters() + head.parameters(),
        learning_rate=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )

    for epoch in range(1, config.epochs + 1):
        order = rng_for(config.seed, "shuffle", epoch).permutation(n)
        ce_sum = reg_sum = joint_sum = 0.0
        correct = 0
        seen = 0
        epoch_embeddings = []
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            if config.lambda_ > 0 and len(idx) < 2:
                continue
            batch_seqs = [sequences[i] for i in idx]
            y = labels[idx]
            try:
                E = encode_batch(model, batch_seqs, record_graph=True).values
                logits = head.logits(E)
                ce = cross_entropy_loss(logits, y)
                if config.lambda_ > 0:
                    reg = cor_reg_loss(E)
                    loss = ad.add(ce, ad.mul(reg, config.lambda_))
                    reg_value = float(reg.data)
                else:
                    loss = ce
                    with ad.no_grad():
                        reg_value = float(cor_reg_loss(ad.Tensor(E.data)).data)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            except NumericalInstabilityError as exc:
                raise NumericalInstabilityError(
                    f"epoch {epoch}, batch {batch_index}: {exc}"
                ) from exc
            size = len(idx)
            ce_sum += float(ce.data) * size
            reg_sum += reg_value * size
            joint_sum += float(loss.data) * size
            correct += int(np.sum(np.argmax(logits.data, axis=1) == y))
            seen += size
            epoch_embeddings.append(E.data)
        stacked = np.vstack(epoch_embeddings)
        report.append(
            {
                "epoch": epoch,
                "ce": ce_sum / seen,
                "reg": reg_sum / seen,
                "joint": joint_sum / seen,
                "accuracy": correct / seen,
                "isotropy": float(isotropy_score(stacked)),
            }
        )
    return model, head, report
