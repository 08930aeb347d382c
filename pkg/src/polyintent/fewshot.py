"""Episodic N-shot evaluation of a frozen embedder with a linear classifier.

An episode samples exactly n_shot support examples per eligible class
(classes without n_shot + 1 examples are excluded and recorded), remaps
labels densely, and scores query accuracy with a fresh classifier fit on
the support embeddings only. The classifier is multinomial logistic
regression by default, with a one-vs-rest hinge (linear SVM style)
alternative; both are full-batch (sub)gradient descent from a zero init,
so fits are deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .encoder import EncoderModel, embed_texts
from .errors import EpisodeError, ValidationError
from .seeding import rng_for
from .tokenizer import Vocab

CLASSIFIER_KINDS = ("logistic", "hinge")


@dataclass
class FitConfig:
    kind: str = "logistic"
    epochs: int = 200
    learning_rate: float = 0.5
    l2: float = 1e-3

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise ValidationError(f"classifier kind must be one of {CLASSIFIER_KINDS}, got {self.kind!r}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be positive, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 < 0:
            raise ValidationError(f"l2 must be non-negative, got {self.l2}")


@dataclass
class Episode:
    support_indices: np.ndarray
    support_labels: np.ndarray
    query_indices: np.ndarray
    query_labels: np.ndarray
    class_map: dict[int, int]
    excluded_classes: dict[int, int]
    n_shot: int


@dataclass
class LinearClassifier:
    kind: str
    W: np.ndarray
    b: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W.T + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision_scores(X), axis=1)


@dataclass
class EvalResult:
    accuracies: list[float]
    mean: float
    std: float
    n_shot: int
    episodes: int
    seed: int
    classifier: str

    @classmethod
    def from_accuracies(cls, accuracies, n_shot, seed, classifier) -> "EvalResult":
        acc = [float(a) for a in accuracies]
        return cls(
            accuracies=acc,
            mean=float(np.mean(acc)),
            std=float(np.std(acc)),
            n_shot=n_shot,
            episodes=len(acc),
            seed=seed,
            classifier=classifier,
        )

    def to_dict(self) -> dict:
        return {
            "accuracies": self.accuracies,
            "mean": self.mean,
            "std": self.std,
            "n_shot": self.n_shot,
            "episodes": self.episodes,
            "seed": self.seed,
            "classifier": self.classifier,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def sample_episode(dataset: LabeledDataset, n_shot: int, seed: int) -> Episode:
    """Sample one few-shot task: n_shot support per eligible class, rest query.

    Classes with fewer than n_shot + 1 examples are excluded (and recorded in
    the episode); labels are remapped densely over the included classes in
    sorted order.
    """
    if n_shot < 1:
        raise ValidationError(f"n_shot must be positive, got {n_shot}")
    by_class: dict[int, list[int]] = {}
    for index, label in enumerate(dataset.label_ids):
        by_class.setdefault(int(label), []).append(index)
    eligible = [c for c in sorted(by_class) if len(by_class[c]) >= n_shot + 1]
    excluded = {c: len(by_class[c]) for c in sorted(by_class) if c not in eligible}
    if not eligible:
        counts = {c: len(idx) for c, idx in sorted(by_class.items())}
        raise EpisodeError(
            f"no class has at least n_shot + 1 = {n_shot + 1} examples; per-class counts: {counts}"
        )
    rng = rng_for(seed, "episode")
    class_map = {orig: dense for dense, orig in enumerate(eligible)}
    support_indices, support_labels = [], []
    query_indices, query_labels = [], []
    for orig in eligible:
        members = by_class[orig]
        picked = set(rng.choice(len(members), size=n_shot, replace=False).tolist())
        for position, index in enumerate(members):
            if position in picked:
                support_indices.append(index)
                support_labels.append(class_map[orig])
            else:
                query_indices.append(index)
                query_labels.append(class_map[orig])
    return Episode(
        support_indices=np.array(support_indices, dtype=np.int64),
        support_labels=np.array(support_labels, dtype=np.int64),
        query_indices=np.array(query_indices, dtype=np.int64),
        query_labels=np.array(query_labels, dtype=np.int64),
        class_map=class_map,
        excluded_classes=excluded,
        n_shot=n_shot,
    )


def _fit_logistic(X, Y, config: FitConfig):
    m = X.shape[0]
    W = np.zeros((Y.shape[1], X.shape[1]))
    b = np.zeros(Y.shape[1])
    for _ in range(config.epochs):
        scores = X @ W.T + b
        scores -= scores.max(axis=1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=1, keepdims=True)
        G = (probs - Y) / m
        W -= config.learning_rate * (G.T @ X + config.l2 * W)
        b -= config.learning_rate * G.sum(axis=0)
    return W, b


def _fit_hinge(X, Y, config: FitConfig):
    m = X.shape[0]
    signs = 2.0 * Y - 1.0
    W = np.zeros((Y.shape[1], X.shape[1]))
    b = np.zeros(Y.shape[1])
    for _ in range(config.epochs):
        scores = X @ W.T + b
        active = (1.0 - signs * scores) > 0
        coeff = -(signs * active)
        W -= config.learning_rate * (coeff.T @ X / m + config.l2 * W)
        b -= config.learning_rate * coeff.mean(axis=0)
    return W, b


def fit_linear_classifier(support_embeddings, labels, config: FitConfig | None = None) -> LinearClassifier:
    """Fit a linear classifier on support embeddings, deterministically."""
    config = config or FitConfig()
    X = np.asarray(support_embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValidationError(f"inconsistent shapes: X {X.shape}, labels {y.shape}")
    classes = np.unique(y)
    n_classes = int(y.max()) + 1 if y.size else 0
    if len(classes) < 2:
        raise ValidationError(f"need at least 2 classes to fit a classifier, got {len(classes)}")
    if len(classes) != n_classes or classes[0] != 0:
        raise ValidationError("labels must be dense 0..K-1")
    if X.shape[0] < n_classes:
        raise ValidationError(f"need at least K={n_classes} support rows, got {X.shape[0]}")
    Y = np.zeros((X.shape[0], n_classes))
    Y[np.arange(X.shape[0]), y] = 1.0
    if config.kind == "logistic":
        W, b = _fit_logistic(X, Y, config)
    else:
        W, b = _fit_hinge(X, Y, config)
    return LinearClassifier(kind=config.kind, W=W, b=b)


def evaluate_nshot(
    embedder: EncoderModel,
    vocab: Vocab,
    dataset: LabeledDataset,
    n_shot: int,
    episodes: int = 50,
    seed: int = 0,
    fit_config: FitConfig | None = None,
) -> EvalResult:
    """Run independent episodes (episode i uses seed + i), scoring query accuracy.

    The embedder is used inference-only: all utterances are embedded once and
    rows are reused across episodes.
    """
    if episodes < 1:
        raise ValidationError(f"episodes must be positive, got {episodes}")
    fit_config = fit_config or FitConfig()
    embeddings = embed_texts(embedder, vocab, dataset.texts())
    accuracies = []
    for i in range(episodes):
        episode = sample_episode(dataset, n_shot, seed + i)
        classifier = fit_linear_classifier(
            embeddings[episode.support_indices], episode.support_labels, fit_config
        )
        predictions = classifier.predict(embeddings[episode.query_indices])
        accuracies.append(float(np.mean(predictions == episode.query_labels)))
    return EvalResult.from_accuracies(accuracies, n_shot, seed, fit_config.kind)
