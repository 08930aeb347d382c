"""Teacher -> student knowledge distillation over parallel sentence pairs.

Per batch the student is pulled toward the frozen teacher twice: on the
source sentence and on its translation,

    (1/n) * sum_j [ mse(T(s_j), S(s_j)) + mse(T(s_j), S(t_j)) ]

with mse averaging squared differences over the embedding dimensions.
Gradients flow only into the student; teacher embeddings are constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import ParallelCorpus
from .encoder import EncoderConfig, EncoderModel, embed_texts, encode_batch, init_model
from .errors import NumericalInstabilityError, ShapeError, ValidationError
from .optim import Adam
from .pretrain import TrainingReport
from .seeding import rng_for
from .tokenizer import Vocab, tokenize

HELDOUT_FRACTION = 0.1


@dataclass
class DistillConfig:
    student: EncoderConfig
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not isinstance(self.batch_size, (int, np.integer)) or self.batch_size < 1:
            raise ValidationError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 0:
            raise ValidationError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")


def distillation_loss(teacher_src, student_src, student_tgt) -> ad.Tensor:
    """Dual MSE pulling both student views toward the teacher's source rows."""
    teacher = ad.constant(teacher_src)
    student_src = ad.as_tensor(student_src)
    student_tgt = ad.as_tensor(student_tgt)
    shapes = {teacher.data.shape, student_src.data.shape, student_tgt.data.shape}
    if len(shapes) != 1 or teacher.data.ndim != 2:
        raise ShapeError(
            "distillation_loss needs three equal n x d matrices, got "
            f"teacher {teacher.data.shape}, student_src {student_src.data.shape}, "
            f"student_tgt {student_tgt.data.shape}"
        )
    src_term = ad.tensor_mean(ad.square(ad.sub(teacher, student_src)))
    tgt_term = ad.tensor_mean(ad.square(ad.sub(teacher, student_tgt)))
    return ad.add(src_term, tgt_term)


def mean_parallel_cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Mean row-wise cosine similarity between two aligned matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return float(np.mean(np.sum(a * b, axis=1) / np.maximum(norms, 1e-30)))


def heldout_split(n_pairs: int) -> int:
    """Number of trailing pairs reserved for alignment metrics."""
    if n_pairs < 2:
        return 0
    return max(1, int(n_pairs * HELDOUT_FRACTION))


def train_distill(
    teacher: EncoderModel,
    teacher_vocab: Vocab,
    corpus: ParallelCorpus,
    config: DistillConfig,
) -> tuple[EncoderModel, TrainingReport]:
    """Train a freshly initialized student to mimic the frozen teacher.

    The shared vocabulary must cover both languages of the corpus (build it
    over the union of the corpora). The last 10% of pairs are held out of
    training and used for the per-epoch mean parallel cosine metric. The
    teacher is used inference-only and is bit-identical afterwards.
    """
    if config.student.d_model != teacher.config.d_model:
        raise ValidationError(
            f"student d_model {config.student.d_model} != teacher d_model "
            f"{teacher.config.d_model}"
        )
    if config.student.max_len != teacher.config.max_len:
        raise ValidationError(
            f"student max_len {config.student.max_len} != teacher max_len "
            f"{teacher.config.max_len}"
        )
    if config.student.vocab_size != len(teacher_vocab):
        raise ValidationError(
            f"student vocab_size {config.student.vocab_size} != shared vocab size "
            f"{len(teacher_vocab)}"
        )

    student = init_model(config.student)
    report = TrainingReport()
    if config.epochs == 0:
        return student, report

    max_len = teacher.config.max_len
    src_seqs = [tokenize(p.src, teacher_vocab, max_len) for p in corpus.pairs]
    tgt_seqs = [tokenize(p.tgt, teacher_vocab, max_len) for p in corpus.pairs]
    n = len(corpus.pairs)
    held = heldout_split(n)
    train_count = n - held
    held_src = [p.src for p in corpus.pairs[train_count:]]
    held_tgt = [p.tgt for p in corpus.pairs[train_count:]]

    teacher_src = embed_texts(teacher, teacher_vocab, [p.src for p in corpus.pairs])
    optimizer = Adam(student.parameters(), learning_rate=config.learning_rate)

    for epoch in range(1, config.epochs + 1):
        order = rng_for(config.seed, "shuffle", epoch).permutation(train_count)
        loss_sum = 0.0
        seen = 0
        for batch_index, start in enumerate(range(0, train_count, config.batch_size)):
            idx = order[start : start + config.batch_size]
            try:
                student_src = encode_batch(
                    student, [src_seqs[i] for i in idx], record_graph=True
                ).values
                student_tgt = encode_batch(
                    student, [tgt_seqs[i] for i in idx], record_graph=True
                ).values
                loss = distillation_loss(teacher_src[idx], student_src, student_tgt)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            except NumericalInstabilityError as exc:
                raise NumericalInstabilityError(
                    f"epoch {epoch}, batch {batch_index}: {exc}"
                ) from exc
            loss_sum += float(loss.data) * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "loss": loss_sum / seen}
        if held:
            held_emb_src = embed_texts(student, teacher_vocab, held_src)
            held_emb_tgt = embed_texts(student, teacher_vocab, held_tgt)
            row["heldout_cosine"] = mean_parallel_cosine(held_emb_src, held_emb_tgt)
        report.append(row)
    return student, report
