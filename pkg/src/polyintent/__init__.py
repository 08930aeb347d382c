"""polyintent: desk-scale multilingual sentence-encoder training, distillation,
and few-shot intent evaluation, on a self-contained float64 autodiff core."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    autodiff,
    checkpoint,
    data,
    distill,
    encoder,
    errors,
    fewshot,
    isotropy,
    linalg,
    optim,
    pretrain,
    tokenizer,
)
