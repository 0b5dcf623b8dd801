"""msnt: desk-scale sentiment analysis for software-engineering text.

Three mini transformer-encoder variants (BERT-like, ALBERT-like,
RoBERTa-like) pretrained from scratch, fine-tuned for 3-class sentiment,
combined by confidence-weighted soft voting and compressed by distillation.
Everything runs on a hand-rolled float64 autodiff core; no deep-learning
framework involved.
"""

import os as _os

# Tiny-matrix workloads lose badly to BLAS thread oversubscription, and
# single-threaded kernels keep runs bit-reproducible.  Only applied when the
# user has not chosen a thread count, and only if numpy is not yet loaded.
if "numpy" not in __import__("sys").modules:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

LABELS = ("negative", "neutral", "positive")
