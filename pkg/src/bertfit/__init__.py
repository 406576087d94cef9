"""Desk-scale BERT-style fine-tuning toolkit.

A self-contained implementation of the classic text-classification
fine-tuning recipes -- long-text handling, layer selection, layer-wise
learning-rate decay, further pre-training (MLM + NSP), multi-task
fine-tuning, and few-shot evaluation -- over a miniature randomly
initialized encoder with its own tape-based reverse-mode autodiff.
"""

from .autodiff import Tape, Tensor, backward, grad_check
from .model import EncoderConfig, EncoderModel, LayerSelection, init_model
from .rng import Rng

__all__ = [
    "Tape", "Tensor", "backward", "grad_check",
    "EncoderConfig", "EncoderModel", "LayerSelection", "init_model",
    "Rng",
]

__version__ = "0.1.0"
