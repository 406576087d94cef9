"""Synthetic desk-scale benchmark tasks.

The marker-order task: each document contains the two marker words
"alpha" and "beta" among random filler words; the label says which marker
appears first. Solvable only through position information, so it exercises
embeddings, attention, and the classifier end to end.
"""

from __future__ import annotations

from .data import Dataset, Example
from .rng import Rng

FILLERS = ["red", "blue", "green", "gold", "stone", "river", "cloud",
           "light", "paper", "glass", "north", "south", "field", "crane",
           "maple", "owl"]
MARKERS = ("alpha", "beta")


def make_marker_example(rng: Rng, min_len=8, max_len=24, min_sep=6) -> Example:
    """One document; markers are kept `min_sep` words apart so the order
    signal is unambiguous at desk scale."""
    while True:
        n = rng.randint(min_len, max_len + 1)
        words = [FILLERS[rng.randint(len(FILLERS))] for _ in range(n)]
        i = rng.randint(n)
        j = rng.randint(n - 1)
        if j >= i:
            j += 1
        if abs(i - j) < min_sep:
            continue
        words[i] = MARKERS[0]
        words[j] = MARKERS[1]
        return Example(label=0 if i < j else 1, text=" ".join(words))


def make_marker_task(n_train: int, n_test: int, seed: int = 0):
    """Balanced train/test datasets for the marker-order task."""
    rng = Rng(seed)
    def build(n, split):
        examples = []
        while len(examples) < n:
            ex = make_marker_example(rng)
            # keep the classes balanced by construction
            want = len(examples) % 2
            if ex.label == want:
                examples.append(ex)
        return Dataset(name="marker-order", examples=examples, n_classes=2,
                       split=split)
    return build(n_train, "train"), build(n_test, "test")


def marker_vocab_corpus():
    return [" ".join(FILLERS + list(MARKERS))]


def marker_benchmark(vocab_size: int):
    """Known-good encoder config + recipe for the marker-order task.

    Reaches <=5% test error in 1200 steps (a few minutes on one CPU core)
    with 3000 training documents.
    """
    from .config import TrainingRecipe
    from .model import EncoderConfig
    config = EncoderConfig(n_layers=2, hidden=64, n_heads=4,
                           vocab_size=vocab_size, max_positions=32,
                           dropout=0.1)
    recipe = TrainingRecipe(long_text="head_only", base_lr=1e-3,
                            decay_factor=0.95, train_steps=1200,
                            batch_size=32, max_len=32, epochs=4, seed=0)
    return config, recipe
