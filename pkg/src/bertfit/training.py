"""Single-task fine-tuning loop, evaluation, and metrics logging.

Training follows the paper-style recipe: slanted triangular schedule with
layer-wise decreasing rates, best-model selection on the validation split
across up to `epochs` evaluation rounds (ties go to the earliest), and
JSON-lines metrics. Divergence (NaN loss/gradient) ends the run with a
`diverged` flag instead of crashing.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import TrainingRecipe
from .data import Dataset
from .longtext import FractionCombiner, chunk, combine, truncate
from .model import (ClassifierHead, EncoderModel, class_logits, encode_batch,
                    select_features)
from .optim import (Adam, LayerwiseLrSchedule, NanGradientError, StlrSchedule,
                    effective_rate, group_parameters)
from .rng import Rng
from .tokenizer import Vocabulary, encode, tokenize


@dataclass
class MetricsRecord:
    step: int
    split: str
    loss: float
    error_rate: float               # percent, 100 * (1 - accuracy)
    lr: float
    wall_clock: float

    def to_json(self) -> str:
        return json.dumps(
            {"step": self.step, "split": self.split,
             "loss": round(self.loss, 8),
             "error_rate": round(self.error_rate, 6),
             "lr": self.lr, "wall_clock": self.wall_clock},
            sort_keys=True)


class MetricsLog:
    def __init__(self, path=None, strict=False):
        self.path = path
        self.strict = strict        # strict mode zeroes wall-clock fields
        self.records: list[MetricsRecord] = []
        self._fh = open(path, "w", encoding="utf-8") if path else None
        self._t0 = time.monotonic()

    def add(self, step, split, loss, error_rate, lr):
        wall = 0.0 if self.strict else time.monotonic() - self._t0
        rec = MetricsRecord(step, split, float(loss), float(error_rate),
                            float(lr), wall)
        self.records.append(rec)
        if self._fh:
            self._fh.write(rec.to_json() + "\n")
            self._fh.flush()
        return rec

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def prepare_inputs(dataset: Dataset, vocab: Vocabulary,
                   recipe: TrainingRecipe):
    """Tokenize and route every example through the long-text strategy.

    Truncation strategies yield one TokenizedSequence per example;
    hierarchical ones a ChunkedDocument.
    """
    strat = recipe.truncation()
    out = []
    for ex in dataset.examples:
        tokens = tokenize(ex.text, vocab)
        if strat is not None:
            kept = truncate(tokens, strat)
            out.append(encode(kept, None, recipe.max_len, vocab,
                              label=ex.label))
        else:
            out.append(chunk(tokens, vocab, capacity=recipe.capacity,
                             label=ex.label))
    return out


def _stack(seqs):
    ids = np.array([s.token_ids for s in seqs])
    segs = np.array([s.segment_ids for s in seqs])
    mask = np.array([s.attention_mask for s in seqs])
    return ids, segs, mask


def batch_logits(model: EncoderModel, head: ClassifierHead, batch,
                 recipe: TrainingRecipe, combiner: FractionCombiner | None,
                 mode: str):
    """Class logits for a batch of prepared inputs (either route)."""
    if combiner is None:
        ids, segs, mask = _stack(batch)
        outs = encode_batch(model, ids, segs, mask, mode=mode)
        feats = select_features(outs, recipe.layer_selection)
        return class_logits(feats, head)
    # hierarchical: encode all fractions of all documents as one batch,
    # then pool per document in fraction order
    flat = [frac for doc in batch for frac in doc.fractions]
    ids, segs, mask = _stack(flat)
    outs = encode_batch(model, ids, segs, mask, mode=mode)
    cls_all = ad.select(outs[-1], 0, 1)          # (sum_k, H)
    feats = []
    offset = 0
    for doc in batch:
        feats.append(_rows_combine(cls_all, offset, doc.k, combiner))
        offset += doc.k
    stacked = ad.concat(
        [ad.reshape(f, (1, f.shape[0])) for f in feats], axis=0)
    return class_logits(stacked, head)


def _rows_combine(cls_all, offset, k, combiner):
    return combine(ad.slice_rows(cls_all, offset, k), combiner)


class DivergedError(RuntimeError):
    pass


@dataclass
class FinetuneResult:
    best_val_error: float
    best_epoch: int
    test_error: float | None
    diverged: bool
    history: list
    model: EncoderModel
    head: ClassifierHead
    combiner: FractionCombiner | None


def evaluate(model: EncoderModel, head: ClassifierHead, inputs,
             recipe: TrainingRecipe, combiner=None, batch_size=64):
    """Error rate (%) and mean loss with dropout off."""
    n_total, n_wrong, loss_sum = 0, 0, 0.0
    for i in range(0, len(inputs), batch_size):
        batch = inputs[i:i + batch_size]
        labels = np.array([b.label if hasattr(b, "label") and b.label
                           is not None else b.fractions[0].label
                           for b in batch])
        with ad.Tape():
            logits = batch_logits(model, head, batch, recipe, combiner,
                                  mode="eval")
            loss = ad.cross_entropy(logits, labels)
        pred = logits.data.argmax(axis=-1)
        n_wrong += int((pred != labels).sum())
        n_total += len(batch)
        loss_sum += float(loss.data) * len(batch)
    return 100.0 * n_wrong / n_total, loss_sum / n_total


def finetune(model: EncoderModel, head: ClassifierHead,
             train_inputs, val_inputs, recipe: TrainingRecipe,
             combiner: FractionCombiner | None = None,
             test_inputs=None, metrics: MetricsLog | None = None,
             eval_hook=None):
    """Train with STLR + layer-wise rates; keep the best validation model.

    `train_inputs` etc. come from :func:`prepare_inputs`. Returns a
    FinetuneResult whose model/head hold the best-validation parameters.
    """
    rng = Rng(recipe.seed)
    model.dropout_rng = rng.derive(0xD0)
    order_rng = rng.derive(0x0E)
    heads = [head] + ([combiner] if combiner is not None else [])
    groups = group_parameters(model, extra_heads=heads)
    layerwise = LayerwiseLrSchedule(base_lr=recipe.base_lr,
                                    decay_factor=recipe.decay_factor)
    schedule = StlrSchedule(total_steps=recipe.train_steps,
                            peak_lr=recipe.base_lr,
                            warmup_proportion=recipe.warmup_proportion)
    opt = Adam(groups, clip_norm=recipe.clip_norm)
    top = model.config.n_layers + 1

    steps_per_epoch = max(1, recipe.train_steps // recipe.epochs)
    order = list(range(len(train_inputs)))
    labels_of = lambda batch: np.array(
        [b.label if not hasattr(b, "fractions") else b.fractions[0].label
         for b in batch])

    best = {"error": float("inf"), "epoch": -1, "params": None}
    history = []
    diverged = False
    step = 0
    pos = len(order)                 # forces a shuffle on first use
    while step < recipe.train_steps and not diverged:
        step += 1
        batch = []
        while len(batch) < recipe.batch_size:
            if pos >= len(order):
                order_rng.shuffle(order)
                pos = 0
            batch.append(train_inputs[order[pos]])
            pos += 1
        labels = labels_of(batch)
        try:
            with ad.Tape() as tape:
                logits = batch_logits(model, head, batch, recipe, combiner,
                                      mode="train")
                loss = ad.cross_entropy(logits, labels)
            if not np.isfinite(loss.data):
                raise DivergedError(f"non-finite loss at step {step}")
            opt.zero_grad()
            params = model.parameters() + [p for h in heads
                                           for p in h.parameters()]
            ad.backward(tape, loss, parameters=params)
            rates = {g.depth: effective_rate(g, layerwise, schedule, step,
                                             top) for g in groups}
            opt.step(rates)
        except (DivergedError, NanGradientError, ad.NumericalError):
            diverged = True
            break
        pred = logits.data.argmax(axis=-1)
        train_err = 100.0 * float((pred != labels).mean())
        if metrics and step % 10 == 0:
            metrics.add(step, "train", float(loss.data), train_err,
                        rates[top])
        end_of_epoch = step % steps_per_epoch == 0 or \
            step == recipe.train_steps
        if end_of_epoch and val_inputs:
            epoch = step // steps_per_epoch
            val_err, val_loss = evaluate(model, head, val_inputs, recipe,
                                         combiner)
            history.append({"epoch": epoch, "step": step,
                            "val_error": val_err, "val_loss": val_loss})
            if metrics:
                metrics.add(step, "validation", val_loss, val_err,
                            rates[top])
            if eval_hook:
                eval_hook(epoch, step, model, head)
            if val_err < best["error"]:   # strict <: ties keep the earliest
                best.update(error=val_err, epoch=epoch, params=_snapshot(
                    model, heads))
    if best["params"] is not None:
        _restore(model, heads, best["params"])
    test_error = None
    if test_inputs is not None and not diverged:
        test_error, test_loss = evaluate(model, head, test_inputs, recipe,
                                         combiner)
        if metrics:
            metrics.add(step, "test", test_loss, test_error, 0.0)
    return FinetuneResult(
        best_val_error=best["error"], best_epoch=best["epoch"],
        test_error=test_error, diverged=diverged, history=history,
        model=model, head=head, combiner=combiner)


def _snapshot(model, heads):
    snap = {f"model.{k}": v.data.copy() for k, v in model.params.items()}
    for i, h in enumerate(heads):
        for j, p in enumerate(h.parameters()):
            snap[f"head{i}.{j}"] = p.data.copy()
    return snap


def _restore(model, heads, snap):
    for k, v in model.params.items():
        v.data = snap[f"model.{k}"].copy()
    for i, h in enumerate(heads):
        for j, p in enumerate(h.parameters()):
            p.data = snap[f"head{i}.{j}"].copy()
