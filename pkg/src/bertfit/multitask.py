"""Multi-task fine-tuning: shared encoder, private per-task classifiers.

Every step draws a single-task batch (proportional to dataset size by
default, or round-robin), computes that task's classification loss, and
updates the shared encoder plus only that task's head. Optional per-task
refinement continues from the multi-task checkpoint at a lower rate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .config import TrainingRecipe
from .model import ClassifierHead, EncoderModel
from .optim import (Adam, LayerwiseLrSchedule, NanGradientError, StlrSchedule,
                    effective_rate, group_parameters)
from .rng import Rng
from .training import batch_logits, finetune


@dataclass
class MixingStrategy:
    kind: str = "proportional"      # proportional | round-robin
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("proportional", "round-robin"):
            raise ValueError(f"unknown mixing kind {self.kind!r}")


@dataclass
class MultiTaskModel:
    encoder: EncoderModel           # shared storage across all tasks
    heads: dict[str, ClassifierHead]

    def head_parameters(self, task):
        return self.heads[task].parameters()

    @classmethod
    def init(cls, encoder: EncoderModel, tasks: dict[str, int],
             feature_width: int, rng: Rng):
        """`tasks` maps task name -> class count."""
        heads = {
            name: ClassifierHead.init(feature_width, n_classes,
                                      rng.derive(i),
                                      dtype=encoder.config.np_dtype,
                                      name=f"task.{name}")
            for i, (name, n_classes) in enumerate(sorted(tasks.items()))}
        return cls(encoder=encoder, heads=heads)


@dataclass
class MultiTaskResult:
    steps_per_task: dict
    history: list
    diverged: bool


def _pick_task(names, sizes, mixing: MixingStrategy, rng: Rng, step: int):
    if mixing.kind == "round-robin":
        return names[step % len(names)]
    total = sum(sizes[n] for n in names)
    r = rng.uniform() * total
    acc = 0.0
    for n in names:
        acc += sizes[n]
        if r < acc:
            return n
    return names[-1]


def multitask_finetune(mt: MultiTaskModel, task_inputs: dict[str, list],
                       recipe: TrainingRecipe,
                       mixing: MixingStrategy | None = None,
                       step_hook=None) -> MultiTaskResult:
    """Joint fine-tuning over >= 2 tasks, one task per batch.

    `task_inputs` maps task name -> prepared train inputs (see
    training.prepare_inputs). Layer-wise decay applies exactly as in
    single-task fine-tuning.
    """
    if len(task_inputs) < 2:
        raise ValueError("multi-task fine-tuning needs at least two tasks")
    for name, inputs in task_inputs.items():
        if not inputs:
            raise ValueError(f"task {name!r} has an empty dataset")
    mixing = mixing or MixingStrategy(seed=recipe.seed)
    names = sorted(task_inputs)
    sizes = {n: len(task_inputs[n]) for n in names}
    rng = Rng(recipe.seed)
    mt.encoder.dropout_rng = rng.derive(0xD0)
    task_rng = Rng(mixing.seed).derive(0x7A)
    order_rng = {n: rng.derive(0x0E ^ hash_name(n)) for n in names}

    layerwise = LayerwiseLrSchedule(base_lr=recipe.base_lr,
                                    decay_factor=recipe.decay_factor)
    schedule = StlrSchedule(total_steps=recipe.train_steps,
                            peak_lr=recipe.base_lr,
                            warmup_proportion=recipe.warmup_proportion)
    groups = group_parameters(mt.encoder,
                              extra_heads=list(mt.heads.values()))
    opt = Adam(groups, clip_norm=recipe.clip_norm)
    top = mt.encoder.config.n_layers + 1

    cursors = {n: len(task_inputs[n]) for n in names}
    orders = {n: list(range(sizes[n])) for n in names}

    def next_batch(task):
        batch = []
        while len(batch) < recipe.batch_size:
            if cursors[task] >= sizes[task]:
                order_rng[task].shuffle(orders[task])
                cursors[task] = 0
            batch.append(task_inputs[task][orders[task][cursors[task]]])
            cursors[task] += 1
        return batch

    counts = {n: 0 for n in names}
    history = []
    diverged = False
    for step in range(1, recipe.train_steps + 1):
        task = _pick_task(names, sizes, mixing, task_rng, step - 1)
        counts[task] += 1
        batch = next_batch(task)
        labels = np.array([b.label if not hasattr(b, "fractions")
                           else b.fractions[0].label for b in batch])
        try:
            with ad.Tape() as tape:
                logits = batch_logits(mt.encoder, mt.heads[task], batch,
                                      recipe, None, mode="train")
                loss = ad.cross_entropy(logits, labels)
            if not np.isfinite(loss.data):
                raise NanGradientError(f"non-finite loss at step {step}")
            opt.zero_grad()
            # only the shared encoder and the sampled task's head receive
            # gradients; the other heads stay bitwise-unchanged this step
            params = mt.encoder.parameters() + \
                mt.heads[task].parameters()
            ad.backward(tape, loss, parameters=params)
            rates = {g.depth: effective_rate(g, layerwise, schedule, step,
                                             top) for g in groups}
            opt.step(rates)
        except (NanGradientError, ad.NumericalError):
            diverged = True
            break
        if step % 50 == 0:
            history.append({"step": step, "task": task,
                            "loss": float(loss.data)})
        if step_hook:
            step_hook(step, task, mt)
    return MultiTaskResult(steps_per_task=counts, history=history,
                           diverged=diverged)


def per_task_refine(mt: MultiTaskModel, task: str, train_inputs,
                    val_inputs, recipe: TrainingRecipe,
                    lower_rate: float | None = None):
    """Single-task fine-tuning from the multi-task checkpoint.

    Default rate is half the multi-task base rate; only the shared encoder
    and the named task's head are touched. Zero refine steps return the
    checkpoint unchanged.
    """
    rate = lower_rate if lower_rate is not None else recipe.base_lr / 2
    if rate >= recipe.base_lr:
        raise ValueError("refinement rate must be below the base rate")
    if recipe.train_steps == 0:
        return None
    refine_recipe = replace(recipe, base_lr=rate)
    return finetune(mt.encoder, mt.heads[task], train_inputs, val_inputs,
                    refine_recipe)


def hash_name(name: str) -> int:
    """Stable small hash (builtin hash is salted per process)."""
    h = 0
    for ch in name:
        h = (h * 131 + ord(ch)) & 0xFFFFFFFF
    return h
