"""Adam with layer-wise decreasing learning rates and the slanted
triangular schedule.

Parameters are grouped by depth: embeddings at 0, block i at i+1, heads
and task classifiers at L+1. Group l trains at rate stlr(step) * xi^(L+1-l)
so adjacent depths differ by exactly the decay factor xi; xi=1 recovers
plain Adam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np



class NanGradientError(RuntimeError):
    """Raised when a gradient goes NaN; names the offending tensor."""


@dataclass
class ParameterGroup:
    depth: int
    params: list
    multiplier: float = 1.0


@dataclass
class LayerwiseLrSchedule:
    base_lr: float = 2e-5           # rate of the top group (depth L+1)
    decay_factor: float = 0.95      # xi, in (0, 1]

    def __post_init__(self):
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay factor must be in (0, 1]")

    def multiplier(self, depth: int, top_depth: int) -> float:
        return self.decay_factor ** (top_depth - depth)


@dataclass
class StlrSchedule:
    total_steps: int
    peak_lr: float = 2e-5
    warmup_proportion: float = 0.1

    def rate(self, step: int) -> float:
        return stlr(step, self.total_steps, self.warmup_proportion,
                    self.peak_lr)


def stlr(step: int, total_steps: int, warmup: float, peak: float) -> float:
    """Piecewise-linear: 0 -> peak over the warm-up, peak -> 0 after."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0.0 < warmup < 1.0:
        raise ValueError("warmup proportion must be in (0, 1)")
    cut = warmup * total_steps
    if step > total_steps:
        import warnings
        warnings.warn(f"step {step} past total_steps {total_steps}; rate 0")
        return 0.0
    if step <= cut:
        return peak * step / cut
    return peak * (total_steps - step) / ((1.0 - warmup) * total_steps)


def group_parameters(model, extra_heads=None) -> list[ParameterGroup]:
    """Partition model parameters by depth prefix.

    `extra_heads` (task classifiers, fraction combiners, ...) join the
    heads group at depth L+1. Every tensor lands in exactly one group.
    """
    L = model.config.n_layers
    groups = {d: [] for d in range(L + 2)}
    for name, p in model.params.items():
        if name.startswith("emb."):
            groups[0].append(p)
        elif name.startswith("block"):
            i = int(name[5:name.index(".")])
            groups[i + 1].append(p)
        elif name.startswith("head."):
            groups[L + 1].append(p)
        else:
            raise ValueError(f"cannot place parameter {name!r}")
    if extra_heads:
        for h in extra_heads:
            groups[L + 1].extend(h.parameters() if hasattr(h, "parameters")
                                 else [h])
    return [ParameterGroup(depth=d, params=groups[d]) for d in sorted(groups)]


def effective_rate(group: ParameterGroup, layerwise: LayerwiseLrSchedule,
                   schedule: StlrSchedule, step: int, top_depth: int) -> float:
    return schedule.rate(step) * layerwise.multiplier(group.depth, top_depth)


class Adam:
    """Standard Adam with bias correction; one rate per parameter group."""

    def __init__(self, groups: list[ParameterGroup], beta1=0.9, beta2=0.999,
                 eps=1e-8, clip_norm: float | None = None):
        self.groups = groups
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data)
                  for g in groups for p in g.params}
        self.v = {id(p): np.zeros_like(p.data)
                  for g in groups for p in g.params}

    def step(self, rates: dict[int, float]):
        """Apply one update; `rates` maps group depth -> learning rate."""
        if self.clip_norm is not None:
            self._clip()
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for g in self.groups:
            lr = rates[g.depth]
            for p in g.params:
                grad = p.grad
                if grad is None:
                    continue
                if np.isnan(grad).any():
                    raise NanGradientError(
                        f"NaN gradient in parameter {p.name or id(p)}")
                m = self.m[id(p)]
                v = self.v[id(p)]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                mhat = m / c1
                vhat = v / c2
                p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(
                    p.data.dtype)

    def _clip(self):
        total = 0.0
        for g in self.groups:
            for p in g.params:
                if p.grad is not None:
                    g64 = p.grad.astype(np.float64)
                    total += float((g64 * g64).sum())
        norm = np.sqrt(total)
        if norm > self.clip_norm:
            scale = self.clip_norm / (norm + 1e-12)
            for g in self.groups:
                for p in g.params:
                    if p.grad is not None:
                        p.grad *= scale

    def zero_grad(self):
        for g in self.groups:
            for p in g.params:
                p.grad = None
