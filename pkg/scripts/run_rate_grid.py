#!/usr/bin/env python3
"""Learning-rate x decay-factor grid and rate sweep on the marker task.

Reproduces the report shapes at desk scale: a 2x4 grid over base rates
{2.5e-5, 2e-5} and decay factors {1.0, 0.95, 0.9, 0.85}, and a 4-point
rate sweep {2e-5, 5e-5, 1e-4, 4e-4} with per-epoch train/test curves.
Diverged cells are recorded in the artifacts rather than raised.
"""

import argparse

from bertfit.config import TrainingRecipe
from bertfit.data import split_validation
from bertfit.grid import run_grid, run_lr_sweep
from bertfit.model import EncoderConfig
from bertfit.tokenizer import build_vocab
from bertfit.toytask import make_marker_task, marker_vocab_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-train", type=int, default=400)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--grid-out", default="grid_report.tsv")
    ap.add_argument("--sweep-out", default="rate_sweep.jsonl")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    vocab = build_vocab(marker_vocab_corpus(), 60)
    train_full, test = make_marker_task(args.n_train, 200, seed=args.seed)
    train, val = split_validation(train_full, 0.1, 0)
    config = EncoderConfig(n_layers=2, hidden=32, n_heads=2,
                           vocab_size=len(vocab), max_positions=32,
                           dropout=0.1)
    recipe = TrainingRecipe(long_text="head_only", train_steps=args.steps,
                            batch_size=16, max_len=32, epochs=4, seed=0)

    cells = run_grid(config, recipe, vocab, train, val, test,
                     out_tsv=args.grid_out)
    n_div = sum(c.diverged for c in cells)
    print(f"grid: {len(cells)} cells ({n_div} diverged) -> {args.grid_out}")

    curves = run_lr_sweep(config, recipe, vocab, train, val, test,
                          out_jsonl=args.sweep_out)
    for lr, curve in sorted(curves.items()):
        if curve["diverged"]:
            print(f"  lr {lr:g}: diverged")
        else:
            last = curve["epochs"][-1]
            print(f"  lr {lr:g}: final train {last['train_error']:.1f}% / "
                  f"test {last['test_error']:.1f}%")
    print(f"sweep curves -> {args.sweep_out}")


if __name__ == "__main__":
    main()
