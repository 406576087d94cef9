#!/usr/bin/env python3
"""Fine-tune the encoder on the synthetic marker-order task end to end.

Generates the data, builds a vocabulary, trains from random init with the
known-good benchmark recipe, and prints validation/test error. Runs in a
few minutes on one CPU core.
"""

import argparse
import time

from bertfit.data import split_validation
from bertfit.model import ClassifierHead, init_model
from bertfit.rng import Rng
from bertfit.tokenizer import build_vocab
from bertfit.toytask import make_marker_task, marker_benchmark, \
    marker_vocab_corpus
from bertfit.training import MetricsLog, finetune, prepare_inputs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--n-test", type=int, default=500)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--metrics-out", default=None,
                    help="optional JSON-lines metrics path")
    args = ap.parse_args()

    vocab = build_vocab(marker_vocab_corpus(), 60)
    train_full, test = make_marker_task(args.n_train, args.n_test,
                                        seed=args.seed)
    train, val = split_validation(train_full, 0.1, 0)
    config, recipe = marker_benchmark(len(vocab))
    model = init_model(config, Rng(1))
    head = ClassifierHead.init(config.hidden, 2, Rng(2))

    metrics = MetricsLog(args.metrics_out) if args.metrics_out else None
    t0 = time.monotonic()
    res = finetune(model, head,
                   prepare_inputs(train, vocab, recipe),
                   prepare_inputs(val, vocab, recipe), recipe,
                   test_inputs=prepare_inputs(test, vocab, recipe),
                   metrics=metrics)
    if metrics:
        metrics.close()
    elapsed = time.monotonic() - t0
    print(f"train {len(train)} / val {len(val)} / test {len(test)} docs, "
          f"{recipe.train_steps} steps in {elapsed:.0f}s")
    if res.diverged:
        print("run diverged")
    else:
        print(f"best val error {res.best_val_error:.2f}% "
              f"(epoch {res.best_epoch}), test error {res.test_error:.2f}%")


if __name__ == "__main__":
    main()
