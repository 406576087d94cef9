"""Further pre-training: corpus assembly, MLM/NSP example construction,
and the joint training loop.

Corpus scopes mirror the three pre-training regimes: within-task (one
dataset's training documents), in-domain (all datasets sharing a domain
label), cross-domain (any mix). Overlapping dataset pairs are deduplicated
by exact normalized-text hash.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .model import EncoderModel, encode_batch, mlm_logits, nsp_logits
from .optim import Adam, StlrSchedule
from .rng import Rng
from .tokenizer import TokenizedSequence, Vocabulary, segment_sentences, tokenize


@dataclass
class PretrainScope:
    kind: str                       # within-task | in-domain | cross-domain
    dataset_ids: list
    domains: dict = field(default_factory=dict)  # dataset id -> domain label

    def __post_init__(self):
        if self.kind not in ("within-task", "in-domain", "cross-domain"):
            raise ValueError(f"unknown scope kind {self.kind!r}")
        if not self.dataset_ids:
            raise ValueError("empty pre-training scope")
        if self.kind == "within-task" and len(self.dataset_ids) != 1:
            raise ValueError("within-task scope takes exactly one dataset")
        if self.kind == "in-domain":
            labels = {self.domains.get(d) for d in self.dataset_ids}
            if len(labels) != 1 or None in labels:
                raise ValueError(
                    f"in-domain scope mixes domain labels: {sorted(map(str, labels))}")


@dataclass
class MaskingPolicy:
    mask_prob: float = 0.15
    mask_token_frac: float = 0.8    # of corrupted: -> [MASK]
    random_frac: float = 0.1        # of corrupted: -> random token
    keep_frac: float = 0.1          # of corrupted: left unchanged

    def __post_init__(self):
        s = self.mask_token_frac + self.random_frac + self.keep_frac
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"corruption fractions sum to {s}, not 1")


@dataclass
class PretrainExample:
    seq: TokenizedSequence
    mlm_positions: list[int]
    mlm_labels: list[int]
    is_next: bool


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def _doc_hash(text: str) -> str:
    return hashlib.sha256(_normalize(text).encode("utf-8")).hexdigest()


def assemble_corpus(scope: PretrainScope, datasets: dict[str, Dataset],
                    dedup_pairs=(), exclude_texts=()) -> list[list[str]]:
    """Concatenate training documents of the scope, sentence-segmented.

    Returns a list of documents, each a list of sentences, in dataset-id
    then document order (deterministic). For dataset pairs listed in
    `dedup_pairs`, exact duplicates (normalized whitespace, case-folded)
    are kept once; documents matching any `exclude_texts` entry (e.g. a
    held-out test set) are dropped.
    """
    dedup_ids = set()
    for a, b in dedup_pairs:
        dedup_ids.update((a, b))
    excluded = {_doc_hash(t) for t in exclude_texts}
    seen = set()
    docs = []
    for ds_id in scope.dataset_ids:
        ds = datasets[ds_id]
        language = "chinese" if ds_id == "sogou" else "english"
        for ex in ds.examples:
            h = _doc_hash(ex.text)
            if h in excluded:
                continue
            if ds_id in dedup_ids:
                if h in seen:
                    continue
                seen.add(h)
            sents = segment_sentences(ex.text, language)
            if sents:
                docs.append(sents)
    return docs


def write_corpus(docs, path):
    """One sentence per line, blank line between documents."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, doc in enumerate(docs):
            if i:
                fh.write("\n")
            for sent in doc:
                fh.write(sent + "\n")


def read_corpus(path):
    docs, cur = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                cur.append(line)
            elif cur:
                docs.append(cur)
                cur = []
    if cur:
        docs.append(cur)
    return docs


def build_nsp_pair(doc_index: int, docs, rng: Rng, force_is_next=None):
    """Pick (segA sentence, segB sentence, is_next) for one document.

    With p=0.5 segB is the actual next sentence; otherwise a random
    sentence from another document. Single-sentence documents fall back to
    a random (is_next=False) pair.
    """
    doc = docs[doc_index]
    if len(doc) < 2:
        is_next = False
    elif force_is_next is not None:
        is_next = force_is_next
    else:
        is_next = rng.uniform() < 0.5
    if len(doc) >= 2:
        i = rng.randint(0, len(doc) - 1)
        seg_a = doc[i]
    else:
        seg_a = doc[0]
        i = 0
    if is_next:
        seg_b = doc[i + 1]
    else:
        if len(docs) > 1:
            j = rng.randint(0, len(docs) - 1)
            if j >= doc_index:
                j += 1
            other = docs[j]
        else:
            other = doc
        seg_b = other[rng.randint(0, len(other))]
    return seg_a, seg_b, is_next


def trim_pair(tok_a: list, tok_b: list, max_len: int):
    """Trim the longer segment from its end until both fit max_len-3."""
    budget = max_len - 3
    tok_a, tok_b = list(tok_a), list(tok_b)
    while len(tok_a) + len(tok_b) > budget:
        longer = tok_a if len(tok_a) >= len(tok_b) else tok_b
        longer.pop()
    return tok_a, tok_b


def apply_masking(seq: TokenizedSequence, policy: MaskingPolicy, rng: Rng,
                  vocab: Vocabulary, is_next: bool = False) -> PretrainExample:
    """Corrupt content positions independently per the 15% / 80-10-10 rule."""
    specials = {vocab.pad_id, vocab.cls_id, vocab.sep_id}
    ids = list(seq.token_ids)
    positions, labels = [], []
    for pos, (tid, real) in enumerate(zip(ids, seq.attention_mask)):
        if not real or tid in specials:
            continue
        if rng.uniform() >= policy.mask_prob:
            continue
        positions.append(pos)
        labels.append(tid)
        r = rng.uniform()
        if r < policy.mask_token_frac:
            ids[pos] = vocab.mask_id
        elif r < policy.mask_token_frac + policy.random_frac:
            ids[pos] = rng.randint(len(vocab.id_to_token))
        # else: unchanged
    corrupted = TokenizedSequence(
        token_ids=ids, segment_ids=list(seq.segment_ids),
        position_ids=list(seq.position_ids),
        attention_mask=list(seq.attention_mask), label=seq.label)
    return PretrainExample(seq=corrupted, mlm_positions=positions,
                           mlm_labels=labels, is_next=is_next)


def make_pretrain_example(doc_index: int, docs, vocab: Vocabulary,
                          policy: MaskingPolicy, max_len: int,
                          rng: Rng) -> PretrainExample:
    from .tokenizer import encode
    seg_a, seg_b, is_next = build_nsp_pair(doc_index, docs, rng)
    tok_a = tokenize(seg_a, vocab)
    tok_b = tokenize(seg_b, vocab)
    tok_a, tok_b = trim_pair(tok_a, tok_b, max_len)
    seq = encode(tok_a, tok_b, max_len, vocab)
    return apply_masking(seq, policy, rng, vocab, is_next=is_next)


def pretrain_batch_loss(model: EncoderModel, examples, mode="train"):
    """Summed MLM (masked positions only) + NSP cross-entropy."""
    ids = np.array([ex.seq.token_ids for ex in examples])
    segs = np.array([ex.seq.segment_ids for ex in examples])
    mask = np.array([ex.seq.attention_mask for ex in examples])
    outs = encode_batch(model, ids, segs, mask, mode=mode)
    B, S = ids.shape
    V = model.config.vocab_size
    logits = mlm_logits(model, outs)                    # (B, S, V)
    flat = ad.reshape(logits, (B * S, V))
    labels = np.zeros(B * S, dtype=np.int64)
    weights = np.zeros(B * S, dtype=model.config.np_dtype)
    for bi, ex in enumerate(examples):
        for pos, lab in zip(ex.mlm_positions, ex.mlm_labels):
            labels[bi * S + pos] = lab
            weights[bi * S + pos] = 1.0
    nsp = nsp_logits(model, outs)                       # (B, 2)
    nsp_labels = np.array([int(ex.is_next) for ex in examples])
    nsp_loss = ad.cross_entropy(nsp, nsp_labels)
    if weights.sum() == 0:      # batch with no corrupted positions
        return nsp_loss, 0.0, float(nsp_loss.data)
    mlm_loss = ad.cross_entropy(flat, labels, weights)
    return ad.add(mlm_loss, nsp_loss), float(mlm_loss.data), \
        float(nsp_loss.data)


@dataclass
class PretrainResult:
    checkpoints: list               # (step, path) pairs
    history: list                   # per-log dicts


def further_pretrain(model: EncoderModel, docs, vocab: Vocabulary,
                     steps: int, schedule: StlrSchedule, rng: Rng,
                     batch_size: int = 32, max_len: int = 128,
                     policy: MaskingPolicy | None = None,
                     checkpoint_every: int | None = None,
                     checkpoint_dir=None, log_every: int = 50):
    """Joint MLM+NSP training loop over an assembled corpus.

    Saves periodic checkpoints (cadence plus the final step) when
    `checkpoint_every` and `checkpoint_dir` are given. All depths train at
    the schedule rate (no layer-wise decay during further pre-training).
    """
    from .checkpoint import save_checkpoint
    from .optim import group_parameters
    if len(docs) < 1:
        raise ValueError("corpus is empty")
    policy = policy or MaskingPolicy()
    groups = group_parameters(model)
    opt = Adam(groups)
    top = model.config.n_layers + 1
    model.dropout_rng = rng.derive(0xD0)
    sampler = rng.derive(0x5A)
    example_rng_base = rng.derive(0xE6)
    result = PretrainResult(checkpoints=[], history=[])
    counter = 0
    for step in range(1, steps + 1):
        batch = []
        for _ in range(batch_size):
            di = sampler.randint(len(docs))
            batch.append(make_pretrain_example(
                di, docs, vocab, policy, max_len,
                example_rng_base.derive(counter)))
            counter += 1
        with ad.Tape() as tape:
            loss, mlm_l, nsp_l = pretrain_batch_loss(model, batch)
        opt.zero_grad()
        ad.backward(tape, loss, parameters=model.parameters())
        lr = schedule.rate(step)
        opt.step({d: lr for d in range(top + 1)})
        if step % log_every == 0 or step == 1 or step == steps:
            result.history.append(
                {"step": step, "loss": float(loss.data), "mlm_loss": mlm_l,
                 "nsp_loss": nsp_l, "lr": lr})
        at_cadence = checkpoint_every and step % checkpoint_every == 0
        if checkpoint_dir and (at_cadence or step == steps):
            path = f"{checkpoint_dir}/pretrain_step{step}.ckpt"
            save_checkpoint(path, model.named_parameters(),
                            meta={"config": model.config.to_dict(),
                                  "vocab_hash": vocab.content_hash(),
                                  "step": step})
            result.checkpoints.append((step, path))
    return result


def held_out_mlm_loss(model: EncoderModel, docs, vocab: Vocabulary,
                      rng: Rng, n_examples: int = 64, max_len: int = 128,
                      policy: MaskingPolicy | None = None):
    """Average MLM+NSP loss over freshly built examples, dropout off."""
    policy = policy or MaskingPolicy()
    examples = []
    i = 0
    while len(examples) < n_examples:
        di = i % len(docs)
        ex = make_pretrain_example(di, docs, vocab, policy, max_len,
                                   rng.derive(i))
        if ex.mlm_positions:
            examples.append(ex)
        i += 1
        if i > 20 * n_examples:
            raise RuntimeError("could not build held-out examples")
    with ad.Tape():
        loss, mlm_l, nsp_l = pretrain_batch_loss(model, examples, mode="eval")
    return float(loss.data), mlm_l, nsp_l
