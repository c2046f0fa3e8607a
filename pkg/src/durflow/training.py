"""Training loops for both duration model kinds.

Sentences are bucketed by exact length so every batch is rectangular
with an all-ones mask; batch order is reshuffled each epoch from a
dedicated generator, so a (corpus, seed, steps) triple always produces
the same loss trajectory bit for bit.
"""

from __future__ import annotations

import numpy as np

from durflow import numerics as nm
from durflow.duration import DurationModel, cfm_pair, log_targets, masked_mse
from durflow.data import DurationCorpus, zero_allowed
from durflow.numerics import Adam, Tensor, record

BATCH_STREAM = 11
NOISE_STREAM = 12


def _prepare(corpus: DurationCorpus):
    """Group sentence (ids, log-target) pairs by sequence length."""
    buckets = {}
    for s in corpus.sentences:
        ids = s.seq.ids
        targets = log_targets(s.durations, zero_allowed(ids))
        buckets.setdefault(ids.size, []).append((ids, targets))
    return buckets


def _batch_plan(buckets, batch_size, rng):
    """One epoch of batches: shuffle within buckets, then shuffle batches."""
    batches = []
    for length in sorted(buckets):
        group = buckets[length]
        order = rng.permutation(len(group))
        for lo in range(0, len(group), batch_size):
            chunk = [group[i] for i in order[lo:lo + batch_size]]
            ids = np.stack([c[0] for c in chunk])
            targets = np.stack([c[1] for c in chunk])
            batches.append((ids, targets))
    rng.shuffle(batches)
    return batches


def train_model(model: DurationModel, corpus: DurationCorpus, steps: int,
                batch_size: int = 8, lr: float = 1e-3, seed: int = 0,
                loss_path=None) -> np.ndarray:
    """Run Adam for `steps` updates; returns the per-step loss trajectory.

    Optionally streams a `step,loss` CSV to loss_path. A non-finite
    loss aborts with a diagnostic rather than training onward.
    """
    buckets = _prepare(corpus)
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, BATCH_STREAM]))
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, NOISE_STREAM]))
    opt = Adam(model.params(), lr=lr)
    losses = np.empty(steps)

    writer = open(loss_path, "w", encoding="utf-8") if loss_path else None
    try:
        if writer:
            writer.write("step,loss\n")
        step = 0
        while step < steps:
            for ids, targets in _batch_plan(buckets, batch_size, batch_rng):
                if step >= steps:
                    break
                loss_value = _train_step(model, ids, targets, noise_rng, opt)
                if not np.isfinite(loss_value):
                    raise FloatingPointError(
                        f"loss became non-finite at step {step}"
                    )
                losses[step] = loss_value
                if writer:
                    writer.write(f"{step},{loss_value!r}\n")
                step += 1
    finally:
        if writer:
            writer.close()
    model.trained_steps += steps
    return losses


def _train_step(model, ids, targets, noise_rng, opt) -> float:
    batch, t_len = ids.shape
    mask = np.ones((batch, 1, t_len))
    ref = targets.reshape(batch, 1, t_len)
    with record() as tape:
        cond = model.encoder(ids)  # (B, D, T)
        if model.kind == "det":
            pred = model.predictor(cond)
            loss = masked_mse(pred, Tensor(ref), mask)
        else:
            t = noise_rng.uniform(size=batch)
            x0 = noise_rng.standard_normal((batch, 1, t_len))
            x_t, u_t = cfm_pair(ref, x0, t[:, None, None])
            v = model.predictor(Tensor(x_t), t, cond)
            loss = masked_mse(v, Tensor(u_t), mask)
    value = loss.item()
    tape.backward(loss)
    opt.step()
    return value
