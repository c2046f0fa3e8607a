"""Diagnostics over trained duration models.

Three experiment families:

* residual_vs_nfe: how integer-like the sampled durations are as a
  function of the number of Euler steps,
* dist_stats: per-class mean/std and mode frequencies of sampled
  durations against the generating law,
* bench_sampling: wall-clock cost of sampling as a function of steps.

Corpus-level sampling derives one random stream per (sentence, rep)
from the option seed, so results do not depend on batching or on how
work is spread over threads. The DURFLOW_THREADS environment variable
caps the worker count (default 1).
"""

from __future__ import annotations

import csv
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from durflow.data import DurationCorpus
from durflow.duration import (
    DurationModel,
    LogDurations,
    SampleOptions,
    fm_sample_batch,
    to_frames,
    quantisation_residual,
)
from durflow.encoder import PAUSE_ID

DEFAULT_NFE_LIST = (1, 2, 4, 8, 10, 16, 32)


def worker_count() -> int:
    """Worker cap from DURFLOW_THREADS; at least 1."""
    try:
        return max(1, int(os.environ.get("DURFLOW_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# corpus-level sampling


def _groups_by_length(corpus: DurationCorpus):
    groups = {}
    for s in corpus.sentences:
        groups.setdefault(len(s.seq), []).append(s)
    return [groups[t] for t in sorted(groups)]


def _group_log_values(model: DurationModel, group, opts: SampleOptions, rep: int):
    """Log-duration rows for one equal-length sentence group.

    FM noise comes from a per-(sentence, rep) stream so the grouping
    itself never influences the sample.
    """
    ids = np.stack([s.seq.ids for s in group])
    cond = model.encoder(ids)  # (B, D, T)
    if model.kind == "det":
        values = model.predictor(cond).data[:, 0, :]
    else:
        t_len = ids.shape[1]
        noise = np.stack([
            opts.temperature
            * np.random.default_rng(
                np.random.SeedSequence([opts.seed, s.sent_id, rep])
            ).standard_normal((1, t_len))
            for s in group
        ])
        values = fm_sample_batch(model, cond, noise, opts.nfe)[:, 0, :]
    return {s.sent_id: values[i] for i, s in enumerate(group)}


def corpus_log_values(model: DurationModel, corpus: DurationCorpus,
                      opts: SampleOptions, rep: int = 0) -> dict:
    """Map sent_id -> log-duration array for every corpus sentence."""
    groups = _groups_by_length(corpus)
    workers = worker_count()
    out = {}
    if workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(
                lambda g: _group_log_values(model, g, opts, rep), groups
            )
            for chunk in results:
                out.update(chunk)
    else:
        for group in groups:
            out.update(_group_log_values(model, group, opts, rep))
    return out


def corpus_frames(model: DurationModel, corpus: DurationCorpus,
                  opts: SampleOptions, reps: int = 1) -> dict:
    """Map sent_id -> list of integer duration arrays, one per realisation."""
    out = {s.sent_id: [] for s in corpus.sentences}
    for rep in range(reps):
        values = corpus_log_values(model, corpus, opts, rep)
        for sent_id, vals in values.items():
            out[sent_id].append(to_frames(LogDurations(vals), opts.min_duration))
    return out


# ---------------------------------------------------------------------------
# residual curves


@dataclass
class ResidualCurve:
    """Mean quantisation residuals per (model, corpus) across NFE values."""

    nfe_values: tuple
    residuals: dict = field(default_factory=dict)  # (model_id, corpus_id) -> tuple

    def add(self, model_id: str, corpus_id: str, values):
        values = tuple(float(v) for v in values)
        if len(values) != len(self.nfe_values):
            raise ValueError("one residual per NFE value required")
        self.residuals[(model_id, corpus_id)] = values

    def merge(self, other: "ResidualCurve") -> "ResidualCurve":
        if other.nfe_values != self.nfe_values:
            raise ValueError("cannot merge curves over different NFE grids")
        merged = ResidualCurve(self.nfe_values, dict(self.residuals))
        merged.residuals.update(other.residuals)
        return merged

    def aggregate(self, model_id: str) -> tuple:
        """Arithmetic mean across corpora at each NFE value."""
        rows = [v for (m, _), v in sorted(self.residuals.items()) if m == model_id]
        if not rows:
            raise ValueError(f"no entries for model {model_id!r}")
        return tuple(float(np.mean(col)) for col in zip(*rows))


def residual_vs_nfe(model: DurationModel, corpus_val: DurationCorpus,
                    nfe_list=DEFAULT_NFE_LIST, opts: SampleOptions = None,
                    model_id: str = None, corpus_id: str = None) -> ResidualCurve:
    """Mean residual over the whole validation set at each NFE count.

    The deterministic model is evaluated once and replicated, since its
    output does not depend on the step count. For the flow model, each
    sentence keeps the same initial noise across NFE values (one stream
    per sentence), which makes the curve a paired comparison.
    """
    nfe_list = tuple(int(n) for n in nfe_list)
    if list(nfe_list) != sorted(set(nfe_list)):
        raise ValueError("nfe_list must be strictly ascending")
    if model.trained_steps == 0:
        raise ValueError("model has not been trained")
    opts = opts or SampleOptions()
    model_id = model_id or model.kind
    corpus_id = corpus_id or corpus_val.spec.style

    def pooled_residual(values_by_id):
        vals = np.concatenate([values_by_id[s.sent_id] for s in corpus_val.sentences])
        return quantisation_residual(LogDurations(vals))

    curve = ResidualCurve(nfe_list)
    if model.kind == "det":
        r = pooled_residual(corpus_log_values(model, corpus_val, opts))
        curve.add(model_id, corpus_id, [r] * len(nfe_list))
    else:
        row = []
        for nfe in nfe_list:
            step_opts = SampleOptions(nfe=nfe, temperature=opts.temperature,
                                      seed=opts.seed, min_duration=opts.min_duration)
            row.append(pooled_residual(corpus_log_values(model, corpus_val, step_opts)))
        curve.add(model_id, corpus_id, row)
    return curve


# ---------------------------------------------------------------------------
# distribution statistics


@dataclass
class DistStats:
    """Per-class duration statistics from at least min_tokens samples."""

    means: dict
    stds: dict
    counts: dict
    mode_freqs: dict  # class -> {mode_value: frequency}
    pause_std: float = None


def dist_stats(durations_by_class: dict, modes_by_class: dict = None,
               min_tokens: int = 1000) -> DistStats:
    """Sample mean/std per class, plus nearest-mode frequencies.

    durations_by_class maps class id -> integer array. modes_by_class
    maps class id -> list of linear-domain mode locations for classes
    declared multimodal; each sample is assigned to its nearest mode.
    Classes below min_tokens samples (or empty) are rejected.
    """
    modes_by_class = modes_by_class or {}
    means, stds, counts, freqs = {}, {}, {}, {}
    for cid, durs in durations_by_class.items():
        durs = np.asarray(durs, dtype=np.float64)
        if durs.size == 0:
            raise ValueError(f"class {cid}: no samples")
        if durs.size < min_tokens:
            raise ValueError(
                f"class {cid}: {durs.size} samples, need at least {min_tokens}"
            )
        means[cid] = float(durs.mean())
        stds[cid] = float(durs.std())
        counts[cid] = int(durs.size)
        if cid in modes_by_class:
            modes = np.asarray(modes_by_class[cid], dtype=np.float64)
            nearest = np.argmin(np.abs(durs[:, None] - modes[None, :]), axis=1)
            freqs[cid] = {
                float(m): float(np.mean(nearest == j)) for j, m in enumerate(modes)
            }
    pause_std = stds.get(PAUSE_ID)
    return DistStats(means, stds, counts, freqs, pause_std)


def frames_by_class(corpus: DurationCorpus, frames: dict) -> dict:
    """Pool sampled durations per token class across sentences and reps."""
    buckets = {}
    for s in corpus.sentences:
        for rep_frames in frames[s.sent_id]:
            for tok, d in zip(s.seq.ids, rep_frames):
                buckets.setdefault(int(tok), []).append(int(d))
    return {cid: np.array(v, dtype=np.int64) for cid, v in buckets.items()}


def reference_by_class(corpus: DurationCorpus) -> dict:
    """Pool the corpus's own reference durations per class."""
    buckets = {}
    for s in corpus.sentences:
        for tok, d in zip(s.seq.ids, s.durations):
            buckets.setdefault(int(tok), []).append(int(d))
    return {cid: np.array(v, dtype=np.int64) for cid, v in buckets.items()}


def declared_modes(spec) -> dict:
    """Linear-domain mode locations of every mixture class in a corpus spec."""
    out = {}
    for cid in spec.mixture_class_ids():
        comps = spec.laws[cid]["components"]
        out[cid] = [float(np.exp(c[1])) for c in comps]
    return out


# ---------------------------------------------------------------------------
# benchmarking


def bench_sampling(model: DurationModel, corpus_val: DurationCorpus,
                   nfe_list=(10, 20), repetitions: int = 5,
                   opts: SampleOptions = None) -> list:
    """Median wall time of a full-corpus sampling pass at each NFE count.

    One warm-up pass runs before any timing. Rows are dicts with keys
    model, nfe, median_ms, ms_per_nfe (median_ms divided by nfe).
    """
    opts = opts or SampleOptions()
    nfe_list = tuple(int(n) for n in nfe_list)
    warm = SampleOptions(nfe=nfe_list[0], temperature=opts.temperature,
                         seed=opts.seed, min_duration=opts.min_duration)
    corpus_log_values(model, corpus_val, warm)
    rows = []
    for nfe in nfe_list:
        step_opts = SampleOptions(nfe=nfe, temperature=opts.temperature,
                                  seed=opts.seed, min_duration=opts.min_duration)
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            corpus_log_values(model, corpus_val, step_opts)
            times.append((time.perf_counter() - t0) * 1000.0)
        median_ms = statistics.median(times)
        rows.append({
            "model": model.kind,
            "nfe": nfe,
            "median_ms": median_ms,
            "ms_per_nfe": median_ms / nfe,
        })
    return rows


# ---------------------------------------------------------------------------
# report files


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_report(curve: ResidualCurve, stats: dict, bench_rows: list, out_dir):
    """Write residual.csv, dist.csv and bench.csv under out_dir.

    stats maps (model_id, corpus_id) -> DistStats. Numbers are written
    with repr-level precision so reruns produce identical bytes (bench
    timings excepted, being wall-clock measurements).
    """
    os.makedirs(out_dir, exist_ok=True)

    rows = []
    for (model_id, corpus_id), values in sorted(curve.residuals.items()):
        for nfe, value in zip(curve.nfe_values, values):
            rows.append([model_id, corpus_id, nfe, repr(value)])
    # aggregate across corpora, one synthetic corpus id per model
    for model_id in sorted({m for m, _ in curve.residuals}):
        for nfe, value in zip(curve.nfe_values, curve.aggregate(model_id)):
            rows.append([model_id, "all", nfe, repr(value)])
    _write_csv(os.path.join(out_dir, "residual.csv"),
               ["model", "corpus", "nfe", "mean_residual"], rows)

    rows = []
    for (model_id, corpus_id), st in sorted(stats.items()):
        for cid in sorted(st.means):
            freqs = st.mode_freqs.get(cid, {})
            freq_text = ";".join(
                f"{mode:g}:{freq!r}" for mode, freq in sorted(freqs.items())
            )
            rows.append([model_id, corpus_id, cid,
                         repr(st.means[cid]), repr(st.stds[cid]), freq_text])
    _write_csv(os.path.join(out_dir, "dist.csv"),
               ["model", "corpus", "class", "mean", "std", "mode_freqs"], rows)

    rows = [
        [r["model"], r["nfe"], f"{r['median_ms']:.3f}", f"{r['ms_per_nfe']:.3f}"]
        for r in bench_rows
    ]
    _write_csv(os.path.join(out_dir, "bench.csv"),
               ["model", "nfe", "median_ms", "ms_per_nfe"], rows)
