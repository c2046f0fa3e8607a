"""Duration models: deterministic regression and conditional flow matching.

Both models share the same convolutional backbone over encoder outputs
(conv -> ReLU -> layer norm -> conv -> ReLU -> layer norm -> pointwise
projection to one value per position) and both work in the natural-log
domain. The deterministic head regresses the conditional mean with MSE.
The flow-matching head learns a vector field v(x_t, t, cond) along the
optimal-transport path

    x_t = (1 - (1 - sigma) t) x0 + t x1,      u_t = x1 - (1 - sigma) x0,

with x0 standard normal and x1 the log-domain reference durations;
sampling integrates dx/dt = v with Euler steps from t=0 to t=1.

Log-domain targets: positions that may legitimately have zero frames
(blanks, pauses) use ln(d + 0.01) so the target stays finite; all other
positions require d >= 1 and use ln(d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from durflow import numerics as nm
from durflow import nn
from durflow.encoder import ConditioningSequence, TextEncoder, ENCODER_DIM
from durflow.numerics import Tensor

OT_SIGMA = 1e-4
LOG_FLOOR = 1e-2
HIDDEN_CHANNELS = 280
NOISE_CHANNELS = 32
TIME_DIM = 64


@dataclass
class LogDurations:
    """Per-position natural-log durations plus a valid-position mask."""

    values: Tensor
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if not isinstance(self.values, Tensor):
            self.values = Tensor(self.values)
        if self.mask is None:
            self.mask = np.ones(self.values.data.shape[-1])
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.shape != self.values.data.shape[-len(self.mask.shape):]:
            raise ValueError("mask shape does not match values")


@dataclass
class SampleOptions:
    nfe: int = 10
    temperature: float = 0.667
    seed: int = 0
    min_duration: int = 0

    def __post_init__(self):
        if self.nfe < 1:
            raise ValueError(f"nfe must be >= 1, got {self.nfe}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.min_duration not in (0, 1):
            raise ValueError(f"min_duration must be 0 or 1, got {self.min_duration}")


@dataclass
class FlowState:
    """Current sample and time of the ODE integration; t ends at 1."""

    x: np.ndarray
    t: float


def log_targets(durations, zero_allowed) -> np.ndarray:
    """Map integer frame counts to log-domain regression targets.

    zero_allowed positions use ln(d + 0.01); the rest must satisfy
    d >= 1 and use ln(d).
    """
    d = np.asarray(durations, dtype=np.float64)
    za = np.asarray(zero_allowed, dtype=bool)
    if np.any((~za) & (d < 1)):
        raise ValueError("zero duration at a position that does not allow zero")
    return np.where(za, np.log(d + LOG_FLOOR), np.log(np.maximum(d, 1.0)))


# ---------------------------------------------------------------------------
# predictors


class DetPredictor:
    """Backbone ending in one scalar per position: the expected log-duration."""

    def __init__(self, cond_dim: int, hidden: int, rng: np.random.Generator):
        self.cond_dim, self.hidden = cond_dim, hidden
        self.conv1 = nn.Conv1d(cond_dim, hidden, 3, rng)
        self.norm1 = nn.LayerNorm(hidden)
        self.conv2 = nn.Conv1d(hidden, hidden, 3, rng)
        self.norm2 = nn.LayerNorm(hidden)
        self.proj = nn.Conv1d(hidden, 1, 1, rng)

    def __call__(self, cond: Tensor) -> Tensor:
        """cond (B, D, T) -> (B, 1, T)."""
        h = self.norm1(nm.relu(self.conv1(cond)))
        h = self.norm2(nm.relu(self.conv2(h)))
        return self.proj(h)

    def layers(self):
        return [("conv1", self.conv1), ("norm1", self.norm1),
                ("conv2", self.conv2), ("norm2", self.norm2), ("proj", self.proj)]

    def params(self) -> dict:
        out = {}
        for prefix, layer in self.layers():
            for k, v in layer.params().items():
                out[f"{prefix}.{k}"] = v
        return out

    def specs(self) -> list:
        return [layer.spec() for _, layer in self.layers()]


class FlowPredictor:
    """Vector-field head v(x_t, t, cond) for flow-matching durations.

    The noisy durations x_t enter through a pointwise projection whose
    output is concatenated with the conditioning channels; an embedding
    of the flow time t is added to both conv-block activations before
    their ReLU.
    """

    def __init__(self, cond_dim: int, hidden: int, noise_dim: int, time_dim: int,
                 rng: np.random.Generator):
        self.cond_dim, self.hidden = cond_dim, hidden
        self.noise_dim, self.time_dim = noise_dim, time_dim
        self.noise_proj = nn.Conv1d(1, noise_dim, 1, rng)
        self.conv1 = nn.Conv1d(cond_dim + noise_dim, hidden, 3, rng)
        self.norm1 = nn.LayerNorm(hidden)
        self.conv2 = nn.Conv1d(hidden, hidden, 3, rng)
        self.norm2 = nn.LayerNorm(hidden)
        self.proj = nn.Conv1d(hidden, 1, 1, rng)
        self.time = nn.TimeEmbedding(time_dim, rng)
        self.time_to_h1 = nn.Linear(time_dim, hidden, rng)
        self.time_to_h2 = nn.Linear(time_dim, hidden, rng)

    def __call__(self, x: Tensor, t, cond: Tensor) -> Tensor:
        """x (B, 1, T), t scalar or (B,), cond (B, D, T) -> (B, 1, T)."""
        batch = cond.data.shape[0]
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        emb = self.time(t_arr)  # (B, time_dim)
        h = nm.concat([cond, self.noise_proj(x)], axis=1)
        h = nm.add(self.conv1(h), nm.unsqueeze(self.time_to_h1(emb), 2))
        h = self.norm1(nm.relu(h))
        h = nm.add(self.conv2(h), nm.unsqueeze(self.time_to_h2(emb), 2))
        h = self.norm2(nm.relu(h))
        return self.proj(h)

    def layers(self):
        return [("noise_proj", self.noise_proj), ("conv1", self.conv1),
                ("norm1", self.norm1), ("conv2", self.conv2), ("norm2", self.norm2),
                ("proj", self.proj), ("time", self.time),
                ("time_to_h1", self.time_to_h1), ("time_to_h2", self.time_to_h2)]

    def params(self) -> dict:
        out = {}
        for prefix, layer in self.layers():
            for k, v in layer.params().items():
                out[f"{prefix}.{k}"] = v
        return out

    def specs(self) -> list:
        return [layer.spec() for _, layer in self.layers()]


class DurationModel:
    """A text encoder plus one duration head, with training metadata."""

    def __init__(self, kind: str, vocab_size: int, seed: int = 0,
                 encoder_dim: int = ENCODER_DIM, hidden: int = HIDDEN_CHANNELS,
                 noise_dim: int = NOISE_CHANNELS, time_dim: int = TIME_DIM):
        if kind not in ("det", "fm"):
            raise ValueError(f"model kind must be 'det' or 'fm', got {kind!r}")
        self.kind = kind
        self.vocab_size = vocab_size
        self.seed = seed
        self.dims = {"encoder_dim": encoder_dim, "hidden": hidden,
                     "noise_dim": noise_dim, "time_dim": time_dim}
        rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
        self.encoder = TextEncoder(vocab_size, rng, dim=encoder_dim)
        if kind == "det":
            self.predictor = DetPredictor(encoder_dim, hidden, rng)
        else:
            self.predictor = FlowPredictor(encoder_dim, hidden, noise_dim, time_dim, rng)
        self.trained_steps = 0

    def params(self) -> dict:
        out = {}
        for k, v in self.encoder.params().items():
            out[f"encoder.{k}"] = v
        for k, v in self.predictor.params().items():
            out[f"predictor.{k}"] = v
        return out

    def predictor_param_count(self) -> int:
        return nn.param_count(self.predictor.params())


def save_model(model: DurationModel, path):
    meta = {
        "kind": model.kind,
        "vocab_size": model.vocab_size,
        "seed": model.seed,
        "dims": model.dims,
        "trained_steps": model.trained_steps,
        "layers": [
            [s.kind, s.input_dim, s.output_dim, s.kernel_width]
            for s in model.encoder.specs() + model.predictor.specs()
        ],
    }
    nn.save_params(path, model.params(), meta)


def load_model(path) -> DurationModel:
    arrays, meta = nn.load_params(path)
    model = DurationModel(meta["kind"], meta["vocab_size"], seed=meta["seed"],
                          **meta["dims"])
    params = model.params()
    if set(params) != set(arrays):
        missing = set(params) ^ set(arrays)
        raise ValueError(f"checkpoint parameter mismatch: {sorted(missing)[:4]}")
    for name, p in params.items():
        if p.data.shape != arrays[name].shape:
            raise ValueError(f"checkpoint shape mismatch for '{name}'")
        p.data[...] = arrays[name]
    model.trained_steps = int(meta["trained_steps"])
    return model


# ---------------------------------------------------------------------------
# losses


def _as_batched(vectors: Tensor) -> Tensor:
    if vectors.data.ndim == 2:
        return nm.reshape(vectors, (1,) + vectors.data.shape)
    return vectors


def masked_mse(pred: Tensor, ref: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of (pred - ref)^2 over positions where mask is nonzero."""
    count = float(np.sum(mask != 0))
    if count == 0:
        raise ValueError("empty mask: no valid positions to average over")
    diff = nm.sub(pred, ref)
    total = nm.tensor_sum(nm.mul(Tensor(np.asarray(mask, dtype=np.float64)),
                                 nm.mul(diff, diff)))
    return nm.scale(total, 1.0 / count)


def det_forward(cond: ConditioningSequence, model: DurationModel) -> LogDurations:
    """Expected log-duration for each position of one sequence."""
    if model.kind != "det":
        raise ValueError(f"det_forward needs a 'det' model, got '{model.kind}'")
    out = model.predictor(_as_batched(cond.vectors))  # (1, 1, T)
    values = nm.reshape(out, (out.data.shape[-1],))
    return LogDurations(values, cond.mask)


def det_loss(pred: LogDurations, ref: LogDurations) -> Tensor:
    """Log-domain MSE over unmasked positions."""
    if not np.array_equal(pred.mask, ref.mask):
        raise ValueError("prediction and reference masks differ")
    return masked_mse(pred.values, ref.values, pred.mask)


def cfm_pair(x1, x0, t, sigma: float = OT_SIGMA):
    """Point on the optimal-transport path and its target vector field.

    x_t = (1 - (1 - sigma) t) x0 + t x1 and u_t = x1 - (1 - sigma) x0.
    Works elementwise; t may be a scalar or broadcastable array.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    x_t = (1.0 - (1.0 - sigma) * t) * x0 + t * x1
    u_t = x1 - (1.0 - sigma) * x0
    u_t = np.broadcast_to(u_t, x_t.shape).copy()
    return x_t, u_t


def fm_loss(cond: ConditioningSequence, ref: LogDurations, model: DurationModel,
            rng: np.random.Generator) -> Tensor:
    """Flow-matching regression loss for one sequence.

    Draws one t ~ U[0,1] for the sequence and x0 ~ N(0, I) per position
    (in that order), forms the path point, and averages the squared
    vector-field error over unmasked positions.
    """
    if model.kind != "fm":
        raise ValueError(f"fm_loss needs an 'fm' model, got '{model.kind}'")
    t_len = ref.values.data.shape[-1]
    t = rng.uniform(size=1)
    x0 = rng.standard_normal((1, 1, t_len))
    x1 = ref.values.data.reshape(1, 1, t_len)
    x_t, u_t = cfm_pair(x1, x0, t[:, None, None])
    v = model.predictor(Tensor(x_t), t, _as_batched(cond.vectors))
    return masked_mse(v, Tensor(u_t), ref.mask.reshape(1, 1, t_len))


# ---------------------------------------------------------------------------
# sampling


def fm_sample_batch(model: DurationModel, cond: Tensor, noise: np.ndarray,
                    nfe: int) -> np.ndarray:
    """Euler-integrate the learned field for a batch; returns x at t=1.

    cond is (B, D, T), noise is the t=0 state (B, 1, T). Each of the
    nfe steps evaluates the field at t = i/nfe and advances by 1/nfe.
    """
    state = FlowState(x=np.asarray(noise, dtype=np.float64), t=0.0)
    dt = 1.0 / nfe
    for i in range(nfe):
        v = model.predictor(Tensor(state.x), state.t, cond).data
        state = FlowState(x=state.x + dt * v, t=(i + 1) / nfe)
    assert state.t == 1.0
    return state.x


def fm_sample(cond: ConditioningSequence, model: DurationModel,
              opts: SampleOptions) -> LogDurations:
    """Draw one duration sample for one sequence.

    The initial noise is N(0, temperature^2 I) from a generator seeded
    with opts.seed; temperature scales only this initial state.
    """
    if model.kind != "fm":
        raise ValueError(f"fm_sample needs an 'fm' model, got '{model.kind}'")
    t_len = cond.vectors.data.shape[-1]
    rng = np.random.default_rng(opts.seed)
    noise = opts.temperature * rng.standard_normal((1, 1, t_len))
    x1 = fm_sample_batch(model, _as_batched(cond.vectors), noise, opts.nfe)
    return LogDurations(x1[0, 0], cond.mask)


# ---------------------------------------------------------------------------
# quantisation and length regulation


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # exp() output is always positive, so half away from zero is floor(x + 0.5)
    return np.floor(x + 0.5)


def _check_finite(values: np.ndarray, what: str):
    bad = ~np.isfinite(values)
    if np.any(bad):
        pos = int(np.flatnonzero(bad.reshape(-1))[0])
        raise ValueError(f"non-finite {what} at position {pos}")


def to_frames(log_dur: LogDurations, min_duration: int = 0) -> np.ndarray:
    """Integer frame counts: max(min_duration, round(exp(v))), half away from zero."""
    values = np.asarray(log_dur.values.data)
    _check_finite(values, "log-duration")
    linear = np.exp(values)
    _check_finite(linear, "duration")
    return np.maximum(_round_half_away(linear), int(min_duration)).astype(np.int64)


def quantisation_residual(log_dur: LogDurations) -> float:
    """Mean distance from exp(v) to its nearest integer, over unmasked positions."""
    values = np.asarray(log_dur.values.data)
    _check_finite(values, "log-duration")
    linear = np.exp(values)
    _check_finite(linear, "duration")
    residual = np.abs(linear - _round_half_away(linear))
    mask = np.broadcast_to(log_dur.mask, values.shape)
    count = mask.sum()
    if count == 0:
        raise ValueError("empty mask: no valid positions to average over")
    return float((residual * mask).sum() / count)


def length_regulate(cond: ConditioningSequence, frames) -> Tensor:
    """Repeat column t of the conditioning frames[t] times, order preserved."""
    frames = np.asarray(frames)
    if frames.ndim != 1 or frames.size != cond.vectors.data.shape[-1]:
        raise ValueError("frames length does not match the sequence")
    if np.any(frames < 0):
        pos = int(np.flatnonzero(frames < 0)[0])
        raise ValueError(f"negative duration at position {pos}")
    return Tensor(np.repeat(cond.vectors.data, frames.astype(np.int64), axis=-1))
