"""Text-encoder stub: phone ids to conditioning vectors.

Phones are interleaved with a blank token before encoding, so each
phone is represented by two encoder vectors (itself and the blank that
follows it). The encoder body is deliberately small: embedding lookup,
one width-3 convolution, layer norm, ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from durflow import numerics as nm
from durflow import nn
from durflow.numerics import Tensor

# reserved token ids shared by the whole package
BLANK_ID = 0
PAUSE_ID = 1
FILLER_ID = 2

ENCODER_DIM = 192


@dataclass
class PhoneSequence:
    """Token ids over the synthetic alphabet, with an interleaving flag."""

    ids: np.ndarray
    interleaved: bool = False

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.interleaved:
            if self.ids.size % 2 != 0:
                raise ValueError("interleaved sequence must have even length")
            if self.ids.size and not np.all(self.ids[1::2] == BLANK_ID):
                raise ValueError("interleaved sequence must have BLANK at odd positions")

    def interleave(self) -> "PhoneSequence":
        return PhoneSequence(interleave_blanks(self.ids), interleaved=True)

    def __len__(self):
        return self.ids.size

    def __eq__(self, other):
        return (
            isinstance(other, PhoneSequence)
            and self.interleaved == other.interleaved
            and np.array_equal(self.ids, other.ids)
        )


@dataclass
class ConditioningSequence:
    """Encoder output: vectors of shape (D, T) plus a valid-position mask."""

    vectors: Tensor
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        t_len = self.vectors.data.shape[-1]
        if self.mask is None:
            self.mask = np.ones(t_len)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.shape[-1] != t_len:
            raise ValueError(
                f"mask length {self.mask.shape[-1]} does not match sequence length {t_len}"
            )


def interleave_blanks(ids) -> np.ndarray:
    """Insert a BLANK after every phone; output length is exactly 2x.

    The input may not already contain BLANK.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if np.any(ids == BLANK_ID):
        raise ValueError("sequence already contains BLANK tokens")
    out = np.full(2 * ids.size, BLANK_ID, dtype=np.int64)
    out[0::2] = ids
    return out


class TextEncoder:
    """Embedding -> conv1d(k=3) -> layer norm -> ReLU, dimension D=192."""

    def __init__(self, vocab_size: int, rng: np.random.Generator, dim: int = ENCODER_DIM):
        self.vocab_size = vocab_size
        self.dim = dim
        self.embed = nn.Embedding(vocab_size, dim, rng)
        self.conv = nn.Conv1d(dim, dim, 3, rng)
        self.norm = nn.LayerNorm(dim)

    def __call__(self, ids) -> Tensor:
        """ids (T,) -> (D, T), or ids (B, T) -> (B, D, T)."""
        h = self.embed(ids)
        return nm.relu(self.norm(self.conv(h)))

    def params(self) -> dict:
        out = {}
        for prefix, layer in (("embed", self.embed), ("conv", self.conv), ("norm", self.norm)):
            for k, v in layer.params().items():
                out[f"{prefix}.{k}"] = v
        return out

    def specs(self) -> list:
        return [self.embed.spec(), self.conv.spec(), self.norm.spec()]


def encode(seq: PhoneSequence, encoder: TextEncoder) -> ConditioningSequence:
    """Encode one interleaved phone sequence into conditioning vectors."""
    if not seq.interleaved:
        raise ValueError("sequence must be interleaved before encoding")
    vectors = encoder(seq.ids)
    return ConditioningSequence(vectors, np.ones(len(seq)))
