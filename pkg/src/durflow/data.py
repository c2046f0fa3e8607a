"""Synthetic duration corpora in two styles, plus corpus file IO.

The read style draws every phone class from a tight lognormal (sigma
0.1 in the log domain), giving regular, almost scripted durations. The
spontaneous style layers variability on top: one strongly bimodal
phone class, heavy-tailed pauses inserted between phones, and filler
tokens with their own law. Blanks carry a near-zero duration law in
both styles. Generation is a pure function of the CorpusSpec: every sentence
draws from its own generator seeded by (corpus seed, sentence index),
so corpora are reproducible and parallelisable.

Vocabulary layout: id 0 is BLANK, 1 is PAUSE, 2 is FILLER, the rest
are phone classes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from durflow.encoder import BLANK_ID, FILLER_ID, PAUSE_ID, PhoneSequence

RESERVED_IDS = (BLANK_ID, PAUSE_ID, FILLER_ID)
FIRST_PHONE_ID = 3
NUM_PHONE_CLASSES = 20
BIMODAL_ID = FIRST_PHONE_ID + NUM_PHONE_CLASSES  # 23
VAL_SENTENCES = 100
VAL_INDEX_OFFSET = 1_000_000  # keeps validation random streams disjoint from train

STYLES = ("read", "spont")


def _default_laws(style: str) -> dict:
    laws = {BLANK_ID: {"kind": "discrete", "values": [0, 1, 2], "probs": [0.8, 0.1, 0.1]}}
    for j in range(NUM_PHONE_CLASSES):
        mu = math.log(4.0 + 3.0 * j / (NUM_PHONE_CLASSES - 1))
        laws[FIRST_PHONE_ID + j] = {"kind": "lognormal", "mu": mu, "sigma": 0.1}
    if style == "spont":
        laws[PAUSE_ID] = {"kind": "lognormal", "mu": math.log(15.0), "sigma": 0.8}
        laws[FILLER_ID] = {"kind": "lognormal", "mu": math.log(8.0), "sigma": 0.4}
        laws[BIMODAL_ID] = {
            "kind": "mixture",
            "components": [[0.5, math.log(2.0), 0.03], [0.5, math.log(12.0), 0.03]],
        }
    return laws


@dataclass
class CorpusSpec:
    """Everything needed to regenerate a corpus, seed included."""

    style: str = "read"
    vocab_size: int = 24
    num_sentences: int = 1000
    min_phones: int = 5
    max_phones: int = 12
    seed: int = 0
    pause_prob: float = None
    filler_prob: float = None
    bimodal_prob: float = None
    laws: dict = None

    def __post_init__(self):
        if self.style not in STYLES:
            raise ValueError(f"style must be one of {STYLES}, got {self.style!r}")
        spont = self.style == "spont"
        if self.pause_prob is None:
            self.pause_prob = 0.15 if spont else 0.0
        if self.filler_prob is None:
            self.filler_prob = 0.08 if spont else 0.0
        if self.bimodal_prob is None:
            self.bimodal_prob = 0.25 if spont else 0.0
        if self.laws is None:
            self.laws = _default_laws(self.style)
        self.laws = {int(k): v for k, v in self.laws.items()}
        self.validate()

    def validate(self):
        if not (1 <= self.min_phones <= self.max_phones):
            raise ValueError("need 1 <= min_phones <= max_phones")
        for p in (self.pause_prob, self.filler_prob, self.bimodal_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        if not self.phone_class_ids():
            raise ValueError("spec declares no phone classes")
        for cid, law in self.laws.items():
            if cid >= self.vocab_size:
                raise ValueError(f"class id {cid} outside vocab of size {self.vocab_size}")
            kind = law.get("kind")
            if kind == "lognormal":
                if law["sigma"] <= 0:
                    raise ValueError(f"class {cid}: sigma must be > 0")
            elif kind == "mixture":
                weights = [c[0] for c in law["components"]]
                if abs(sum(weights) - 1.0) > 1e-9:
                    raise ValueError(f"class {cid}: mixture weights must sum to 1")
                if any(c[2] <= 0 for c in law["components"]):
                    raise ValueError(f"class {cid}: sigma must be > 0")
            elif kind == "discrete":
                if abs(sum(law["probs"]) - 1.0) > 1e-9:
                    raise ValueError(f"class {cid}: probabilities must sum to 1")
                if any(v < 0 for v in law["values"]):
                    raise ValueError(f"class {cid}: negative duration value")
            else:
                raise ValueError(f"class {cid}: unknown law kind {kind!r}")

    def phone_class_ids(self) -> list:
        return sorted(cid for cid in self.laws if cid not in RESERVED_IDS)

    def mixture_class_ids(self) -> list:
        return [cid for cid in self.phone_class_ids()
                if self.laws[cid]["kind"] == "mixture"]


@dataclass
class Sentence:
    sent_id: int
    seq: PhoneSequence
    durations: np.ndarray

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=np.int64)
        if self.durations.size != len(self.seq):
            raise ValueError("duration count does not match sequence length")

    def __eq__(self, other):
        return (
            isinstance(other, Sentence)
            and self.sent_id == other.sent_id
            and self.seq == other.seq
            and np.array_equal(self.durations, other.durations)
        )


@dataclass
class DurationCorpus:
    sentences: list
    spec: CorpusSpec
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "val"):
            raise ValueError(f"split must be 'train' or 'val', got {self.split!r}")
        if self.split == "val" and len(self.sentences) != VAL_SENTENCES:
            raise ValueError(
                f"validation split must hold exactly {VAL_SENTENCES} sentences, "
                f"got {len(self.sentences)}"
            )

    def __len__(self):
        return len(self.sentences)

    def __eq__(self, other):
        return (
            isinstance(other, DurationCorpus)
            and self.split == other.split
            and self.spec == other.spec
            and self.sentences == other.sentences
        )


def zero_allowed(ids) -> np.ndarray:
    """Mask of positions whose reference duration may legitimately be 0."""
    ids = np.asarray(ids)
    return (ids == BLANK_ID) | (ids == PAUSE_ID)


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5))


def _draw_duration(law: dict, rng: np.random.Generator, floor: int) -> int:
    kind = law["kind"]
    if kind == "lognormal":
        raw = rng.lognormal(law["mu"], law["sigma"])
    elif kind == "mixture":
        weights = [c[0] for c in law["components"]]
        comp = law["components"][rng.choice(len(weights), p=weights)]
        raw = rng.lognormal(comp[1], comp[2])
    elif kind == "discrete":
        return int(rng.choice(law["values"], p=law["probs"]))
    else:
        raise ValueError(f"unknown law kind {kind!r}")
    return max(floor, _round_half_away(raw))


def _generate_sentence(spec: CorpusSpec, index: int) -> Sentence:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    n_phones = int(rng.integers(spec.min_phones, spec.max_phones + 1))

    phone_ids = spec.phone_class_ids()
    mixture_ids = spec.mixture_class_ids()
    plain_ids = [cid for cid in phone_ids if cid not in mixture_ids] or phone_ids

    tokens = []
    for _ in range(n_phones):
        if mixture_ids and rng.uniform() < spec.bimodal_prob:
            tokens.append(int(rng.choice(mixture_ids)))
        else:
            tokens.append(int(rng.choice(plain_ids)))
        if rng.uniform() < spec.pause_prob:
            tokens.append(PAUSE_ID)
        if rng.uniform() < spec.filler_prob:
            tokens.append(FILLER_ID)

    seq = PhoneSequence(np.array(tokens, dtype=np.int64)).interleave()
    durations = np.empty(len(seq), dtype=np.int64)
    for pos, tok in enumerate(seq.ids):
        law = spec.laws[int(tok)]
        floor = 0 if zero_allowed(tok) else 1
        durations[pos] = _draw_duration(law, rng, floor)
    return Sentence(index, seq, durations)


def generate(spec: CorpusSpec, split: str = "train") -> DurationCorpus:
    """Generate a corpus deterministically from its spec.

    The validation split holds exactly 100 sentences drawn from random
    streams disjoint from every training sentence.
    """
    if split == "train":
        indices = range(spec.num_sentences)
    elif split == "val":
        indices = range(VAL_INDEX_OFFSET, VAL_INDEX_OFFSET + VAL_SENTENCES)
    else:
        raise ValueError(f"split must be 'train' or 'val', got {split!r}")
    sentences = [_generate_sentence(spec, i) for i in indices]
    return DurationCorpus(sentences, spec, split)


# ---------------------------------------------------------------------------
# file format


class CorpusFormatError(ValueError):
    pass


def save(corpus: DurationCorpus, path):
    """Write the line-oriented corpus format; identical corpora give identical bytes."""
    spec = corpus.spec
    params = {
        "num_sentences": spec.num_sentences,
        "min_phones": spec.min_phones,
        "max_phones": spec.max_phones,
        "pause_prob": spec.pause_prob,
        "filler_prob": spec.filler_prob,
        "bimodal_prob": spec.bimodal_prob,
        "laws": {str(k): v for k, v in spec.laws.items()},
    }
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
    lines = [
        f"#durcorpus v1 style={spec.style} vocab={spec.vocab_size} "
        f"seed={spec.seed} split={corpus.split} params={blob}"
    ]
    for s in corpus.sentences:
        ids = " ".join(str(i) for i in s.seq.ids)
        durs = " ".join(str(d) for d in s.durations)
        lines.append(f"{s.sent_id}\t{ids}\t{durs}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load(path) -> DurationCorpus:
    """Parse a corpus file; malformed input reports the offending line number."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#durcorpus v1 "):
        raise CorpusFormatError(f"{path}: line 1: missing '#durcorpus v1' header")
    header = {}
    for token in lines[0].split(" ")[2:]:
        key, _, value = token.partition("=")
        header[key] = value
    try:
        params = json.loads(header["params"])
        spec = CorpusSpec(
            style=header["style"],
            vocab_size=int(header["vocab"]),
            seed=int(header["seed"]),
            num_sentences=int(params["num_sentences"]),
            min_phones=int(params["min_phones"]),
            max_phones=int(params["max_phones"]),
            pause_prob=params["pause_prob"],
            filler_prob=params["filler_prob"],
            bimodal_prob=params["bimodal_prob"],
            laws={int(k): v for k, v in params["laws"].items()},
        )
        split = header["split"]
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"{path}: line 1: bad header ({exc})") from exc

    sentences = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise CorpusFormatError(
                f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}"
            )
        try:
            sent_id = int(fields[0])
            ids = np.array([int(x) for x in fields[1].split()], dtype=np.int64)
            durs = np.array([int(x) for x in fields[2].split()], dtype=np.int64)
        except ValueError as exc:
            raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
        if ids.size != durs.size:
            raise CorpusFormatError(
                f"{path}: line {lineno}: {ids.size} ids but {durs.size} durations"
            )
        if np.any(durs < 0):
            raise CorpusFormatError(f"{path}: line {lineno}: negative duration")
        if np.any((durs == 0) & ~zero_allowed(ids)):
            raise CorpusFormatError(
                f"{path}: line {lineno}: zero duration on a phone position"
            )
        try:
            seq = PhoneSequence(ids, interleaved=True)
        except ValueError as exc:
            raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
        sentences.append(Sentence(sent_id, seq, durs))
    return DurationCorpus(sentences, spec, split)
