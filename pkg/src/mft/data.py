"""Corpora, byte tokenization, packing, and deterministic replay batching."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterator

import numpy as np

from .container import read_container, write_container
from .model import BOS, EOS, PAD, VOCAB_SIZE
from .numerics.rng import stream


class DataError(ValueError):
    pass


class Domain(str, Enum):
    GENERAL = "GENERAL"
    SPECIALIZED = "SPECIALIZED"


@dataclass
class Corpus:
    domain_tag: Domain
    documents: list[bytes]

    @property
    def token_count(self) -> int:
        return sum(len(d) + 2 for d in self.documents)

    def __len__(self) -> int:
        return len(self.documents)


_BLANK_LINE = re.compile(rb"\n[ \t\r]*\n")


def split_documents(raw: bytes, delimiter: bytes | None = None) -> list[bytes]:
    parts = _BLANK_LINE.split(raw) if delimiter is None else raw.split(delimiter)
    return [p.strip() for p in parts if p.strip()]


def load_corpus(path, domain_tag=Domain.SPECIALIZED, delimiter: bytes | None = None) -> Corpus:
    """Read a text file (split into paragraphs) or a directory of .txt files.

    In a directory each file is one document, visited in sorted name order.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.txt"))
        docs = [f.read_bytes().strip() for f in files]
        docs = [d for d in docs if d]
    elif path.is_file():
        docs = split_documents(path.read_bytes(), delimiter)
    else:
        raise DataError(f"cannot read corpus at {path}")
    if not docs:
        raise DataError(f"corpus at {path} is empty")
    return Corpus(Domain(domain_tag), docs)


FIXTURES = ("general", "legal", "biomedical")


def fixture_path(name: str) -> Path:
    if name not in FIXTURES:
        raise DataError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    return Path(str(resources.files("mft") / "fixtures" / f"{name}.txt"))


def load_fixture(name: str) -> Corpus:
    tag = Domain.GENERAL if name == "general" else Domain.SPECIALIZED
    return load_corpus(fixture_path(name), tag)


def split_validation(corpus: Corpus, val_tokens: int, seed: int) -> tuple[Corpus, Corpus]:
    """Move whole documents (in seeded random order) to validation until
    it holds at least ``val_tokens`` tokens."""
    if val_tokens < 0:
        raise DataError("val_tokens must be nonnegative")
    if val_tokens and val_tokens >= corpus.token_count:
        raise DataError(f"cannot split {val_tokens} validation tokens from {corpus.token_count}")
    order = stream(seed, "data", "split").permutation(len(corpus.documents))
    val_idx: set[int] = set()
    count = 0
    for i in order:
        if count >= val_tokens:
            break
        val_idx.add(int(i))
        count += len(corpus.documents[i]) + 2
    train = [d for i, d in enumerate(corpus.documents) if i not in val_idx]
    val = [d for i, d in enumerate(corpus.documents) if i in val_idx]
    return Corpus(corpus.domain_tag, train), Corpus(corpus.domain_tag, val)


def take_budget(corpus: Corpus, budget_tokens: int) -> Corpus:
    """Leading documents whose token count first reaches ``budget_tokens``.

    Smaller budgets are prefixes of larger ones.
    """
    docs, count = [], 0
    for d in corpus.documents:
        if count >= budget_tokens:
            break
        docs.append(d)
        count += len(d) + 2
    if count < budget_tokens:
        raise DataError(f"corpus holds {corpus.token_count} tokens, budget is {budget_tokens}")
    return Corpus(corpus.domain_tag, docs)


def encode(text: bytes | str) -> np.ndarray:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return np.frombuffer(text, dtype=np.uint8).astype(np.int32)


def decode(ids) -> bytes:
    return bytes(int(i) for i in ids if int(i) < 256)


@dataclass
class PackedSet:
    sequences: np.ndarray  # int32 [N, seq_len]
    loss_mask: np.ndarray  # uint8 [N, seq_len]; 0 on PAD

    @property
    def n(self) -> int:
        return int(self.sequences.shape[0])

    @property
    def seq_len(self) -> int:
        return int(self.sequences.shape[1])

    @property
    def n_tokens(self) -> int:
        return int(self.loss_mask.sum())


def pack(corpus: Corpus, seq_len: int) -> PackedSet:
    """BOS/EOS-delimited documents concatenated and cut into windows."""
    if seq_len < 2:
        raise DataError("seq_len must be >= 2")
    pieces = []
    for d in corpus.documents:
        pieces.extend(([BOS], encode(d), [EOS]))
    flat = np.concatenate(pieces).astype(np.int32) if pieces else np.zeros(0, np.int32)
    n = math.ceil(flat.size / seq_len)
    seqs = np.full(n * seq_len, PAD, dtype=np.int32)
    seqs[:flat.size] = flat
    mask = np.zeros(n * seq_len, dtype=np.uint8)
    mask[:flat.size] = 1
    return PackedSet(seqs.reshape(n, seq_len), mask.reshape(n, seq_len))


def save_packed(ps: PackedSet, path) -> Path:
    return write_container(path, "packed", {"seq_len": ps.seq_len, "vocab_size": VOCAB_SIZE},
                           [("sequences", ps.sequences), ("loss_mask", ps.loss_mask)])


def load_packed(path) -> PackedSet:
    _, blocks = read_container(path, kind="packed")
    return PackedSet(blocks["sequences"].astype(np.int32), blocks["loss_mask"].astype(np.uint8))


@dataclass(frozen=True)
class ReplayConfig:
    nu: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError(f"nu must lie in [0, 1], got {self.nu}")

    def n_specialized(self, batch_size: int) -> int:
        return int(math.floor(self.nu * batch_size + 0.5))


@dataclass
class Batch:
    tokens: np.ndarray  # [B, S]
    mask: np.ndarray  # [B, S]
    is_general: np.ndarray  # bool [B]
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def inputs(self) -> np.ndarray:
        return self.tokens[:, :-1]

    @property
    def labels(self) -> np.ndarray:
        return self.tokens[:, 1:]

    @property
    def label_mask(self) -> np.ndarray:
        return self.mask[:, 1:].astype(bool)


class _EpochSampler:
    """Walks a permutation; reshuffles only once every index was drawn."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.order = rng.permutation(n)
        self.pos = 0

    def draw(self, k: int) -> np.ndarray:
        out = []
        while k:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            take = min(k, self.n - self.pos)
            out.append(self.order[self.pos:self.pos + take])
            self.pos += take
            k -= take
        return np.concatenate(out) if out else np.zeros(0, np.int64)


class BatchStream:
    """Deterministic iterator of ``steps`` batches mixing two packed sets.

    Each batch holds ``round(nu * batch_size)`` specialized rows followed by
    general rows.
    """

    def __init__(self, specialized: PackedSet, general: PackedSet | None, batch_size: int,
                 rcfg: ReplayConfig, steps: int, seed: int):
        if batch_size < 1 or steps < 0:
            raise DataError("batch_size must be >= 1 and steps >= 0")
        self.n_spec = rcfg.n_specialized(batch_size)
        self.n_gen = batch_size - self.n_spec
        if self.n_gen and (general is None or general.n == 0):
            raise DataError("nu < 1 requires general-domain data for replay")
        if self.n_spec and specialized.n == 0:
            raise DataError("specialized set is empty")
        if general is not None and general.n and self.n_gen and general.seq_len != specialized.seq_len:
            raise DataError("specialized and general sets differ in seq_len")
        self.specialized, self.general = specialized, general
        self.batch_size, self.steps, self.seed = batch_size, steps, seed

    def __len__(self) -> int:
        return self.steps

    def __iter__(self) -> Iterator[Batch]:
        spec = _EpochSampler(self.specialized.n, stream(self.seed, "data", "specialized"))
        gen = (_EpochSampler(self.general.n, stream(self.seed, "data", "general"))
               if self.n_gen else None)
        for _ in range(self.steps):
            si = spec.draw(self.n_spec)
            parts_t = [self.specialized.sequences[si]]
            parts_m = [self.specialized.loss_mask[si]]
            gi = np.zeros(0, np.int64)
            if gen is not None:
                gi = gen.draw(self.n_gen)
                parts_t.append(self.general.sequences[gi])
                parts_m.append(self.general.loss_mask[gi])
            yield Batch(
                tokens=np.concatenate(parts_t),
                mask=np.concatenate(parts_m),
                is_general=np.r_[np.zeros(si.size, bool), np.ones(gi.size, bool)],
                indices=np.r_[si, gi],
            )


def make_batches(specialized: PackedSet, general: PackedSet | None, batch_size: int,
                 rcfg: ReplayConfig, steps: int, seed: int) -> BatchStream:
    return BatchStream(specialized, general, batch_size, rcfg, steps, seed)


def iter_eval_batches(ps: PackedSet, batch_size: int) -> Iterator[Batch]:
    for i in range(0, ps.n, batch_size):
        rows = slice(i, i + batch_size)
        yield Batch(ps.sequences[rows], ps.loss_mask[rows], np.zeros(min(batch_size, ps.n - i), bool))
