"""Per-token distribution correction of teacher predictions.

Every target produced here is a blend ``(1 - s) * p + s * onehot(l)`` of the
teacher distribution ``p`` and the ground-truth label ``l``; the objective
mode only decides the scale ``s``:

=================  ==================  ==============  ==========
mode               incorrect argmax    correct argmax  saturated
=================  ==================  ==============  ==========
FULL_MFT           alpha               beta            0 (1 if tau == 1)
SINGLY_CORRECTIVE  alpha               0               0
CORRECTIVE_FT      1                   0               0
PLAIN_FT           1                   1               1
=================  ==================  ==============  ==========

A tie for the maximum that includes ``l`` counts as a correct prediction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterator

import numpy as np

from .numerics.tensor import _softmax_np


class Mode(str, Enum):
    PLAIN_FT = "PLAIN_FT"
    CORRECTIVE_FT = "CORRECTIVE_FT"
    SINGLY_CORRECTIVE = "SINGLY_CORRECTIVE"
    FULL_MFT = "FULL_MFT"


class Branch(IntEnum):
    MASKED = -1
    INCORRECT_ARGMAX = 0
    CORRECT_ARGMAX = 1
    SATURATED = 2


class SaturatedError(ValueError):
    """beta is undefined because the label already holds (almost) all mass."""


PROB_TOL = 1e-5


@dataclass(frozen=True)
class CorrectionConfig:
    tau: float = 0.25
    epsilon_saturation: float = 1e-7
    mode: Mode = Mode.FULL_MFT
    saturated_policy: str = "keep"  # "keep" | "mask"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if not 0.0 < self.epsilon_saturation < 1.0:
            raise ValueError("epsilon_saturation must lie in (0, 1)")
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.saturated_policy not in ("keep", "mask"):
            raise ValueError("saturated_policy must be 'keep' or 'mask'")


@dataclass(frozen=True)
class CorrectionDiagnostics:
    branch: Branch
    scale: float
    achieved_margin: float
    ground_truth_index: int


def validate_probs(p, vocab: int | None = None) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("a distribution must be a vector of length >= 2")
    if vocab is not None and p.size != vocab:
        raise ValueError(f"expected length {vocab}, got {p.size}")
    if not np.isfinite(p).all() or (p < 0).any() or (p > 1 + PROB_TOL).any():
        raise ValueError("probabilities must be finite and lie in [0, 1]")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"probabilities sum to {p.sum():.8f}, not 1")
    return p


def _check_label(l: int, vocab: int) -> int:
    if isinstance(l, (bool, np.bool_)) or int(l) != l or not 0 <= int(l) < vocab:
        raise ValueError(f"label {l} outside [0, {vocab})")
    return int(l)


def alpha_scale(pT, l: int, tau: float) -> float:
    """Blend weight that lifts ``l`` exactly ``tau`` above the old argmax."""
    p = validate_probs(pT)
    l = _check_label(l, p.size)
    top = p.max()
    if not top > p[l]:
        raise ValueError("label is an argmax of the teacher distribution; use beta_scale")
    d = top - p[l]
    return float((d + tau) / (1.0 + d))


def beta_scale(pT, l: int, tau: float, epsilon_saturation: float = 1e-7) -> float:
    """Blend weight that raises ``p[l]`` to ``min(1, p[l] + tau)``."""
    p = validate_probs(pT)
    l = _check_label(l, p.size)
    if p[l] < p.max():
        raise ValueError("label is not an argmax of the teacher distribution; use alpha_scale")
    if p[l] > 1.0 - epsilon_saturation:
        raise SaturatedError(f"p[l] = {p[l]!r} is saturated")
    return float((min(1.0, p[l] + tau) - p[l]) / (1.0 - p[l]))


def _classify(p: np.ndarray, l: int, eps: float) -> Branch:
    if p[l] < p.max():
        return Branch.INCORRECT_ARGMAX
    if p[l] >= 1.0 - eps:
        return Branch.SATURATED
    return Branch.CORRECT_ARGMAX


def _margin(pc: np.ndarray, l: int) -> float:
    others = np.delete(pc, l)
    return float(pc[l] - others.max())


def distribution_correct(pT, l: int, cfg: CorrectionConfig) -> tuple[np.ndarray, CorrectionDiagnostics]:
    """Corrected float64 target for one token plus its diagnostics."""
    p = validate_probs(pT)
    l = _check_label(l, p.size)
    p = p / p.sum()
    branch = _classify(p, l, cfg.epsilon_saturation)
    tau = cfg.tau
    mode = cfg.mode

    if mode is Mode.PLAIN_FT:
        s = 1.0
    elif branch is Branch.INCORRECT_ARGMAX:
        s = 1.0 if mode is Mode.CORRECTIVE_FT else alpha_scale(p, l, tau)
    elif mode is not Mode.FULL_MFT:
        s = 0.0
    elif branch is Branch.SATURATED:
        s = 1.0 if tau >= 1.0 else 0.0
    else:
        s = beta_scale(p, l, tau, cfg.epsilon_saturation)

    pc = (1.0 - s) * p
    pc[l] += s
    total = pc.sum()
    if abs(total - 1.0) > PROB_TOL:
        raise FloatingPointError(f"blend drifted to {total}")
    pc /= total
    return pc, CorrectionDiagnostics(branch, s, _margin(pc, l), l)


# ---------------------------------------------------------------------------
# batched path


@dataclass
class BatchDiagnostics:
    """Per-token diagnostics as flat arrays (one entry per batch position)."""

    branch: np.ndarray  # int8, Branch codes; MASKED for padding
    scale: np.ndarray
    margin: np.ndarray
    label: np.ndarray

    def records(self) -> Iterator[CorrectionDiagnostics]:
        for b, s, m, l in zip(self.branch.reshape(-1), self.scale.reshape(-1),
                              self.margin.reshape(-1), self.label.reshape(-1)):
            if b != Branch.MASKED:
                yield CorrectionDiagnostics(Branch(int(b)), float(s), float(m), int(l))

    def branch_counts(self) -> dict[str, int]:
        flat = self.branch.reshape(-1)
        return {br.name: int((flat == br).sum()) for br in Branch if br is not Branch.MASKED}


def correct_probs(P: np.ndarray, labels: np.ndarray, cfg: CorrectionConfig):
    """Vectorized :func:`distribution_correct` over rows of ``P`` (float64)."""
    P = np.asarray(P, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or (P < 0).any() or np.abs(P.sum(axis=1) - 1.0).max(initial=0.0) > PROB_TOL:
        raise ValueError("rows of P must be probability distributions")
    P = P / P.sum(axis=1, keepdims=True)
    n, vocab = P.shape
    if labels.shape != (n,):
        raise ValueError("labels must have one entry per row")
    if ((labels < 0) | (labels >= vocab)).any():
        raise ValueError("label out of range")
    rows = np.arange(n)
    pl = P[rows, labels]
    top = P.max(axis=1)
    incorrect = pl < top
    saturated = ~incorrect & (pl >= 1.0 - cfg.epsilon_saturation)
    correct = ~incorrect & ~saturated
    tau = cfg.tau

    d = top - pl
    alpha = (d + tau) / (1.0 + d)
    denom = np.where(correct, 1.0 - pl, 1.0)
    beta = np.where(correct, (np.minimum(1.0, pl + tau) - pl) / denom, 0.0)

    mode = cfg.mode
    if mode is Mode.PLAIN_FT:
        s = np.ones(n)
    elif mode is Mode.CORRECTIVE_FT:
        s = np.where(incorrect, 1.0, 0.0)
    elif mode is Mode.SINGLY_CORRECTIVE:
        s = np.where(incorrect, alpha, 0.0)
    else:
        s = np.where(incorrect, alpha, np.where(correct, beta, 1.0 if tau >= 1.0 else 0.0))

    pc = (1.0 - s)[:, None] * P
    pc[rows, labels] += s
    total = pc.sum(axis=1)
    if np.abs(total - 1.0).max(initial=0.0) > PROB_TOL:
        raise FloatingPointError("blend drifted from a normalized distribution")
    pc /= total[:, None]

    branch = np.where(incorrect, Branch.INCORRECT_ARGMAX,
                      np.where(saturated, Branch.SATURATED, Branch.CORRECT_ARGMAX)).astype(np.int8)
    others = pc.copy()
    others[rows, labels] = -np.inf
    margin = pc[rows, labels] - others.max(axis=1)
    return pc, branch, s, margin


def batch_correct(teacher_logits, labels, cfg: CorrectionConfig, token_mask=None):
    """Targets ``[batch, seq, vocab]`` (float32) and per-token diagnostics.

    Masked positions receive a uniform sentinel target; their loss weight is
    zero in training so the sentinel never contributes.
    """
    logits = np.asarray(getattr(teacher_logits, "data", teacher_logits))
    labels = np.asarray(labels)
    if logits.ndim != 3 or labels.shape != logits.shape[:2]:
        raise ValueError(f"shape mismatch: logits {logits.shape}, labels {labels.shape}")
    if token_mask is None:
        token_mask = np.ones(labels.shape, dtype=bool)
    token_mask = np.asarray(token_mask).astype(bool)
    if token_mask.shape != labels.shape:
        raise ValueError("token_mask must match labels")
    b, t, vocab = logits.shape
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite teacher logits")

    out = np.full((b * t, vocab), 1.0 / vocab, dtype=np.float32)
    flat_mask = token_mask.reshape(-1)
    branch = np.full(b * t, Branch.MASKED, dtype=np.int8)
    scale = np.zeros(b * t)
    margin = np.zeros(b * t)
    idx = np.flatnonzero(flat_mask)
    if idx.size:
        P = _softmax_np(logits.reshape(-1, vocab)[idx].astype(np.float64))
        pc, br, s, m = correct_probs(P, labels.reshape(-1)[idx], cfg)
        out[idx] = pc.astype(np.float32)
        branch[idx], scale[idx], margin[idx] = br, s, m
    diags = BatchDiagnostics(branch.reshape(b, t), scale.reshape(b, t),
                             margin.reshape(b, t), labels.copy())
    return out.reshape(b, t, vocab), diags


def one_hot_targets(labels, vocab: int, token_mask=None) -> np.ndarray:
    """Hard targets with the same uniform sentinel convention as batch_correct."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (vocab,), dtype=np.float32)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    if token_mask is not None:
        out[~np.asarray(token_mask).astype(bool)] = 1.0 / vocab
    return out


def write_diagnostics_csv(diags: BatchDiagnostics, path, step: int | None = None) -> Path:
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["step", "position", "label", "branch", "scale", "margin"])
        flat = zip(diags.branch.reshape(-1), diags.label.reshape(-1),
                   diags.scale.reshape(-1), diags.margin.reshape(-1))
        for pos, (b, l, s, m) in enumerate(flat):
            if b == Branch.MASKED:
                continue
            w.writerow(["" if step is None else step, pos, int(l), Branch(int(b)).name, repr(float(s)), repr(float(m))])
    return path
