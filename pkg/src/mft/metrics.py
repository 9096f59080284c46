"""Perplexity and specialization/degeneralization bookkeeping."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .data import PackedSet, iter_eval_batches


def perplexity(model, packed: PackedSet, batch_size: int = 32) -> float:
    """exp of the token-masked mean next-token NLL, accumulated in float64."""
    if packed.n == 0 or packed.loss_mask[:, 1:].sum() == 0:
        raise ValueError("perplexity needs a nonempty validation set")
    total, count = 0.0, 0
    with nx.no_grad():
        for batch in iter_eval_batches(packed, batch_size):
            logits = model(batch.inputs).data
            nll = token_nll(logits, batch.labels)
            w = batch.label_mask
            total += float(nll[w].sum())
            count += int(w.sum())
    return math.exp(total / count)


def token_nll(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    lsm = nx.log_softmax_np(logits)
    return -np.take_along_axis(lsm, np.asarray(labels)[..., None], axis=-1)[..., 0]


@dataclass(frozen=True)
class MetricsReport:
    spec_ppl_before: float
    spec_ppl_after: float
    gen_ppl_before: float
    gen_ppl_after: float
    S: float
    DG: float
    ratio: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(before: tuple[float, float], after: tuple[float, float]) -> MetricsReport:
    """``before``/``after`` are (specialized ppl, general ppl) pairs.

    S and DG are percentages; the ratio DG/S is null unless S > 0.
    """
    (sb, gb), (sa, ga) = before, after
    for v in (sb, gb, sa, ga):
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"perplexities must be positive and finite, got {v}")
    S = 100.0 * (sb - sa) / sb
    DG = 100.0 * (ga - gb) / gb
    ratio = DG / S if S > 0 else None
    return MetricsReport(sb, sa, gb, ga, S, DG, ratio)


def relative_change(before: float, after: float) -> float:
    return 100.0 * (after - before) / before
