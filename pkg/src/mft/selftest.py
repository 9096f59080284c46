"""Fast in-process checks of the correction algebra and of the gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .correction import Branch, CorrectionConfig, Mode, correct_probs, one_hot_targets
from .model import TinyLMConfig, init_model
from .numerics.rng import stream


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _random_dists(rng, n, vocab):
    # mix of flat, peaked and near-one-hot rows
    z = rng.standard_normal((n, vocab)) * rng.choice([0.5, 3.0, 12.0], size=(n, 1))
    p = np.exp(z - z.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


def check_correction(n: int = 2000, seed: int = 0, tol: float = 1e-9) -> list[CheckResult]:
    """``n`` random rows per vocab size in {3, 8, 256}, each corrected at five margins."""
    rng = stream(seed, "gradcheck", "selftest")
    worst_margin = worst_ratio = worst_norm = 0.0
    flips_ok = monotone_ok = convex_ok = True
    taus = (0.0, 0.1, 0.25, 0.5, 1.0)
    for vocab in (3, 8, 256):
        P = _random_dists(rng, n, vocab)
        labels = rng.integers(0, vocab, size=n)
        prev_s = None
        for tau in taus:
            pc, br, s, margin = correct_probs(P, labels, CorrectionConfig(tau, mode=Mode.FULL_MFT))
            worst_norm = max(worst_norm, float(np.abs(pc.sum(1) - 1).max()))
            inc = br == Branch.INCORRECT_ARGMAX
            if inc.any() and tau < 1:
                worst_margin = max(worst_margin, float(np.abs(margin[inc] - tau).max()))
            if tau > 0:
                flips_ok &= bool((margin >= -1e-12).all())
            off = np.ones_like(P, bool)
            off[np.arange(n), labels] = False
            convex_ok &= bool((pc[off] <= P[off] + 1e-12).all())
            # off-label mass is scaled by a common factor
            keep = off & (P > 1e-8)
            factor = pc / np.where(keep, P, 1.0)
            hi = np.where(keep, factor, -np.inf).max(1)
            lo = np.where(keep, factor, np.inf).min(1)
            spread = (hi - lo)[keep.any(1)]
            if spread.size:
                worst_ratio = max(worst_ratio, float(spread.max()))
            if prev_s is not None:
                monotone_ok &= bool((s[br != Branch.SATURATED] >= prev_s[br != Branch.SATURATED] - 1e-12).all())
            prev_s = s
    return [
        CheckResult("margin", worst_margin <= tol, f"max |margin - tau| = {worst_margin:.2e}"),
        CheckResult("ratio preservation", worst_ratio <= tol, f"max factor spread = {worst_ratio:.2e}"),
        CheckResult("normalization", worst_norm <= tol, f"max |sum - 1| = {worst_norm:.2e}"),
        CheckResult("argmax flip", flips_ok, "label is a maximizer after correction"),
        CheckResult("convexity", convex_ok, "no off-label probability increases"),
        CheckResult("monotone scale", monotone_ok, "scale nondecreasing in tau"),
    ]


def check_gradients(seed: int = 0) -> list[CheckResult]:
    cfg = TinyLMConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, seq_len=12)
    model = init_model(cfg, seed)
    rng = stream(seed, "gradcheck", "batch")
    tokens = rng.integers(0, 256, size=(2, 12))
    inputs, labels = tokens[:, :-1], tokens[:, 1:]
    teacher_p = nx.softmax(rng.standard_normal((2, 11, cfg.vocab_size)))
    hard = one_hot_targets(labels, cfg.vocab_size)
    pc, _, _, _ = correct_probs(teacher_p.reshape(-1, cfg.vocab_size), labels.reshape(-1),
                                CorrectionConfig(0.25))
    soft = pc.reshape(hard.shape).astype(np.float32)
    names = sorted(model.params)
    out = []
    for label, target in (("gradients, hard targets", hard), ("gradients, corrected targets", soft)):
        def f(ps, target=target):
            for n, p in zip(names, ps):
                model.params[n] = p
            return nx.cross_entropy_soft(model(inputs), target)
        err = nx.grad_check(f, [model.params[n] for n in names], eps=1e-3, n_samples=200, seed=seed)
        out.append(CheckResult(label, err < 1e-3, f"max rel err = {err:.2e}"))
    return out


def run_selftest(seed: int = 0) -> list[CheckResult]:
    return check_correction(seed=seed) + check_gradients(seed=seed)
