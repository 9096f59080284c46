"""Teacher-student finetuning loop, checkpointing and reference pretraining."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .correction import Branch, CorrectionConfig, Mode, batch_correct, one_hot_targets
from .data import (Corpus, DataError, Domain, PackedSet, ReplayConfig, load_corpus,
                   load_fixture, make_batches, pack, split_validation, take_budget, FIXTURES)
from .metrics import MetricsReport, compute_metrics, perplexity
from .model import (AdapterConfig, TinyLM, TinyLMConfig, attach_adapter, clone, clone_frozen,
                    init_model, load_checkpoint, param_hash, save_checkpoint)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Objective:
    mode: Mode = Mode.FULL_MFT
    tau: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")

    @property
    def needs_teacher(self) -> bool:
        return self.mode is not Mode.PLAIN_FT

    @property
    def label(self) -> str:
        if self.mode in (Mode.FULL_MFT, Mode.SINGLY_CORRECTIVE):
            return f"{self.mode.value}(tau={self.tau:g})"
        return self.mode.value


@dataclass(frozen=True)
class RunConfig:
    objective: Objective = Objective()
    replay: ReplayConfig = ReplayConfig()
    adapter: AdapterConfig | None = None
    model: TinyLMConfig = TinyLMConfig()
    steps: int = 500
    batch_size: int = 16
    eval_every: int = 25
    eval_batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    specialized: str = "legal"  # fixture name or path
    general: str = "general"
    budget_tokens: int = 250_000
    val_tokens: int = 31_000
    reference: str | None = None  # checkpoint path; pretrained on demand when absent
    replay_bypass_dc: bool = False
    saturated_policy: str = "keep"
    epsilon_saturation: float = 1e-7
    max_dg: float | None = None
    save_checkpoints: str = "best"  # all | best | none
    out_dir: str | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.save_checkpoints not in ("all", "best", "none"):
            raise ConfigError("save_checkpoints must be all, best or none")
        if self.saturated_policy not in ("keep", "mask"):
            raise ConfigError("saturated_policy must be keep or mask")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    def correction(self) -> CorrectionConfig:
        return CorrectionConfig(self.objective.tau, self.epsilon_saturation, self.objective.mode,
                                self.saturated_policy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objective"]["mode"] = self.objective.mode.value
        if self.adapter is not None:
            d["adapter"]["target_matrices"] = list(self.adapter.target_matrices)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "objective" in d:
                d["objective"] = Objective(**d["objective"])
            if "replay" in d:
                d["replay"] = ReplayConfig(**d["replay"])
            if d.get("adapter") is not None:
                a = dict(d["adapter"])
                if "target_matrices" in a:
                    a["target_matrices"] = tuple(a["target_matrices"])
                d["adapter"] = AdapterConfig(**a)
            if "model" in d:
                d["model"] = TinyLMConfig(**d["model"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class DataBundle:
    spec_train: PackedSet
    spec_val: PackedSet
    gen_train: PackedSet
    gen_val: PackedSet


def _corpus(src: str, tag: Domain) -> Corpus:
    if src in FIXTURES:
        c = load_fixture(src)
        return Corpus(tag, c.documents)
    return load_corpus(src, tag)


def prepare_data(cfg: RunConfig) -> DataBundle:
    """Validation splits, the specialized training budget, and packing."""
    seq = cfg.model.seq_len + 1  # inputs and labels are shifted views of one window
    spec = _corpus(cfg.specialized, Domain.SPECIALIZED)
    gen = _corpus(cfg.general, Domain.GENERAL)
    spec_tr, spec_va = split_validation(spec, cfg.val_tokens, cfg.seed)
    gen_tr, gen_va = split_validation(gen, cfg.val_tokens, cfg.seed)
    spec_tr = take_budget(spec_tr, cfg.budget_tokens)
    return DataBundle(pack(spec_tr, seq), pack(spec_va, seq), pack(gen_tr, seq), pack(gen_va, seq))


@dataclass(frozen=True)
class CheckpointRecord:
    step: int
    spec_val_ppl: float
    gen_val_ppl: float
    path: str | None = None
    param_hash: str = ""

    def __post_init__(self):
        for v in (self.spec_val_ppl, self.gen_val_ppl):
            if not (v > 0 and np.isfinite(v)):
                raise DivergenceError(f"invalid perplexity {v} at step {self.step}")


def select_best(records: list[CheckpointRecord]) -> CheckpointRecord:
    """Least specialized validation perplexity; earliest step on ties."""
    if not records:
        raise ValueError("no checkpoint records to select from")
    return min(records, key=lambda r: (r.spec_val_ppl, r.step))


# ---------------------------------------------------------------------------
# one step


def build_targets(objective: Objective, ccfg: CorrectionConfig, teacher: TinyLM | None, batch,
                  replay_bypass_dc: bool = False):
    """Targets, per-token loss weights, and diagnostics for ``batch``."""
    labels, weight = batch.labels, batch.label_mask.copy()
    if not objective.needs_teacher:
        return None, weight, None
    if teacher is None:
        raise ConfigError(f"{objective.mode.value} needs a teacher model")
    with nx.no_grad():
        tlogits = teacher(batch.inputs).data
    targets, diags = batch_correct(tlogits, labels, ccfg, weight)
    if replay_bypass_dc and batch.is_general.any():
        rows = batch.is_general
        targets[rows] = one_hot_targets(labels[rows], tlogits.shape[-1], weight[rows])
    if ccfg.saturated_policy == "mask":
        weight &= diags.branch != Branch.SATURATED
    return targets, weight, diags


def loss_and_grads(student: TinyLM, teacher: TinyLM | None, batch, objective: Objective,
                   ccfg: CorrectionConfig | None = None, replay_bypass_dc: bool = False):
    ccfg = ccfg or CorrectionConfig(objective.tau, mode=objective.mode)
    targets, weight, diags = build_targets(objective, ccfg, teacher, batch, replay_bypass_dc)
    if targets is None:
        targets = one_hot_targets(batch.labels, student.cfg.vocab_size, weight)
    params = student.trainable()
    with nx.Tape() as tape:
        logits = student(batch.inputs)
        loss = nx.cross_entropy_soft(logits, targets, weight=weight, check_target=False)
    tape.backward(loss, params.values())
    grads = {k: p.grad for k, p in params.items()}
    return float(loss.data), grads, diags


def train_step(student: TinyLM, teacher: TinyLM | None, batch, objective: Objective,
               opt: nx.AdamState, ccfg: CorrectionConfig | None = None,
               replay_bypass_dc: bool = False) -> float:
    try:
        loss, grads, _ = loss_and_grads(student, teacher, batch, objective, ccfg, replay_bypass_dc)
    except nx.NonFiniteError as exc:
        stats = {k: (float(np.abs(p.data).max()), bool(np.isfinite(p.data).all()))
                 for k, p in student.params.items()}
        raise DivergenceError(f"non-finite loss or gradient ({exc}); parameter max-abs: {stats}") from exc
    nx.adam_step(student.trainable(), grads, opt)
    return loss


# ---------------------------------------------------------------------------
# full run


@dataclass
class RunResult:
    config: RunConfig
    baseline: tuple[float, float]
    records: list[CheckpointRecord]
    losses: list[float]
    best: CheckpointRecord
    metrics: MetricsReport
    teacher_hash_before: str | None = None
    teacher_hash_after: str | None = None
    stopped_early: bool = False
    final_hash: str = ""

    def trajectory(self) -> list[dict]:
        sb, gb = self.baseline
        rows = []
        for r in [CheckpointRecord(0, sb, gb)] + self.records:
            m = compute_metrics(self.baseline, (r.spec_val_ppl, r.gen_val_ppl))
            rows.append({"step": r.step, "spec_ppl": r.spec_val_ppl, "gen_ppl": r.gen_val_ppl,
                         "S": m.S, "DG": m.DG, "ratio": m.ratio})
        return rows


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_reference(cfg: RunConfig, data: DataBundle | None = None) -> TinyLM:
    if cfg.reference is None:
        raise ConfigError("no reference checkpoint given; run `mft pretrain` first")
    path = Path(cfg.reference)
    if not path.exists():
        raise DataError(f"reference checkpoint {path} not found")
    return load_checkpoint(path)


def run(cfg: RunConfig, data: DataBundle | None = None, reference: TinyLM | None = None) -> RunResult:
    """Finetune a copy of ``reference`` per ``cfg``; evaluate every ``eval_every`` steps."""
    if data is None:
        data = prepare_data(cfg)
    if reference is None:
        reference = load_reference(cfg)
    if reference.cfg.seq_len < data.spec_train.seq_len - 1:
        raise ConfigError("reference model context is shorter than the packed sequences")
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", cfg.to_dict())

    student = attach_adapter(reference, cfg.adapter, cfg.seed) if cfg.adapter else clone(reference)
    teacher = clone_frozen(reference) if cfg.objective.needs_teacher else None
    teacher_hash = param_hash(teacher) if teacher is not None else None
    ccfg = cfg.correction()
    opt = nx.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps_opt)
    batches = make_batches(data.spec_train, data.gen_train if cfg.replay.nu < 1 else None,
                           cfg.batch_size, cfg.replay, cfg.steps, cfg.seed)

    def evaluate(model):
        return (perplexity(model, data.spec_val, cfg.eval_batch_size),
                perplexity(model, data.gen_val, cfg.eval_batch_size))

    baseline = evaluate(student)
    records: list[CheckpointRecord] = []
    losses: list[float] = []
    best_ppl = np.inf
    stopped = False
    loss_fh = (out / "loss.csv").open("w", newline="") if out else None
    loss_w = csv.writer(loss_fh) if loss_fh else None
    if loss_w:
        loss_w.writerow(["step", "loss", "mode"])
    try:
        for step, batch in enumerate(batches, start=1):
            loss = train_step(student, teacher, batch, cfg.objective, opt, ccfg, cfg.replay_bypass_dc)
            losses.append(loss)
            if loss_w:
                loss_w.writerow([step, repr(loss), cfg.objective.mode.value])
                loss_fh.flush()
            if step % cfg.eval_every and step != cfg.steps:
                continue
            sp, gp = evaluate(student)
            path = None
            keep = cfg.save_checkpoints == "all" or (cfg.save_checkpoints == "best" and sp < best_ppl)
            if out is not None and keep:
                name = "best.mft" if cfg.save_checkpoints == "best" else f"step_{step:06d}.mft"
                path = str(save_checkpoint(student, out / "checkpoints" / name))
            best_ppl = min(best_ppl, sp)
            rec = CheckpointRecord(step, sp, gp, path, param_hash(student))
            records.append(rec)
            log.info("step %d loss %.4f spec_ppl %.4f gen_ppl %.4f", step, loss, sp, gp)
            if cfg.max_dg is not None and 100.0 * (gp - baseline[1]) / baseline[1] > cfg.max_dg:
                stopped = True
                break
    finally:
        if loss_fh:
            loss_fh.close()
        if out is not None and records:
            _write_records(out / "records.csv", records)

    best = select_best(records)
    metrics = compute_metrics(baseline, (best.spec_val_ppl, best.gen_val_ppl))
    result = RunResult(cfg, baseline, records, losses, best, metrics, teacher_hash,
                       param_hash(teacher) if teacher is not None else None, stopped, param_hash(student))
    if out is not None:
        _write_json(out / "metrics.json", {
            **metrics.to_dict(), "best_step": best.step, "objective": cfg.objective.label,
            "nu": cfg.replay.nu, "rank": cfg.adapter.rank if cfg.adapter else None,
        })
        write_trajectory(out / "trajectory.csv", result)
    return result


def _write_records(path: Path, records: list[CheckpointRecord]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "spec_val_ppl", "gen_val_ppl", "path", "param_hash"])
        for r in records:
            w.writerow([r.step, repr(r.spec_val_ppl), repr(r.gen_val_ppl), r.path or "", r.param_hash])


def write_trajectory(path, result: RunResult) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "spec_ppl", "gen_ppl", "S", "DG", "ratio"])
        for row in result.trajectory():
            w.writerow([row["step"], repr(row["spec_ppl"]), repr(row["gen_ppl"]), repr(row["S"]),
                        repr(row["DG"]), "" if row["ratio"] is None else repr(row["ratio"])])
    return path


# ---------------------------------------------------------------------------
# reference checkpoint


@dataclass(frozen=True)
class PretrainConfig:
    model: TinyLMConfig = TinyLMConfig()
    max_steps: int = 3000
    batch_size: int = 16
    eval_every: int = 100
    patience: int = 5  # evaluations without improvement before stopping
    lr: float = 1e-3
    seed: int = 0


@dataclass
class PretrainResult:
    model: TinyLM
    best_step: int
    history: list[tuple[int, float]] = field(default_factory=list)


def pretrain_reference(gen_train: PackedSet, gen_val: PackedSet, cfg: PretrainConfig,
                       out_path=None) -> PretrainResult:
    """Train from scratch with plain next-token loss; keep the checkpoint with
    the least general validation perplexity.

    Stops once ``patience`` evaluations pass without improvement; raises
    :class:`DivergenceError` if the model never improves on its initial
    perplexity within that window or produces non-finite values.
    """
    model = init_model(cfg.model, cfg.seed)
    opt = nx.AdamState(lr=cfg.lr)
    obj = Objective(Mode.PLAIN_FT, 1.0)
    batches = make_batches(gen_train, None, cfg.batch_size, ReplayConfig(1.0), cfg.max_steps, cfg.seed)
    initial = perplexity(model, gen_val)
    history = [(0, initial)]
    best_ppl, best_step, best_params = initial, 0, None
    since = 0
    for step, batch in enumerate(batches, start=1):
        train_step(model, None, batch, obj, opt)
        if step % cfg.eval_every and step != cfg.max_steps:
            continue
        ppl = perplexity(model, gen_val)
        history.append((step, ppl))
        log.info("pretrain step %d general val ppl %.4f", step, ppl)
        if ppl < best_ppl:
            best_ppl, best_step = ppl, step
            best_params = {k: t.data.copy() for k, t in model.params.items()}
            since = 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    if best_params is None:
        raise DivergenceError("general validation perplexity never improved during pretraining")
    for k, arr in best_params.items():
        model.params[k].data = arr
    if out_path is not None:
        save_checkpoint(model, out_path)
    return PretrainResult(model, best_step, history)
