"""Sweeps, scarcity and ablation suites, and report rendering."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .correction import Mode
from .data import ReplayConfig
from .metrics import MetricsReport
from .model import AdapterConfig, TinyLM
from .training import (CheckpointRecord, ConfigError, DataBundle, Objective, RunConfig, RunResult,
                       prepare_data, run)

log = logging.getLogger(__name__)

TAU_GRID = (0.0, 0.1, 0.25, 0.5, 0.75, 1.0)
NU_GRID = (0.1, 0.25, 0.5, 0.75, 1.0)
RANK_GRID = (1, 2, 4, 8, 16)
BUDGET_GRID = (62_500, 125_000, 250_000, 500_000)


class Axis(str, Enum):
    TAU = "TAU"
    NU = "NU"
    RANK = "RANK"
    BUDGET = "BUDGET"


def apply_env(cfg: RunConfig, env=None) -> RunConfig:
    """``MFT_SEED`` replaces the seed; ``MFT_OUT_DIR`` supplies a missing output root."""
    env = os.environ if env is None else env
    if env.get("MFT_SEED"):
        try:
            cfg = replace(cfg, seed=int(env["MFT_SEED"]))
        except ValueError as exc:
            raise ConfigError(f"MFT_SEED must be an integer, got {env['MFT_SEED']!r}") from exc
    if env.get("MFT_OUT_DIR") and cfg.out_dir is None:
        cfg = replace(cfg, out_dir=env["MFT_OUT_DIR"])
    return cfg


def with_axis(base: RunConfig, axis: Axis, value) -> RunConfig:
    """``base`` with one knob moved.

    TAU switches the objective to full correction at that margin; NU sets the
    specialized share of each batch; RANK attaches (or resizes) the adapter.
    """
    axis = Axis(axis)
    if axis is Axis.TAU:
        return replace(base, objective=Objective(Mode.FULL_MFT, float(value)))
    if axis is Axis.NU:
        return replace(base, replay=ReplayConfig(float(value)))
    if axis is Axis.RANK:
        rank = int(value)
        if rank != value:
            raise ConfigError(f"adapter rank must be an integer, got {value}")
        acfg = base.adapter or AdapterConfig()
        return replace(base, adapter=replace(acfg, rank=rank))
    budget = int(value)
    if budget < base.batch_size * base.model.seq_len:
        raise ConfigError(f"budget {budget} is smaller than one batch of tokens")
    return replace(base, budget_tokens=budget)


@dataclass(frozen=True)
class SweepSpec:
    axis: Axis
    values: tuple
    base: RunConfig

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        object.__setattr__(self, "values", tuple(sorted(self.values)))
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if len(set(self.values)) != len(self.values):
            raise ConfigError("sweep values must be distinct")
        for v in self.values:
            with_axis(self.base, self.axis, v)  # validates


@dataclass
class SweepRow:
    axis: Axis
    value: float
    metrics: MetricsReport | None = None
    best_step: int | None = None
    final_hash: str = ""
    record_hashes: tuple[str, ...] = ()
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


SWEEP_COLUMNS = ("axis", "value", "S", "DG", "ratio", "spec_ppl", "gen_ppl", "best_step", "error")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_sweep_csv(rows: list[SweepRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            m = r.metrics
            w.writerow([r.axis.value, repr(r.value),
                        _fmt(m and m.S), _fmt(m and m.DG), _fmt(m.ratio if m else None),
                        _fmt(m and m.spec_ppl_after), _fmt(m and m.gen_ppl_after),
                        "" if r.best_step is None else r.best_step, r.error or ""])
    return path


def _run_row(axis: Axis, value, cfg: RunConfig, data: DataBundle | None, reference: TinyLM | None) -> SweepRow:
    try:
        res = run(cfg, data, reference)
    except Exception as exc:  # recorded per row, the sweep goes on
        log.warning("sweep row %s=%s failed: %s", axis.value, value, exc)
        return SweepRow(axis, value, error=f"{type(exc).__name__}: {exc}")
    return SweepRow(axis, value, res.metrics, res.best.step, res.final_hash,
                    tuple(r.param_hash for r in res.records))


def _row_dir(out_dir, axis: Axis, value) -> str | None:
    if out_dir is None:
        return None
    return str(Path(out_dir) / f"{axis.value.lower()}_{value:g}")


def sweep(spec: SweepSpec, reference: TinyLM | None = None, data: DataBundle | None = None,
          out_dir=None, workers: int = 1) -> list[SweepRow]:
    """One run per value, all sharing the base seed and reference checkpoint.

    Rows come back sorted by value regardless of completion order. When
    ``out_dir`` is set each row gets its own run directory and ``sweep.csv``
    is written there.
    """
    jobs = []
    for v in spec.values:
        cfg = replace(with_axis(spec.base, spec.axis, v), out_dir=_row_dir(out_dir, spec.axis, v))
        row_data = None if spec.axis is Axis.BUDGET else data
        jobs.append((spec.axis, v, cfg, row_data, reference))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_row, *zip(*jobs)))
    else:
        rows = [_run_row(*j) for j in jobs]
    rows.sort(key=lambda r: r.value)
    if out_dir is not None:
        write_sweep_csv(rows, Path(out_dir) / "sweep.csv")
    return rows


# ---------------------------------------------------------------------------
# scarcity


def overfitting_onset(records: list[CheckpointRecord], tol: float = 0.01) -> int | None:
    """First eval step at which specialized validation perplexity exceeds
    its running minimum by more than ``tol`` (relative); None if never."""
    best = float("inf")
    for r in records:
        if r.spec_val_ppl > best * (1.0 + tol):
            return r.step
        best = min(best, r.spec_val_ppl)
    return None


@dataclass
class ScarcityRun:
    budget: int
    objective: Objective
    result: RunResult
    onset: int | None

    @property
    def stable_steps(self) -> int:
        """Steps trained before the onset (all steps when it never happened)."""
        return self.onset if self.onset is not None else self.result.records[-1].step


DEFAULT_SCARCITY_OBJECTIVES = (Objective(Mode.PLAIN_FT, 1.0), Objective(Mode.FULL_MFT, 0.25))


def scarcity_suite(base: RunConfig, budgets, objectives=DEFAULT_SCARCITY_OBJECTIVES,
                   reference: TinyLM | None = None, out_dir=None) -> list[ScarcityRun]:
    """FT and MFT trajectories at each budget with the step count held fixed,
    so smaller budgets mean more passes over the same data."""
    out = []
    for budget in sorted(budgets):
        bcfg = with_axis(base, Axis.BUDGET, budget)
        data = prepare_data(bcfg)
        for obj in objectives:
            sub = None
            if out_dir is not None:
                sub = str(Path(out_dir) / f"budget_{budget}" / obj.mode.value.lower())
            res = run(replace(bcfg, objective=obj, out_dir=sub), data, reference)
            out.append(ScarcityRun(budget, obj, res, overfitting_onset(res.records)))
    if out_dir is not None:
        write_scarcity_csv(out, Path(out_dir) / "trajectory.csv")
    return out


def write_scarcity_csv(runs: list[ScarcityRun], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["budget", "objective", "step", "spec_ppl", "gen_ppl", "S", "DG", "ratio", "overfit"])
        for r in runs:
            for row in r.result.trajectory():
                flag = int(r.onset is not None and row["step"] >= r.onset)
                w.writerow([r.budget, r.objective.label, row["step"], _fmt(row["spec_ppl"]),
                            _fmt(row["gen_ppl"]), _fmt(row["S"]), _fmt(row["DG"]), _fmt(row["ratio"]), flag])
    return path


# ---------------------------------------------------------------------------
# ablation


ABLATION_ROWS = (
    ("finetuning", Mode.PLAIN_FT),
    ("+ distillation on correct tokens", Mode.CORRECTIVE_FT),
    ("+ correction on incorrect tokens", Mode.SINGLY_CORRECTIVE),
    ("+ correction on all tokens", Mode.FULL_MFT),
)


@dataclass
class AblationRow:
    name: str
    mode: Mode
    metrics: MetricsReport
    best_step: int


def ablation_suite(base: RunConfig, reference: TinyLM | None = None, data: DataBundle | None = None,
                   out_dir=None) -> list[AblationRow]:
    data = data if data is not None else prepare_data(base)
    rows = []
    for name, mode in ABLATION_ROWS:
        sub = None if out_dir is None else str(Path(out_dir) / mode.value.lower())
        cfg = replace(base, objective=Objective(mode, base.objective.tau), out_dir=sub)
        res = run(cfg, data, reference)
        rows.append(AblationRow(name, mode, res.metrics, res.best.step))
    if out_dir is not None:
        path = Path(out_dir) / "ablation.md"
        path.write_text(render_table([(r.name, r.metrics) for r in rows], title="Method"))
    return rows


def _r1(x) -> str:
    return "n/a" if x is None else f"{x:.1f}"


def _r2(x) -> str:
    return "n/a" if x is None else f"{x:.2f}"


def render_table(rows: list[tuple[str, MetricsReport]], title: str = "Run") -> str:
    """Markdown table; percentages to one decimal, ratio to two."""
    lines = [f"| {title} | S (%) | DG (%) | DG/S |", "|---|---:|---:|---:|"]
    for name, m in rows:
        lines.append(f"| {name} | {_r1(m.S)} | {_r1(m.DG)} | {_r2(m.ratio)} |")
    return "\n".join(lines) + "\n"


def collect_report(root) -> tuple[str, list[dict]]:
    """Gather every ``metrics.json`` below ``root`` into one table."""
    root = Path(root)
    found = sorted(root.rglob("metrics.json"))
    if not found:
        raise FileNotFoundError(f"no metrics.json under {root}")
    records, rows = [], []
    for p in found:
        d = json.loads(p.read_text())
        name = str(p.parent.relative_to(root)) or "."
        m = MetricsReport(*(d[k] for k in ("spec_ppl_before", "spec_ppl_after", "gen_ppl_before",
                                           "gen_ppl_after", "S", "DG", "ratio")))
        rows.append((name, m))
        records.append({"run": name, **d})
    return render_table(rows), records
