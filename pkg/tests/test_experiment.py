import csv
import json
from dataclasses import replace

import pytest

from mft.correction import Mode
from mft.data import ReplayConfig
from mft.experiment import (ABLATION_ROWS, Axis, SweepSpec, ablation_suite, apply_env, collect_report,
                            overfitting_onset, render_table, scarcity_suite, sweep, with_axis)
from mft.metrics import compute_metrics
from mft.model import AdapterConfig, TinyLMConfig
from mft.training import (CheckpointRecord, ConfigError, Objective, PretrainConfig, RunConfig,
                          pretrain_reference, prepare_data)

TINY = TinyLMConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, seq_len=32)
BASE = RunConfig(model=TINY, steps=8, batch_size=4, eval_every=4, budget_tokens=6_000,
                 val_tokens=1_500, save_checkpoints="none", objective=Objective(Mode.PLAIN_FT, 1.0))


@pytest.fixture(scope="module")
def data():
    return prepare_data(BASE)


@pytest.fixture(scope="module")
def reference(data):
    return pretrain_reference(data.gen_train, data.gen_val,
                              PretrainConfig(model=TINY, max_steps=30, eval_every=15, lr=3e-3)).model


def test_with_axis():
    assert with_axis(BASE, Axis.TAU, 0.5).objective == Objective(Mode.FULL_MFT, 0.5)
    assert with_axis(BASE, "NU", 0.25).replay == ReplayConfig(0.25)
    assert with_axis(BASE, Axis.RANK, 4).adapter == AdapterConfig(rank=4)
    assert with_axis(BASE, Axis.BUDGET, 9_000).budget_tokens == 9_000
    with pytest.raises(ConfigError):
        with_axis(BASE, Axis.BUDGET, 10)
    with pytest.raises(ConfigError):
        with_axis(BASE, Axis.RANK, 2.5)


def test_sweep_spec_validation():
    spec = SweepSpec(Axis.TAU, (0.5, 0.0, 0.25), BASE)
    assert spec.values == (0.0, 0.25, 0.5)
    with pytest.raises(ConfigError):
        SweepSpec(Axis.TAU, (), BASE)
    with pytest.raises(ValueError):
        SweepSpec(Axis.NU, (1.5,), BASE)


def test_env_overrides():
    cfg = apply_env(BASE, {"MFT_SEED": "42", "MFT_OUT_DIR": "/tmp/x"})
    assert cfg.seed == 42 and cfg.out_dir == "/tmp/x"
    assert apply_env(replace(BASE, out_dir="keep"), {"MFT_OUT_DIR": "/tmp/x"}).out_dir == "keep"
    with pytest.raises(ConfigError):
        apply_env(BASE, {"MFT_SEED": "abc"})


def test_overfitting_onset():
    recs = [CheckpointRecord(s, p, 1.0) for s, p in [(10, 5.0), (20, 4.0), (30, 4.03), (40, 4.2)]]
    assert overfitting_onset(recs) == 40
    assert overfitting_onset(recs[:3]) is None
    assert overfitting_onset(recs, tol=0.005) == 30


def test_render_table_rounding():
    m = compute_metrics((100.0, 50.0), (89.1, 50.5))
    table = render_table([("FT", m)])
    assert "| FT | 10.9 | 1.0 | 0.09 |" in table
    none = render_table([("flat", compute_metrics((5.0, 5.0), (5.0, 5.0)))])
    assert "n/a" in none


def test_tau_sweep_rows_and_endpoint(reference, data, tmp_path):
    spec = SweepSpec(Axis.TAU, (1.0, 0.0, 0.25), BASE)
    rows = sweep(spec, reference, data, out_dir=tmp_path)
    assert [r.value for r in rows] == [0.0, 0.25, 1.0]
    assert all(r.ok for r in rows)
    ft = sweep(SweepSpec(Axis.NU, (1.0,), BASE), reference, data)[0]
    assert rows[-1].final_hash == ft.final_hash and rows[-1].record_hashes == ft.record_hashes
    with (tmp_path / "sweep.csv").open() as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0]) == ["axis", "value", "S", "DG", "ratio", "spec_ppl", "gen_ppl", "best_step", "error"]
    assert [float(r["value"]) for r in table] == [0.0, 0.25, 1.0]


def test_sweep_records_failures_and_continues(reference, data):
    spec = SweepSpec(Axis.RANK, (2, 64), BASE)  # 64 exceeds d_model 16
    rows = sweep(spec, reference, data)
    assert rows[0].ok and not rows[1].ok and "rank" in rows[1].error


def test_sweep_reports_byte_identical(reference, data, tmp_path):
    spec = SweepSpec(Axis.NU, (0.5, 1.0), BASE)
    sweep(spec, reference, data, out_dir=tmp_path / "a")
    sweep(spec, reference, data, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_parallel_sweep_matches_serial(reference, data):
    spec = SweepSpec(Axis.TAU, (0.1, 0.5), BASE)
    serial = sweep(spec, reference, data)
    parallel = sweep(spec, reference, data, workers=2)
    assert [r.final_hash for r in serial] == [r.final_hash for r in parallel]


def test_budget_sweep(reference):
    rows = sweep(SweepSpec(Axis.BUDGET, (3_000, 6_000), BASE), reference)
    assert [r.value for r in rows] == [3_000, 6_000] and all(r.ok for r in rows)


def test_scarcity_suite_outputs(reference, tmp_path):
    runs = scarcity_suite(BASE, [3_000], reference=reference, out_dir=tmp_path)
    assert [r.objective.mode for r in runs] == [Mode.PLAIN_FT, Mode.FULL_MFT]
    with (tmp_path / "trajectory.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert {"step", "spec_ppl", "gen_ppl", "S", "DG", "ratio"} <= set(rows[0])
    assert len(rows) == 2 * (1 + BASE.steps // BASE.eval_every)
    assert (tmp_path / "budget_3000" / "full_mft" / "trajectory.csv").exists()


def test_ablation_suite(reference, data, tmp_path):
    rows = ablation_suite(replace(BASE, objective=Objective(Mode.FULL_MFT, 0.25)), reference, data,
                          out_dir=tmp_path)
    assert [r.mode for r in rows] == [m for _, m in ABLATION_ROWS]
    md = (tmp_path / "ablation.md").read_text()
    assert md.count("\n") == 6
    table, records = collect_report(tmp_path)
    assert len(records) == 4 and "full_mft" in table
    for r in records:
        json.dumps(r)
