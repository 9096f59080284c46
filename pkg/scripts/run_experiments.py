"""Run the desk-scale experiment suite end to end and write every report.

    python scripts/run_experiments.py --out runs/desk            # everything
    python scripts/run_experiments.py --only table1 ablation     # a subset
    python scripts/run_experiments.py --profile default          # full-size model (slow)

Outputs under --out: reference.mft, table1/, ablation/, sweep_tau/, sweep_nu/,
sweep_rank/, scarcity/ and summary.md.
"""

from __future__ import annotations

import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path

from mft.correction import Mode
from mft.data import ReplayConfig
from mft.experiment import (NU_GRID, RANK_GRID, TAU_GRID, Axis, SweepSpec, ablation_suite, apply_env,
                            render_table, scarcity_suite, sweep)
from mft.model import AdapterConfig, TinyLMConfig, load_checkpoint
from mft.training import Objective, PretrainConfig, RunConfig, prepare_data, pretrain_reference, run

PROFILES = {
    "desk": dict(model=TinyLMConfig(d_model=64, d_ff=128, seq_len=128), budget=125_000,
                 scarcity=(16_000, 62_500, 125_000), pretrain_steps=2000),
    "default": dict(model=TinyLMConfig(), budget=250_000,
                    scarcity=(62_500, 125_000, 250_000, 500_000), pretrain_steps=3000),
}
SUITES = ("table1", "ablation", "tau", "nu", "rank", "scarcity")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--profile", choices=PROFILES, default="desk")
    ap.add_argument("--specialized", default="legal")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--pretrain-steps", type=int, help="override the profile's pretraining length")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="+", choices=SUITES, default=list(SUITES))
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    prof = PROFILES[args.profile]
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    base = apply_env(RunConfig(model=prof["model"], steps=args.steps, seed=args.seed,
                               specialized=args.specialized, budget_tokens=prof["budget"],
                               objective=Objective(Mode.FULL_MFT, 0.25)))
    data = prepare_data(base)
    ref_path = out / "reference.mft"
    if ref_path.exists():
        reference = load_checkpoint(ref_path)
    else:
        pcfg = PretrainConfig(model=prof["model"], max_steps=args.pretrain_steps or prof["pretrain_steps"], eval_every=250,
                              lr=3e-3, seed=base.seed)
        reference = pretrain_reference(data.gen_train, data.gen_val, pcfg, ref_path).model
    base = replace(base, reference=str(ref_path))
    ft = replace(base, objective=Objective(Mode.PLAIN_FT, 1.0))
    summary = []
    t0 = time.time()

    if "table1" in args.only:
        rows = []
        for name, cfg in [("FT", ft), ("MFT", base),
                          ("Replay (nu=0.5)", replace(ft, replay=ReplayConfig(0.5))),
                          ("Replay+MFT", replace(base, replay=ReplayConfig(0.5))),
                          ("LoRA r=8", replace(ft, adapter=AdapterConfig(rank=8))),
                          ("LoRA+MFT", replace(base, adapter=AdapterConfig(rank=8)))]:
            sub = out / "table1" / name.lower().replace(" ", "_").replace("(", "").replace(")", "").replace("=", "")
            rows.append((name, run(replace(cfg, out_dir=str(sub)), data, reference).metrics))
        table = render_table(rows, title="Method")
        (out / "table1" / "table1.md").write_text(table)
        summary += ["## Method comparison", "", table]

    if "ablation" in args.only:
        rows = ablation_suite(base, reference, data, out_dir=out / "ablation")
        summary += ["## Ablation", "", render_table([(r.name, r.metrics) for r in rows], title="Method")]

    for axis, grid, cfg in [(Axis.TAU, TAU_GRID, base), (Axis.NU, NU_GRID, ft), (Axis.RANK, RANK_GRID, ft)]:
        if axis.value.lower() not in args.only:
            continue
        rows = sweep(SweepSpec(axis, grid, cfg), reference, data, out / f"sweep_{axis.value.lower()}",
                     workers=args.workers)
        summary += [f"## {axis.value} sweep", "",
                    render_table([(f"{axis.value}={r.value:g}", r.metrics) for r in rows if r.ok], title=axis.value)]

    if "scarcity" in args.only:
        runs = scarcity_suite(base, prof["scarcity"], reference=reference, out_dir=out / "scarcity")
        lines = ["| budget | objective | onset step | S (%) | DG (%) |", "|---:|---|---:|---:|---:|"]
        for r in runs:
            lines.append(f"| {r.budget} | {r.objective.label} | {r.onset if r.onset is not None else 'none'} "
                         f"| {r.result.metrics.S:.1f} | {r.result.metrics.DG:.1f} |")
        summary += ["## Scarcity", "", "\n".join(lines) + "\n"]

    (out / "summary.md").write_text("\n".join(summary))
    print("\n".join(summary))
    print(f"done in {time.time() - t0:.0f} s; reports in {out}")


if __name__ == "__main__":
    main()
