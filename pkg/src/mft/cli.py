"""Command-line entry point: ``mft <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .correction import Mode
from .data import DataError, Domain, ReplayConfig, pack, split_validation
from .experiment import (BUDGET_GRID, NU_GRID, RANK_GRID, TAU_GRID, Axis, SweepSpec, ablation_suite,
                         apply_env, collect_report, render_table, scarcity_suite, sweep)
from .model import AdapterConfig, TinyLMConfig, count_params
from .numerics import NonFiniteError
from .training import (ConfigError, DivergenceError, Objective, PretrainConfig, RunConfig,
                       _corpus, load_reference, pretrain_reference, prepare_data, run)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4

DEFAULT_GRIDS = {Axis.TAU: TAU_GRID, Axis.NU: NU_GRID, Axis.RANK: RANK_GRID, Axis.BUDGET: BUDGET_GRID}

log = logging.getLogger("mft")


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    for name in ("d-model", "n-layers", "n-heads", "d-ff", "seq-len"):
        g.add_argument(f"--{name}", type=int)


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with RunConfig keys; flags override it")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--tau", type=float)
    p.add_argument("--nu", type=float, help="specialized share of each batch")
    p.add_argument("--rank", type=int, help="attach a low-rank adapter of this rank")
    p.add_argument("--alpha-adapter", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--specialized", help="fixture name (legal, biomedical) or corpus path")
    p.add_argument("--general", help="fixture name (general) or corpus path")
    p.add_argument("--budget-tokens", type=int)
    p.add_argument("--val-tokens", type=int)
    p.add_argument("--reference", help="reference checkpoint")
    p.add_argument("--replay-bypass-dc", action="store_true", default=None)
    p.add_argument("--saturated-policy", choices=["keep", "mask"])
    p.add_argument("--max-dg", type=float)
    p.add_argument("--save-checkpoints", choices=["all", "best", "none"])
    p.add_argument("--out-dir")
    _model_flags(p)


def _load_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config file must hold a JSON object")
    return d


def build_run_config(args: argparse.Namespace) -> RunConfig:
    d = _load_file(args.config)
    d.pop("pretrain", None)
    cfg = RunConfig.from_dict(d)
    over = {}
    for key in ("steps", "batch_size", "eval_every", "seed", "lr", "specialized", "general",
                "budget_tokens", "val_tokens", "reference", "replay_bypass_dc", "saturated_policy",
                "max_dg", "save_checkpoints", "out_dir"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    if args.mode is not None or args.tau is not None:
        over["objective"] = Objective(args.mode or cfg.objective.mode,
                                      cfg.objective.tau if args.tau is None else args.tau)
    if args.nu is not None:
        over["replay"] = ReplayConfig(args.nu)
    if args.rank is not None or args.alpha_adapter is not None:
        base = cfg.adapter or AdapterConfig()
        over["adapter"] = AdapterConfig(args.rank or base.rank,
                                        args.alpha_adapter if args.alpha_adapter is not None else base.alpha_adapter,
                                        base.target_matrices)
    mover = {k: getattr(args, k) for k in ("d_model", "n_layers", "n_heads", "d_ff", "seq_len")
             if getattr(args, k, None) is not None}
    try:
        if mover:
            over["model"] = replace(cfg.model, **mover)
        cfg = replace(cfg, **over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return apply_env(cfg)


def _print_metrics(m) -> None:
    print(json.dumps(m.to_dict(), indent=2))


def cmd_pretrain(args) -> int:
    d = _load_file(args.config)
    pre = dict(d.get("pretrain", {}))
    model = dict(d.get("model", {}))
    for k in ("d_model", "n_layers", "n_heads", "d_ff", "seq_len"):
        if getattr(args, k) is not None:
            model[k] = getattr(args, k)
    for k in ("max_steps", "batch_size", "eval_every", "patience", "lr", "seed"):
        if getattr(args, k) is not None:
            pre[k] = getattr(args, k)
    try:
        pcfg = PretrainConfig(model=TinyLMConfig(**model), **pre)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    gen = _corpus(args.general or d.get("general", "general"), Domain.GENERAL)
    train, val = split_validation(gen, args.val_tokens or d.get("val_tokens", 31_000), pcfg.seed)
    seq = pcfg.model.seq_len + 1
    res = pretrain_reference(pack(train, seq), pack(val, seq), pcfg, args.out)
    total, _ = count_params(res.model)
    print(f"reference checkpoint {args.out}: {total} parameters, best step {res.best_step}, "
          f"general val ppl {res.history[-1][1]:.4f} (last) / {min(p for _, p in res.history):.4f} (best)")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = build_run_config(args)
    res = run(cfg)
    _print_metrics(res.metrics)
    print(f"best step {res.best.step}" + (" (stopped by DG guard)" if res.stopped_early else ""))
    return EXIT_OK


def _parse_values(text: str | None, axis: Axis):
    if text is None:
        return DEFAULT_GRIDS[axis]
    conv = int if axis in (Axis.RANK, Axis.BUDGET) else float
    try:
        return tuple(conv(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --values {text!r}: {exc}") from exc


def _out_root(cfg: RunConfig, name: str) -> str:
    return cfg.out_dir or str(Path("runs") / name)


def cmd_sweep(args) -> int:
    cfg = build_run_config(args)
    axis = Axis(args.axis.upper())
    spec = SweepSpec(axis, _parse_values(args.values, axis), replace(cfg, out_dir=None))
    ref = load_reference(cfg)
    data = None if axis is Axis.BUDGET else prepare_data(cfg)
    rows = sweep(spec, ref, data, _out_root(cfg, f"sweep_{axis.value.lower()}"), workers=args.workers)
    for r in rows:
        if r.ok:
            print(f"{axis.value}={r.value:g}: S={r.metrics.S:.2f} DG={r.metrics.DG:.2f} best_step={r.best_step}")
        else:
            print(f"{axis.value}={r.value:g}: FAILED {r.error}")
    return EXIT_OK if all(r.ok for r in rows) else EXIT_DIVERGENCE


def cmd_scarcity(args) -> int:
    cfg = build_run_config(args)
    budgets = _parse_values(args.budgets, Axis.BUDGET)
    runs = scarcity_suite(cfg, budgets, reference=load_reference(cfg), out_dir=_out_root(cfg, "scarcity"))
    for r in runs:
        onset = "never" if r.onset is None else f"step {r.onset}"
        print(f"budget {r.budget} {r.objective.label}: overfitting onset {onset}, "
              f"S={r.result.metrics.S:.2f} DG={r.result.metrics.DG:.2f}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = build_run_config(args)
    out = _out_root(cfg, "ablation")
    rows = ablation_suite(cfg, load_reference(cfg), out_dir=out)
    print(render_table([(r.name, r.metrics) for r in rows], title="Method"), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    table, records = collect_report(args.root)
    out = Path(args.root)
    (out / "report.md").write_text(table)
    (out / "report.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    print(table, end="")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    results = run_selftest(args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if all(r.ok for r in results) else 1


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mft", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("pretrain", help="train the reference checkpoint on the general corpus")
    sp.add_argument("--config", type=Path)
    sp.add_argument("--general")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--max-steps", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--eval-every", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--val-tokens", type=int)
    _model_flags(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="one finetuning run")
    _run_flags(sp)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("sweep", help="sweep one knob")
    _run_flags(sp)
    sp.add_argument("--axis", required=True, choices=[a.value.lower() for a in Axis])
    sp.add_argument("--values", help="comma-separated values; defaults to the standard grid")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("scarcity", help="FT and MFT trajectories across token budgets")
    _run_flags(sp)
    sp.add_argument("--budgets", help="comma-separated token budgets")
    sp.set_defaults(func=cmd_scarcity)

    sp = sub.add_parser("ablation", help="all four objective modes")
    _run_flags(sp)
    sp.set_defaults(func=cmd_ablation)

    sp = sub.add_parser("report", help="tabulate metrics.json files below a directory")
    sp.add_argument("root", type=Path)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("selftest", help="correction algebra and gradient checks")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mft: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"mft: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NonFiniteError, FloatingPointError) as exc:
        print(f"mft: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
