"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 runtime failure,
4 gradient-check failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .attention import EMPHASIS_VARIANTS, SSEMConfig, TSEMConfig
from .config import (VARIANTS, RunConfig, apply_variant, build_corpus, build_model,
                     config_hash, parse_config_file, serialize_config)
from .errors import ConfigError
from .flops import branch_sweep, count_model, report_lines
from .gradcheck import run_gradcheck
from .network import COMBINE_MODES
from .synth import write_cache
from .train import AdamState, evaluate, load_checkpoint, restore, train_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_GRADCHECK = 4

ABLATION_TABLES = ("t1", "t3", "t4", "t5")


def _load_config(args) -> RunConfig:
    cfg = parse_config_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, run=replace(cfg.run, output_dir=args.out))
    if args.variant is not None:
        cfg = apply_variant(cfg, args.variant)
    cfg.validate()
    return cfg


def _snapshot(cfg: RunConfig, run_dir: str) -> None:
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.snapshot"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    run_dir = cfg.run.output_dir
    _snapshot(cfg, run_dir)
    model = build_model(cfg)
    train_set, dev_set = build_corpus(cfg)
    result = train_run(model, train_set, dev_set, cfg.train, cfg.augment, run_dir,
                       seed=cfg.run.seed, config_hash=config_hash(cfg), log=print)
    print(f"final dev WER {result.final_dev_wer:.2f}% "
          f"(best {result.best_dev_wer:.2f}%), run dir {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise ConfigError("eval requires --checkpoint")
    cfg = _load_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    want = config_hash(cfg)
    if ckpt["config_hash"] and ckpt["config_hash"] != want:
        raise ConfigError(
            f"checkpoint config hash {ckpt['config_hash']} does not match the "
            f"requested configuration {want}; evaluating would be meaningless")
    model = build_model(cfg)
    restore(model, AdamState(model.params), ckpt)
    _, dev_set = build_corpus(cfg)
    out_dir = args.out or os.path.join(cfg.run.output_dir, "eval")
    report = evaluate(model, dev_set, cfg.augment, collect_attention=True,
                      out_dir=out_dir)
    print(f"corpus dev WER {report.wer:.2f}% over {report.clips} clips "
          f"(mean loss {report.loss:.4f})")
    for key in sorted(report.spatial):
        inside, outside = report.spatial[key]
        ratio = inside / outside if outside else float("nan")
        print(f"{key}: gate inside regions {inside:.4f}, outside {outside:.4f}, "
              f"concentration {ratio:.3f}")
    for key in sorted(report.temporal_wins):
        print(f"{key}: motion frames outgated idle on "
              f"{report.temporal_wins[key]}/{report.clips} clips")
    print(f"reports under {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    start = args.seed if args.seed is not None else 0
    results = run_gradcheck(seeds=range(start, start + 20))
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        mark = "pass" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{r.name:<{width}}  {r.max_rel_err:12.3e}  {mark}")
    print(f"{len(results) - failed}/{len(results)} checks passed "
          f"(tolerance {results[0].tol:g}, 20 seeds)")
    return EXIT_GRADCHECK if failed else EXIT_OK


def cmd_flops(args) -> int:
    cfg = _load_config(args)
    report = count_model(cfg.model, cfg.ssem, cfg.tsem)
    lines = report_lines(report)
    for line in lines:
        print(line)
    for n, macs in branch_sweep(cfg.model, cfg.ssem, cfg.tsem):
        print(f"ssem branches {n}: {macs} MACs")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "flops.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {path}")
    return EXIT_OK


def _ablation_grid(cfg: RunConfig, table: str) -> list[tuple[str, RunConfig]]:
    if table == "t1":
        grid = [("baseline", apply_variant(cfg, "baseline"))]
        for n in (1, 2, 3, 4):
            swapped = replace(cfg, model=replace(cfg.model, combine="ssem"),
                              ssem=replace(cfg.ssem, branch_count=n))
            grid.append((f"ssem_{n}branch", swapped))
        return grid
    if table == "t3":
        return [(f"ssem_{v}",
                 replace(cfg, model=replace(cfg.model, combine="ssem"),
                         ssem=replace(cfg.ssem, variant=v)))
                for v in EMPHASIS_VARIANTS]
    if table == "t4":
        grid = []
        for concat in (False, True):
            for k in (5, 9):
                swapped = replace(cfg, model=replace(cfg.model, combine="tsem"),
                                  tsem=replace(cfg.tsem, motion_concat=concat, kernel_t=k))
                tag = "diff" if concat else "plain"
                grid.append((f"tsem_{tag}_k{k}", swapped))
        return grid
    if table == "t5":
        return [(mode, replace(cfg, model=replace(cfg.model, combine=mode)))
                for mode in COMBINE_MODES]
    raise ConfigError(f"unknown ablation table {table!r}, pick from {ABLATION_TABLES}")


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    grid = _ablation_grid(cfg, args.table)
    train_set, dev_set = build_corpus(cfg)
    out_root = cfg.run.output_dir
    rows = ["variant,train_wer,dev_wer"]
    for tag, variant_cfg in grid:
        run_dir = os.path.join(out_root, args.table, tag)
        _snapshot(variant_cfg, run_dir)
        model = build_model(variant_cfg)  # same seed: shared weights agree
        result = train_run(model, train_set, dev_set, variant_cfg.train,
                           variant_cfg.augment, run_dir, seed=variant_cfg.run.seed,
                           config_hash=config_hash(variant_cfg))
        last = result.rows[-1]
        rows.append(f"{tag},{last.train_wer:.2f},{last.dev_wer:.2f}")
        print(rows[-1])
    path = os.path.join(out_root, f"ablate_{args.table}.csv")
    os.makedirs(out_root, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out or os.path.join(cfg.run.output_dir, "cache")
    n_train, n_dev = cfg.corpus.train_sentences, cfg.corpus.dev_sentences
    train_files = write_cache(os.path.join(out_dir, "train"), cfg.data, n_train,
                              seed=cfg.corpus.seed)
    dev_files = write_cache(os.path.join(out_dir, "dev"), cfg.data, n_dev,
                            seed=cfg.corpus.seed + 1)
    print(f"wrote {len(train_files)} train and {len(dev_files)} dev clips under {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emphnet",
        description="Recognition network with self-emphasizing spatial and "
                    "temporal modules, on synthetic gesture clips.")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "train": (cmd_train, "train a model and write metrics/checkpoints"),
        "eval": (cmd_eval, "evaluate a checkpoint and dump attention reports"),
        "gradcheck": (cmd_gradcheck, "finite-difference audit of every operator"),
        "flops": (cmd_flops, "analytic multiply-add audit"),
        "ablate": (cmd_ablate, "run one ablation grid"),
        "synth": (cmd_synth, "render the synthetic corpus to a cache directory"),
    }
    for name, (fn, help_text) in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="run configuration file")
        p.add_argument("--checkpoint", metavar="PATH", help="checkpoint to load")
        p.add_argument("--seed", type=int, metavar="N", help="override the run seed")
        p.add_argument("--variant", choices=VARIANTS, help="module wiring preset")
        p.add_argument("--out", metavar="DIR", help="override the output directory")
        if name == "ablate":
            p.add_argument("table", choices=ABLATION_TABLES, help="which grid to run")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
