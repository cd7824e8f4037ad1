"""Command-line entry point.

Exit status is 0 on success, 2 on a usage error and 1 when the command itself
fails (missing or malformed input, mismatched dimensions, failed training).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pgm
from .corrupt import apply, spec_from_dict
from .harness import ExperimentConfig, emit, permute_vs_discard, run
from .learner import TrainConfig, save_model, train
from .metrics import OverlapCounts, accumulate, estimate_bias, pooled_dice
from .seeding import OP_CORRUPT, SeedKey
from .synth import SynthConfig, generate

log = logging.getLogger("labelnoise")


class CliError(Exception):
    """A runtime failure reported to the user without a traceback."""


def _load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}") from e
    except ValueError as e:
        raise CliError(f"{path}: malformed JSON ({e})") from e


def _from_json(path, parse):
    d = _load_json(path)
    try:
        return parse(d)
    except (ValueError, KeyError, TypeError) as e:
        raise CliError(f"{path}: {e}") from e


def _load_spec(path):
    return _from_json(path, spec_from_dict)


def _read_mask(path):
    try:
        return pgm.read_mask(path)
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}") from e


# -- subcommands --------------------------------------------------------------


def cmd_synth(args) -> None:
    cfg = SynthConfig() if args.config is None else _from_json(args.config, SynthConfig.from_dict)
    samples = generate(cfg, args.n, args.seed)
    pgm.write_dataset(args.out, samples, {"synth": cfg.to_dict(), "seed": args.seed})


def cmd_corrupt(args) -> None:
    spec = _load_spec(args.spec)
    mask = _read_mask(args.mask)
    out = apply(spec, mask, SeedKey(args.seed, args.epoch, args.sample_id, OP_CORRUPT))
    pgm.write_mask(args.out, out)


def cmd_bias(args) -> None:
    spec = _load_spec(args.spec)
    mask = _read_mask(args.mask)
    report = estimate_bias(spec, mask, args.draws, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pgm.write_frequency_map(out / "frequency.pgm", report.mean_mask)
    pgm.write_mask(out / "consensus.pgm", report.consensus_mask)
    summary = {**report.summary(), "seed": args.seed}
    (out / "bias.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"recovery_dice {report.recovery_dice:.6f}")
    print(f"l1_bias {report.l1_bias:.6f}")


def _mask_files(path: Path) -> dict:
    if path.is_file():
        return {path.name: path}
    return {p.name: p for p in pgm.list_masks(path)}


def cmd_dice(args) -> None:
    pred_dir, ref_dir = Path(args.pred), Path(args.ref)
    for p in (pred_dir, ref_dir):
        if not p.exists():
            raise CliError(f"{p}: no such file or directory")
    preds, refs = _mask_files(pred_dir), _mask_files(ref_dir)
    if pred_dir.is_file() and ref_dir.is_file():
        pairs = [(pred_dir, ref_dir)]
    else:
        missing = sorted(set(preds) ^ set(refs))
        if missing:
            raise CliError(f"{pred_dir} and {ref_dir} do not hold the same mask files (unpaired: {', '.join(missing)})")
        if not preds:
            raise CliError(f"{pred_dir}: no .pgm masks found")
        pairs = [(preds[n], refs[n]) for n in sorted(preds)]
    counts = OverlapCounts()
    for p, r in pairs:
        pm, rm = _read_mask(p), _read_mask(r)
        if pm.shape != rm.shape:
            raise CliError(f"{p}: dimensions {pm.shape} differ from {r} {rm.shape}")
        counts = accumulate(counts, pm, rm)
    print(f"{pooled_dice(counts):.6f}")


def cmd_train(args) -> None:
    dataset = pgm.read_dataset(args.data)
    spec = _load_spec(args.spec)
    cfg = TrainConfig() if args.train_config is None else _from_json(args.train_config, TrainConfig.from_dict)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = train(dataset, spec, cfg)
    save_model(result.model, args.out)
    if result.history:
        print(f"final_loss {result.history[-1]:.6f}")


def _experiment_config(args) -> ExperimentConfig:
    cfg = _from_json(args.config, ExperimentConfig.from_dict)
    if args.seed is not None:
        cfg = replace(cfg, experiment_seed=args.seed)
    return cfg


def _resolve_out(args, cfg) -> str:
    out = args.out or cfg.output_dir
    if out is None:
        raise CliError(f"{args.config}: no output directory (pass --out or set output_dir)")
    return out


def _print_means(table) -> None:
    for family in table.families():
        for param in table.params(family):
            rows = table.cell_rows(family, param)
            print(f"{family}\t{param}\t{table.mean_dice(family, param):.6f}\t{rows[0].relative:.6f}")


def cmd_experiment(args) -> None:
    cfg = _experiment_config(args)
    out = _resolve_out(args, cfg)
    table = run(cfg)
    emit(table, out)
    _print_means(table)


def _fractions(text: str) -> list:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values or any(not 0 <= v <= 1 for v in values):
        raise argparse.ArgumentTypeError(f"fractions must lie in [0, 1], got {text!r}")
    return values


def cmd_permute_vs_discard(args) -> None:
    cfg = _experiment_config(args)
    out = _resolve_out(args, cfg)
    table = permute_vs_discard(cfg, args.fractions)
    emit(table, out)
    _print_means(table)


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelnoise", description="Annotation corruption and robustness experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a phantom dataset directory")
    p.add_argument("--config", help="synthesis config JSON (defaults if omitted)")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, required=True, help="dataset seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("corrupt", help="corrupt one mask")
    p.add_argument("--spec", required=True, help="corruption spec JSON")
    p.add_argument("--mask", required=True, help="input mask PGM")
    p.add_argument("--seed", type=int, required=True, help="experiment seed")
    p.add_argument("--epoch", type=int, default=0, help="epoch counter (default 0)")
    p.add_argument("--sample-id", type=int, default=0, help="sample id (default 0)")
    p.add_argument("--out", required=True, help="output mask PGM")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("bias", help="Monte-Carlo bias estimate for a corruption")
    p.add_argument("--spec", required=True, help="corruption spec JSON")
    p.add_argument("--mask", required=True, help="input mask PGM")
    p.add_argument("--draws", type=int, required=True, help="number of corrupted draws")
    p.add_argument("--seed", type=int, required=True, help="base seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("dice", help="pooled Dice between prediction and reference masks")
    p.add_argument("--pred", required=True, help="directory (or file) of predicted mask PGMs")
    p.add_argument("--ref", required=True, help="directory (or file) of reference mask PGMs")
    p.set_defaults(func=cmd_dice)

    p = sub.add_parser("train", help="train a patch scorer on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory written by 'synth'")
    p.add_argument("--spec", required=True, help="corruption spec JSON")
    p.add_argument("--train-config", help="training config JSON (defaults if omitted)")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--out", required=True, help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run a corruption sweep")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, help="override experiment_seed")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("permute-vs-discard", help="paired permute and discard sweep")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--fractions", type=_fractions, default=[0.0, 0.1, 0.25, 0.5], help="comma-separated fractions")
    p.add_argument("--seed", type=int, help="override experiment_seed")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_permute_vs_discard)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
