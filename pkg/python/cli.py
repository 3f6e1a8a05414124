"""
DeskMT: Command Line
====================
One entry point for the whole workflow:

    clean -> mkdata -> train -> translate / avg / rank / forbidden / serve

plus ``toy`` for synthetic corpora. Experiment settings come from config files
(``--config``, repeatable); flags override file values.

Exit codes: 0 success, 1 usage (bad flag, missing input file), 2 data/format
error, 3 runtime error.

Author: DeskMT Team
Date: 2026-02-11
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from api import serve
from checkpoint import load_model, save_checkpoint
from config import BeamConfig, RatioThresholds, ServerSettings, decode_value, load_experiment, \
    load_thresholds, read_config_files, write_config
from corpus import clean_by_ratios, clean_by_vocab, estimate_thresholds, max_keeper, read_parallel, \
    write_parallel
from dataset import DatasetFile, encode_pairs, sort_and_batch, write_dataset
from decoding import DEFAULT_FORBIDDEN, Translator, rank_corpus, write_ranking
from errors import DeskMTError, FormatError
from logging_config import get_logger
from nmt import NMT
from toolbox import average_checkpoints
from toy_corpus import TASKS, write_toy_corpus
from trainer import Trainer
from vocab import Vocab, build_vocab, collect_forbidden_indexes

logger = get_logger("deskmt.cli")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_RUNTIME = 0, 1, 2, 3

_RATIO_KEYS = ("max_cratio", "max_bratio", "max_sratio", "max_uratio", "max_oratio")


class UsageError(Exception):
    """Bad flag or missing input file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _require(*paths: Optional[str]) -> None:
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise UsageError(f"no such file: {path}")


def _forbidden_from(path: Optional[str]) -> Sequence[int]:
    if path is None:
        return DEFAULT_FORBIDDEN
    _require(path)
    values = read_config_files([path])
    if "forbidden_indexes" not in values:
        raise FormatError(f"{path}: no forbidden_indexes entry")
    return sorted(set(values["forbidden_indexes"]))


# ------------------------------
# Subcommands
# ------------------------------
def cmd_clean(args: argparse.Namespace) -> int:
    if args.thresholds_from_dev:
        if args.dev_src or args.dev_tgt:
            raise UsageError("give --thresholds-from-dev or --dev-src/--dev-tgt, not both")
        args.dev_src, args.dev_tgt = args.thresholds_from_dev
    _require(args.src, args.tgt, args.src_raw, args.tgt_raw, args.dev_src, args.dev_tgt, args.thresholds)
    pairs = read_parallel(args.src, args.tgt, args.src_raw, args.tgt_raw)
    stats: List[str] = [f"input: {len(pairs)}"]

    pairs_kept = max_keeper(pairs)
    stats.append(f"max_keeper: kept {len(pairs_kept)}, removed {len(pairs) - len(pairs_kept)}")
    pairs = pairs_kept

    if args.vratio is not None:
        pairs_kept = clean_by_vocab(pairs, args.vratio)
        stats.append(f"clean_by_vocab: kept {len(pairs_kept)}, removed {len(pairs) - len(pairs_kept)}")
        pairs = pairs_kept

    thresholds: Optional[RatioThresholds] = None
    explicit = {k: getattr(args, k) for k in _RATIO_KEYS if getattr(args, k) is not None}
    if args.dev_src and args.dev_tgt:
        thresholds = estimate_thresholds(read_parallel(args.dev_src, args.dev_tgt))
    elif args.thresholds:
        thresholds = load_thresholds(args.thresholds)
    if explicit:
        base = thresholds.model_dump() if thresholds is not None else {}
        base.update(explicit)
        missing = [k for k in _RATIO_KEYS if k not in base]
        if missing:
            raise UsageError(f"no thresholds source; also give --{missing[0].replace('_', '-')}")
        thresholds = RatioThresholds(**base)
    Path(args.out_src).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out_tgt).parent.mkdir(parents=True, exist_ok=True)
    if thresholds is not None:
        pairs_kept = clean_by_ratios(pairs, thresholds)
        stats.append(f"clean_by_ratios: kept {len(pairs_kept)}, removed {len(pairs) - len(pairs_kept)}")
        pairs = pairs_kept
        write_config(Path(args.out_src).with_suffix(".thresholds"), thresholds.model_dump())

    write_parallel(pairs, args.out_src, args.out_tgt)
    for line in stats:
        print(line)
    return EXIT_OK


def cmd_mkdata(args: argparse.Namespace) -> int:
    _require(args.src, args.tgt, args.dev_src, args.dev_tgt, args.src_vocab, args.tgt_vocab)
    out_dir = Path(args.cache_dir) / args.dataid
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = read_parallel(args.src, args.tgt)

    if args.src_vocab and args.tgt_vocab:
        src_vocab, tgt_vocab = Vocab.load(args.src_vocab), Vocab.load(args.tgt_vocab)
    elif args.shared_vocab:
        src_vocab = tgt_vocab = build_vocab(pairs, args.min_freq, shared=True)
    else:
        src_vocab, tgt_vocab = build_vocab(pairs, args.min_freq)
    src_vocab.save(out_dir / "src.vcb")
    tgt_vocab.save(out_dir / "tgt.vcb")

    splits = [("train", pairs)]
    if args.dev_src and args.dev_tgt:
        splits.append(("dev", read_parallel(args.dev_src, args.dev_tgt)))
    for name, split in splits:
        batches = sort_and_batch(encode_pairs(split, src_vocab, tgt_vocab), args.batch_tokens, args.max_len)
        write_dataset(batches, out_dir / f"{name}.bin", len(src_vocab), len(tgt_vocab))
        print(f"{name}: {len(split)} pairs -> {len(batches)} batch units")
    print(f"written under {out_dir}")
    return EXIT_OK


def _overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def cmd_train(args: argparse.Namespace) -> int:
    _require(*args.config)
    overrides = {k: decode_value(v) for k, v in _overrides(args.set).items()}
    cfg = load_experiment(args.config, overrides)
    data_dir = Path(cfg.train.cache_dir) / cfg.train.data_id
    train_path = args.train or str(data_dir / "train.bin")
    dev_path = args.dev or (str(data_dir / "dev.bin") if (data_dir / "dev.bin").is_file() else None)
    _require(train_path, dev_path, args.resume)

    train_data = DatasetFile(train_path)
    dev_data = DatasetFile(dev_path) if dev_path else None
    try:
        model = NMT(cfg.model, train_data.src_vocab_size, train_data.tgt_vocab_size, seed=cfg.train.seed)
        trainer = Trainer(model, train_data, dev_data, cfg, run_dir=args.run_dir)
        if args.resume:
            trainer.resume(args.resume)
        else:
            trainer.apply_start_options()
        best = trainer.train()
    finally:
        train_data.close()
        if dev_data is not None:
            dev_data.close()
    print(best)
    return EXIT_OK


def _read_input(path: Optional[str]) -> List[str]:
    if path is None:
        return [line.rstrip("\n") for line in sys.stdin]
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def cmd_translate(args: argparse.Namespace) -> int:
    _require(*args.model, args.src_vocab, args.tgt_vocab, args.input)
    beam = BeamConfig(beam_size=args.beam, alpha=args.alpha, max_len=args.max_len)
    translator = Translator.from_files(args.model, args.src_vocab, args.tgt_vocab, beam=beam,
                                       forbidden=_forbidden_from(args.forbidden))
    outputs = translator.translate(_read_input(args.input), progress=args.progress)
    text = "".join(line + "\n" for line in outputs)
    if args.output is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(args.output).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_avg(args: argparse.Namespace) -> int:
    _require(*args.inputs)
    path = save_checkpoint(args.output, average_checkpoints(args.inputs))
    print(path)
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    _require(args.model, args.src, args.tgt, args.src_vocab, args.tgt_vocab)
    model = load_model(args.model)
    src_vocab, tgt_vocab = Vocab.load(args.src_vocab), Vocab.load(args.tgt_vocab)
    model.check_vocab(len(src_vocab), len(tgt_vocab))
    ids = encode_pairs(read_parallel(args.src, args.tgt), src_vocab, tgt_vocab)
    ranking = rank_corpus(model, ids, smoothing=args.smoothing, forbidden=_forbidden_from(args.forbidden),
                          progress=args.progress)
    write_ranking(args.output, ranking)
    print(f"ranked {len(ranking)} pairs into {args.output}")
    return EXIT_OK


def cmd_forbidden(args: argparse.Namespace) -> int:
    _require(args.tgt, args.tgt_vocab)
    vocab = Vocab.load(args.tgt_vocab)
    with open(args.tgt, "r", encoding="utf-8") as f:
        forbidden = collect_forbidden_indexes((line.split() for line in f), vocab)
    write_config(args.output, {"forbidden_indexes": forbidden})
    print(f"{len(forbidden)} forbidden indexes written to {args.output}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    _require(*args.model, args.src_vocab, args.tgt_vocab)
    flags = {
        "addr": args.addr, "port": args.port, "models": args.model or None,
        "src_vocab": args.src_vocab, "tgt_vocab": args.tgt_vocab, "beam": args.beam,
        "alpha": args.alpha, "max_len": args.max_len, "max_batch": args.max_batch, "workers": args.workers,
    }
    serve(ServerSettings(**{k: v for k, v in flags.items() if v is not None}))
    return EXIT_OK


def cmd_toy(args: argparse.Namespace) -> int:
    written = write_toy_corpus(args.out_dir, train=args.train, dev=args.dev, task=args.task,
                               num_tokens=args.num_tokens, min_len=args.min_len, max_len=args.max_len,
                               seed=args.seed)
    for path in written.values():
        print(path)
    return EXIT_OK


# ------------------------------
# Parser
# ------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deskmt", description="Desk-scale neural machine translation toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("clean", help="Clean a parallel corpus")
    p.add_argument("--src", required=True, help="Source side (subword-segmented)")
    p.add_argument("--tgt", required=True, help="Target side (subword-segmented)")
    p.add_argument("--src-raw", help="Source side before segmentation")
    p.add_argument("--tgt-raw", help="Target side before segmentation")
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.add_argument("--vratio", type=float, help="Rare-vocabulary ratio for clean_by_vocab")
    p.add_argument("--dev-src", help="Development source used to estimate ratio thresholds")
    p.add_argument("--dev-tgt", help="Development target used to estimate ratio thresholds")
    p.add_argument("--thresholds-from-dev", nargs=2, metavar=("DEV_SRC", "DEV_TGT"),
                   help="Development pair used to estimate ratio thresholds")
    p.add_argument("--thresholds", help="Threshold file written by an earlier clean run")
    for key in _RATIO_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("mkdata", help="Build vocabularies and batched binary datasets")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--dev-src")
    p.add_argument("--dev-tgt")
    p.add_argument("--dataid", required=True, help="Output goes to <cache-dir>/<dataid>/")
    p.add_argument("--cache-dir", default="cache")
    p.add_argument("--src-vocab", help="Reuse an existing source vocabulary")
    p.add_argument("--tgt-vocab", help="Reuse an existing target vocabulary")
    p.add_argument("--shared-vocab", action="store_true")
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--batch-tokens", type=int, default=2048, help="Token budget per batch unit and side")
    p.add_argument("--max-len", type=int, default=256)
    p.set_defaults(func=cmd_mkdata)

    p = sub.add_parser("train", help="Train a model")
    p.add_argument("--config", action="append", default=[], help="Config file (repeatable, later wins)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override a config key")
    p.add_argument("--train", help="Training dataset (default <cache_dir>/<data_id>/train.bin)")
    p.add_argument("--dev", help="Development dataset (default <cache_dir>/<data_id>/dev.bin if present)")
    p.add_argument("--run-dir", help="Output directory (default <expm_dir>/<data_id>/<run_id>)")
    p.add_argument("--resume", help="Checkpoint with full training state")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="Translate text")
    p.add_argument("--model", action="append", required=True, help="Checkpoint (repeat for an ensemble)")
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--forbidden", help="File written by the forbidden command")
    p.add_argument("--input", help="Input file (default stdin)")
    p.add_argument("--output", help="Output file (default stdout)")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("avg", help="Average checkpoints")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_avg)

    p = sub.add_parser("rank", help="Rank a parallel corpus by per-token loss")
    p.add_argument("--model", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--smoothing", type=float, default=0.1)
    p.add_argument("--forbidden")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("forbidden", help="Collect target indexes the decoder must never produce")
    p.add_argument("--tgt", required=True, help="Target side of the training corpus")
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_forbidden)

    p = sub.add_parser("serve", help="Start the REST translation server")
    p.add_argument("--addr")
    p.add_argument("--port", type=int)
    p.add_argument("--model", action="append", default=[])
    p.add_argument("--src-vocab")
    p.add_argument("--tgt-vocab")
    p.add_argument("--beam", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-len", type=int)
    p.add_argument("--max-batch", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("toy", help="Write a synthetic copy/reverse corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--task", choices=TASKS, default="copy")
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--dev", type=int, default=200)
    p.add_argument("--num-tokens", type=int, default=26)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"deskmt: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        logger.error(f"Format error: {e}")
        return EXIT_FORMAT
    except DeskMTError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
