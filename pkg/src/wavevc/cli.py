"""Command-line entry point: ``wavevc <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .evaluator import evaluate_dirs
from .features import F0Stats, f0_statistics
from .fileio import DataError, read_wav, write_vcf1
from .generator import InferenceNet, benchmark
from .pipeline import F0Options, convert_files, load_corpus, source_f0
from .trainer import TrainConfig, train
from .wavenet import ModelConfig, load_checkpoint, receptive_field

log = logging.getLogger("wavevc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; route it to our usage code instead
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _f0_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--f0-min", type=float, default=50.0, help="lowest f0 searched, Hz (default 50)")
    p.add_argument("--f0-max", type=float, default=500.0, help="highest f0 searched, Hz (default 500)")
    p.add_argument(
        "--voicing-threshold",
        type=float,
        default=0.5,
        help="normalized autocorrelation peak needed to call a frame voiced (default 0.5)",
    )


def _f0_opts(args) -> F0Options:
    return F0Options(args.f0_min, args.f0_max, args.voicing_threshold)


def _threads(p):
    p.add_argument("--threads", type=int, default=os.cpu_count(), help="worker threads (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    defaults = ModelConfig()
    tdef = TrainConfig()
    parser = _Parser(prog="wavevc", description="PPG-conditioned WaveNet voice conversion")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a target-speaker model on a corpus directory")
    p.add_argument("--corpus", required=True, type=Path, help="directory of <name>.wav + <name>.ppg.vcf1")
    p.add_argument("--out", required=True, type=Path, help="checkpoint directory")
    p.add_argument("--steps", type=int, default=tdef.steps)
    p.add_argument("--seed", type=int, default=tdef.seed)
    p.add_argument("--batch-samples", type=int, default=tdef.batch_samples, help="target samples per step")
    p.add_argument("--segment-length", type=int, default=tdef.segment_length)
    p.add_argument("--lr", type=float, default=tdef.lr)
    p.add_argument("--checkpoint-every", type=int, default=tdef.checkpoint_every)
    p.add_argument("--validation-fraction", type=float, default=tdef.validation_fraction)
    p.add_argument("--upsample", choices=("hold", "linear"), default=tdef.upsample_mode)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--blocks", type=int, default=defaults.blocks)
    p.add_argument("--layers-per-block", type=int, default=defaults.layers_per_block)
    p.add_argument("--kernel-size", type=int, default=defaults.kernel_size)
    p.add_argument("--residual-channels", type=int, default=defaults.residual_channels)
    p.add_argument("--skip-channels", type=int, default=defaults.skip_channels)
    p.add_argument("--classes", type=int, default=defaults.classes, help="mu-law quantization levels")
    _f0_flags(p)
    _threads(p)

    p = sub.add_parser("convert", help="convert one utterance with a trained checkpoint")
    p.add_argument("--wav", required=True, type=Path)
    p.add_argument("--ppg", required=True, type=Path, help="source PPG, VCF1 N x D")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--target-f0-stats", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("categorical", "argmax", "temperature"), default="categorical")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument(
        "--source-f0-stats",
        type=Path,
        help="per-speaker source stats; by default they are measured on the input utterance",
    )
    p.add_argument("--upsample", choices=("hold", "linear"), default="hold")
    _f0_flags(p)

    p = sub.add_parser("f0-stats", help="log-f0 mean and deviation of a speaker corpus")
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _f0_flags(p)
    _threads(p)

    p = sub.add_parser("features", help="estimate f0 and vuv tracks of a WAV file")
    p.add_argument("--wav", required=True, type=Path)
    p.add_argument("--out-f0", required=True, type=Path)
    p.add_argument("--out-vuv", required=True, type=Path)
    _f0_flags(p)

    p = sub.add_parser("evaluate", help="log-spectral RMSE between two directories of WAV files")
    p.add_argument("--target-dir", required=True, type=Path)
    p.add_argument("--converted-dir", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path, help="text report; JSON goes to <report>.json")
    _threads(p)

    p = sub.add_parser("gen-bench", help="samples/s of cached vs. recomputing generation")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--samples", required=True, type=int)
    p.add_argument("--naive-samples", type=int, help="cap on samples timed for the recomputing path")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train(args) -> int:
    model = ModelConfig(
        blocks=args.blocks,
        layers_per_block=args.layers_per_block,
        kernel_size=args.kernel_size,
        residual_channels=args.residual_channels,
        skip_channels=args.skip_channels,
        classes=args.classes,
        cond_channels=1,  # replaced below once the PPG dimension is known
    )
    corpus = load_corpus(args.corpus, _f0_opts(args), args.threads)
    dims = {track.dim for _, _, track in corpus}
    if len(dims) != 1:
        raise DataError(f"corpus mixes PPG dimensions {sorted(dims)}")
    model = dataclasses.replace(model, cond_channels=dims.pop() + 2)
    cfg = TrainConfig(
        steps=args.steps,
        batch_samples=args.batch_samples,
        segment_length=args.segment_length,
        lr=args.lr,
        checkpoint_every=args.checkpoint_every,
        seed=args.seed,
        validation_fraction=args.validation_fraction,
        upsample_mode=args.upsample,
    )
    log.info("training %s (receptive field %d) on %d utterances", model, receptive_field(model), len(corpus))
    final = train(corpus, model, cfg, args.out, resume=args.resume, on_report=lambda r: log.info("%s", r.line()))
    f0_statistics(track for _, _, track in corpus).save(args.out / "f0_stats.txt")
    print(final)
    return EXIT_OK


def _cmd_convert(args) -> int:
    config, params, _ = load_checkpoint(args.ckpt)
    target = F0Stats.load(args.target_f0_stats)
    source = F0Stats.load(args.source_f0_stats) if args.source_f0_stats else None
    result = convert_files(
        args.wav,
        args.ppg,
        config,
        params,
        target,
        args.out,
        seed=args.seed,
        mode=args.mode,
        temperature=args.temperature,
        source_stats=source,
        opts=_f0_opts(args),
        upsample_mode=args.upsample,
    )
    print(f"{args.out}\t{len(result.waveform)}\t{result.waveform.duration:.6f}")
    return EXIT_OK


def _cmd_f0_stats(args) -> int:
    stats = f0_statistics(track for _, _, track in load_corpus(args.corpus, _f0_opts(args), args.threads))
    stats.save(args.out)
    print(f"mu={stats.mu!r}\tsigma={stats.sigma!r}\tframes={stats.frame_count}")
    return EXIT_OK


def _cmd_features(args) -> int:
    f0, vuv = source_f0(read_wav(args.wav), _f0_opts(args))
    write_vcf1(args.out_f0, f0[:, None])
    write_vcf1(args.out_vuv, vuv[:, None])
    print(f"{args.wav}\t{len(f0)} frames\t{int(vuv.sum())} voiced")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    report = evaluate_dirs(args.target_dir, args.converted_dir, args.threads)
    report.write(args.report)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _cmd_gen_bench(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    config, params, _ = load_checkpoint(args.ckpt)
    rates = benchmark(InferenceNet.from_params(params, config), args.samples, args.seed, args.naive_samples)
    print(f"{args.ckpt}:fast\t{rates['fast']:.1f}")
    print(f"{args.ckpt}:naive\t{rates['naive']:.1f}")
    return EXIT_OK


COMMANDS = {
    "train": _cmd_train,
    "convert": _cmd_convert,
    "f0-stats": _cmd_f0_stats,
    "features": _cmd_features,
    "evaluate": _cmd_evaluate,
    "gen-bench": _cmd_gen_bench,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(parser.format_help())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
        )
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(str(exc) if str(exc).endswith("\n") else f"{exc}\n")
        return EXIT_USAGE
    except FloatingPointError as exc:  # NonFiniteError included
        print(f"wavevc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"wavevc: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())
