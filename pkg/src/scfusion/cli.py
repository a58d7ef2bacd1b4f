"""Command-line entry point.

Exit codes: 0 success, 1 input or configuration error, 2 verification
failure (gradcheck), 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import audio, checkpoint, data, gradcheck, trainer
from .config import RunConfig, config_to_dict, derive_seed, dump_config, load_config
from .core import run_forward
from .errors import ConfigurationError, InputError, ScfError

EXIT_OK, EXIT_INPUT, EXIT_VERIFY, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("scfusion")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "fusion", None):
        cfg = dataclasses.replace(cfg, fusion=args.fusion)
    return cfg


def _out(path: str | None, cfg: RunConfig, default: str) -> Path:
    p = Path(path) if path else Path(cfg.output_dir) / default
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def cmd_spectrogram(args) -> int:
    cfg = _config(args)
    samples, rate = audio.load_audio(args.input)
    spec_cfg = cfg.spectrogram
    if rate != spec_cfg.sample_rate:
        spec_cfg = dataclasses.replace(spec_cfg, sample_rate=rate)
    spec = audio.spectrogram(samples, spec_cfg)
    out = _out(args.output, cfg, Path(args.input).stem + (".txt" if args.text else ".scfe"))
    if args.text:
        np.savetxt(out, spec.frames, fmt="%.9e")
    else:
        data.write_dataset(audio.spectrogram_dataset(spec, Path(args.input).stem), out)
    print(f"{spec.frames.shape[0]} frames x {spec.frames.shape[1]} bins -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    ds = data.synth_generate(cfg.synth_config())
    out = _out(args.output, cfg, "synth.scfe")
    data.write_dataset(ds, out)
    print(f"{len(ds)} instances ({int(ds.labels.sum())} positive) -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = data.read_dataset(args.data)
    tc = cfg.train_config()
    fuser = cfg.make_fuser(ds.dims, derive_seed(cfg.seed, "model"))
    head = trainer.MlpHead.create(
        trainer.fused_width(fuser, ds.dims), tc.hidden, tc.dropout, seed=derive_seed(cfg.seed, "head")
    )
    result = trainer.train(
        fuser, head, ds, tc, callback=lambda r, *_: log.info("epoch %d val_loss %.5f", r.epoch, r.val_loss)
    )
    out = _out(args.output, cfg, "model.scfc")
    # the output location is not part of the experiment, so runs in different
    # directories still produce identical checkpoints
    snapshot = {k: v for k, v in config_to_dict(cfg).items() if k != "output_dir"}
    ckpt = checkpoint.Checkpoint(
        result.fuser, result.head, result.optimizer, snapshot, result.history, result.best_epoch
    )
    checkpoint.save_checkpoint(ckpt, out)
    hist = Path(args.history) if args.history else out.with_suffix(".history.txt")
    hist.write_text(result.history_table())
    print(f"best epoch {result.best_epoch} of {len(result.history)} -> {out}, {hist}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    ds = data.read_dataset(args.data)
    out = _out(args.output, cfg, "report.txt")
    if args.checkpoint:
        ckpt = checkpoint.load_checkpoint(args.checkpoint)
        prob = trainer.predict(ckpt.fuser, ckpt.head, trainer._stimuli(ds))
        acc = float(np.mean((prob >= cfg.train.threshold) == (ds.labels == 1)))
        report = trainer.FoldReport([acc], {0: sorted(set(ds.group_ids))}, "held-out", "checkpoint")
    else:
        tc = cfg.train_config()
        report = trainer.cross_validate(
            ds, cfg.scenario, cfg.folds, tc, lambda seed: cfg.make_fuser(ds.dims, seed), label=cfg.fusion
        )
    out.write_text(report.table())
    print(f"{cfg.fusion} {cfg.scenario}: {report.summary()} -> {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    problem = gradcheck.small_problem(
        grid=(args.grid, args.grid), steps=args.steps, dim=args.dim, hidden=args.hidden, seed=args.seed or 0
    )
    report = gradcheck.check_gradients(*problem, h=args.h, tol=args.tol)
    sys.stdout.write(report.table())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_simulate(args) -> int:
    cfg = _config(args)
    ds = data.read_dataset(args.stimuli)
    if not 0 <= args.index < len(ds):
        raise InputError(f"index {args.index} outside dataset of {len(ds)} instances")
    if args.checkpoint:
        model = checkpoint.load_checkpoint(args.checkpoint).fuser
        if isinstance(model, trainer.ConcatBaseline):
            raise InputError("checkpoint holds a concatenation baseline, not an SCF model")
    else:
        model = cfg.scf.build(ds.dims, derive_seed(cfg.seed, "model"))
    stimuli = [ds.audio[args.index].astype(float), ds.visual[args.index].astype(float)]
    if args.absent:
        stimuli[{"a": 0, "v": 1}[args.absent]] = np.zeros_like(stimuli[{"a": 0, "v": 1}[args.absent]])
    result = run_forward(model, stimuli, record=True)
    outdir = Path(args.output) if args.output else Path(cfg.output_dir) / "simulate"
    outdir.mkdir(parents=True, exist_ok=True)
    np.savetxt(outdir / "embedding.txt", result.embedding[None], fmt="%.17g")
    with open(outdir / "snapshots.txt", "w") as fh:
        for n, states in enumerate(result.history):
            for name, z in zip(model.area_names, states):
                fh.write(f"# step {n} area {name}\n")
                np.savetxt(fh, z, fmt="%.9f")
    print(f"{model.steps} steps, clip {ds.clip_ids[args.index]} -> {outdir}")
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.set_defaults(func=fn)
        return p

    p = add("spectrogram", cmd_spectrogram, "WAV clip -> normalised spectrogram")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--text", action="store_true", help="write a plain-text matrix instead of SCFE")

    p = add("synth", cmd_synth, "generate the synthetic coincidence dataset")
    p.add_argument("-o", "--output")

    p = add("train", cmd_train, "train a fusion model and MLP head")
    p.add_argument("--data", required=True)
    p.add_argument("--fusion", choices=("scf", "concat"))
    p.add_argument("-o", "--output")
    p.add_argument("--history")

    p = add("eval", cmd_eval, "cross-validate, or score a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--fusion", choices=("scf", "concat"))
    p.add_argument("--checkpoint")
    p.add_argument("-o", "--output")

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient verification")
    p.add_argument("--grid", type=int, default=5)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)

    p = add("simulate", cmd_simulate, "run the field dynamics on one stored instance")
    p.add_argument("stimuli", help="SCFE file")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--checkpoint")
    p.add_argument("--absent", choices=("a", "v"), help="zero one modality")
    p.add_argument("-o", "--output")

    add("config", cmd_config, "print the effective configuration")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ScfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
