"""Command-line entry point: ``actionpose <command> [flags]``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import PROFILES, ConfigError, TrainConfig, apply_overrides, dump_config, load_config
from .synth import ACTION_CLASSES, class_histogram, generate_corpus, read_corpus, write_corpus

logger = logging.getLogger("actionpose")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class ValidationError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--profile", choices=sorted(PROFILES), default="tiny")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set loss.tau=0.2")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="actionpose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic labelled corpus")
    g.add_argument("--classes", default=",".join(ACTION_CLASSES[:8]))
    g.add_argument("--clips-per-class", type=int, default=8)
    g.add_argument("--histogram", help="explicit class counts, e.g. walk=20,jump=2")
    g.add_argument("--duration", type=int, default=64)
    g.add_argument("--transitions", type=int, default=0)

    for name, help_ in (("pretrain", "alignment + reconstruction pretraining"),
                        ("finetune", "fine-tune the pose encoder on 3D data"),
                        ("eval", "evaluate a checkpoint"),
                        ("embed", "export pose embeddings and a 2D projection")):
        c = sub.add_parser(name, parents=[common], help=help_)
        c.add_argument("--corpus", type=Path)
        c.add_argument("--checkpoint", type=Path)
        if name in ("pretrain", "finetune"):
            c.add_argument("--steps", type=int)
        if name in ("finetune", "eval", "embed"):
            c.add_argument("--clips", type=int, help="use only the first N clips")
    return p


def resolve_config(args) -> TrainConfig:
    cfg = PROFILES[args.profile]()
    if args.config is not None:
        cfg = load_config(args.config, cfg)
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like KEY=VALUE")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
        overrides["epochs"] = 0
    if args.command == "finetune":
        overrides["stage"] = "finetune"
    return apply_overrides(cfg, overrides)


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise ValidationError(f"missing required key: {n} (pass --{n})")


def _out_dir(args) -> Path:
    _require(args, "out")
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise OSError(f"output directory {out} is not writable: {e}") from e
    return out


def _load_corpus(args):
    _require(args, "corpus")
    clips = read_corpus(args.corpus)
    if getattr(args, "clips", None):
        clips = clips[: args.clips]
    return clips


def _parse_histogram(text: str) -> dict[str, int]:
    hist = {}
    for item in text.split(","):
        name, _, n = item.partition("=")
        if not n.strip().isdigit():
            raise ValidationError(f"bad histogram entry {item!r}, expected CLASS=COUNT")
        hist[name.strip()] = int(n)
    return hist


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    if args.histogram:
        hist = _parse_histogram(args.histogram)
    else:
        hist = {c.strip(): args.clips_per_class for c in args.classes.split(",") if c.strip()}
    bad = sorted(set(hist) - set(ACTION_CLASSES))
    if bad:
        raise ValidationError(f"unknown classes {bad}; choose from {', '.join(ACTION_CLASSES)}")
    if args.duration < 16:
        raise ValidationError("duration must be >= 16 frames")
    clips = generate_corpus(hist, args.duration, seed, n_transitions=args.transitions)
    write_corpus(out, clips)
    for cls, n in class_histogram(clips).items():
        print(f"{cls}\t{n}")
    return EXIT_OK


def _write_run(out: Path, cfg: TrainConfig, log, stage: str) -> None:
    from .plotting import loss_curve_plot

    (out / "config.yaml").write_text(dump_config(cfg))
    (out / "train_log.tsv").write_text(log.to_tsv())
    (out / "epochs.tsv").write_text(log.epochs_tsv())
    loss_curve_plot(log.steps, out / "loss_curve.svg",
                    keys=("total", "l_con", "l_3d", "l_v") if stage == "pretrain" else ("total", "l_3d", "l_v"))


def cmd_pretrain(args) -> int:
    from . import trainer
    from .checkpoint import load_checkpoint

    cfg = resolve_config(args)
    corpus = _load_corpus(args)
    out = _out_dir(args)
    model = tok = None
    if args.checkpoint is not None:
        model, tok, _ = load_checkpoint(args.checkpoint)
    model, tok, log = trainer.pretrain(cfg, corpus, out_dir=out, model=model, tokenizer=tok)
    _write_run(out, cfg, log, "pretrain")
    last = log.steps[-1]
    print(f"pretrain: {len(log.steps)} steps, final total loss {last['total']:.4f}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    from . import trainer

    cfg, model, tok = _checkpoint_config(args)
    clips = _load_corpus(args)
    out = _out_dir(args)
    model, log = trainer.finetune(cfg, model, tok, clips, out_dir=out)
    _write_run(out, cfg, log, "finetune")
    print(f"finetune: train MPJPE {log.epochs[0]['train_mpjpe_mm']:.2f} -> {log.epochs[-1]['train_mpjpe_mm']:.2f} mm")
    return EXIT_OK


def _checkpoint_config(args):
    from .checkpoint import load_checkpoint, read_checkpoint

    _require(args, "checkpoint")
    cfg = resolve_config(args)
    header, _ = read_checkpoint(args.checkpoint)
    cfg = apply_overrides(cfg, {f"model.{k}": v for k, v in header["model_config"].items()})
    model, tok, _ = load_checkpoint(args.checkpoint, cfg.model)
    return cfg, model, tok


def cmd_eval(args) -> int:
    from . import trainer
    from .metrics import AUC_THRESHOLDS_MM, pck_curve
    from .plotting import pck_curve_plot

    cfg, model, _ = _checkpoint_config(args)
    clips = _load_corpus(args)
    out = _out_dir(args)
    report = trainer.evaluate(model, clips, cfg)
    (out / "eval_report.txt").write_text(report.to_text())
    (out / "eval_report.tsv").write_text(report.to_kv())
    with open(out / "per_clip.tsv", "w", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["clip_id", "frames", "mpjpe_mm", "p_mpjpe_mm"])
        for r in report.per_clip:
            w.writerow([r["clip_id"], r["frames"], repr(r["mpjpe_mm"]), repr(r["p_mpjpe_mm"])])

    windows = trainer.eval_windows(clips, cfg.seq_len)
    pred = trainer.predict_mm(model, trainer._stack_inputs([w[1] for w in windows]), cfg)
    curve = pck_curve(pred, np.stack([w[2] for w in windows]))
    with open(out / "pck_curve.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold_mm", "pck_percent"])
        w.writerows([[repr(float(t)), repr(float(c))] for t, c in zip(AUC_THRESHOLDS_MM, curve)])
    pck_curve_plot(AUC_THRESHOLDS_MM, curve, out / "pck_curve.svg")
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_embed(args) -> int:
    from . import trainer
    from .plotting import embedding_scatter, pca_2d

    cfg, model, _ = _checkpoint_config(args)
    clips = _load_corpus(args)
    out = _out_dir(args)
    h = trainer.embed_clips(model, clips, cfg)
    with open(out / "embeddings.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["clip_id", "action_class"] + [f"h{i}" for i in range(h.shape[1])])
        for c, row in zip(clips, h):
            w.writerow([c.clip_id, c.action_class] + [repr(float(v)) for v in row])
    xy = pca_2d(h)
    with open(out / "embeddings_2d.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["clip_id", "action_class", "pc1", "pc2"])
        for c, (a, b) in zip(clips, xy):
            w.writerow([c.clip_id, c.action_class, repr(float(a)), repr(float(b))])
    embedding_scatter(xy, [c.action_class for c in clips], out / "embeddings_2d.svg")
    print(f"embed: {len(clips)} clips -> {out / 'embeddings.csv'}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "eval": cmd_eval, "embed": cmd_embed}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("ACTIONPOSE_THREADS")
    if threads:
        import torch

        torch.set_num_threads(max(1, int(threads)))

    from .checkpoint import CheckpointError
    from .trainer import NumericalAbort

    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalAbort as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
