"""Pretraining, fine-tuning and evaluation loops."""
from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import objectives
from .checkpoint import load_state, save_checkpoint
from .config import TrainConfig
from .corruption import add_noise, schedule_corruption
from .metrics import EvalReport, evaluate_predictions, mpjpe
from .model import ActionPose, finetune_parameter_names
from .synth import (
    LabeledClip,
    default_tokenizer,
    derive_seed,
    prepare_view,
    sample_contrastive_batch,
)
from .text import Tokenizer

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l_con", "l_3d", "l_v", "total", "rng")


class NumericalAbort(RuntimeError):
    def __init__(self, step: int, batch_seed: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step} (batch seed {batch_seed})")
        self.step = step
        self.batch_seed = batch_seed


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    con_evaluations: int = 0

    def losses(self, key: str = "total") -> list[float]:
        return [r[key] for r in self.steps]

    def to_tsv(self) -> str:
        """Per-step table. Wall time goes in the leading comment line only, so
        rows are identical across reruns."""
        wall = self.steps[-1]["wall_s"] if self.steps else 0.0
        lines = [f"# wall_s {wall}", "\t".join(LOG_COLUMNS)]
        for r in self.steps:
            lines.append("\t".join(_fmt(r.get(c, float("nan"))) for c in LOG_COLUMNS))
        return "\n".join(lines) + "\n"

    def epochs_tsv(self) -> str:
        if not self.epochs:
            return ""
        cols = list(self.epochs[0])
        return "\n".join(["\t".join(cols)] + ["\t".join(_fmt(e[c]) for c in cols) for e in self.epochs]) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _rng_digest() -> str:
    return hashlib.sha256(torch.get_rng_state().numpy().tobytes()).hexdigest()[:12]


def build_tokenizer(corpus: Sequence[LabeledClip]) -> Tokenizer:
    base = default_tokenizer()
    extra = sorted({w for c in corpus for w in c.label_text.lower().split()} - set(base.vocab))
    return Tokenizer(base.vocab[4:] + extra)


def build_model(cfg: TrainConfig, tokenizer: Tokenizer) -> ActionPose:
    torch.manual_seed(cfg.seed)
    mcfg = dataclasses.replace(cfg.model, vocab_size=len(tokenizer))
    return ActionPose(mcfg)


def pad_tokens(seqs: Sequence[Sequence[int]], pad: int = 0) -> torch.Tensor:
    n = max(len(s) for s in seqs)
    out = torch.full((len(seqs), n), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out


def _stack_inputs(seqs) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.data for s in seqs]).astype(np.float32))


def _optimizer(params, cfg: TrainConfig, total_steps: int):
    """AdamW plus a per-step schedule: linear warm-up, then constant or cosine decay."""
    opt = torch.optim.AdamW(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    warm = cfg.warmup_steps

    def factor(i):
        if i < warm:
            return (i + 1) / warm
        if cfg.lr_schedule == "cosine":
            span = max(1, total_steps - warm)
            return 0.5 * (1 + math.cos(math.pi * min(1.0, (i - warm) / span)))
        return 1.0
    return opt, torch.optim.lr_scheduler.LambdaLR(opt, factor)


def alignment_forward(model: ActionPose, x: torch.Tensor, candidates: list[list[list[int]]]):
    """h_P (B, D), h_W (B, K+1, D) and the final pose features.

    Distinct candidate texts in the batch are encoded once.
    """
    flat = [tuple(c) for cands in candidates for c in cands]
    uniq = sorted(set(flat))
    index = {c: i for i, c in enumerate(uniq)}
    h_text = model.embed_text(pad_tokens(uniq))
    gather = torch.tensor([index[c] for c in flat], dtype=torch.long)
    h_w = h_text[gather].reshape(len(candidates), len(candidates[0]), -1)
    tap, final = model.pose_encode(x)
    return model.pose_pool(tap), h_w, final


def eval_windows(clips: Sequence[LabeledClip], seq_len: int, views=("front", "side")):
    """Non-overlapping windows of ``seq_len`` frames for every clip and view."""
    out = []
    for clip in clips:
        for view in views:
            for start in range(0, clip.motion.num_frames - seq_len + 1, seq_len):
                x2d, target = prepare_view(clip, view, start, seq_len)
                out.append((clip.clip_id, x2d, target))
    return out


@torch.no_grad()
def predict_mm(model: ActionPose, x: torch.Tensor, cfg: TrainConfig, chunk: int = 32) -> np.ndarray:
    model.eval()
    preds = [model.regress(x[i:i + chunk]) for i in range(0, len(x), chunk)]
    pred = torch.cat(preds).double().numpy() / cfg.target_scale
    return pred - pred[:, :, :1]


def _window_mpjpe(model, windows, cfg) -> float:
    x = _stack_inputs([w[1] for w in windows])
    gt = np.stack([w[2] for w in windows])
    return mpjpe(predict_mm(model, x, cfg), gt)


def pretrain(
    cfg: TrainConfig,
    corpus: Sequence[LabeledClip],
    *,
    out_dir: str | Path | None = None,
    model: ActionPose | None = None,
    tokenizer: Tokenizer | None = None,
):
    """Joint alignment + reconstruction training on corrupted 2D inputs.

    Returns (model, tokenizer, TrainLog). With ``out_dir`` the checkpoint is
    rewritten at the end of every epoch and once more at the end.
    """
    lc = cfg.loss
    tokenizer = tokenizer or build_tokenizer(corpus)
    if model is None:
        model = build_model(cfg, tokenizer)
    torch.manual_seed(cfg.seed)
    steps_per_epoch = math.ceil(2 * len(corpus) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch if cfg.epochs > 0 else cfg.steps
    opt, sched = _optimizer(model.parameters(), cfg, total_steps)
    eval_set = eval_windows(corpus[: cfg.eval_clips], cfg.seq_len, views=("front",))
    log = TrainLog()
    t0 = time.perf_counter()

    def corrupt(seq, seed):
        return schedule_corruption(seq, seed, cfg.corruption)

    for step in range(1, total_steps + 1):
        batch_seed = derive_seed(cfg.seed, step)
        batch = sample_contrastive_batch(corpus, cfg.batch_size, lc.K, batch_seed, tokenizer=tokenizer,
                                         seq_len=cfg.seq_len, epsilon=lc.epsilon_smooth, corrupt=corrupt)
        x = _stack_inputs(batch.anchors)
        target = torch.from_numpy((batch.targets_3d * cfg.target_scale).astype(np.float32))
        y = torch.from_numpy(batch.targets_y.astype(np.float32))

        model.train()
        h_p, h_w, final = alignment_forward(model, x, batch.candidates)
        s = objectives.similarity_softmax(h_p, h_w, lc.tau)
        l_con = objectives.focal_kl_loss(s, y, lc.gamma, lc.reduction)
        log.con_evaluations += 1
        pred = model.head(final)
        l_3d = objectives.loss_3d(pred, target, lc.reduction)
        l_v = objectives.loss_velocity(pred, target, lc.reduction)
        total = objectives.total_pretrain_loss(l_con, l_3d, l_v, lc)
        if not torch.isfinite(total):
            raise NumericalAbort(step, batch_seed, total.item())
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        sched.step()

        log.steps.append({
            "step": step, "l_con": l_con.item(), "l_3d": l_3d.item(), "l_v": l_v.item(),
            "total": total.item(), "rng": _rng_digest(), "wall_s": round(time.perf_counter() - t0, 3),
        })
        if step % steps_per_epoch == 0 or step == total_steps:
            epoch = math.ceil(step / steps_per_epoch)
            log.epochs.append({"epoch": epoch, "step": step,
                               "eval_mpjpe_mm": _window_mpjpe(model, eval_set, cfg) if eval_set else float("nan")})
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(Path(out_dir) / "checkpoint.apck", model, tokenizer,
                                {"stage": "pretrain", "step": step, "seed": cfg.seed})
    model.eval()
    return model, tokenizer, log


def finetune(
    cfg: TrainConfig,
    model: ActionPose,
    tokenizer: Tokenizer,
    dataset: Sequence[LabeledClip],
    *,
    out_dir: str | Path | None = None,
    checkpoint_state: dict | None = None,
):
    """Reconstruction-only training of the pose encoder and regression head.

    Text encoder and both pooling heads are excluded from the optimiser and
    have ``requires_grad`` switched off. Returns (model, TrainLog); the first
    epoch entry (epoch 0) is the training MPJPE before any update.
    """
    if checkpoint_state is not None:
        load_state(model, checkpoint_state)
    lc = cfg.loss
    windows = eval_windows(dataset, cfg.seq_len)
    if not windows:
        raise ValueError(f"no clip is long enough for seq_len={cfg.seq_len}")
    trainable = set(finetune_parameter_names(model))
    for name, p in model.named_parameters():
        p.requires_grad_(name in trainable)
    params = [p for n, p in model.named_parameters() if n in trainable]
    torch.manual_seed(cfg.seed)

    x_all = _stack_inputs([w[1] for w in windows])
    t_all = torch.from_numpy((np.stack([w[2] for w in windows]) * cfg.target_scale).astype(np.float32))
    n = len(windows)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch if cfg.epochs > 0 else cfg.steps
    opt, sched = _optimizer(params, cfg, total_steps)
    log = TrainLog()
    log.epochs.append({"epoch": 0, "step": 0, "train_mpjpe_mm": _window_mpjpe(model, windows, cfg)})
    t0 = time.perf_counter()

    for step in range(1, total_steps + 1):
        batch_seed = derive_seed(cfg.seed, step)
        rng = np.random.default_rng(batch_seed)
        idx = np.arange(n) if n <= cfg.batch_size else np.sort(rng.choice(n, cfg.batch_size, replace=False))
        if cfg.finetune_noise > 0:
            noisy = [add_noise(windows[i][1], cfg.finetune_noise, 0.0, int(rng.integers(2**31))) for i in idx]
            x = _stack_inputs(noisy)
        else:
            x = x_all[idx]
        target = t_all[idx]

        model.train()
        pred = model.head(model.pose_encode(x)[1])
        l_3d = objectives.loss_3d(pred, target, lc.reduction)
        l_v = objectives.loss_velocity(pred, target, lc.reduction)
        total = lc.lambda_3d * l_3d + lc.lambda_v * l_v
        if not torch.isfinite(total):
            raise NumericalAbort(step, batch_seed, total.item())
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        sched.step()
        log.steps.append({"step": step, "l_3d": l_3d.item(), "l_v": l_v.item(), "total": total.item(),
                          "rng": _rng_digest(), "wall_s": round(time.perf_counter() - t0, 3)})
        if step % steps_per_epoch == 0 or step == total_steps:
            log.epochs.append({"epoch": math.ceil(step / steps_per_epoch), "step": step,
                               "train_mpjpe_mm": _window_mpjpe(model, windows, cfg)})
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(Path(out_dir) / "checkpoint.apck", model, tokenizer,
                                {"stage": "finetune", "step": step, "seed": cfg.seed})
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return model, log


def evaluate(model: ActionPose, clips: Sequence[LabeledClip], cfg: TrainConfig) -> EvalReport:
    """Metric suite over every window and both views, root-centred, in mm."""
    windows = eval_windows(clips, cfg.seq_len)
    if not windows:
        raise ValueError(f"no clip is long enough for seq_len={cfg.seq_len}")
    pred = predict_mm(model, _stack_inputs([w[1] for w in windows]), cfg)
    preds: dict[str, list] = {}
    gts: dict[str, list] = {}
    for (cid, _, target), p in zip(windows, pred):
        preds.setdefault(cid, []).append(p)
        gts.setdefault(cid, []).append(target)
    ids = list(preds)
    return evaluate_predictions([np.concatenate(preds[i]) for i in ids], [np.concatenate(gts[i]) for i in ids], ids)


@torch.no_grad()
def embed_clips(model: ActionPose, clips: Sequence[LabeledClip], cfg: TrainConfig) -> np.ndarray:
    """h_P of the first front-view window of each clip, (N, align_dim)."""
    model.eval()
    x = _stack_inputs([prepare_view(c, "front", 0, cfg.seq_len)[0] for c in clips])
    return torch.cat([model.embed_pose(x[i:i + 64]) for i in range(0, len(x), 64)]).double().numpy()


@torch.no_grad()
def retrieval_accuracy(model: ActionPose, tokenizer: Tokenizer, corpus: Sequence[LabeledClip],
                       cfg: TrainConfig, seed: int = 0, n_batches: int = 4, corrupted: bool = True) -> float:
    """Fraction of anchors whose positive text gets the highest similarity
    among its K+1 candidates, in inference mode.

    With ``corrupted`` the anchors go through the training corruption
    schedule, so the score reflects the distribution the model was fit on.
    """
    model.eval()

    def corrupt(seq, s):
        return schedule_corruption(seq, s, cfg.corruption)

    hits = total = 0
    for b in range(n_batches):
        batch = sample_contrastive_batch(corpus, min(cfg.batch_size * 4, 2 * len(corpus)), cfg.loss.K,
                                         derive_seed(seed, b), tokenizer=tokenizer, seq_len=cfg.seq_len,
                                         corrupt=corrupt if corrupted else None)
        h_p, h_w, _ = alignment_forward(model, _stack_inputs(batch.anchors), batch.candidates)
        s = objectives.similarity_softmax(h_p, h_w, cfg.loss.tau)
        hits += int((s.argmax(-1).numpy() == batch.positive_index).sum())
        total += len(batch.anchors)
    return hits / total
