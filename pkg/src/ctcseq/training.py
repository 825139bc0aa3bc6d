"""Optimization: seeded shuffling and flip augmentation, the combined
objective, a decoupled-weight-decay adaptive optimizer, best-dev
checkpointing, and the ablation harness.

Clips are processed one at a time inside each batch (gradients accumulate
across the batch before a single update), so losses always cover real
frames only and no padding mask is needed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import decoder as dec
from .autodiff import Parameter, backward, no_grad
from .data import DatasetSplit, SyntheticClip, horizontal_flip, normalize
from .losses import combined_loss
from .lm import CharNGramModel, lm_train
from .metrics import evaluate_clips
from .model import ModelConfig, Recognizer, motion_prior, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 20
    mel_weight: float = 0.1
    flip_prob: float = 0.3
    beam_width: int = 20
    lm_alpha: float = 0.2
    lm_order: int = 3
    seed: int = 0
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 5.0  # 0 disables clipping

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive: {self.lr}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip probability must be in [0, 1]: {self.flip_prob}")
        if not 0.0 <= self.mel_weight <= 1.0:
            raise ValueError(f"mel_weight must be in [0, 1]: {self.mel_weight}")
        if self.epochs < 1 or self.batch_size < 1 or self.beam_width < 1:
            raise ValueError("epochs, batch_size and beam_width must be >= 1")
        if not 0.0 <= self.lm_alpha <= 1.0:
            raise ValueError(f"lm weight must be in [0, 1]: {self.lm_alpha}")


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    With a zero gradient the update reduces to p *= 1 - lr * weight_decay
    exactly.
    """

    def __init__(self, params: list[Parameter], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr < 0:
            raise ValueError(f"learning rate must be nonnegative: {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


class TrainingDiverged(RuntimeError):
    """Raised when a batch produces a non-finite loss; carries a dump."""

    def __init__(self, message: str, dump: str):
        super().__init__(message)
        self.dump = dump


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_acc_greedy: float


@dataclass
class TrainResult:
    model: Recognizer
    log: list[EpochRecord]
    best_dev_acc: float
    best_epoch: int
    skipped_clips: int

    def log_lines(self) -> str:
        return "".join(f"{r.epoch}\t{r.train_loss:.10f}\t{r.dev_acc_greedy:.6f}\n" for r in self.log)


def _forward_clip(model: Recognizer, clip: SyntheticClip, training: bool, rng=None):
    priors = motion_prior(clip.frames, model.cfg.feat_grid)
    frames = normalize(clip.frames)
    return model.forward(frames, priors=priors, training=training, rng=rng)


def evaluate(model: Recognizer, clips: list[SyntheticClip], decoder: str = "greedy",
             beam_width: int = 20, lm: CharNGramModel | None = None, alpha: float = 0.2,
             alphabet=None, prefix: str = "clip"):
    """Decode every clip and score letter accuracy against the targets."""
    results = []
    with no_grad():
        for i, clip in enumerate(clips):
            dist = _forward_clip(model, clip, training=False)
            if decoder == "greedy":
                pred = dec.greedy_decode(dist)
            elif decoder == "beam":
                pred = dec.beam_decode(dist, beam_width)
            elif decoder == "beam-lm":
                if lm is None or alphabet is None:
                    raise ValueError("beam-lm decoding requires a language model and alphabet")
                pred = dec.lm_fused_beam_decode(dist, beam_width, lm, alpha, alphabet)
            else:
                raise ValueError(f"unknown decoder {decoder!r}")
            results.append((f"{prefix}_{i:05d}", pred, list(clip.target)))
    return evaluate_clips(results)


def train(model: Recognizer, split: DatasetSplit, cfg: TrainConfig,
          out_dir=None) -> TrainResult:
    """Seeded training with flip augmentation and best-dev checkpointing.

    A non-finite loss aborts with a diagnostic dump of the offending batch.
    Clips whose target cannot be aligned (too few frames) are skipped with
    a warning instead of poisoning the batch.
    """
    opt = AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                eps=cfg.eps, weight_decay=cfg.weight_decay)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    records: list[EpochRecord] = []
    best_acc = -1.0
    best_epoch = -1
    skipped = 0
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(split.train))
        epoch_losses: list[float] = []
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            nodes = []
            batch_info = []
            for j in batch_idx:
                clip = split.train[int(j)]
                if rng.random() < cfg.flip_prob:
                    clip = horizontal_flip(clip)
                dist = _forward_clip(model, clip, training=True, rng=rng)
                report = combined_loss(dist, clip.target, cfg.mel_weight)
                batch_info.append((int(j), clip, report))
                if not report.feasible:
                    skipped += 1
                    log.warning("skipping clip %d: target needs more frames than available", int(j))
                    continue
                if not math.isfinite(report.total):
                    dump = _diagnostic_dump(batch_info, split)
                    if out is not None:
                        (out / "diagnostic_dump.txt").write_text(dump, encoding="utf-8")
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, clip {int(j)}", dump
                    )
                nodes.append(report.node)
                epoch_losses.append(report.total)
            if not nodes:
                continue
            total = nodes[0]
            for node in nodes[1:]:
                total = total + node
            total = total * (1.0 / len(nodes))
            backward(total)
            if cfg.grad_clip > 0:
                clip_grad_norm(opt.params, cfg.grad_clip)
            opt.step()
            opt.zero_grad()

        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("inf")
        dev_report = evaluate(model, split.dev, decoder="greedy", prefix="dev")
        acc = dev_report.mean_letter_accuracy
        records.append(EpochRecord(epoch, train_loss, acc))
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            if out is not None:
                save_checkpoint(model, out / "best.ckpt", extra={"epoch": epoch, "dev_acc": acc})
        if out is not None:
            (out / "epoch.log").write_text(
                "".join(f"{r.epoch}\t{r.train_loss:.10f}\t{r.dev_acc_greedy:.6f}\n" for r in records),
                encoding="utf-8",
            )
    return TrainResult(model=model, log=records, best_dev_acc=best_acc,
                       best_epoch=best_epoch, skipped_clips=skipped)


def _diagnostic_dump(batch_info, split: DatasetSplit) -> str:
    lines = ["offending batch:"]
    for idx, clip, report in batch_info:
        word = split.alphabet.decode(clip.target)
        lines.append(
            f"  clip {idx}: target={word!r} frames={clip.num_frames} "
            f"handedness={clip.handedness} ctc={report.ctc!r} mel={report.mel!r}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ablation harness

ABLATION_ROWS = (
    ("ctc", False, False),
    ("ctc+mel", True, False),
    ("ctc+flip", False, True),
    ("ctc+mel+flip", True, True),
)

ABLATION_DECODERS = ("greedy", "beam", "beam-lm")


@dataclass
class AblationTable:
    rows: list[tuple[str, dict[str, float]]]

    def to_text(self) -> str:
        header = f"{'setting':<16}" + "".join(f"{d:>10}" for d in ABLATION_DECODERS)
        lines = [header]
        for label, cells in self.rows:
            lines.append(f"{label:<16}" + "".join(f"{cells[d]:>10.4f}" for d in ABLATION_DECODERS))
        return "\n".join(lines) + "\n"


def ablate(split: DatasetSplit, base_cfg: TrainConfig, model_cfg: ModelConfig) -> AblationTable:
    """Train the four loss/augmentation combinations and score each with
    greedy, beam, and beam-plus-language-model decoding on the dev set."""
    corpus = [split.alphabet.decode(c.target) for c in split.train]
    lm = lm_train(corpus, order=base_cfg.lm_order)
    rows = []
    for label, use_mel, use_flip in ABLATION_ROWS:
        cfg = replace(
            base_cfg,
            mel_weight=base_cfg.mel_weight if use_mel else 0.0,
            flip_prob=base_cfg.flip_prob if use_flip else 0.0,
        )
        model = Recognizer(model_cfg, seed=cfg.seed)
        train(model, split, cfg)
        cells = {}
        for decoder in ABLATION_DECODERS:
            report = evaluate(
                model, split.dev, decoder=decoder, beam_width=cfg.beam_width,
                lm=lm, alpha=cfg.lm_alpha, alphabet=split.alphabet,
            )
            cells[decoder] = report.mean_letter_accuracy
        rows.append((label, cells))
    return AblationTable(rows=rows)
