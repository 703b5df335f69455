"""Probe training loop: AdamW, cosine-annealed learning rate, frozen inputs.

Only the fusion head and the probe own trainable parameters; embedding
files are opened read-only, which is the whole point of probing. The
schedule is stepped per optimizer step. Weight decay is decoupled and
skipped for biases, norm gains, and position embeddings. Runs are
deterministic given (seed, config, manifest): logs and checkpoints are
byte-identical across repeats.
"""

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .evaluator import evaluate_split_balanced_acc
from .heads import FusionHead
from .probe import build_probe, cross_entropy
from .store import sample_clips


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    weight_decay: float = 0.02
    epochs: int = 60
    batch_size: int = 32
    frames_per_clip: int = 16
    eta_min: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    eval_clips: int = 3

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("lr0", "batch_size", "frames_per_clip", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        self.betas = tuple(self.betas)

    def to_dict(self):
        doc = asdict(self)
        doc["betas"] = list(self.betas)
        return doc

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


def cosine_lr(step, total_steps, lr0, eta_min=0.0):
    """Closed-form cosine annealing from lr0 at step 0 to eta_min at the end."""
    if total_steps == 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + math.cos(math.pi * step / total_steps))


class AdamWState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, params):
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adamw_step(params, grads, state, cfg, lr, no_decay=()):
    """One decoupled-weight-decay Adam update, in place.

    Decay is applied to the parameter before the moment update; moments are
    bias-corrected. Raises on non-finite gradients, naming the parameter.
    """
    state.step += 1
    t = state.step
    beta1, beta2 = cfg.betas
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, param in params.items():
        g = grads[name]
        if g is None:
            raise ValueError(f"missing gradient for parameter {name}")
        if not np.isfinite(g).all():
            raise ad.NonFiniteError(f"non-finite gradient for parameter {name}")
        if cfg.weight_decay and name not in no_decay:
            param.data -= lr * cfg.weight_decay * param.data
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass
class TrainResult:
    checkpoint_final: str
    checkpoint_best: str
    log_path: str
    epoch_losses: list
    epoch_accs: list
    best_val_balanced_acc: float


def _clip_seed(seed, epoch, record_index):
    # stable per-(run, epoch, video) stream, independent of shuffle order
    return np.random.SeedSequence([seed, epoch, record_index])


def train(manifest, head_cfg, train_cfg, trained_view=None, out_dir=".", quiet=False):
    """Train head + probe on the manifest's train split; returns artifact paths.

    One random clip per video per epoch; per-sample losses are averaged in
    batch order, so gradient reduction is deterministic. The best-on-val
    checkpoint is selected by balanced accuracy (falling back to the final
    epoch when there is no val split).
    """
    train_records = manifest.split_records("train")
    if not train_records:
        raise ValueError("manifest has no train split")
    train_views = sorted({r.view for r in train_records})
    if trained_view is None:
        if len(train_views) > 1:
            raise ValueError(f"train split spans views {train_views}; pass trained_view")
        trained_view = train_views[0]

    classes = manifest.classes
    frames = 1 if manifest.is_clip_level else train_cfg.frames_per_clip
    head = FusionHead(head_cfg)
    probe = build_probe(head_cfg, len(classes))
    params = {f"head.{k}": v for k, v in head.params.items()}
    params.update({f"probe.{k}": v for k, v in probe.params.items()})
    no_decay = {f"head.{k}" for k in head.no_decay} | {f"probe.{k}" for k in probe.no_decay}
    state = AdamWState(params)

    val_records = manifest.split_records("val")
    steps_per_epoch = math.ceil(len(train_records) / train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs

    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    best_path = os.path.join(out_dir, "checkpoint_best.fpck")
    final_path = os.path.join(out_dir, "checkpoint_final.fpck")

    order_rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 0xD1CE]))
    epoch_losses = []
    epoch_accs = []
    best_val = -1.0
    step = 0

    with open(log_path, "w", encoding="utf-8") as log:

        def emit(record):
            log.write(json.dumps(record, sort_keys=True) + "\n")

        for epoch in range(train_cfg.epochs):
            indices = list(range(len(train_records)))
            if train_cfg.shuffle:
                order_rng.shuffle(indices)
            loss_sum = 0.0
            correct = 0
            seen = 0
            for start in range(0, len(indices), train_cfg.batch_size):
                batch = indices[start : start + train_cfg.batch_size]
                lr = cosine_lr(step, total_steps, train_cfg.lr0, train_cfg.eta_min)
                losses = []
                batch_correct = 0
                for ridx in batch:
                    record = train_records[ridx]
                    clip = sample_clips(
                        manifest, record, 1, frames, "train_random",
                        seed=_clip_seed(train_cfg.seed, epoch, ridx),
                    )[0]
                    logits = probe.logits(head.fuse(clip))
                    if int(np.argmax(logits.data)) == record.class_id:
                        batch_correct += 1
                    losses.append(ad.reshape(cross_entropy(logits, record.class_id), (1,)))
                loss = ad.mean(ad.concat(losses, axis=0), axis=0)
                loss.backward()
                grads = {name: p.grad for name, p in params.items()}
                adamw_step(params, grads, state, train_cfg, lr, no_decay)
                for p in params.values():
                    p.zero_grad()
                step += 1
                loss_val = float(loss.data)
                loss_sum += loss_val * len(batch)
                correct += batch_correct
                seen += len(batch)
                emit({
                    "kind": "step", "epoch": epoch, "step": step, "lr": lr,
                    "loss": loss_val, "train_acc": batch_correct / len(batch),
                })

            epoch_loss = loss_sum / seen
            epoch_acc = correct / seen
            epoch_losses.append(epoch_loss)
            epoch_accs.append(epoch_acc)
            val_acc = None
            if val_records:
                val_acc = evaluate_split_balanced_acc(
                    head, probe, manifest, val_records,
                    num_clips=train_cfg.eval_clips, frames_per_clip=frames,
                )
                if val_acc > best_val:
                    best_val = val_acc
                    save_checkpoint(
                        best_path, head, probe, classes, trained_view,
                        train_cfg=train_cfg.to_dict(), extra={"epoch": epoch},
                    )
            emit({
                "kind": "epoch", "epoch": epoch, "step": step,
                "lr": cosine_lr(step, total_steps, train_cfg.lr0, train_cfg.eta_min),
                "loss": epoch_loss, "train_acc": epoch_acc, "val_balanced_acc": val_acc,
            })
            if not quiet:
                val_txt = f" val_bal={val_acc:.3f}" if val_acc is not None else ""
                print(f"epoch {epoch:3d} loss={epoch_loss:.4f} acc={epoch_acc:.3f}{val_txt}")

    save_checkpoint(
        final_path, head, probe, classes, trained_view,
        train_cfg=train_cfg.to_dict(), extra={"epoch": train_cfg.epochs - 1},
    )
    if not val_records:
        save_checkpoint(
            best_path, head, probe, classes, trained_view,
            train_cfg=train_cfg.to_dict(), extra={"epoch": train_cfg.epochs - 1},
        )
        best_val = float("nan")
    return TrainResult(
        checkpoint_final=final_path,
        checkpoint_best=best_path,
        log_path=log_path,
        epoch_losses=epoch_losses,
        epoch_accs=epoch_accs,
        best_val_balanced_acc=best_val,
    )
