"""Adam training loop with step learning-rate halving and checkpointing."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import SliceBatch, Subject, collate
from .metrics import dsc, predict_volume
from .model import IVDNet, ModelConfig, build_model

log = logging.getLogger(__name__)

LOSSES = ("cross_entropy", "dice_loss")
HISTORY_FIELDS = ("epoch", "lr", "train_loss", "val_dsc")


@dataclass
class TrainConfig:
    epochs: int = 200
    initial_lr: float = 1e-4
    lr_halve_at_epoch: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    batch_size: int = 4
    seed: int = 0
    checkpoint_dir: str | None = None
    loss: str = "cross_entropy"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.initial_lr > 0:
            raise ValueError(f"initial_lr must be > 0, got {self.initial_lr}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.lr_halve_at_epoch <= self.epochs:
            raise ValueError(
                f"lr_halve_at_epoch {self.lr_halve_at_epoch} outside 0..{self.epochs}"
            )
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside 0..{config.epochs - 1}")
    if epoch < config.lr_halve_at_epoch:
        return config.initial_lr
    return config.initial_lr / 2


def compute_loss(predictions: torch.Tensor, labels, loss_kind: str = "cross_entropy") -> torch.Tensor:
    """Mean per-pixel loss of class probabilities ``(B, C, H, W)`` against ``(B, H, W)`` labels."""
    labels = torch.as_tensor(labels, device=predictions.device).long()
    if predictions.ndim != 4 or labels.shape != predictions.shape[:1] + predictions.shape[2:]:
        raise ValueError(
            f"predictions {tuple(predictions.shape)} do not match labels {tuple(labels.shape)}"
        )
    if loss_kind == "cross_entropy":
        tiny = torch.finfo(predictions.dtype).tiny
        picked = predictions.gather(1, labels.unsqueeze(1)).squeeze(1)
        return -torch.log(picked.clamp_min(tiny)).mean()
    if loss_kind == "dice_loss":
        onehot = torch.zeros_like(predictions).scatter_(1, labels.unsqueeze(1), 1.0)
        dims = (0, 2, 3)
        inter = (predictions * onehot).sum(dims)[1:]
        total = (predictions + onehot).sum(dims)[1:]
        eps = 1e-6
        return 1.0 - ((2 * inter + eps) / (total + eps)).mean()
    raise ValueError(f"unknown loss {loss_kind!r}; expected one of {LOSSES}")


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: IVDNet, optimizer=None, epoch: int | None = None,
                    history: Sequence[dict] | None = None,
                    train_config: TrainConfig | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "epoch": epoch,
        "history": list(history or []),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    if train_config is not None:
        payload["train_config"] = asdict(train_config)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[IVDNet, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        config = ModelConfig.from_dict(payload["model_config"])
    except Exception as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    if expected_config is not None and expected_config.to_dict() != config.to_dict():
        raise ValueError(
            f"checkpoint {path} was built with {config.to_dict()}, "
            f"expected {expected_config.to_dict()}"
        )
    model = build_model(config)
    dtype = next(iter(payload["state_dict"].values())).dtype
    if dtype.is_floating_point:
        model.to(dtype)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


# ---------------------------------------------------------------- loop

def make_optimizer(model: IVDNet, config: TrainConfig, lr: float | None = None):
    return torch.optim.Adam(model.parameters(),
                            lr=config.initial_lr if lr is None else lr,
                            betas=(config.adam_beta1, config.adam_beta2))


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_path: Path | None = None
    final_path: Path | None = None
    best_val_dsc: float = -math.inf


def _write_history(path: Path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_FIELDS})


def validation_dsc(model: IVDNet, subjects: Sequence[Subject], batch_size: int = 4) -> float:
    if not subjects:
        return math.nan
    scores = [dsc(s.label.voxels, predict_volume(model, s, batch_size)) for s in subjects]
    return float(np.mean(scores))


def train(model: IVDNet, samples: Sequence[SliceBatch], config: TrainConfig,
          val_subjects: Sequence[Subject] = (), resume_from=None) -> TrainResult:
    """Run ``config.epochs`` epochs of mini-batch Adam over ``samples``.

    Batch order for epoch ``e`` is a permutation drawn from ``(seed, e)``, so
    a resumed run sees the same batches as an uninterrupted one.
    """
    if len(samples) == 0:
        raise ValueError("training set is empty")
    torch.manual_seed(config.seed)
    data = collate(list(samples))
    dtype = next(model.parameters()).dtype
    x_all = torch.from_numpy(data.inputs).to(dtype)
    y_all = torch.from_numpy(data.labels.astype(np.int64))
    n = x_all.shape[0]

    optimizer = make_optimizer(model, config)
    result = TrainResult()
    start = 0
    if resume_from is not None:
        resumed, payload = load_checkpoint(resume_from, expected_config=model.config)
        model.load_state_dict(resumed.state_dict())
        if "optimizer" in payload:
            optimizer.load_state_dict(payload["optimizer"])
        result.history = list(payload.get("history", []))
        start = (payload.get("epoch") or -1) + 1
        finite = [r["val_dsc"] for r in result.history if math.isfinite(r["val_dsc"])]
        result.best_val_dsc = max(finite, default=-math.inf)

    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        result.best_path = ckpt_dir / "best.pt"
        result.final_path = ckpt_dir / "final.pt"

    for epoch in range(start, config.epochs):
        lr = lr_schedule(epoch, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        losses = []
        for k in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[k:k + config.batch_size])
            optimizer.zero_grad(set_to_none=True)
            loss = compute_loss(model(x_all[idx]), y_all[idx], config.loss)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, batch {k // config.batch_size}"
                )
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "val_dsc": validation_dsc(model, val_subjects, config.batch_size),
        }
        result.history.append(row)
        log.info("epoch %d lr %.2e loss %.5f val_dsc %.4f", epoch, lr,
                 row["train_loss"], row["val_dsc"])

        if ckpt_dir is not None:
            if math.isfinite(row["val_dsc"]) and row["val_dsc"] > result.best_val_dsc:
                result.best_val_dsc = row["val_dsc"]
                save_checkpoint(result.best_path, model, optimizer, epoch,
                                result.history, config)
            save_checkpoint(result.final_path, model, optimizer, epoch,
                            result.history, config)
            _write_history(ckpt_dir / "history.csv", result.history)
        elif math.isfinite(row["val_dsc"]):
            result.best_val_dsc = max(result.best_val_dsc, row["val_dsc"])

    if ckpt_dir is not None and not val_subjects and result.final_path.exists():
        # without validation data the last state doubles as the best one
        save_checkpoint(result.best_path, model, optimizer, config.epochs - 1,
                        result.history, config)
    return result
