"""Supervised mini-batch training with resumable checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import AdamW, OneCycleSchedule, Tape, load_checkpoint, save_checkpoint
from ..geometry.types import FeaturedInput
from .config import NetworkConfig, TrainConfig
from .loss import level_targets, multilevel_loss
from .model import Plan, VolRegNet

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "epoch", "loss", "lr")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingSample:
    preop: FeaturedInput
    intraop: FeaturedInput
    phi_gt: np.ndarray  # (n, 3) aligned with preop rows
    name: str = ""


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    cursor: int = 0  # position inside the current epoch order
    order: np.ndarray | None = None
    best_loss: float = math.inf
    epoch_losses: list = field(default_factory=list)


def sample_loss(net: VolRegNet, plan: Plan, phi_gt: np.ndarray):
    return multilevel_loss(net.forward(plan), level_targets(plan, phi_gt), net.config.level_weights)


class Trainer:
    def __init__(self, samples: list[TrainingSample], net_cfg: NetworkConfig, train_cfg: TrainConfig,
                 out_dir: str | Path | None = None):
        if not samples:
            raise TrainingError("training needs at least one sample")
        self.samples = list(samples)
        self.net = VolRegNet(net_cfg)
        self.cfg = train_cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.batches_per_epoch = math.ceil(len(samples) / train_cfg.batch_size)
        total = train_cfg.epochs * self.batches_per_epoch
        if train_cfg.max_steps is not None:
            total = min(total, train_cfg.max_steps)
        self.total_steps = total
        self.schedule = OneCycleSchedule(total, train_cfg.lr_max, train_cfg.lr_min, train_cfg.pct_start)
        self.optimizer = AdamW(self.net.params.tensors(), weight_decay=train_cfg.weight_decay)
        self.rng = np.random.default_rng(train_cfg.seed)
        self.state = TrainState()
        self._plans: dict[int, Plan] = {}
        self._epoch_sum = 0.0
        self._epoch_count = 0
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._log_path = self.out_dir / "train_log.csv"
            if not self._log_path.exists():
                with self._log_path.open("w", newline="") as fh:
                    csv.writer(fh).writerow(LOG_FIELDS)

    def plan(self, i: int) -> Plan:
        if i not in self._plans:
            s = self.samples[i]
            self._plans[i] = self.net.plan(s.preop, s.intraop)
        return self._plans[i]

    @property
    def done(self) -> bool:
        return self.state.step >= self.total_steps

    def _next_batch(self) -> np.ndarray:
        st = self.state
        if st.order is None or st.cursor >= len(st.order):
            st.order = self.rng.permutation(len(self.samples))
            st.cursor = 0
        batch = st.order[st.cursor:st.cursor + self.cfg.batch_size]
        st.cursor += len(batch)
        return batch

    def step(self) -> float:
        """One optimizer update over the next mini-batch; returns its mean loss."""
        batch = self._next_batch()
        self.optimizer.zero_grad()
        total = 0.0
        for i in batch:
            try:
                with Tape() as tape:
                    loss = sample_loss(self.net, self.plan(int(i)), self.samples[int(i)].phi_gt) * (1.0 / len(batch))
                tape.backward(loss)
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite values at step {self.state.step} on sample "
                                    f"{self.samples[int(i)].name or int(i)}: {exc}") from exc
            total += loss.item()
        bad = [p.name for p in self.net.params.tensors() if p.grad is not None and not np.isfinite(p.grad).all()]
        if not math.isfinite(total) or bad:
            raise TrainingError(f"non-finite loss or gradient at step {self.state.step} ({bad[:3]})")
        lr = self.schedule.lr()
        self.optimizer.step(lr)
        self.schedule.advance()
        st = self.state
        if self.out_dir is not None:
            with self._log_path.open("a", newline="") as fh:
                csv.writer(fh).writerow([st.step, st.epoch, repr(total), repr(lr)])
        st.step += 1
        self._epoch_sum += total
        self._epoch_count += 1
        if st.cursor >= len(st.order):
            self._end_epoch()
        return total

    def _end_epoch(self) -> None:
        st = self.state
        mean = self._epoch_sum / max(self._epoch_count, 1)
        st.epoch_losses.append(mean)
        log.info("epoch %d mean loss %.6g", st.epoch, mean)
        st.epoch += 1
        self._epoch_sum, self._epoch_count = 0.0, 0
        if self.out_dir is not None:
            if mean < st.best_loss:
                st.best_loss = mean
                self.save(self.out_dir / "best.vrck")
            self.save(self.out_dir / "last.vrck")
        elif mean < st.best_loss:
            st.best_loss = mean

    def run(self) -> list[float]:
        losses = []
        while not self.done:
            losses.append(self.step())
        if self.out_dir is not None:
            self.save(self.out_dir / "last.vrck")
        return losses

    # checkpoints ---------------------------------------------------------

    def save(self, path) -> None:
        st = self.state
        arrays = {f"param.{k}": v for k, v in self.net.params.arrays().items()}
        arrays.update(self.optimizer.state_arrays())
        if st.order is not None:
            arrays["train.order"] = st.order.astype(np.float64)
        meta = {
            "network": self.net.config.to_dict(), "train": self.cfg.to_dict(),
            "step": st.step, "epoch": st.epoch, "cursor": st.cursor, "adam_t": self.optimizer.t,
            "best_loss": st.best_loss if math.isfinite(st.best_loss) else None,
            "epoch_losses": st.epoch_losses, "epoch_sum": self._epoch_sum, "epoch_count": self._epoch_count,
            "rng": self.rng.bit_generator.state,
        }
        save_checkpoint(path, arrays, meta)

    def load(self, path) -> None:
        arrays, meta = load_checkpoint(path)
        load_params(self.net, arrays)
        self.optimizer.load_state_arrays(arrays, int(meta["adam_t"]))
        st = self.state
        st.step, st.epoch, st.cursor = int(meta["step"]), int(meta["epoch"]), int(meta["cursor"])
        st.order = arrays["train.order"].astype(np.int64) if "train.order" in arrays else None
        st.best_loss = math.inf if meta["best_loss"] is None else float(meta["best_loss"])
        st.epoch_losses = list(meta["epoch_losses"])
        self._epoch_sum, self._epoch_count = float(meta["epoch_sum"]), int(meta["epoch_count"])
        self.rng.bit_generator.state = meta["rng"]
        self.schedule.step = st.step


def load_params(net: VolRegNet, arrays: dict) -> None:
    net.params.load_arrays({k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")})


def load_model(path) -> VolRegNet:
    """Rebuild a network from a training checkpoint."""
    arrays, meta = load_checkpoint(path)
    net = VolRegNet(NetworkConfig(**meta["network"]))
    load_params(net, arrays)
    return net


def train(samples: list[TrainingSample], net_cfg: NetworkConfig, train_cfg: TrainConfig,
          out_dir=None, resume=None) -> tuple[VolRegNet, list[float]]:
    trainer = Trainer(samples, net_cfg, train_cfg, out_dir)
    if resume is not None:
        trainer.load(resume)
    losses = trainer.run()
    return trainer.net, losses
