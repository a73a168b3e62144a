"""Training: MSE on RBF targets, AdamW, cosine schedule, early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import ModelCheckpoint
from .data import DatasetSplit
from .errors import (
    DivergedLoss,
    EmptyTrainSet,
    EmptyValSet,
    NonFiniteResult,
    ShapeMismatch,
    WrongDimension,
)
from .model import MambaRate, ModelConfig
from .rbf import RbfConfig, encode

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "lr", "stopped")
SEED_STREAMS = ("split", "init", "noise", "shuffle")


def sub_seeds(seed: int) -> dict[str, int]:
    """Fan one master seed out into independent per-purpose seeds.

    Stream i is ``SeedSequence(seed, spawn_key=(i,))`` for i in order
    split, init, noise, shuffle.
    """
    return {
        name: int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1, np.uint64)[0])
        for i, name in enumerate(SEED_STREAMS)
    }


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    t_max: int = 10
    eta_min: float = 0.0
    schedule: str = "restart"  # or "clamp"
    patience: int = 10
    min_delta: float = 0.001
    early_stopping: bool = True
    max_epochs: int = 200
    seed: int = 0
    target_mode: str = "mean"
    noise_scale: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.min_delta < 0:
            raise ValueError("min_delta must be nonnegative")
        if self.t_max < 1 or self.max_epochs < 1:
            raise ValueError("t_max and max_epochs must be positive")
        if self.schedule not in ("restart", "clamp"):
            raise ValueError(f"schedule must be 'restart' or 'clamp', got {self.schedule!r}")
        if self.target_mode not in ("mean", "median"):
            raise ValueError(f"target_mode must be 'mean' or 'median', got {self.target_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# --- loss -----------------------------------------------------------------


def loss(pred, target) -> ad.Node:
    """Mean squared error over the RBF components."""
    pred = ad.constant(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise WrongDimension(f"prediction {pred.shape} vs target {target.shape}")
    d = ad.sub(pred, target)
    return ad.mean(ad.mul(d, d))


# --- optimizer ------------------------------------------------------------


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": a.copy() for k, a in self.m.items()}
        out.update({f"v/{k}": a.copy() for k, a in self.v.items()})
        out["step"] = np.array(float(self.step))
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray]) -> "AdamWState":
        state = cls(step=int(tensors.get("step", np.array(0.0))))
        for k, a in tensors.items():
            if k.startswith("m/"):
                state.m[k[2:]] = np.array(a)
            elif k.startswith("v/"):
                state.v[k[2:]] = np.array(a)
        return state


def adamw_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamWState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One AdamW update, in place. Decay is applied to p before the moment step."""
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p *= 1.0 - lr * weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


# --- schedule and stopping ------------------------------------------------


def cosine_lr(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    """Cosine annealing from learning_rate to eta_min over t_max epochs.

    ``restart`` starts a new cycle every t_max epochs; ``clamp`` holds
    eta_min once t_max is reached.
    """
    if cfg.schedule == "restart":
        phase = epoch % cfg.t_max
    else:
        phase = min(epoch, cfg.t_max)
    return cfg.eta_min + 0.5 * (cfg.learning_rate - cfg.eta_min) * (
        1.0 + math.cos(math.pi * phase / cfg.t_max)
    )


def epochs_without_improvement(history: Sequence[float], min_delta: float) -> int:
    best = math.inf
    wait = 0
    for value in history:
        # strict: an improvement of exactly min_delta does not count
        if value < best - min_delta:
            best = value
            wait = 0
        else:
            wait += 1
    return wait


def early_stop(history: Sequence[float], patience: int = 10, min_delta: float = 0.001) -> str:
    if not history:
        raise ValueError("history must be non-empty")
    return "stop" if epochs_without_improvement(history, min_delta) >= patience else "continue"


# --- loop -----------------------------------------------------------------


@dataclass
class TrainingData:
    """Embedding matrices and scalar ratings keyed by utterance id."""

    features: dict[str, np.ndarray]
    ratings: dict[str, float]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    stopped: bool

    def row(self) -> list[str]:
        return [
            str(self.epoch), repr(self.train_loss), repr(self.val_loss), repr(self.lr),
            str(int(self.stopped)),
        ]


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    log: list[EpochRecord]
    best_epoch: int
    best_val_loss: float


def evaluate_loss(model: MambaRate, data: TrainingData, ids: Sequence[str], rbf: RbfConfig) -> float:
    total = 0.0
    for utt in ids:
        pred = model.predict(data.features[utt])
        d = pred - encode(data.ratings[utt], rbf)
        total += float(np.mean(d * d))
    return total / len(ids)


def train(
    data: TrainingData,
    split: DatasetSplit,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig = TrainConfig(),
    rbf_cfg: RbfConfig | None = None,
    log_path: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], bool] | None = None,
    init_seed: int | None = None,
) -> TrainResult:
    """Fit a fresh model and return the best-validation checkpoint.

    ``on_epoch`` may return True to end training after that epoch.
    """
    if not split.train:
        raise EmptyTrainSet("split has no training utterances")
    if not split.val:
        raise EmptyValSet("split has no validation utterances")
    if rbf_cfg is None:
        rbf_cfg = RbfConfig(num_centers=model_cfg.output_dim, noise_scale=train_cfg.noise_scale)
    seeds = sub_seeds(train_cfg.seed)
    model = MambaRate(model_cfg, seed=seeds["init"] if init_seed is None else init_seed)
    noise_rng = np.random.default_rng(seeds["noise"])
    shuffle_rng = np.random.default_rng(seeds["shuffle"])
    state = AdamWState()
    train_ids = list(split.train)

    records: list[EpochRecord] = []
    best: ModelCheckpoint | None = None
    best_val = math.inf
    best_epoch = -1
    val_history: list[float] = []

    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    try:
        for epoch in range(train_cfg.max_epochs):
            lr = cosine_lr(epoch, train_cfg)
            order = shuffle_rng.permutation(len(train_ids))
            running = 0.0
            for idx in order:
                utt = train_ids[idx]
                target = encode(data.ratings[utt], rbf_cfg, apply_noise=True, rng=noise_rng)
                try:
                    out = loss(model.forward(data.features[utt]), target)
                    ad.backward(out)
                except NonFiniteResult as exc:
                    raise DivergedLoss(f"epoch {epoch}, utterance {utt}: {exc}") from None
                running += float(out.value)
                values = {k: p.value for k, p in model.params.items()}
                grads = {k: p.grad for k, p in model.params.items()}
                adamw_step(
                    values, grads, state, lr, train_cfg.betas, train_cfg.adam_eps,
                    train_cfg.weight_decay,
                )
            train_loss = running / len(train_ids)
            try:
                val_loss = evaluate_loss(model, data, split.val, rbf_cfg)
            except NonFiniteResult as exc:
                raise DivergedLoss(f"epoch {epoch}, validation: {exc}") from None
            if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
                raise DivergedLoss(f"epoch {epoch}: non-finite loss")
            val_history.append(val_loss)

            if val_loss < best_val:
                best_val, best_epoch = val_loss, epoch
                best = ModelCheckpoint(
                    config=model_cfg,
                    parameters=model.state_dict(),
                    optimizer_state=state.to_tensors(),
                    rng_state={
                        "noise": noise_rng.bit_generator.state,
                        "shuffle": shuffle_rng.bit_generator.state,
                    },
                    epoch=epoch,
                    rbf=rbf_cfg,
                    extra={"val_loss": val_loss, "train_loss": train_loss},
                )

            stopped = train_cfg.early_stopping and (
                early_stop(val_history, train_cfg.patience, train_cfg.min_delta) == "stop"
            )
            record = EpochRecord(epoch, train_loss, val_loss, lr, stopped)
            if on_epoch is not None and on_epoch(record):
                record.stopped = True
            records.append(record)
            if writer is not None:
                writer.writerow(record.row())
                fh.flush()
            log.info(
                "epoch %d train %.6f val %.6f lr %.2e", epoch, train_loss, val_loss, lr
            )
            if record.stopped:
                break
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(best, records, best_epoch, best_val)
