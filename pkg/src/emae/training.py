"""Training drivers: MAE pre-training, supervised fine-tuning, evaluation.

Both phases use Adam with a step-decay schedule. Defaults mirror the
experimental settings: base lr 1e-4, batch 64, decay factor 0.1, with decay
step 10 over 30 epochs for pre-training and step 6 over 15 epochs for
fine-tuning. A fresh mask is generated for every batch and epoch of
pre-training; fine-tuning never masks and pre-training never reads labels.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import rng
from .data import SignalDataset
from .errors import ContractError, DegenerateLossError, ModeError, ShapeError
from .losses import mean_squared_distance, mse_loss, similarity_loss
from .masking import MaskSpec, apply_mask, generate_mask
from .model import (
    ModelBundle,
    decoder_forward,
    encoder_forward,
    finetune_forward,
    save_checkpoint,
    to_finetune,
)
from .tensor import Tensor, backward, no_grad

DEFAULT_SPLIT_SEED = 42


def serial_mode() -> bool:
    """Serial (bit-deterministic) mode is the default; EMAE_SERIAL=0 opts out."""
    return os.environ.get("EMAE_SERIAL", "1") != "0"


@dataclass
class TrainConfig:
    """One training phase's settings. Use the classmethods for the defaults."""

    base_lr: float = 1e-4
    batch_size: int = 64
    lr_step_size: int = 10
    lr_decay_factor: float = 0.1
    epochs: int = 30
    seed: int = 0
    mask_ratio: float | None = None  # pretraining only
    decoder: str | None = None  # pretraining only, informational
    split_seed: int = DEFAULT_SPLIT_SEED
    loss: str = "cosine"  # pretraining objective: cosine | mse

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ContractError("batch_size and epochs must be positive")
        if self.lr_step_size < 1:
            raise ContractError("lr_step_size must be >= 1")
        if self.loss not in ("cosine", "mse"):
            raise ContractError(f"unknown pretraining loss {self.loss!r}")

    @classmethod
    def pretrain_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(base_lr=1e-4, batch_size=64, lr_step_size=10, lr_decay_factor=0.1, epochs=30)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def finetune_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(base_lr=1e-4, batch_size=64, lr_step_size=6, lr_decay_factor=0.1, epochs=15)
        base.update(overrides)
        return cls(**base)


def lr_at_epoch(base: float, step_size: int, factor: float, epoch: int) -> float:
    """base * factor^floor(epoch/step_size), computed in decimal.

    Decimal arithmetic keeps decade schedules exact (1e-4 -> 1e-5 -> 1e-6)
    instead of drifting by one ulp per decade under binary floats.
    """
    if step_size < 1:
        raise ContractError(f"step_size must be >= 1, got {step_size}")
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    k = epoch // step_size
    return float(Decimal(repr(base)) * Decimal(repr(factor)) ** k)


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators and the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={n: np.zeros_like(p.data) for n, p in params.items()},
            v={n: np.zeros_like(p.data) for n, p in params.items()},
        )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update, in place on the leaf parameters."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ContractError(
                f"gradient for {name!r} has shape {g.shape}, parameter is {p.data.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# run logging


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    wall_ms: int


@dataclass
class RunLog:
    """Per-epoch curve data for one run, plus its final test metric."""

    kind: str  # "pretrain" | "finetune"
    label: str  # legend label, e.g. "r=0.4,tb2" or "scratch"
    records: list[EpochRecord] = field(default_factory=list)
    final_metric: float | None = None
    masks_generated: int = 0

    def csv_bytes(self) -> bytes:
        """CSV with header epoch,lr,train_loss,val_loss,wall_ms and LF endings.

        In serial mode wall_ms is written as 0 so that identical seeded runs
        produce byte-identical files; real timings are only emitted when
        serial mode is explicitly disabled.
        """
        lines = ["epoch,lr,train_loss,val_loss,wall_ms"]
        for r in self.records:
            wall = 0 if serial_mode() else r.wall_ms
            lines.append(f"{r.epoch},{r.lr!r},{r.train_loss!r},{r.val_loss!r},{wall}")
        return ("\n".join(lines) + "\n").encode("ascii")

    def write_csv(self, path) -> None:
        Path(path).write_bytes(self.csv_bytes())


# ---------------------------------------------------------------------------
# dataset protocol


def split_dataset(dataset: SignalDataset, seed: int) -> tuple[SignalDataset, SignalDataset, SignalDataset]:
    """Seeded 70/15/15 split: sizes floor(0.7N), floor(0.15N), remainder."""
    n = dataset.n
    if n < 3:
        raise ContractError(f"need at least 3 samples to split, got {n}")
    perm = rng.generator(seed, rng.STREAM_SPLIT).permutation(n)
    n_train = int(np.floor(0.7 * n))
    n_val = int(np.floor(0.15 * n))
    return (
        dataset.subset(perm[:n_train], "train"),
        dataset.subset(perm[n_train : n_train + n_val], "val"),
        dataset.subset(perm[n_train + n_val :], "test"),
    )


def _batches(n: int, batch_size: int, order: np.ndarray):
    """Consecutive index slices over `order`; the last partial batch is kept."""
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _check_dims(dataset: SignalDataset, bundle: ModelBundle) -> None:
    cfg = bundle.encoder
    if dataset.channels != cfg.channels or dataset.time_len != cfg.time_len:
        raise ShapeError(
            f"dataset is {dataset.channels}x{dataset.time_len}, model expects "
            f"{cfg.channels}x{cfg.time_len}"
        )


def _collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    grads = {}
    for name, p in params.items():
        if p.grad is not None:
            grads[name] = p.grad.data
            p.grad = None
    return grads


# ---------------------------------------------------------------------------
# pre-training


def pretrain(
    dataset: SignalDataset,
    bundle: ModelBundle,
    config: TrainConfig,
    checkpoint_path=None,
    progress=None,
) -> tuple[ModelBundle, RunLog]:
    """MAE pre-training on the train split of `dataset`.

    Per epoch and batch: draw a fresh mask, zero the masked elements, run
    encoder + decoder, take the reconstruction loss on the masked elements
    only, and apply one Adam step at the scheduled learning rate. Labels are
    never read. Returns the trained bundle and its RunLog; the final
    checkpoint is saved to `checkpoint_path` when given.
    """
    if bundle.mode != "pretrain":
        raise ModeError("pretrain requires a bundle with a decoder attached")
    if config.mask_ratio is None or not (0.0 < config.mask_ratio <= 1.0):
        raise ContractError(f"mask_ratio must be in (0, 1], got {config.mask_ratio}")
    _check_dims(dataset, bundle)

    train, val, _ = split_dataset(dataset, config.split_seed)
    cfg = bundle.encoder
    mask_spec = MaskSpec(cfg.channels, cfg.time_len, config.mask_ratio, rng_seed=config.seed)
    val_mask_spec = MaskSpec(
        cfg.channels, cfg.time_len, config.mask_ratio, rng_seed=config.seed + (1 << 32)
    )
    loss_fn = similarity_loss if config.loss == "cosine" else mse_loss
    adam = AdamState.for_params(bundle.params)
    label = f"r={config.mask_ratio!r},{bundle.decoder.name}"
    log = RunLog(kind="pretrain", label=label)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_at_epoch(config.base_lr, config.lr_step_size, config.lr_decay_factor, epoch)
        order = rng.generator(config.seed, rng.STREAM_SHUFFLE, counter=epoch).permutation(train.n)
        batch_losses = []
        for batch_id, idx in enumerate(_batches(train.n, config.batch_size, order)):
            xb = train.samples[idx]
            mask = generate_mask(mask_spec)
            try:
                recon = _reconstruct(bundle, xb, mask)
                loss = loss_fn(recon, Tensor(xb), mask)
            except DegenerateLossError as err:
                raise DegenerateLossError(
                    f"epoch {epoch} batch {batch_id}: {err}"
                ) from err
            backward(loss.node)
            adam_step(bundle.params, _collect_grads(bundle.params), adam, lr)
            batch_losses.append(loss.value)
        val_loss = _masked_val_loss(bundle, val, val_mask_spec, config.batch_size, loss_fn)
        wall_ms = int(round((time.perf_counter() - started) * 1000.0))
        log.records.append(
            EpochRecord(epoch, lr, float(np.mean(batch_losses)), val_loss, wall_ms)
        )
        if progress is not None:
            progress(log.records[-1])

    log.masks_generated = mask_spec.draw_counter
    if checkpoint_path is not None:
        save_checkpoint(bundle, checkpoint_path)
    return bundle, log


def _reconstruct(bundle: ModelBundle, xb: np.ndarray, mask) -> Tensor:
    masked = apply_mask(Tensor(xb), mask)
    return decoder_forward(bundle, encoder_forward(bundle, masked))


def _masked_val_loss(bundle, val, val_mask_spec, batch_size, loss_fn) -> float:
    if val.n == 0:
        return float("nan")
    losses = []
    with no_grad():
        for idx in _batches(val.n, batch_size, np.arange(val.n)):
            xb = val.samples[idx]
            mask = generate_mask(val_mask_spec)
            recon = _reconstruct(bundle, xb, mask)
            losses.append(loss_fn(recon, Tensor(xb), mask).value)
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# fine-tuning


def finetune(
    bundle: ModelBundle,
    dataset: SignalDataset,
    config: TrainConfig,
    progress=None,
) -> tuple[ModelBundle, RunLog]:
    """Supervised fine-tuning of all layers on unmasked signals.

    Accepts either a pre-training bundle (the decoder is removed and a fresh
    head attached) or a scratch fine-tuning bundle. The optimized objective
    is mean squared Euclidean distance; logged train/val columns are RMSE in
    millimeters, and the final test RMSE lands in `final_metric`.
    """
    if bundle.mode == "pretrain":
        bundle = to_finetune(bundle, head_seed=config.seed)
    _check_dims(dataset, bundle)

    train, val, test = split_dataset(dataset, config.split_seed)
    adam = AdamState.for_params(bundle.params)
    if bundle.pretrain_ratio is not None:
        label = f"r={bundle.pretrain_ratio!r},{_decoder_tag(config)}"
    else:
        label = "scratch"
    log = RunLog(kind="finetune", label=label)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_at_epoch(config.base_lr, config.lr_step_size, config.lr_decay_factor, epoch)
        order = rng.generator(config.seed, rng.STREAM_SHUFFLE, counter=epoch).permutation(train.n)
        sq_sum = 0.0
        for idx in _batches(train.n, config.batch_size, order):
            pred = finetune_forward(bundle, Tensor(train.samples[idx]))
            loss = mean_squared_distance(pred, train.labels[idx])
            backward(loss)
            adam_step(bundle.params, _collect_grads(bundle.params), adam, lr)
            sq_sum += float(loss.data) * len(idx)
        train_rmse = float(np.sqrt(sq_sum / train.n))
        val_rmse = evaluate(bundle, val, config.batch_size) if val.n else float("nan")
        wall_ms = int(round((time.perf_counter() - started) * 1000.0))
        log.records.append(EpochRecord(epoch, lr, train_rmse, val_rmse, wall_ms))
        if progress is not None:
            progress(log.records[-1])

    log.final_metric = evaluate(bundle, test, config.batch_size) if test.n else float("nan")
    return bundle, log


def _decoder_tag(config: TrainConfig) -> str:
    return config.decoder if config.decoder else "mae"


def evaluate(bundle: ModelBundle, dataset: SignalDataset, batch_size: int = 64) -> float:
    """Test RMSE in millimeters over all samples; no gradients, and the
    result is independent of batch size."""
    if bundle.mode != "finetune":
        raise ModeError("evaluate requires a fine-tuning bundle")
    if dataset.n < 1:
        raise ContractError("cannot evaluate on an empty dataset")
    _check_dims(dataset, bundle)
    sq = np.empty(dataset.n)
    with no_grad():
        for idx in _batches(dataset.n, batch_size, np.arange(dataset.n)):
            pred = finetune_forward(bundle, Tensor(dataset.samples[idx])).data
            sq[idx] = np.sum((pred - dataset.labels[idx]) ** 2, axis=1)
    return float(np.sqrt(sq.mean()))
