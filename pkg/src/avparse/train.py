"""Weakly supervised training with SGD + momentum, metric logging and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import container
from .data import DatasetManifest
from .metrics import EvalReport, evaluate
from .model import (ModelConfig, ModelParams, Prepared, forward, load_buffers, named_buffers,
                    named_parameters, predict, weak_bce_loss)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(container.ContainerError):
    pass


@dataclass
class TrainConfig:
    lr: float = 3e-3
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 16
    seed: int = 0
    weight_decay: float = 0.0


@dataclass
class TrainState:
    """Everything needed to continue training bit-identically."""

    params: ModelParams
    momentum: dict[str, np.ndarray]
    rng: np.random.Generator
    epoch: int = 0
    history: list[dict] = field(default_factory=list)


def init_state(model_config: ModelConfig, train_config: TrainConfig) -> TrainState:
    params = ModelParams.init(model_config, train_config.seed)
    momentum = {name: np.zeros_like(t.data) for name, t in named_parameters(params)}
    return TrainState(params, momentum, np.random.default_rng([train_config.seed, 29]))


def sgd_step(state: TrainState, lr: float, momentum: float, weight_decay: float = 0.0) -> None:
    for name, t in named_parameters(state.params):
        if t.grad is None:
            continue
        buf = state.momentum[name]
        buf *= t.data.dtype.type(momentum)
        buf += t.grad
        if weight_decay:
            buf += t.data.dtype.type(weight_decay) * t.data
        t.data = t.data - t.data.dtype.type(lr) * buf
        t.grad = None


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 31, epoch]).permutation(n)


def train_epoch(state: TrainState, data: Prepared, model_config: ModelConfig,
                train_config: TrainConfig) -> float:
    order = epoch_order(train_config.seed, state.epoch, len(data))
    total, count = 0.0, 0
    for start in range(0, len(order), train_config.batch_size):
        idx = order[start:start + train_config.batch_size]
        batch = data.batch(idx)
        out = forward(state.params, batch, model_config, "train", state.rng)
        loss = weak_bce_loss(out.preds.audio, out.preds.visual, out.preds.joint, batch.weak)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at epoch {state.epoch + 1}, batch {start // train_config.batch_size}")
        loss.backward()
        sgd_step(state, train_config.lr, train_config.momentum, train_config.weight_decay)
        total += value * len(idx)
        count += len(idx)
    state.epoch += 1
    return total / count


def evaluate_model(params: ModelParams, data: Prepared, model_config: ModelConfig) -> EvalReport:
    pa, pv = predict(params, data, model_config)
    return evaluate(pa, pv, data.data.gt_audio, data.data.gt_visual, model_config.threshold)


def train(model_config: ModelConfig, train_config: TrainConfig, data: Prepared,
          eval_data: Prepared | None = None, state: TrainState | None = None,
          log_path: str | Path | None = None,
          on_epoch: Callable[[TrainState], None] | None = None) -> TrainState:
    """Run (or continue) training up to ``train_config.epochs`` epochs."""
    if state is None:
        state = init_state(model_config, train_config)
    log_file = open(log_path, "a") if log_path else None
    try:
        while state.epoch < train_config.epochs:
            loss = train_epoch(state, data, model_config, train_config)
            record = {"epoch": state.epoch, "loss": loss}
            if eval_data is not None:
                record.update(evaluate_model(state.params, eval_data, model_config).to_dict())
            state.history.append(record)
            log.info("epoch %d loss %.5f", state.epoch, loss)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if on_epoch:
                on_epoch(state)
    finally:
        if log_file:
            log_file.close()
    return state


# ---------------------------------------------------------------- checkpoints


def checkpoint_bytes(state: TrainState, model_config: ModelConfig, train_config: TrainConfig,
                     manifest_hash: str) -> bytes:
    tensors = {}
    for name, t in named_parameters(state.params):
        tensors[f"param/{name}"] = t.data
    for name, buf in named_buffers(state.params):
        tensors[f"buffer/{name}"] = buf
    for name, buf in state.momentum.items():
        tensors[f"momentum/{name}"] = buf
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "manifest_hash": manifest_hash,
        "model_config": asdict(model_config),
        "train_config": asdict(train_config),
        "epoch": state.epoch,
        "rng_state": state.rng.bit_generator.state,
        "history": state.history,
    }
    return container.dumps(tensors, meta)


def save_checkpoint(path: str | Path, state: TrainState, model_config: ModelConfig,
                    train_config: TrainConfig, manifest_hash: str) -> None:
    Path(path).write_bytes(checkpoint_bytes(state, model_config, train_config, manifest_hash))


@dataclass
class Checkpoint:
    state: TrainState
    model_config: ModelConfig
    train_config: TrainConfig
    manifest_hash: str


def load_checkpoint(path: str | Path, expected_manifest: DatasetManifest | str | None = None) -> Checkpoint:
    try:
        tensors, meta = container.load(path)
    except container.ContainerError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
    if expected_manifest is not None:
        expected = expected_manifest.hash() if isinstance(expected_manifest, DatasetManifest) else expected_manifest
        if meta["manifest_hash"] != expected:
            raise CheckpointError(f"{path}: checkpoint was trained on a different dataset manifest")
    try:
        model_config = ModelConfig(**meta["model_config"])
        train_config = TrainConfig(**meta["train_config"])
        params = ModelParams.init(model_config, train_config.seed)
        dt = model_config.np_dtype
        momentum = {}
        for name, t in named_parameters(params):
            stored = tensors[f"param/{name}"]
            if stored.shape != t.shape:
                raise CheckpointError(f"{path}: {name} has shape {stored.shape}, expected {t.shape}")
            t.data = stored.astype(dt)
            momentum[name] = tensors[f"momentum/{name}"].astype(dt)
        load_buffers(params, {k[len("buffer/"):]: v.astype(dt) for k, v in tensors.items()
                              if k.startswith("buffer/")})
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: incomplete checkpoint ({exc})") from exc
    state = TrainState(params, momentum, rng, int(meta["epoch"]), list(meta["history"]))
    return Checkpoint(state, model_config, train_config, meta["manifest_hash"])
