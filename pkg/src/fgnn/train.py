"""Mini-batch training with Adam, step-decayed learning rate and L2 weight decay,
plus a single-file checkpoint format."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .exceptions import ContractError, IntegrityError, UsageError
from .layers import GATE_ORDER, EmbeddingTable, GRUCellParams
from .model import ModelConfig, ModelParams, batch_loss
from .readout import LastAttentionParams, ReadoutParams
from .wgat import WgatLayerParams

logger = logging.getLogger(__name__)

SCHEDULES = ("step", "linear")
CHECKPOINT_MAGIC = b"FGNNCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainingConfig:
    lr: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 3
    schedule: str = "step"
    l2: float = 1e-5
    batch_size: int = 100
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dim: int = 100
    layers: int = 3
    heads: int = 8
    steps: int = 3
    combine: str = "mean"
    readout: str = "set2set"
    edge_weight_norm: str = "none"
    selfloop_clamp: bool = False
    init_std: float = 0.1

    def __post_init__(self):
        positive = ("lr", "decay_factor", "decay_every", "batch_size", "beta1", "beta2", "eps")
        for key in positive:
            if not getattr(self, key) > 0:
                raise UsageError(f"config key {key!r} must be positive, got {getattr(self, key)!r}")
        for key in ("l2", "epochs", "init_std"):
            if getattr(self, key) < 0:
                raise UsageError(f"config key {key!r} must be non-negative, got {getattr(self, key)!r}")
        if self.schedule not in SCHEDULES:
            raise UsageError(f"config key 'schedule' must be one of {SCHEDULES}, got {self.schedule!r}")
        if not (self.beta1 < 1 and self.beta2 < 1):
            raise UsageError("config keys 'beta1' and 'beta2' must be below 1")
        self.model_config()

    def model_config(self) -> ModelConfig:
        return ModelConfig(dim=self.dim, layers=self.layers, heads=self.heads, steps=self.steps,
                           combine=self.combine, readout=self.readout,
                           edge_weight_norm=self.edge_weight_norm, selfloop_clamp=self.selfloop_clamp,
                           init_std=self.init_std)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainingConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise UsageError(f"unknown config key {key!r}")
            kwargs[key] = coerce_value(key, value, type(getattr(cls(), key)))
        return cls(**kwargs)


def coerce_value(key: str, value, kind: type):
    if not isinstance(value, str):
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, kind):
            return value
        raise UsageError(f"config key {key!r} expects {kind.__name__}, got {value!r}")
    text = value.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise UsageError(f"config key {key!r} expects {kind.__name__}, got {value!r}") from None
    return text


def init_model(config: TrainingConfig, vocab_size: int, rng: np.random.Generator = None) -> ModelParams:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    return ModelParams.init(config.model_config(), vocab_size, rng)


@dataclass
class AdamState:
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step: int = 0


def adam_step(named: dict, state: AdamState, lr: float, l2: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam on ``named`` tensors; l2·θ is added to each gradient first."""
    for name, p in named.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in named.items():
        g = p.grad + l2 * p.data if l2 else p.grad
        m = state.first.get(name)
        v = state.second.get(name)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        v = (1.0 - beta2) * g * g if v is None else beta2 * v + (1.0 - beta2) * g * g
        state.first[name], state.second[name] = m, v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def lr_schedule(epoch: int, config: TrainingConfig) -> float:
    """Learning rate for a 0-based epoch: ×decay_factor every decay_every epochs.

    The ``linear`` schedule interpolates between those step values.
    """
    if epoch < 0:
        raise UsageError("epoch must be non-negative")
    stage, offset = divmod(epoch, config.decay_every)
    base = config.lr * config.decay_factor ** stage
    if config.schedule == "linear":
        return base * (1.0 - (1.0 - config.decay_factor) * offset / config.decay_every)
    return base


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(config: TrainingConfig, sequences: Sequence, labels: Sequence, n_items: int,
          eval_fn: Callable[[ModelParams], dict] = None, params: ModelParams = None,
          on_epoch: Callable[[dict], None] = None) -> tuple:
    """Train from scratch (or continue ``params``); returns (params, per-epoch log, AdamState)."""
    if len(sequences) == 0:
        raise UsageError("training split is empty")
    if len(sequences) != len(labels):
        raise UsageError("sequences and labels differ in length")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_model(config, n_items, rng)
    named = params.named_tensors()
    state = AdamState()
    history = []
    labels = np.asarray(labels, np.intp)
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        started = time.perf_counter()
        total, steps = 0.0, 0
        for idx in iterate_batches(len(sequences), config.batch_size, rng):
            params.zero_grad()
            loss = batch_loss(params, [sequences[i] for i in idx], labels[idx])
            loss.backward()
            adam_step(named, state, lr, config.l2, config.beta1, config.beta2, config.eps)
            total += loss.item()
            steps += 1
        entry = {"epoch": epoch, "lr": lr, "steps": steps, "train_loss": total / len(sequences),
                 "seconds": round(time.perf_counter() - started, 3)}
        if eval_fn is not None:
            entry.update(eval_fn(params))
        history.append(entry)
        logger.info("epoch %d lr %.2e loss %.5f", epoch, lr, entry["train_loss"])
        if on_epoch is not None:
            on_epoch(entry)
    return params, history, state


# ---------------------------------------------------------------- checkpoints


def checkpoint_save(params: ModelParams, path, state: AdamState = None, config: dict = None) -> None:
    """Write magic, manifest length, JSON manifest, then little-endian float64 arrays."""
    arrays = [(name, t.data) for name, t in params.named_tensors().items()]
    if state is not None:
        for name, _ in list(arrays):
            if name in state.first:
                arrays.append((f"adam.first.{name}", state.first[name]))
                arrays.append((f"adam.second.{name}", state.second[name]))
    entries, offset, blobs = [], 0, []
    for name, arr in arrays:
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob),
                        "sha256": hashlib.sha256(blob).hexdigest()})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "gate_order": list(GATE_ORDER),
        "model_config": params.config.to_dict(),
        "wgat_combine": [layer.combine for layer in params.wgat_layers],
        "n_items": params.n_items,
        "adam_step": state.step if state is not None else None,
        "config": config or {},
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def checkpoint_load(path) -> tuple:
    """Inverse of :func:`checkpoint_save`; returns (params, AdamState or None, manifest)."""
    path = Path(path)
    if not path.is_file():
        raise IntegrityError(f"checkpoint {path} does not exist")
    raw = path.read_bytes()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: bad magic in header section")
    pos = len(CHECKPOINT_MAGIC)
    if len(raw) < pos + 8:
        raise IntegrityError(f"{path}: truncated header section")
    (head_len,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    try:
        manifest = json.loads(raw[pos:pos + head_len].decode("utf-8"))
        entries = manifest["tensors"]
        config = ModelConfig(**manifest["model_config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise IntegrityError(f"{path}: manifest section unreadable ({exc})") from None
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise IntegrityError(f"{path}: manifest section has unsupported version")
    if manifest.get("gate_order") != list(GATE_ORDER):
        raise IntegrityError(f"{path}: manifest section has unexpected GRU gate order")
    data_start = pos + head_len
    arrays = {}
    for entry in entries:
        start = data_start + entry["offset"]
        blob = raw[start:start + entry["nbytes"]]
        if len(blob) != entry["nbytes"]:
            raise IntegrityError(f"{path}: tensor section {entry['name']!r} is truncated")
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise IntegrityError(f"{path}: tensor section {entry['name']!r} failed its checksum")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    params = _params_from_arrays(config, manifest, arrays, path)
    state = None
    if manifest.get("adam_step") is not None:
        state = AdamState(step=int(manifest["adam_step"]))
        for name in params.named_tensors():
            if f"adam.first.{name}" in arrays:
                state.first[name] = arrays[f"adam.first.{name}"]
                state.second[name] = arrays[f"adam.second.{name}"]
    return params, state, manifest


def _params_from_arrays(config: ModelConfig, manifest: dict, arrays: dict, path) -> ModelParams:
    def get(name):
        if name not in arrays:
            raise IntegrityError(f"{path}: tensor section {name!r} missing")
        return Tensor(arrays[name], requires_grad=True)

    layers = []
    combines = manifest.get("wgat_combine") or [config.combine] * config.layers
    for i in range(config.layers):
        weights = [get(f"wgat{i}.head{k}.W") for k in range(config.heads)]
        att = [get(f"wgat{i}.head{k}.att") for k in range(config.heads)]
        layers.append(WgatLayerParams(weights, att, combines[i]))
    readout = None
    if config.readout == "set2set":
        gru = GRUCellParams(*(get(f"readout.gru.{k}") for k in
                              ("input_weights", "hidden_weights", "input_bias", "hidden_bias")))
        readout = ReadoutParams(gru, config.steps)
    last_att = None
    if config.readout == "last_attention":
        last_att = LastAttentionParams(*(get(f"last_attention.{k}") for k in ("A", "B", "c", "v")))
    return ModelParams(config, EmbeddingTable(get("embedding")), layers, readout, get("w_out"), last_att)
