"""Optimization loop: Adam updates with warmup, metrics, checkpoints.

Checkpoint container: magic ``DQLB``, u32 format version, length-prefixed
UTF-8 key=value text (config echo plus ``runtime.*`` state), named
parameter/optimizer records (shape + raw little-endian f64), CRC32 trailer.
All integers little-endian.
"""
import csv
import json
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diffcore as dc
from .errors import CheckpointError, ConfigError, NumericError
from .kernels import active as _K
from .objectives import ObjectiveSpec, evaluate_loglik, objective_bound

MAGIC = b"DQLB"
FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    objective: ObjectiveSpec
    epochs: int
    batch_size: int = 128
    batches_per_epoch: int = 100
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    warmup_epochs: int = 10
    seed: int = 0
    grad_clip: float = 50.0  # global L2; <= 0 disables
    finetune_objective: Optional[ObjectiveSpec] = None
    switch_epoch: Optional[int] = None
    val_size: int = 512
    eval_k: int = 256

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.batches_per_epoch < 1:
            raise ConfigError("epochs/batch_size/batches_per_epoch invalid")
        if (self.finetune_objective is None) != (self.switch_epoch is None):
            raise ConfigError("finetune objective and switch epoch go together")


def lr_at(epoch, cfg):
    """Warmup schedule: lr * min(1, epoch / warmup_epochs), epochs 1-based."""
    if epoch < 1:
        raise ConfigError("epoch numbering starts at 1")
    if cfg.warmup_epochs == 0:
        return cfg.lr
    return cfg.lr * min(1.0, epoch / cfg.warmup_epochs)


def objective_for_epoch(cfg, epoch):
    if cfg.switch_epoch is not None and epoch >= cfg.switch_epoch:
        return cfg.finetune_objective
    return cfg.objective


class Adam:
    """Adam with bias correction over an ordered name -> Tensor mapping."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.step_count = 0

    def step(self, lr):
        self.step_count += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            _K.adam_update(p.data, grad, self.m[name], self.v[name],
                           self.step_count, lr, self.beta1, self.beta2,
                           self.eps)

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()


def clip_global_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def merged_parameters(model, dequantizer):
    out = {}
    for k, t in model.parameters().items():
        out[f"model.{k}"] = t
    for k, t in dequantizer.parameters().items():
        out[f"dequant.{k}"] = t
    return out


@dataclass
class TrainState:
    params: dict
    opt: Adam
    rng: np.random.Generator
    epoch_done: int = 0


@dataclass
class TrainResult:
    final_loss: float
    metrics: list = field(default_factory=list)
    steps: int = 0


def train_step(params, x, spec, dequantizer, model, opt, lr, rng,
               grad_clip=0.0):
    """One batch: objective, backprop, clipped Adam update. Returns loss."""
    with dc.Tape() as tape:
        per_example = objective_bound(spec, x, dequantizer, model, rng)
        loss = dc.mul(dc.sum_over_axis(per_example, 0), -1.0 / x.shape[0])
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError("non-finite loss")
        tape.backward(loss)
    clip_global_norm(params, grad_clip)
    opt.step(lr)
    opt.zero_grads()
    return value


def _append_metrics(path, row):
    header = ["epoch", "lr", "train_loss_nats", "val_vi_bits",
              "val_iw256_bits", "gap_bits"]
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(header)
        writer.writerow([f"{row[k]:.17g}" if isinstance(row[k], float)
                         else row[k] for k in header])


def train_model(model, dequantizer, source, cfg, state=None,
                metrics_path=None, progress=None, val_x=None):
    """Run (or resume) training; returns (TrainResult, TrainState).

    Deterministic given cfg.seed: data batches and dequantizer draws come
    from one stream, per-epoch validation from separately derived streams,
    so validation never perturbs the training sequence.
    """
    if state is None:
        params = merged_parameters(model, dequantizer)
        state = TrainState(params=params,
                           opt=Adam(params, cfg.beta1, cfg.beta2,
                                    cfg.eps_adam),
                           rng=np.random.default_rng([cfg.seed, 1]))
    params, opt, rng = state.params, state.opt, state.rng
    if val_x is None:
        val_x = source.sample(cfg.val_size,
                              np.random.default_rng([cfg.seed, 2]))
    else:
        val_x = np.asarray(val_x)[:cfg.val_size]
    result = TrainResult(final_loss=math.nan)
    for epoch in range(state.epoch_done + 1, cfg.epochs + 1):
        lr = lr_at(epoch, cfg)
        spec = objective_for_epoch(cfg, epoch)
        epoch_loss = 0.0
        for step in range(1, cfg.batches_per_epoch + 1):
            x = source.sample(cfg.batch_size, rng)
            try:
                epoch_loss += train_step(params, x, spec, dequantizer, model,
                                         opt, lr, rng, cfg.grad_clip)
            except NumericError as exc:
                raise NumericError(
                    f"{exc} (epoch {epoch}, step {step})") from exc
            result.steps += 1
        result.final_loss = epoch_loss / cfg.batches_per_epoch
        report = evaluate_loglik(val_x, dequantizer, model, cfg.eval_k,
                                 np.random.default_rng([cfg.seed, 3, epoch]))
        row = {"epoch": epoch, "lr": lr,
               "train_loss_nats": result.final_loss,
               "val_vi_bits": report.vi_bits,
               "val_iw256_bits": report.iw_bits,
               "gap_bits": report.gap_bits}
        result.metrics.append(row)
        if metrics_path is not None:
            _append_metrics(metrics_path, row)
        if progress is not None:
            progress(row)
        state.epoch_done = epoch
    return result, state


# ---------------------------------------------------------------------------
# checkpoint container

def _pack_text(items):
    lines = [f"{k}={v}" for k, v in items.items()]
    return "\n".join(lines).encode("utf-8")


def _parse_text(blob):
    items = {}
    for line in blob.decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            items[key] = value
    return items


def save_checkpoint(path, params, opt, config_items, rng=None, epoch_done=0):
    """Write params + optimizer state + config echo + rng state."""
    items = dict(config_items)
    items["runtime.format"] = "dqlab-checkpoint"
    items["runtime.adam_step"] = str(opt.step_count)
    items["runtime.epoch_done"] = str(epoch_done)
    if rng is not None:
        items["runtime.rng_state"] = json.dumps(rng.bit_generator.state)
    records = []
    for name, t in params.items():
        records.append((f"param/{name}", t.data))
    for name in params:
        records.append((f"adam.m/{name}", opt.m[name]))
        records.append((f"adam.v/{name}", opt.v[name]))

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", FORMAT_VERSION)
    text = _pack_text(items)
    buf += struct.pack("<I", len(text))
    buf += text
    buf += struct.pack("<I", len(records))
    for name, arr in records:
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_checkpoint(path):
    """Read a checkpoint: (text items dict, arrays dict). Verifies CRC."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a DQLB checkpoint")
    stored_crc, = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or "
                              "corrupt)")
    version, = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} "
                              f"unsupported (expected {FORMAT_VERSION})")
    off = 8
    text_len, = struct.unpack("<I", blob[off:off + 4])
    off += 4
    items = _parse_text(blob[off:off + text_len])
    off += text_len
    n_records, = struct.unpack("<I", blob[off:off + 4])
    off += 4
    arrays = {}
    for _ in range(n_records):
        name_len, = struct.unpack("<I", blob[off:off + 4])
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        ndim, = struct.unpack("<I", blob[off:off + 4])
        off += 4
        shape = struct.unpack(f"<{ndim}I", blob[off:off + 4 * ndim])
        off += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arrays[name] = np.frombuffer(
            blob, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    return items, arrays


def restore_state(path, model, dequantizer, cfg):
    """Rebuild a TrainState (params, Adam buffers, rng) from a checkpoint."""
    items, arrays = load_checkpoint(path)
    params = merged_parameters(model, dequantizer)
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.eps_adam)
    for name, tensor in params.items():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"missing parameter record {name}")
        if arrays[key].shape != tensor.data.shape:
            raise CheckpointError(f"shape mismatch for {name}")
        tensor.data[...] = arrays[key]
        opt.m[name][...] = arrays[f"adam.m/{name}"]
        opt.v[name][...] = arrays[f"adam.v/{name}"]
    opt.step_count = int(items.get("runtime.adam_step", "0"))
    rng = np.random.default_rng()
    if "runtime.rng_state" in items:
        rng.bit_generator.state = json.loads(items["runtime.rng_state"])
    return TrainState(params=params, opt=opt, rng=rng,
                      epoch_done=int(items.get("runtime.epoch_done", "0")))
