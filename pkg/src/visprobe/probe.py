"""The LSTM probe: parameters, forward pass, training loop and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .errors import ConfigError, FormatError, NumericError, UsageError
from .evaluator import EvalPool, compute_recalls
from .numerics import PROBE_NAMES, AdamState, ParamBlock, adam_step, probe_backward, probe_forward_batch, zero_grads

log = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}
_EVAL_BATCH = 1024


@dataclass
class ProbeParams:
    d_L: int
    hidden: int
    d_V: int
    blocks: dict[str, ParamBlock]
    seed: int = 0

    def __getitem__(self, name) -> ParamBlock:
        return self.blocks[name]

    @property
    def dtype(self):
        return self.blocks["W_x"].value.dtype

    def astype(self, dtype) -> "ProbeParams":
        blocks = {n: ParamBlock(n, b.value.astype(dtype)) for n, b in self.blocks.items()}
        return ProbeParams(self.d_L, self.hidden, self.d_V, blocks, self.seed)

    def copy(self) -> "ProbeParams":
        return self.astype(self.dtype)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for n in PROBE_NAMES:
            h.update(np.ascontiguousarray(self.blocks[n].value, dtype="<f4").tobytes())
        return h.hexdigest()


def init_probe(d_L: int, hidden: int, d_V: int, seed: int, dtype=np.float32) -> ProbeParams:
    """Weights ~ U(-1/sqrt(H), 1/sqrt(H)); biases zero except forget bias = 1."""
    if min(d_L, hidden, d_V) < 1:
        raise ConfigError(f"probe dimensions must be positive, got d_L={d_L}, H={hidden}, d_V={d_V}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden)
    shapes = {"W_x": (d_L, 4 * hidden), "W_h": (hidden, 4 * hidden), "W_out": (hidden, d_V)}
    vals = {n: rng.uniform(-bound, bound, size=s).astype(dtype) for n, s in shapes.items()}
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0
    vals["b"] = b
    vals["b_out"] = np.zeros(d_V, dtype=dtype)
    return ProbeParams(d_L, hidden, d_V, {n: ParamBlock(n, vals[n]) for n in PROBE_NAMES}, seed)


def probe_forward(seq, params: ProbeParams) -> np.ndarray:
    """Map one token sequence (T, d_L) to a d_V vector from the final hidden state."""
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise UsageError("probe_forward needs a non-empty (T, d_L) token sequence")
    v_hat, _ = probe_forward_batch(seq[None], [seq.shape[0]], params.blocks, keep_cache=False)
    return v_hat[0]


def predict(params: ProbeParams, dataset, indices) -> np.ndarray:
    """Probe outputs for the dataset records at ``indices`` (no gradients kept)."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.empty((len(indices), params.d_V), dtype=params.dtype)
    for s in range(0, len(indices), _EVAL_BATCH):
        chunk = indices[s:s + _EVAL_BATCH]
        X, lengths = dataset.padded(chunk, dtype=params.dtype)
        out[s:s + len(chunk)], _ = probe_forward_batch(X, lengths, params.blocks, keep_cache=False)
    return out


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 5
    lr: float = 5e-4
    weight_decay: float = 5e-4
    loss: str = "infonce"
    seed: int = 0
    hidden: int = 256
    precision: str = "float32"
    log_val: bool = True

    def validate(self):
        if self.loss not in losses.LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {', '.join(losses.LOSSES)}")
        if self.loss in losses.CONTRASTIVE and self.batch_size < 2:
            raise ConfigError(f"{self.loss} needs batch_size >= 2")
        if self.batch_size < 1 or self.epochs < 1 or self.hidden < 1:
            raise ConfigError("batch_size, epochs and hidden must be >= 1")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
        return self

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    val_ir1: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    checksum: str = ""
    steps: int = 0
    dropped_batches: int = 0

    def to_dict(self):
        return asdict(self)


def train_probe(dataset, split, config: TrainConfig, init: ProbeParams | None = None):
    """Fit a probe on ``split.train_ids`` with shuffled mini-batches.

    Returns ``(params, report)``. For contrastive losses a trailing batch of a
    single record has no distractor and is skipped (counted in the report).
    The dataset is only read.
    """
    config.validate()
    dtype = PRECISIONS[config.precision]
    train_idx = dataset.indices(split.train_ids)
    if train_idx.size == 0:
        raise ConfigError("training set is empty")
    params = init.astype(dtype) if init is not None else init_probe(
        dataset.header.d_L, config.hidden, dataset.header.d_V, config.seed, dtype)
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    val_pool = EvalPool.from_dataset(dataset, split.val_ids) if config.log_val and split.val_ids else None
    vis = dataset.vis
    B = config.batch_size
    t0 = time.perf_counter()

    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        total, n_seen = 0.0, 0
        for s in range(0, order.size, B):
            batch = order[s:s + B]
            if batch.size < 2 and config.loss in losses.CONTRASTIVE:
                report.dropped_batches += 1
                log.info("epoch %d: dropped trailing batch of size %d", epoch, batch.size)
                continue
            X, lengths = dataset.padded(batch, dtype=dtype)
            v = vis[batch].astype(dtype)
            zero_grads(params.blocks)
            v_hat, cache = probe_forward_batch(X, lengths, params.blocks)
            loss, dv_hat = losses.loss_and_grad(config.loss, v_hat, v)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at epoch {epoch}, batch {s // B}")
            probe_backward(dv_hat, cache, params.blocks)
            adam_step(params.blocks, state)
            total += loss * batch.size
            n_seen += batch.size
            report.steps += 1
        report.epoch_loss.append(total / max(n_seen, 1))
        if val_pool is not None:
            vi = dataset.indices(split.val_ids)
            report.val_ir1.append(compute_recalls(predict(params, dataset, vi), split.val_ids, val_pool, [1])["IR@1"])
        log.debug("epoch %d loss %.5f", epoch, report.epoch_loss[-1])

    report.wall_clock = time.perf_counter() - t0
    report.checksum = params.checksum()
    return params, report


# Checkpoint layout (little-endian):
#   magic b"XPRB" | u32 version | u32 d_L | u32 hidden | u32 d_V | u64 seed
#   | 32-byte sha256 config digest | float32 blocks W_x, W_h, b, W_out, b_out (row-major)
_CKPT_MAGIC = b"XPRB"
_CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sIIIIQ32s")


def _block_shapes(d_L, H, d_V):
    return {"W_x": (d_L, 4 * H), "W_h": (H, 4 * H), "b": (4 * H,), "W_out": (H, d_V), "b_out": (d_V,)}


def save_checkpoint(params: ProbeParams, path, config_digest: str = "") -> Path:
    digest = bytes.fromhex(config_digest) if config_digest else bytes(32)
    parts = [_CKPT_HEAD.pack(_CKPT_MAGIC, _CKPT_VERSION, params.d_L, params.hidden, params.d_V,
                             params.seed, digest)]
    for n in PROBE_NAMES:
        parts.append(np.ascontiguousarray(params.blocks[n].value, dtype="<f4").tobytes())
    path = Path(path)
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path):
    """Return ``(params, config_digest_hex)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEAD.size:
        raise FormatError(f"{path}: too short for a probe checkpoint")
    magic, version, d_L, H, d_V, seed, digest = _CKPT_HEAD.unpack_from(raw)
    if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
        raise FormatError(f"{path}: not a version-{_CKPT_VERSION} probe checkpoint")
    shapes = _block_shapes(d_L, H, d_V)
    need = _CKPT_HEAD.size + 4 * sum(int(np.prod(s)) for s in shapes.values())
    if len(raw) != need:
        raise FormatError(f"{path}: {len(raw)} bytes, expected {need}")
    off, blocks = _CKPT_HEAD.size, {}
    for n in PROBE_NAMES:
        size = int(np.prod(shapes[n]))
        val = np.frombuffer(raw, dtype="<f4", count=size, offset=off).astype(np.float32).reshape(shapes[n])
        blocks[n] = ParamBlock(n, val)
        off += 4 * size
    return ProbeParams(d_L, H, d_V, blocks, seed), digest.hex()
