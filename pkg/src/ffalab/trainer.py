"""L1 training with Adam and a cosine-annealed learning rate, plus checkpoints.

Checkpoint layout (all integers little-endian uint32)::

    b"FFACKPT1" | version | len + JSON config block | tensor count |
    per tensor: len + name, rank, extents..., float32 payload | CRC-32

The JSON block holds the model and training configs, the step counter, the
Adam step and the sampling RNG state. Tensors are the parameters followed by
the Adam moments ``adam.m.<name>`` and ``adam.v.<name>``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .haze import crop, dihedral, draw_dihedral, load_dataset
from .model import ModelConfig, ParamStore, ffa_forward, init_params
from .tensor import GradTape, ShapeError, Tensor, absolute, backward, mean, sub

__all__ = [
    "TrainConfig",
    "OptimState",
    "Checkpoint",
    "CheckpointError",
    "ConfigConflictError",
    "TrainingDiverged",
    "l1_loss",
    "cosine_lr",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
    "train",
]

log = logging.getLogger(__name__)

MAGIC = b"FFACKPT1"
VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    lr: float = 1e-4
    batch: int = 2
    patch: int = 48
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.batch < 1 or self.patch < 1:
            raise ValueError("batch and patch must be >= 1")

    # checkpoint_every does not change the trajectory
    def trajectory_key(self) -> dict:
        d = asdict(self)
        d.pop("checkpoint_every")
        return d


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamStore) -> "OptimState":
        return cls({k: np.zeros_like(t.data) for k, t in params.items()},
                   {k: np.zeros_like(t.data) for k, t in params.items()}, 0)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: ParamStore
    optim: OptimState
    rng_state: dict
    step: int


class CheckpointError(ValueError):
    pass


class ConfigConflictError(CheckpointError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step
        self.value = value


# ---------------------------------------------------------------------------


def l1_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean absolute error over every element of the batch."""
    if pred.shape != gt.shape:
        raise ShapeError(f"l1_loss: {pred.shape} vs {gt.shape}")
    return mean(absolute(sub(pred, gt)))


def cosine_lr(t: int, T: int, eta0: float) -> float:
    if not 0 <= t <= T:
        raise ValueError(f"step {t} outside [0, {T}]")
    return 0.5 * (1.0 + math.cos(t * math.pi / T)) * eta0


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: OptimState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[ParamStore, OptimState]:
    """One bias-corrected Adam update; returns new params and state."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise KeyError("parameter, gradient and optimizer key sets differ")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        dt = p.data.dtype
        g = grads[name].astype(dt, copy=False)
        m = dt.type(beta1) * state.m[name] + dt.type(1 - beta1) * g
        v = dt.type(beta2) * state.v[name] + dt.type(1 - beta2) * (g * g)
        mhat = m / dt.type(c1)
        vhat = v / dt.type(c2)
        new_p[name] = p.data - dt.type(lr) * mhat / (np.sqrt(vhat) + dt.type(eps))
        new_m[name], new_v[name] = m, v
    out = ParamStore({k: Tensor(a, requires_grad=True, name=k, dtype=a.dtype) for k, a in new_p.items()},
                     params.seed)
    return out, OptimState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# checkpoint io


def _u32(x: int) -> bytes:
    return struct.pack("<I", x)


def _config_block(ckpt: Checkpoint) -> bytes:
    block = {
        "model": ckpt.model_config.to_dict(),
        "train": asdict(ckpt.train_config),
        "step": ckpt.step,
        "adam_t": ckpt.optim.t,
        "param_seed": ckpt.params.seed,
        "rng": ckpt.rng_state,
    }
    return json.dumps(block, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_u32(VERSION))
    cfg = _config_block(ckpt)
    buf.write(_u32(len(cfg)))
    buf.write(cfg)
    tensors = list(ckpt.params.arrays().items())
    tensors += [(f"adam.m.{k}", a) for k, a in ckpt.optim.m.items()]
    tensors += [(f"adam.v.{k}", a) for k, a in ckpt.optim.v.items()]
    buf.write(_u32(len(tensors)))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        buf.write(_u32(len(raw)))
        buf.write(raw)
        buf.write(_u32(arr.ndim))
        for d in arr.shape:
            buf.write(_u32(d))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + _u32(zlib.crc32(body))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    r = _Reader(body)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    cfg = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
    if r.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes")

    model_config = ModelConfig.from_dict(cfg["model"])
    if expected_config is not None and expected_config != model_config:
        raise ConfigConflictError(
            f"{path}: checkpoint model config {model_config} conflicts with requested {expected_config}")
    m = {k[len("adam.m."):]: a for k, a in tensors.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v."):]: a for k, a in tensors.items() if k.startswith("adam.v.")}
    p = {k: a for k, a in tensors.items() if not k.startswith("adam.")}
    params = ParamStore.from_arrays(p, cfg["param_seed"], dtype=np.float32)
    return Checkpoint(model_config, TrainConfig(**cfg["train"]), params, OptimState(m, v, cfg["adam_t"]),
                      cfg["rng"], cfg["step"])


# ---------------------------------------------------------------------------
# training loop


def _batch(pairs, cfg: TrainConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    hazy, clean = [], []
    for _ in range(cfg.batch):
        _, c, h = pairs[int(rng.integers(len(pairs)))]
        ch, cw = c.shape[1:]
        if cfg.patch > min(ch, cw):
            raise ValueError(f"patch {cfg.patch} exceeds image {ch}x{cw}")
        offset = (int(rng.integers(ch - cfg.patch + 1)), int(rng.integers(cw - cfg.patch + 1)))
        c, h = crop(c, offset, cfg.patch), crop(h, offset, cfg.patch)
        if cfg.augment:
            k, flip = draw_dihedral(rng)
            c, h = dihedral(c, k, flip), dihedral(h, k, flip)
        clean.append(c)
        hazy.append(h)
    return np.stack(hazy), np.stack(clean)


def checkpoint_path(out, step: int) -> Path:
    out = Path(out)
    return out.with_name(f"{out.stem}.step{step:06d}{out.suffix}")


def loss_log_path(out) -> Path:
    out = Path(out)
    return out.with_name(f"{out.stem}.loss.csv")


def _base_output(path) -> Path:
    """``run.step002500.ckpt`` -> ``run.ckpt``."""
    path = Path(path)
    return path.with_name(re.sub(r"\.step\d+$", "", path.stem) + path.suffix)


def _prepare_log(path: Path, start: int, previous: Path | None = None):
    rows = []
    if start > 0:
        source = path if path.exists() else previous
        if source is None or not source.exists():
            raise CheckpointError(f"cannot resume loss log: {path} not found")
        with open(source, newline="") as fh:
            rows = [r for r in csv.reader(fh)][1:]
        rows = [r for r in rows if int(r[0]) < start]
        if len(rows) != start:
            raise CheckpointError(f"loss log {source} has {len(rows)} rows before step {start}")
    fh = open(path, "w", newline="")
    w = csv.writer(fh)
    w.writerow(["step", "lr", "l1"])
    w.writerows(rows)
    return fh, w


def train(model_config: ModelConfig, train_config: TrainConfig, dataset, out,
          resume=None, pairs=None, progress: Callable[[int, float], None] | None = None) -> tuple[Checkpoint, list[float]]:
    """Train from scratch or from ``resume`` and write the final checkpoint to ``out``.

    ``pairs`` may pass preloaded ``(name, clean, hazy)`` triples instead of
    reading ``dataset``. Returns the final checkpoint and the losses of the
    steps run in this call. The loss log goes next to ``out``.
    """
    if pairs is None:
        pairs = load_dataset(dataset)
    if not pairs:
        raise ValueError(f"dataset {dataset} is empty")
    side = min(min(c.shape[1:]) for _, c, _ in pairs)
    if train_config.patch > side:
        log.warning("patch %d exceeds the smallest image side; using %d", train_config.patch, side)
        train_config = replace(train_config, patch=side)
    T = train_config.steps
    if resume is not None:
        ck = load_checkpoint(resume, expected_config=model_config)
        if ck.train_config.trajectory_key() != train_config.trajectory_key():
            raise ConfigConflictError(f"{resume}: training config {ck.train_config} differs from {train_config}")
        params, state, start = ck.params, ck.optim, ck.step
        rng = np.random.default_rng()
        rng.bit_generator.state = ck.rng_state
    else:
        params = init_params(model_config, train_config.seed)
        state = OptimState.zeros_like(params)
        start = 0
        rng = np.random.default_rng(train_config.seed)

    out = Path(out)
    previous = loss_log_path(_base_output(resume)) if resume is not None else None
    fh, writer = _prepare_log(loss_log_path(out), start, previous)
    losses = []
    try:
        for step in range(start, T):
            hazy, clean = _batch(pairs, train_config, rng)
            lr = cosine_lr(step, T, train_config.lr)
            with GradTape() as tape:
                tape.watch(params.tensors)
                pred, _ = ffa_forward(Tensor(hazy), params, model_config)
                loss = l1_loss(pred, Tensor(clean))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            grads = backward(loss, tape)
            params, state = adam_step(params, grads, state, lr, train_config.beta1,
                                      train_config.beta2, train_config.eps)
            writer.writerow([step, repr(lr), repr(value)])
            losses.append(value)
            if progress is not None:
                progress(step, value)
            done = step + 1
            if train_config.checkpoint_every and done % train_config.checkpoint_every == 0 and done < T:
                fh.flush()
                save_checkpoint(Checkpoint(model_config, train_config, params, state,
                                           rng.bit_generator.state, done), checkpoint_path(out, done))
    finally:
        fh.close()
    final = Checkpoint(model_config, train_config, params, state, rng.bit_generator.state, T)
    save_checkpoint(final, out)
    log.info("finished %d steps, final l1 %.5f", T, losses[-1] if losses else float("nan"))
    return final, losses


def dehaze(params: ParamStore, config: ModelConfig, hazy: np.ndarray):
    """Run the network on one (3, H, W) image; returns (clamped output, maps)."""
    out, maps = ffa_forward(Tensor(hazy[None]), params, config)
    return np.clip(out.data[0], 0.0, 1.0), maps
