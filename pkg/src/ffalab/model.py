"""Feature fusion attention network for single-image dehazing.

The network is a pure function of an input batch and a :class:`ParamStore`.
Parameter names are hierarchical, e.g. ``group0.block3.ca.conv1.weight``.

Layout::

    hazy -> shallow conv -> G groups (B blocks + conv + skip)
         -> concat group outputs -> [fusion attention] -> conv
         -> two reconstruction convs -> + hazy
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_channels,
    conv2d,
    global_avg_pool,
    mul_broadcast,
    relu,
    sigmoid,
)

__all__ = [
    "ModelConfig",
    "ParamStore",
    "AttentionMaps",
    "layer_specs",
    "init_params",
    "zero_params",
    "param_count",
    "channel_attention",
    "pixel_attention",
    "feature_attention",
    "basic_block",
    "group_forward",
    "ffa_forward",
    "export_attention_maps",
]


@dataclass(frozen=True)
class ModelConfig:
    groups: int = 3
    blocks_per_group: int = 19
    channels: int = 64
    reduction_ratio: int = 8
    ca_kernel: int = 1
    pa_kernel: int = 3
    use_fa: bool = True
    use_lrl: bool = True
    use_ffa: bool = True
    # bottleneck divisor of the fusion attention; None reuses reduction_ratio
    fusion_reduction: int | None = None

    def __post_init__(self):
        if self.groups < 1 or self.blocks_per_group < 1:
            raise ValueError("groups and blocks_per_group must be >= 1")
        if not 1 <= self.reduction_ratio <= self.channels:
            raise ValueError("need 1 <= reduction_ratio <= channels")
        if self.channels % self.reduction_ratio:
            raise ValueError(f"channels {self.channels} not divisible by reduction {self.reduction_ratio}")
        if self.ca_kernel != 1:
            raise ValueError("channel attention kernel is fixed at 1")
        if self.pa_kernel < 1 or self.pa_kernel % 2 == 0:
            raise ValueError("pa_kernel must be a positive odd number")
        fr = self.fusion_ratio
        if fr < 1 or (self.groups * self.channels) % fr:
            raise ValueError(f"fusion reduction {fr} does not divide {self.groups * self.channels}")

    @property
    def fusion_ratio(self) -> int:
        return self.reduction_ratio if self.fusion_reduction is None else self.fusion_reduction

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**d)

    def with_switches(self, *, fa: bool, lrl: bool, ffa: bool) -> "ModelConfig":
        return replace(self, use_fa=fa, use_lrl=lrl, use_ffa=ffa)


@dataclass
class ParamStore(Mapping):
    """Ordered name -> Tensor mapping of learnable parameters."""

    tensors: dict[str, Tensor]
    seed: int | None = None

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def numel(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], seed: int | None = None, dtype=None) -> "ParamStore":
        return cls({k: Tensor(v, requires_grad=True, name=k, dtype=dtype) for k, v in arrays.items()}, seed)

    def astype(self, dtype) -> "ParamStore":
        return ParamStore.from_arrays(self.arrays(), self.seed, dtype=dtype)


@dataclass
class AttentionMaps:
    """Attention weights captured during a forward pass (numpy arrays).

    Group entries come from the feature attention of the last block of each
    group. ``group_ca[g]`` is N x C x 1 x 1 and ``group_pa[g]`` is N x 1 x H x W.
    """

    group_ca: list[np.ndarray] = field(default_factory=list)
    group_pa: list[np.ndarray] = field(default_factory=list)
    fusion_ca: np.ndarray | None = None
    fusion_pa: np.ndarray | None = None

    def all_values(self) -> Iterator[np.ndarray]:
        yield from self.group_ca
        yield from self.group_pa
        if self.fusion_ca is not None:
            yield self.fusion_ca
        if self.fusion_pa is not None:
            yield self.fusion_pa


# ---------------------------------------------------------------------------
# parameters


def _attention_specs(prefix, c, hidden, pa_k):
    return [
        (f"{prefix}.ca.conv1", c, hidden, 1),
        (f"{prefix}.ca.conv2", hidden, c, 1),
        (f"{prefix}.pa.conv1", c, hidden, pa_k),
        (f"{prefix}.pa.conv2", hidden, 1, pa_k),
    ]


def layer_specs(config: ModelConfig) -> list[tuple[str, int, int, int]]:
    """Every conv layer as ``(name, in_channels, out_channels, kernel)`` in init order."""
    c = config.channels
    hidden = c // config.reduction_ratio
    specs = [("shallow", 3, c, 3)]
    for g in range(config.groups):
        for b in range(config.blocks_per_group):
            pre = f"group{g}.block{b}"
            specs += [(f"{pre}.conv1", c, c, 3), (f"{pre}.conv2", c, c, 3)]
            if config.use_fa:
                specs += _attention_specs(pre, c, hidden, config.pa_kernel)
        specs.append((f"group{g}.tail", c, c, 3))
    gc = config.groups * c
    if config.use_ffa:
        specs += _attention_specs("fusion", gc, gc // config.fusion_ratio, config.pa_kernel)
    specs += [("fusion.conv", gc, c, 3), ("recon.conv1", c, c, 3), ("recon.conv2", c, 3, 3)]
    return specs


def init_params(config: ModelConfig, seed: int) -> ParamStore:
    """Uniform(+-sqrt(1/fan_in)) weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, cin, cout, k in layer_specs(config):
        bound = math.sqrt(1.0 / (k * k * cin))
        arrays[f"{name}.weight"] = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        arrays[f"{name}.bias"] = np.zeros(cout)
    return ParamStore.from_arrays(arrays, seed)


def zero_params(config: ModelConfig) -> ParamStore:
    arrays = {}
    for name, cin, cout, k in layer_specs(config):
        arrays[f"{name}.weight"] = np.zeros((cout, cin, k, k))
        arrays[f"{name}.bias"] = np.zeros(cout)
    return ParamStore.from_arrays(arrays, None)


def param_count(config: ModelConfig) -> int:
    """Closed-form number of learnable scalars."""
    c, G, B = config.channels, config.groups, config.blocks_per_group
    h = c // config.reduction_ratio
    p2 = config.pa_kernel ** 2

    def conv(k2, cin, cout):
        return k2 * cin * cout + cout

    # CA: 1x1 C->h->C; PA: k x k C->h->1
    fa = 2 * c * h + h + c + p2 * (c * h + h) + h + 1
    block = 2 * conv(9, c, c) + (fa if config.use_fa else 0)
    total = conv(9, 3, c) + G * (B * block + conv(9, c, c))
    gc = G * c
    if config.use_ffa:
        hg = gc // config.fusion_ratio
        total += 2 * gc * hg + hg + gc + p2 * (gc * hg + hg) + hg + 1
    total += conv(9, gc, c) + conv(9, c, c) + conv(9, c, 3)
    return total


# ---------------------------------------------------------------------------
# forward pass


def _conv(x: Tensor, params: Mapping[str, Tensor], name: str) -> Tensor:
    return conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], padding="same")


def channel_attention(F: Tensor, params: Mapping[str, Tensor], prefix: str = "ca") -> tuple[Tensor, Tensor]:
    """Per-channel weights from pooled features; returns ``(weights, weights * F)``."""
    if F.shape[1] != params[f"{prefix}.conv1.weight"].shape[1]:
        raise ShapeError(f"{prefix}: input has {F.shape[1]} channels")
    g = global_avg_pool(F)
    w = sigmoid(_conv(relu(_conv(g, params, f"{prefix}.conv1")), params, f"{prefix}.conv2"))
    return w, mul_broadcast(F, w)


def pixel_attention(Fs: Tensor, params: Mapping[str, Tensor], prefix: str = "pa") -> tuple[Tensor, Tensor]:
    """Single-channel spatial map shared by all channels; returns ``(map, map * Fs)``."""
    if Fs.shape[1] != params[f"{prefix}.conv1.weight"].shape[1]:
        raise ShapeError(f"{prefix}: input has {Fs.shape[1]} channels")
    m = sigmoid(_conv(relu(_conv(Fs, params, f"{prefix}.conv1")), params, f"{prefix}.conv2"))
    return m, mul_broadcast(Fs, m)


def feature_attention(F: Tensor, params: Mapping[str, Tensor], prefix: str, enabled: bool = True):
    """Channel attention followed by pixel attention.

    Returns ``(out, ca_weights, pa_map)``; when disabled the input passes
    through and both maps are None.
    """
    if not enabled:
        return F, None, None
    ca, Fs = channel_attention(F, params, f"{prefix}.ca")
    pa, out = pixel_attention(Fs, params, f"{prefix}.pa")
    return out, ca, pa


def basic_block(x: Tensor, params: Mapping[str, Tensor], config: ModelConfig, prefix: str = "block",
                _maps: list | None = None) -> Tensor:
    y = relu(_conv(x, params, f"{prefix}.conv1"))
    if config.use_lrl:
        y = add(y, x)
    y = _conv(y, params, f"{prefix}.conv2")
    y, ca, pa = feature_attention(y, params, prefix, config.use_fa)
    if _maps is not None:
        _maps.append((ca, pa))
    if config.use_lrl:
        y = add(y, x)
    return y


def group_forward(x: Tensor, params: Mapping[str, Tensor], config: ModelConfig, prefix: str = "group0",
                  _maps: list | None = None) -> Tensor:
    y = x
    for b in range(config.blocks_per_group):
        y = basic_block(y, params, config, f"{prefix}.block{b}", _maps)
    return add(_conv(y, params, f"{prefix}.tail"), x)


def ffa_forward(hazy: Tensor, params: Mapping[str, Tensor], config: ModelConfig) -> tuple[Tensor, AttentionMaps]:
    """Dehaze a batch (N x 3 x H x W). The output is not clamped."""
    if hazy.ndim != 4 or hazy.shape[1] != 3:
        raise ShapeError(f"expected N x 3 x H x W input, got {hazy.shape}")
    if min(hazy.shape[2:]) < config.pa_kernel:
        raise ShapeError(f"spatial size {hazy.shape[2:]} smaller than pa_kernel {config.pa_kernel}")
    maps = AttentionMaps()
    x = _conv(hazy, params, "shallow")
    outs = []
    for g in range(config.groups):
        block_maps: list = []
        x = group_forward(x, params, config, f"group{g}", block_maps)
        outs.append(x)
        ca, pa = block_maps[-1]
        if ca is not None:
            maps.group_ca.append(ca.data)
            maps.group_pa.append(pa.data)
    y = concat_channels(outs)
    y, ca, pa = feature_attention(y, params, "fusion", config.use_ffa)
    if ca is not None:
        maps.fusion_ca, maps.fusion_pa = ca.data, pa.data
    y = _conv(y, params, "fusion.conv")
    y = _conv(_conv(y, params, "recon.conv1"), params, "recon.conv2")
    return add(y, hazy), maps


# ---------------------------------------------------------------------------
# attention export


def export_attention_maps(maps: AttentionMaps, directory, sample: int = 0) -> list[Path]:
    """Write group pixel maps, the channel-weight strip and a text table.

    Files: ``pa_group{g}.pgm`` per group, ``ca_strip.pgm`` (G x C) and
    ``ca_weights.txt`` (one row of C weights per group).
    """
    from .ppm import write_pgm

    if not maps.group_ca:
        raise ValueError("attention maps are empty (feature attention disabled?)")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for g, pa in enumerate(maps.group_pa):
        path = out / f"pa_group{g}.pgm"
        write_pgm(pa[sample, 0], path)
        written.append(path)
    strip = np.stack([ca[sample, :, 0, 0] for ca in maps.group_ca])
    path = out / "ca_strip.pgm"
    write_pgm(strip, path)
    written.append(path)
    path = out / "ca_weights.txt"
    with open(path, "w") as fh:
        fh.write("# group " + " ".join(f"c{i}" for i in range(strip.shape[1])) + "\n")
        for g, row in enumerate(strip):
            fh.write(f"{g} " + " ".join(f"{v:.6f}" for v in row) + "\n")
    written.append(path)
    return written


def read_weight_table(path) -> np.ndarray:
    """Inverse of the ``ca_weights.txt`` writer."""
    rows = np.loadtxt(path, comments="#", ndmin=2)
    return rows[:, 1:]
