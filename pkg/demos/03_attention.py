"""
Feature attention inside the network
====================================

Channel attention rescales each feature channel by a learned weight in (0, 1);
pixel attention rescales each location by a map shared by all channels.
"""

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from ffalab.model import (ModelConfig, channel_attention, ffa_forward, init_params, param_count,
                          pixel_attention, zero_params)
from ffalab.tensor import Tensor

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ffalab-attn-"))

# %%
# Parameter counts: the full-size network and a desk-sized one.
full = ModelConfig()
small = ModelConfig(groups=3, blocks_per_group=2, channels=16, reduction_ratio=4)
print(f"G=3 B=19 C=64: {param_count(full):,} parameters")
print(f"G=3 B=2  C=16: {param_count(small):,} parameters")

# %%
# The attention modules on a random feature map.
params = init_params(small, seed=0)
rng = np.random.default_rng(0)
F = Tensor(rng.standard_normal((1, 16, 12, 12)).astype(np.float32))
w, _ = channel_attention(F, params, "group0.block0.ca")
m, y = pixel_attention(F, params, "group0.block0.pa")
print("channel weights", w.shape, np.round(w.numpy().ravel()[:6], 3))
print("pixel map", m.shape, "range", float(m.numpy().min()), float(m.numpy().max()))

# %%
# Pixel attention is a per-location scale: dividing the output by the input
# gives the same map in every channel.
ratio = y.numpy() / F.numpy()
print("channel spread of out/in:", float(np.ptp(ratio, axis=1).max()))

# %%
# With every parameter zero the residual paths make the network an exact
# identity: the output is the hazy input, bit for bit.
hazy = Tensor(rng.uniform(0, 1, (1, 3, 12, 12)).astype(np.float32))
ident, _ = ffa_forward(hazy, zero_params(small), small)
print("zero-parameter identity:", ident.numpy().tobytes() == hazy.numpy().tobytes())

# %%
# The maps from a forward pass can be written out as PGM images plus a text
# table of channel weights.
from ffalab.model import export_attention_maps  # noqa: E402

_, maps = ffa_forward(hazy, params, small)
files = export_attention_maps(maps, out / "attn")
print("exported:", [f.name for f in files])
