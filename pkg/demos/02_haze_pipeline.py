"""
Synthetic haze and its exact inverse
====================================

A clean image J becomes ``I = J t + A (1 - t)`` with transmission
``t = exp(-beta d)``. Knowing ``A`` and ``t`` recovers J, which is what makes
the synthetic data useful as an oracle.
"""

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from ffalab.haze import (apply_haze, augment, generate_sample, invert_haze, load_dataset, make_depth_map,
                         transmission, write_dataset)
from ffalab.metrics import psnr

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ffalab-haze-"))

# %%
# Depth maps come in two families. Linear depth grows down the rows; radial
# depth grows away from the center.
for kind in ("linear", "radial"):
    d = make_depth_map(kind, 5, 5, depth_scale=10.0)
    print(kind, "depth\n", np.round(d, 1))

# %%
# Round trip: haze a random image, then invert with the known parameters.
rng = np.random.default_rng(1)
J = rng.uniform(0, 1, (3, 32, 32))
t = transmission(make_depth_map("radial", 32, 32), beta=0.15)
I = apply_haze(J, 0.9, t)
print("hazy PSNR vs clean: %.2f dB" % psnr(I, J))
print("max inversion error: %.1e" % np.abs(invert_haze(I, 0.9, t) - J).max())

# %%
# Each dataset sample draws its own A and beta from a stream keyed by
# (seed, index), so sample 7 is the same no matter how many others exist.
s = generate_sample(7, seed=3, size=(32, 32))
print("sample 7:", s.params)

# %%
# On disk a dataset is three parallel folders of PPM images and metadata.
names = write_dataset(out / "data", count=4, size=(48, 48), seed=3)
print("wrote", names, "to", out / "data")
for name, clean, hazy in load_dataset(out / "data"):
    print(f"  {name}: hazy {psnr(hazy, clean):.2f} dB")

# %%
# Training augmentation applies one of the eight square symmetries; clean and
# hazy patches share the draw so they stay aligned.
patch = np.arange(16.0).reshape(1, 4, 4)
print(augment(patch, np.random.default_rng(0))[0])
