"""
Training a small dehazer and scoring it
=======================================

L1 loss, Adam and a cosine-annealed learning rate on random 48x48 patches.
This run is deliberately short; pass a larger step count as the second
argument for a stronger model.
"""

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from ffalab.haze import load_dataset, write_dataset
from ffalab.metrics import psnr, ssim
from ffalab.model import ModelConfig
from ffalab.trainer import TrainConfig, dehaze, train

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ffalab-train-"))
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 400

# %%
write_dataset(out / "data", count=24, size=(64, 64), seed=11)
pairs = load_dataset(out / "data")
train_pairs, held_out = pairs[:20], pairs[20:]

model = ModelConfig(groups=1, blocks_per_group=4, channels=16, reduction_ratio=4)
config = TrainConfig(steps=steps, lr=1e-4, batch=2, patch=48, seed=0)


def report(step, loss):
    if step % 100 == 0:
        print(f"step {step:5d}  l1 {loss:.4f}")


ckpt, losses = train(model, config, None, out / "model.ckpt", pairs=train_pairs, progress=report)

# %%
# Held-out images: the dehazed output against the hazy input, both scored
# against the clean image.
for name, clean, hazy in held_out:
    restored, _ = dehaze(ckpt.params, model, hazy)
    print(f"{name}: hazy {psnr(hazy, clean):6.2f} dB / {ssim(hazy, clean):.3f}   "
          f"dehazed {psnr(restored, clean):6.2f} dB / {ssim(restored, clean):.3f}")

# %%
# A loss curve, if matplotlib is installed.
try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib not installed; skipping the plot")
else:
    smooth = np.convolve(losses, np.ones(20) / 20, mode="valid")
    plt.plot(losses, alpha=0.3, label="L1")
    plt.plot(np.arange(19, len(losses)), smooth, label="20-step mean")
    plt.xlabel("step")
    plt.legend()
    plt.savefig(out / "loss.png", dpi=100)
    print("loss curve:", out / "loss.png")
