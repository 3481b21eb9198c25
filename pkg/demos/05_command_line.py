"""
The command-line workflow
=========================

The same pipeline through the ``ffalab`` command: synthesize, train, dehaze
with attention export, evaluate. Each call below is equivalent to running
``ffalab <args>`` in a shell.
"""

# %%
import shlex
import sys
import tempfile
from pathlib import Path

from ffalab.cli import main

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ffalab-cli-"))


def run(cmd):
    print("$ ffalab", cmd)
    code = main(shlex.split(cmd))
    print("exit", code, "\n")
    return code


# %%
run(f"synth --out {out}/data --count 6 --size 32x32 --seed 7")

# %%
# A tiny model; the loss log lands next to the checkpoint as model.loss.csv.
run(f"train --data {out}/data --out {out}/model.ckpt --steps 50 --patch 32 "
    "--groups 1 --blocks 2 --channels 16 --reduction 4 --checkpoint-every 25")

# %%
# Resuming from the halfway checkpoint reproduces the same final file.
run(f"train --data {out}/data --out {out}/resumed.ckpt --steps 50 --patch 32 "
    f"--groups 1 --blocks 2 --channels 16 --reduction 4 --checkpoint-every 25 --resume {out}/model.step000025.ckpt")
print("resume identical:", (out / "model.ckpt").read_bytes() == (out / "resumed.ckpt").read_bytes())

# %%
run(f"dehaze --ckpt {out}/model.ckpt --in {out}/data/hazy/0000.ppm --out {out}/0000.dehazed.ppm --attn {out}/attn")

# %%
run(f"eval --ckpt {out}/model.ckpt --hazy {out}/data/hazy --gt {out}/data/clean --report {out}/report.csv")

# %%
# Validation errors exit with status 2.
run(f"synth --out {out}/bad --beta-min 0.3 --beta-max 0.2")
