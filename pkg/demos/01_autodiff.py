"""
Reverse-mode autodiff on a small convolutional graph
====================================================

Tensors are immutable numpy arrays. Operations run eagerly and, while a
``GradTape`` is open, record how to push gradients back to their inputs.
"""

# %%
# A 3x3 convolution followed by a relu and an L1-style scalar.
import numpy as np

from ffalab.gradcheck import check_gradients
from ffalab.tensor import GradTape, Tensor, absolute, backward, conv2d, mean, relu

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 2, 6, 6)))
w = Tensor(rng.standard_normal((4, 2, 3, 3)) * 0.3, requires_grad=True, name="w")
b = Tensor(np.zeros(4), requires_grad=True, name="b")

with GradTape() as tape:
    tape.watch({"w": w, "b": b})
    loss = mean(absolute(relu(conv2d(x, w, b))))
grads = backward(loss, tape)
print("loss", loss.item())
print("dL/dw shape", grads["w"].shape, " dL/db", np.round(grads["b"], 4))

# %%
# The tape is only a recorder: the same expression outside a tape costs no
# bookkeeping and returns plain values.
print("untaped loss matches:", mean(absolute(relu(conv2d(x, w, b)))).item() == loss.item())

# %%
# Gradients can be checked against central finite differences. The check
# switches to float64 so the comparison is limited by the step size rather
# than by 32-bit round-off.
errors = check_gradients(lambda x, w, b: mean(relu(conv2d(x, w, b))),
                         {"x": x.numpy(), "w": w.numpy(), "b": b.numpy() + 0.1})
for name, err in errors.items():
    print(f"relative error d/d{name}: {err:.2e}")
