"""Tour of the numerics substrate: Values, tapes, backward, and grad checking.

Run: python3 demos/01_autodiff_and_gradients.py
"""

import numpy as np

from hfgcn.numerics import (
    Tape,
    Value,
    adam_step,
    backward,
    cross_entropy,
    grad_check,
    init_adam,
    matmul,
    mul,
    softmax_rows,
    sum_all,
    tanh,
)

rng = np.random.default_rng(0)

# Values wrap float64 arrays; ops executed inside a Tape are recorded so a
# single reverse sweep fills every .grad buffer.
w = Value(rng.standard_normal((3, 2)), requires_grad=True)
x = Value(rng.standard_normal((4, 3)))

with Tape() as tape:
    hidden = tanh(matmul(x, w))
    loss = sum_all(mul(hidden, hidden))
    backward(loss, tape)

print("loss              :", loss.item())
print("dloss/dw row 0    :", w.grad[0])

# The same computation outside a tape records nothing (evaluation mode).
probs = softmax_rows(matmul(x, w))
print("rows sum to one   :", probs.data.sum(axis=1))

# Central-difference verification of the whole pipeline, including the
# stable cross-entropy.
labels = rng.integers(0, 2, size=4)


def loss_fn():
    return cross_entropy(matmul(x, w), labels)


print("grad check        :", grad_check(loss_fn, [w], coords_per_param=6))

# A few Adam steps on f(w) = |w|^2 walk the parameter toward zero.
p = Value(np.array([[1.0, -3.0]]), requires_grad=True)
state = init_adam([p], learning_rate=0.05)
for step in range(200):
    adam_step([p], [2 * p.data], state)
print("after 200 Adam steps on w^2:", p.data)
