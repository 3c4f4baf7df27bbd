"""
Checking hand-written gradients
===============================

Every gradient in the package comes from a hand-written backward pass, so
the first thing to trust is that backward agrees with finite differences.
"""

import numpy as np

from entityaug.nn import Activation, MlpSpec, bce_with_logits, check_gradients, mlp_init

# a small net: 5 inputs, a LeakyReLU hidden layer, 3 logits
spec = MlpSpec([5, 4, 3], [Activation.LEAKY_RELU, Activation.IDENTITY])
model = mlp_init(spec, seed=0)

x = np.random.default_rng(0).normal(size=(2, 5))
target = np.array([[1.0, 0.0, 0.0], [0.25, 0.75, 0.0]])  # soft targets are fine
logits, tape = model.forward(x)
loss, dlogits = bce_with_logits(logits, target)
dx = model.backward(tape, dlogits)
print("loss", loss)
print("gradient w.r.t. the input (what a host would send back):")
print(dx)

# check_gradients perturbs every parameter by +-h and compares
for seed in range(5):
    err = check_gradients(MlpSpec([8, 6, 4, 2], [Activation.RELU, Activation.LEAKY_RELU, Activation.IDENTITY]), seed)
    print(f"seed {seed}: max relative error {err:.2e}")
