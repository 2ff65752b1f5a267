"""A tiny regression with the flat-parameter MLP, checked against finite differences.

Run: python3 demos/01_mlp_from_scratch.py
"""
import numpy as np

from aerofed.checks import gradcheck_one
from aerofed.nn import MlpSpec, Net, mlp_backward

rng = np.random.default_rng(0)

# Fit y = sin(3x) on [-1, 1] with a 1-16-16-1 tanh network.
spec = MlpSpec.build(1, (16, 16), 1, "tanh", "linear")
net = Net.create(spec, seed=0, lr=1e-2)
print(f"{spec.layer_sizes} network, {spec.n_params} parameters")

x = rng.uniform(-1, 1, size=(256, 1))
y = np.sin(3 * x)
for step in range(2001):
    pred = net(x)
    grad, _ = mlp_backward(spec, net.params, x, 2 * (pred - y) / len(x))
    net.apply_grad(grad, max_norm=10.0)
    if step % 500 == 0:
        print(f"step {step:4d}  mse {np.mean((pred - y) ** 2):.5f}")

# The analytic gradients agree with central differences.
res = gradcheck_one(spec, seed=1)
print(f"gradient check: worst relative error {max(res.max_rel_param, res.max_rel_input):.2e}")
