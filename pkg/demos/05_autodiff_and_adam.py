"""The numeric core: reverse-mode gradients, LeakyReLU networks and Adam.

Everything the model trains with is built from these pieces. This demo checks
one gradient against central differences and fits a tiny network to a
nonlinear curve.
"""

# %%
import numpy as np

from laser.core import AdamState, SeededRng, Var, adam_step, init_mlp, mlp_forward, sample_standard_normal
from laser.core import square, value_and_gradients

rng = SeededRng(0)
x = np.linspace(-2, 2, 64).reshape(-1, 1)
y = np.sin(2 * x) + 0.1 * sample_standard_normal(rng, x.shape)
net = init_mlp((1, 16, 16, 1), rng)


def mse(p):
    return square(mlp_forward(p, Var(x)) - y).mean()


# %%
# gradient of one weight, analytic vs numeric
value, (grad,) = value_and_gradients(mse, [net])
w = net.weights[1].copy()
h = 1e-6
w[3, 2] += h
up = float(mse(net.with_arrays([net.weights[0], net.biases[0], w, net.biases[1], net.weights[2], net.biases[2]]).map(Var)).value)
w[3, 2] -= 2 * h
down = float(mse(net.with_arrays([net.weights[0], net.biases[0], w, net.biases[1], net.weights[2], net.biases[2]]).map(Var)).value)
print("d loss / d W1[3,2]: autodiff %.8f  central difference %.8f" % (grad.weights[1][3, 2], (up - down) / (2 * h)))

# %%
state = AdamState.zeros_like(net.arrays(), lr=1e-2)
for step in range(1500):
    loss, (g,) = value_and_gradients(mse, [net])
    arrays, state = adam_step(net.arrays(), g.arrays(), state)
    net = net.with_arrays(arrays)
    if step % 300 == 0:
        print("step %4d  mse %.4f" % (step, loss))
print("final mse %.4f (noise variance 0.01)" % float(mse(net.map(Var)).value))
