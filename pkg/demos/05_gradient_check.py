"""The encoder is trained with hand-written backprop; here is the evidence it is right.

Central differences on every weight of a small net are compared with the
analytic gradient of the prototypical episode loss under both metrics.

    python demos/05_gradient_check.py
"""
import numpy as np

from sprint import numkernel as nk
from sprint.protocore import episode_loss

rng = np.random.default_rng(0)
params = nk.init_encoder(6, (8, 8), 4, rng)
ys, yq = np.repeat([0, 1, 2], 3), np.repeat([0, 1, 2], 4)
x = rng.standard_normal((len(ys) + len(yq), 6))
h = 1e-5

for metric in ("euclidean", "cosine"):
    def loss_of(p):
        z = nk.forward(p, x)[0]
        return episode_loss(z[: len(ys)], ys, z[len(ys):], yq, metric)

    z, tape = nk.forward(params, x)
    loss = loss_of(params)
    grads = nk.param_arrays(nk.backward(tape, np.vstack([loss.grad_support, loss.grad_query])))
    print(f"{metric}: loss {loss.value:.4f}")
    for name, arr in nk.param_arrays(params).items():
        flat, worst = arr.reshape(-1), 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_of(params).value
            flat[i] = orig - h
            down = loss_of(params).value
            flat[i] = orig
            num, ana = (up - down) / (2 * h), grads[name].reshape(-1)[i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
        print(f"  {name:<3} {arr.size:>3} entries, max relative error {worst:.1e}")
