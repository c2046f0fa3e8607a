"""Tour of the reverse-mode autodiff core.

Builds a small computation by hand, checks the tape gradient against
central finite differences, then fits a least-squares problem with the
bundled Adam optimizer. Everything prints; nothing is plotted.
"""

import numpy as np

from durflow import numerics as nm


def main():
    rng = np.random.default_rng(0)

    # --- a scalar loss through a few ops ------------------------------
    x = nm.parameter(rng.normal(size=(4, 3)))
    w = nm.parameter(rng.normal(size=(3, 2)))

    def loss_fn():
        h = nm.relu(nm.matmul(x, w))
        return nm.mean(nm.mul(h, h))

    with nm.record() as tape:
        loss = loss_fn()
    tape.backward(loss)
    print(f"loss = {loss.item():.6f}")

    # central finite differences on one entry of w
    h = 1e-6
    orig = w.data[1, 0]
    w.data[1, 0] = orig + h
    up = loss_fn().item()
    w.data[1, 0] = orig - h
    down = loss_fn().item()
    w.data[1, 0] = orig
    fd = (up - down) / (2 * h)
    print(f"dL/dw[1,0]: tape {w.grad[1, 0]:+.8f}  fd {fd:+.8f}")

    # --- Adam on y = Ax + noise ---------------------------------------
    a_true = rng.normal(size=(3, 3))
    inputs = rng.normal(size=(200, 3))
    targets = inputs @ a_true.T + 0.01 * rng.normal(size=(200, 3))

    a_hat = nm.parameter(np.zeros((3, 3)))
    opt = nm.Adam({"a": a_hat}, lr=0.05)
    x_t = nm.Tensor(inputs)
    y_t = nm.Tensor(targets)
    for step in range(300):
        with nm.record() as tape:
            pred = nm.matmul(x_t, nm.permute(a_hat, (1, 0)))
            diff = nm.sub(pred, y_t)
            loss = nm.mean(nm.mul(diff, diff))
        tape.backward(loss)
        opt.step()
        if step % 100 == 0 or step == 299:
            print(f"step {step:3d}  mse {loss.item():.6f}")

    err = np.abs(a_hat.data - a_true).max()
    print(f"max |A_hat - A| = {err:.4f} (noise floor ~0.01)")


if __name__ == "__main__":
    main()
