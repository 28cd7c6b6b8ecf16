"""Independent reference computations used by the test-suite.

Nothing here calls into bound propagation; attacks only use forward passes
and input gradients.
"""

import numpy as np

from reaas.nn import forward, input_gradient


def slow_forward(weights, biases, x):
    """Straight-line matrix-vector evaluation with Python loops."""
    h = list(map(float, x))
    for k, (W, b) in enumerate(zip(weights, biases)):
        out = []
        for i in range(len(b)):
            s = float(b[i])
            for j in range(len(h)):
                s += float(W[i][j]) * h[j]
            out.append(s)
        h = [max(v, 0.0) for v in out] if k < len(weights) - 1 else out
    return np.array(h)


def sample_ball(rng, center, rho, n, boundary=False):
    """Uniform samples from (or on the surface of) an l2 ball."""
    d = len(center)
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.full((n, 1), rho) if boundary else rho * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return center + radii * dirs


def project(delta, eps):
    norms = np.linalg.norm(delta, axis=1, keepdims=True)
    return delta * np.minimum(1.0, eps / np.maximum(norms, 1e-300))


def _margin_grad(logits, label):
    other = logits.copy()
    other[:, label] = -np.inf
    j = np.argmax(other, axis=1)
    g = np.zeros_like(logits)
    g[:, label] = 1.0
    g[np.arange(len(j)), j] = -1.0
    return g


def pgd_flip(nets, x, label, eps, restarts=200, steps=20, seed=0):
    """Projected-gradient search for a label flip of the composed ``nets``.

    ``nets`` is a list of networks applied in sequence with no activation
    between them. Returns True when some perturbation within ``eps`` changes
    the argmax. Includes random starts and the final random points.
    """
    rng = np.random.default_rng(seed)
    delta = sample_ball(rng, np.zeros_like(x), eps, restarts)
    step = 2.5 * eps / steps

    def run(X):
        hs = [X]
        for n in nets:
            hs.append(forward(n, hs[-1]))
        return hs

    for _ in range(steps + 1):
        hs = run(x + delta)
        if np.any(np.argmax(hs[-1], axis=1) != label):
            return True
        g = -_margin_grad(hs[-1], label)
        for n, h in zip(reversed(nets), reversed(hs[:-1])):
            g = input_gradient(n, h, g)
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        delta = project(delta + step * g, eps)
    return False


def pgd_feature_distance(encoder, x, eps, restarts=200, steps=20, seed=0):
    """Largest ``||f(x+d) - f(x)||`` found by PGD within ``||d|| <= eps``."""
    rng = np.random.default_rng(seed)
    fx = forward(encoder, x)
    delta = sample_ball(rng, np.zeros_like(x), eps, restarts)
    step = 2.5 * eps / steps
    best = 0.0
    for _ in range(steps + 1):
        diff = forward(encoder, x + delta) - fx
        best = max(best, float(np.linalg.norm(diff, axis=1).max()))
        g = input_gradient(encoder, x + delta, diff)
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        delta = project(delta + step * g, eps)
    return best


def finite_difference(f, params, eps=1e-4):
    """Central differences of scalar ``f(params)`` for every array entry."""
    grads = []
    for W, b in params:
        gs = []
        for arr in (W, b):
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + eps
                up = f(params)
                arr[idx] = old - eps
                down = f(params)
                arr[idx] = old
                g[idx] = (up - down) / (2 * eps)
            gs.append(g)
        grads.append(tuple(gs))
    return grads


def random_relu_net(rng, sizes, scale=1.0):
    from reaas.nn import AffineLayer, AffineNetwork

    layers = [
        AffineLayer(scale * rng.standard_normal((b, a)) / np.sqrt(a), 0.3 * rng.standard_normal(b))
        for a, b in zip(sizes[:-1], sizes[1:])
    ]
    return AffineNetwork(tuple(layers))
