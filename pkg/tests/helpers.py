"""Shared oracles and input builders for the test suite."""

import json

import numpy as np

from relitanim.training import TrainBatch


def kink_aware_diff(f, param: np.ndarray, h: float = 1e-3, fine: float = 1e-6):
    """Central differences for piecewise-linear nets.

    ``f()`` returns ``(value, pattern)`` where ``pattern`` is the boolean
    activation pattern. An entry whose +-h stencil keeps the pattern is
    differenced at ``h``; an entry whose stencil crosses a kink (where the
    derivative is undefined at that scale) is re-differenced at ``fine``.
    Returns ``(grad, n_fine)``.
    """
    _, base = f()
    grad = np.zeros_like(param)
    flat, gflat = param.reshape(-1), grad.reshape(-1)
    n_fine = 0
    for i in range(flat.size):
        old = flat[i]
        for step in (h, fine):
            flat[i] = old + step
            up, p_up = f()
            flat[i] = old - step
            down, p_down = f()
            flat[i] = old
            if np.array_equal(p_up, base) and np.array_equal(p_down, base):
                break
            n_fine += step == h
        gflat[i] = (up - down) / (2 * step)
    return grad, n_fine


def activation_pattern(cache) -> np.ndarray:
    return np.concatenate([(pre > 0).ravel() for _, pre in cache])


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def conv_loop(x, weight, bias, stride):
    """Nested-loop same-padded convolution (NCHW) used as an oracle."""
    n, c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    p = k // 2
    ho, wo = (h + 2 * p - k) // stride + 1, (w + 2 * p - k) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for b in range(n):
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = bias[o]
                    for c in range(c_in):
                        for dy in range(k):
                            for dx in range(k):
                                y, xx = i * stride + dy - p, j * stride + dx - p
                                if 0 <= y < h and 0 <= xx < w:
                                    acc += weight[o, c, dy, dx] * x[b, c, y, xx]
                    out[b, o, i, j] = acc
    return out


def random_batch(seed: int, b: int = 2, frames: int = 2, latent: int = 2, channels: int = 4) -> TrainBatch:
    rng = np.random.default_rng(seed)
    image = latent * 8
    return TrainBatch(
        rng.standard_normal((b, frames, latent, latent, channels)),
        rng.uniform(0, 1, (b, frames, 3, image, image)),
        rng.uniform(0, 1, (b, 1, 3, image, image)),
        (rng.random((b, frames, latent, latent)) < 0.5).astype(np.float64),
    )


def write_driving(path, n, n_expr=3, seed=0):
    rng = np.random.default_rng(seed)
    frames = [
        {"rotation": [0.0, 0.05 * i, 0.0], "translation": [0.0, 0.01 * i, 0.0],
         "expression": rng.normal(0, 0.5, n_expr).tolist()}
        for i in range(n)
    ]
    path.write_text(json.dumps(frames))
    return path
