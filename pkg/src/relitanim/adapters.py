"""Convolutional adapters, guidance fusion and reference-latent plumbing.

Images and features use NCHW layout; latents use (frames, h, w, c).
Convolutions are same-padded (pad = k // 2) and lowered to a single matrix
product over im2col patch columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LEAKY_SLOPE = 0.2
WEIGHTS_FORMAT_VERSION = 1


def leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def leaky_relu_grad(pre: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return np.where(pre > 0, grad, LEAKY_SLOPE * grad)


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv_output_size(n: int, k: int, stride: int) -> int:
    return (n + 2 * (k // 2) - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Padded (N, C, H, W) -> (C, k, k, N, ho, wo) patch columns."""
    n, c = xp.shape[:2]
    cols = np.empty((c, k, k, n, ho, wo))
    xt = xp.transpose(1, 0, 2, 3)
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = xt[:, :, dy : dy + stride * ho : stride, dx : dx + stride * wo : stride]
    return cols


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    n, c_in, h, w = x.shape
    c_out, c_in_w, k, _ = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"conv expects {c_in_w} input channels, got {c_in}")
    ho, wo = conv_output_size(h, k, stride), conv_output_size(w, k, stride)
    cols = _im2col(_pad(x, k // 2), k, stride, ho, wo).reshape(c_in * k * k, n * ho * wo)
    out = weight.reshape(c_out, -1) @ cols + bias[:, None]
    return out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)


def conv2d_backward(x: np.ndarray, weight: np.ndarray, stride: int, grad_out: np.ndarray):
    """Returns (grad_x, grad_weight, grad_bias)."""
    n, c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    p = k // 2
    ho, wo = grad_out.shape[2:]
    xp = _pad(x, p)
    cols = _im2col(xp, k, stride, ho, wo).reshape(c_in * k * k, n * ho * wo)
    g = grad_out.transpose(1, 0, 2, 3).reshape(c_out, n * ho * wo)
    gw = (g @ cols.T).reshape(weight.shape)
    gcols = (weight.reshape(c_out, -1).T @ g).reshape(c_in, k, k, n, ho, wo)
    gxp = np.zeros((c_in, n) + xp.shape[2:])
    for dy in range(k):
        for dx in range(k):
            gxp[:, :, dy : dy + stride * ho : stride, dx : dx + stride * wo : stride] += gcols[:, dy, dx]
    gb = grad_out.sum(axis=(0, 2, 3))
    gx = gxp.transpose(1, 0, 2, 3)
    gx = gx[:, :, p : p + h, p : p + w] if p else gx
    return np.ascontiguousarray(gx), gw, gb


@dataclass
class ConvLayer:
    weight: np.ndarray  # (out, in, k, k)
    bias: np.ndarray  # (out,)
    stride: int = 1
    activation: bool = True  # leaky rectifier after the conv

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    def spec(self) -> dict:
        c_out, c_in, k, _ = self.weight.shape
        return {"in": c_in, "out": c_out, "kernel": k, "stride": self.stride, "activation": self.activation}


def init_conv(rng: np.random.Generator, c_in: int, c_out: int, k: int, stride: int, activation: bool) -> ConvLayer:
    fan_in = c_in * k * k
    gain = 2.0 / (1.0 + LEAKY_SLOPE**2) if activation else 1.0
    w = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(gain / fan_in)
    b = rng.standard_normal(c_out) * 0.01
    return ConvLayer(w, b, stride, activation)


def run_layers(layers: list[ConvLayer], x: np.ndarray, cache: list | None = None) -> np.ndarray:
    for layer in layers:
        pre = conv2d(x, layer.weight, layer.bias, layer.stride)
        if cache is not None:
            cache.append((x, pre))
        x = leaky_relu(pre) if layer.activation else pre
    return x


def backprop_layers(layers: list[ConvLayer], cache: list, grad: np.ndarray):
    """Reverse pass over ``run_layers``; returns (grads per layer, grad wrt input)."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        x, pre = cache[i]
        if layer.activation:
            grad = leaky_relu_grad(pre, grad)
        grad, gw, gb = conv2d_backward(x, layer.weight, layer.stride, grad)
        grads[i] = (gw, gb)
    return grads, grad


@dataclass
class AdapterNet:
    """Downsampling conv stack mapping images to first-layer-shaped features."""

    layers: list[ConvLayer] = field(default_factory=list)

    @property
    def downsample(self) -> int:
        f = 1
        for layer in self.layers:
            f *= layer.stride
        return f

    @property
    def in_channels(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.layers[-1].weight.shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def copy(self) -> AdapterNet:
        return AdapterNet(
            [ConvLayer(l.weight.copy(), l.bias.copy(), l.stride, l.activation) for l in self.layers]
        )


def build_adapter(
    out_channels: int = 64,
    in_channels: int = 3,
    channels: tuple[int, ...] = (16, 32, 64),
    seed: int = 0,
) -> AdapterNet:
    """Three stride-2 3x3 stages, a stride-1 3x3 stage to ``out_channels``, then a linear 1x1 projection."""
    rng = np.random.default_rng(seed)
    layers = []
    c = in_channels
    for c_next in channels:
        layers.append(init_conv(rng, c, c_next, 3, 2, True))
        c = c_next
    layers.append(init_conv(rng, c, out_channels, 3, 1, True))
    layers.append(init_conv(rng, out_channels, out_channels, 1, 1, False))
    return AdapterNet(layers)


def _check_input(net: AdapterNet, x: np.ndarray) -> None:
    if x.ndim != 4:
        raise ValueError(f"adapter input must be F x C x H x W, got {x.shape}")
    if x.shape[1] != net.in_channels:
        raise ValueError(f"adapter expects {net.in_channels} channels, got {x.shape[1]}")
    d = net.downsample
    if x.shape[2] % d or x.shape[3] % d:
        raise ValueError(f"adapter input spatial dims {x.shape[2:]} not divisible by {d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("adapter input contains non-finite values")


def adapter_forward(net: AdapterNet, x: np.ndarray) -> np.ndarray:
    """F x C x H x W images -> F x C' x H/8 x W/8 features."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(net, x)
    return run_layers(net.layers, x)


def adapter_backward(net: AdapterNet, x: np.ndarray, upstream: np.ndarray):
    """Exact gradients of ``sum(upstream * adapter_forward(net, x))``.

    Returns ``(weight_grads, input_grad)`` with one ``(dW, db)`` pair per layer.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_input(net, x)
    cache: list = []
    out = run_layers(net.layers, x, cache)
    if upstream.shape != out.shape:
        raise ValueError(f"upstream grad shape {upstream.shape} != output shape {out.shape}")
    return backprop_layers(net.layers, cache, upstream)


def reference_features(net: AdapterNet, reference: np.ndarray, frames: int) -> np.ndarray:
    """Features of a single reference image duplicated ``frames`` times.

    The net is frame-wise, so running it once and tiling equals running it on
    ``frames`` identical copies.
    """
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim == 3:
        reference = reference[None]
    if reference.shape[0] != 1:
        raise ValueError("reference must be a single frame")
    return np.repeat(adapter_forward(net, reference), frames, axis=0)


@dataclass(frozen=True)
class FusionCoefficients:
    alpha: int
    beta: int

    def __post_init__(self):
        if self.alpha not in (0, 1) or self.beta not in (0, 1):
            raise ValueError("fusion coefficients must be 0 or 1")


def fuse(F_s, F_r, coeffs: FusionCoefficients, shape=None) -> np.ndarray:
    """Guidance features alpha * F_s + beta * F_r; absent features count as zero."""
    if coeffs.alpha and F_s is None:
        raise ValueError("alpha = 1 but shading features are absent")
    if coeffs.beta and F_r is None:
        raise ValueError("beta = 1 but reference features are absent")
    if F_s is not None and F_r is not None and np.shape(F_s) != np.shape(F_r):
        raise ValueError(f"feature shapes differ: {np.shape(F_s)} vs {np.shape(F_r)}")
    if shape is None:
        present = F_s if F_s is not None else F_r
        if present is None:
            raise ValueError("both features absent; pass shape for the zero guidance")
        shape = np.shape(present)
    terms = [F for c, F in ((coeffs.alpha, F_s), (coeffs.beta, F_r)) if c]
    if not terms:
        return np.zeros(shape)
    out = np.array(terms[0], dtype=np.float64, copy=True)
    for F in terms[1:]:
        out += F
    return out


def prepare_reference_latent(ref_latent: np.ndarray, portrait_mask: np.ndarray, frames: int) -> np.ndarray:
    """Zero portrait pixels (mask == 1) of a 1 x h x w x c latent and replicate per frame."""
    ref_latent = np.asarray(ref_latent, dtype=np.float64)
    if ref_latent.ndim == 3:
        ref_latent = ref_latent[None]
    mask = np.asarray(portrait_mask)
    if ref_latent.shape[0] != 1 or mask.shape != ref_latent.shape[1:3]:
        raise ValueError(f"mask {mask.shape} does not match latent {ref_latent.shape}")
    masked = np.where(mask.astype(bool)[None, :, :, None], 0.0, ref_latent)
    return np.repeat(masked, frames, axis=0)


def concat_condition(noisy: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """(F, h, w, c) noise latent || (F, h, w, c) reference -> (F, h, w, 2c)."""
    if noisy.shape != reference.shape:
        raise ValueError(f"shape mismatch {noisy.shape} vs {reference.shape}")
    return np.concatenate([noisy, reference], axis=-1)


def save_networks(path, networks: dict[str, list[ConvLayer]], extra: dict | None = None) -> None:
    """Flat little-endian float64 blob ``<path>.bin`` plus JSON manifest ``<path>.json``."""
    path = Path(path)
    manifest = {"version": WEIGHTS_FORMAT_VERSION, "dtype": "<f8", "networks": {}, **(extra or {})}
    chunks = []
    offset = 0
    for name, layers in networks.items():
        entries = []
        for layer in layers:
            entry = layer.spec()
            for key, arr in (("weight", layer.weight), ("bias", layer.bias)):
                entry[key] = {"offset": offset, "shape": list(arr.shape)}
                chunks.append(np.ascontiguousarray(arr, dtype="<f8").ravel())
                offset += arr.size
            entries.append(entry)
        manifest["networks"][name] = entries
    blob = np.concatenate(chunks) if chunks else np.zeros(0, "<f8")
    path.with_suffix(".bin").write_bytes(blob.tobytes())
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))


def load_networks(path) -> tuple[dict[str, list[ConvLayer]], dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("version") != WEIGHTS_FORMAT_VERSION:
        raise ValueError(f"unsupported weights version {manifest.get('version')!r}")
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    nets = {}
    for name, entries in manifest["networks"].items():
        layers = []
        for e in entries:
            arrs = []
            for key in ("weight", "bias"):
                off, shape = e[key]["offset"], e[key]["shape"]
                size = int(np.prod(shape))
                arrs.append(blob[off : off + size].reshape(shape).astype(np.float64))
            layers.append(ConvLayer(arrs[0], arrs[1], e["stride"], e["activation"]))
        nets[name] = layers
    return nets, manifest
