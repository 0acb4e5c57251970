"""Losses, a toy conditioned denoiser and its self-supervised training loop.

The toy denoiser mirrors the conditioning topology of the full system at
desk scale: its input is ``[noisy latent || masked reference latent ||
sqrt(abar_t)]``, and the fused adapter guidance is added to the output of its
first convolution. Training draws (alpha, beta) in {0, 1}^2 per sample so the
denoiser sees shading-only, reference-only, both and neither.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

import numpy as np

from . import toylatent
from .adapters import (
    AdapterNet,
    ConvLayer,
    FusionCoefficients,
    adapter_forward,
    backprop_layers,
    build_adapter,
    conv2d,
    conv2d_backward,
    fuse,
    init_conv,
    leaky_relu,
    leaky_relu_grad,
    prepare_reference_latent,
    run_layers,
)
from .diffusion import NoiseSchedule, forward_diffuse, make_schedule
from .face import PoseParams, build_model, forward
from .raster import Camera, render_shading_hints
from .sh import SHCoefficients


class TrainingDivergedError(RuntimeError):
    pass


def _residual(eps, eps_pred) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if eps.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch {eps.shape} vs {eps_pred.shape}")
    return eps - eps_pred


def _broadcast_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask must be binary")
    m = m.astype(np.float64)
    if m.ndim == len(shape) - 1:
        m = m[..., None]
    try:
        return np.broadcast_to(m, shape)
    except ValueError:
        raise ValueError(f"mask shape {np.shape(mask)} does not broadcast to {shape}") from None


def ldm_loss(eps, eps_pred) -> float:
    """Mean squared noise-prediction error."""
    r = _residual(eps, eps_pred)
    return float(np.mean(r * r))


def masked_loss(eps, eps_pred, mask) -> float:
    """Mean over all elements of ((1 - M) * residual)^2; M = 1 entries contribute nothing."""
    r = _residual(eps, eps_pred)
    keep = 1.0 - _broadcast_mask(mask, r.shape)
    rm = keep * r
    return float(np.mean(rm * rm))


def total_loss(eps, eps_pred, mask) -> float:
    return masked_loss(eps, eps_pred, mask) + ldm_loss(eps, eps_pred)


def total_loss_grad(eps, eps_pred, mask) -> np.ndarray:
    """d total_loss / d eps_pred."""
    r = _residual(eps, eps_pred)
    keep = 1.0 - _broadcast_mask(mask, r.shape)
    return -2.0 * (r + keep * keep * r) / r.size


# --------------------------------------------------------------------------- model


@dataclass
class ToyModel:
    denoiser: list[ConvLayer]  # first conv (guidance injected after it), mid conv, output conv
    shading: AdapterNet
    reference: AdapterNet

    def copy(self) -> ToyModel:
        return ToyModel(
            [ConvLayer(l.weight.copy(), l.bias.copy(), l.stride, l.activation) for l in self.denoiser],
            self.shading.copy(),
            self.reference.copy(),
        )

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.denoiser:
            out += [layer.weight, layer.bias]
        return out + self.shading.params() + self.reference.params()

    @property
    def feature_channels(self) -> int:
        return self.denoiser[0].weight.shape[0]

    def networks(self) -> dict[str, list[ConvLayer]]:
        return {"denoiser": self.denoiser, "shading": self.shading.layers, "reference": self.reference.layers}

    @classmethod
    def from_networks(cls, nets: dict[str, list[ConvLayer]]) -> ToyModel:
        return cls(nets["denoiser"], AdapterNet(nets["shading"]), AdapterNet(nets["reference"]))


def build_toy_model(
    latent_channels: int = toylatent.LATENT_CHANNELS,
    feature_channels: int = 16,
    adapter_channels: tuple[int, ...] = (8, 16, 16),
    seed: int = 0,
) -> ToyModel:
    rng = np.random.default_rng(seed)
    c = latent_channels
    denoiser = [
        init_conv(rng, 2 * c + 1, feature_channels, 3, 1, True),
        init_conv(rng, feature_channels, feature_channels, 3, 1, True),
        init_conv(rng, feature_channels, c, 3, 1, False),
    ]
    shading = build_adapter(feature_channels, 3, adapter_channels, seed=int(rng.integers(2**31)))
    reference = build_adapter(feature_channels, 3, adapter_channels, seed=int(rng.integers(2**31)))
    return ToyModel(denoiser, shading, reference)


def denoiser_input(z_t: np.ndarray, ref_latent: np.ndarray, sqrt_ab) -> np.ndarray:
    """(N, h, w, c) x2 plus per-sample sqrt(abar) -> (N, 2c+1, h, w)."""
    sqrt_ab = np.broadcast_to(np.asarray(sqrt_ab, dtype=np.float64).reshape(-1, 1, 1, 1), z_t.shape[:-1] + (1,))
    x = np.concatenate([z_t, ref_latent, sqrt_ab], axis=-1)
    return np.ascontiguousarray(np.moveaxis(x, -1, 1))


def denoiser_forward(layers: list[ConvLayer], x: np.ndarray, guidance: np.ndarray | None, cache: list | None = None):
    """NCHW input -> (N, h, w, c) noise prediction."""
    first, rest = layers[0], layers[1:]
    pre = conv2d(x, first.weight, first.bias, first.stride)
    if guidance is not None:
        pre = pre + guidance
    if cache is not None:
        cache.append((x, pre))
    out = run_layers(rest, leaky_relu(pre), cache)
    return np.moveaxis(out, 1, -1)


def denoiser_backward(layers: list[ConvLayer], cache: list, grad_out: np.ndarray):
    """Returns (layer grads, grad wrt guidance, grad wrt input)."""
    grads, g = backprop_layers(layers[1:], cache[1:], np.ascontiguousarray(np.moveaxis(grad_out, -1, 1)))
    x, pre = cache[0]
    g_pre = leaky_relu_grad(pre, g)
    gx, gw, gb = conv2d_backward(x, layers[0].weight, layers[0].stride, g_pre)
    return [(gw, gb)] + grads, g_pre, gx


@dataclass(frozen=True)
class ToyCondition:
    """Condition set for the toy denoiser: masked reference latent + guidance features."""

    reference_latent: np.ndarray  # (F, h, w, c)
    guidance: np.ndarray | None  # (F, C', h, w)


def toy_denoiser(model: ToyModel, schedule: NoiseSchedule):
    def denoise(z_t, t, cond: ToyCondition):
        sqrt_ab = np.full(z_t.shape[0], np.sqrt(schedule.alpha_bars[t]))
        x = denoiser_input(z_t, cond.reference_latent, sqrt_ab)
        return denoiser_forward(model.denoiser, x, cond.guidance)

    return denoise


# --------------------------------------------------------------------------- data


@dataclass(frozen=True)
class ToyDims:
    frames: int = 4
    latent: int = 8  # h = w
    channels: int = toylatent.LATENT_CHANNELS

    @property
    def image(self) -> int:
        return self.latent * toylatent.FACTOR


@dataclass
class TrainBatch:
    video_latents: np.ndarray  # (B, F, h, w, c)
    shading_hints: np.ndarray  # (B, F, 3, H, W)
    reference_frames: np.ndarray  # (B, 1, 3, H, W)
    portrait_masks: np.ndarray  # (B, F, h, w), 1 = portrait
    meta: list[dict] = field(default_factory=list)

    def __post_init__(self):
        b, f = self.video_latents.shape[:2]
        if self.shading_hints.shape[:2] != (b, f) or self.portrait_masks.shape[:2] != (b, f):
            raise ValueError("inconsistent batch/frame dims")
        if self.reference_frames.shape[:2] != (b, 1):
            raise ValueError("reference_frames must be B x 1 x 3 x H x W")
        if not np.all((self.portrait_masks == 0) | (self.portrait_masks == 1)):
            raise ValueError("portrait masks must be binary")

    @property
    def size(self) -> int:
        return self.video_latents.shape[0]


def random_lighting(rng: np.random.Generator, dc=(1.4, 2.0), spread: float = 0.25) -> SHCoefficients:
    """Gray-ish SH light whose unclamped radiance stays inside (0, 1) for unit normals."""
    c = np.zeros((9, 3))
    base = rng.uniform(*dc)
    c[0] = base * rng.uniform(0.9, 1.0, 3)
    c[1:] = rng.uniform(-spread, spread, (8, 3))
    return SHCoefficients(c)


def synth_sample(rng: np.random.Generator, dims: ToyDims, mesh_vertices: int = 162) -> dict:
    model = _sphere_model(mesh_vertices)
    light = random_lighting(rng)
    albedo = rng.uniform(0.5, 1.0, 3)
    background = rng.uniform(0.0, 0.3, 3)
    start = np.array([*rng.uniform(-0.3, 0.3, 2), 0.0])
    velocity = np.array([*rng.uniform(-0.08, 0.08, 2), 0.0])
    spin = rng.uniform(-0.1, 0.1)
    camera = Camera.framing(dims.image, fill=0.3)
    zeros_s, zeros_e = np.zeros(model.n_shape), np.zeros(model.n_expr)
    hints, frames, masks, poses = [], [], [], []
    for i in range(dims.frames):
        pose = PoseParams([0.0, spin * i, 0.0], start + velocity * i)
        mesh = forward(model, zeros_s, pose, zeros_e)
        fr = render_shading_hints(mesh, camera, light, (dims.image, dims.image))
        hints.append(np.moveaxis(fr.image, -1, 0))
        frames.append(toylatent.compose_portrait(fr.image, fr.mask, albedo, background))
        masks.append(toylatent.downsample_mask(fr.mask))
        poses.append(pose)
    frames = np.stack(frames)
    return {
        "latents": toylatent.encode(frames),
        "hints": np.stack(hints),
        "reference": frames[:1],
        "masks": np.stack(masks).astype(np.float64),
        "meta": {"lighting": light, "poses": poses, "camera": camera, "albedo": albedo, "background": background},
    }


_SPHERES: dict[int, object] = {}


def _sphere_model(m: int):
    if m not in _SPHERES:
        _SPHERES[m] = build_model(m, 1, 1, seed=0)
    return _SPHERES[m]


def synth_dataset(seed: int, count: int, dims: ToyDims = ToyDims(), batch_size: int = 2) -> Iterator[TrainBatch]:
    """``count`` batches of procedural SH-lit sphere videos; deterministic per seed."""
    if dims.image > 64:
        raise ValueError("synthetic data is limited to 64x64 images")
    rng = np.random.default_rng(seed)
    for _ in range(count):
        samples = [synth_sample(rng, dims) for _ in range(batch_size)]
        yield TrainBatch(
            np.stack([s["latents"] for s in samples]),
            np.stack([s["hints"] for s in samples]),
            np.stack([s["reference"] for s in samples]),
            np.stack([s["masks"] for s in samples]),
            [s["meta"] for s in samples],
        )


def prefetch(items: Iterable, depth: int = 2) -> Iterator:
    """Produce ``items`` on a background thread through a bounded queue; order preserved."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()

    def worker():
        try:
            for item in items:
                q.put(item)
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)
        q.put(done)

    threading.Thread(target=worker, daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            return
        if isinstance(item, BaseException):
            raise item
        yield item


# --------------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 0.05
    schedule: NoiseSchedule = field(default_factory=make_schedule)
    mask_polarity: str = "portrait"  # "portrait": M = 1 on the portrait; "background": M inverted
    fusion_probs: tuple[float, float] = (0.5, 0.5)  # P(alpha = 1), P(beta = 1)
    force_coeffs: tuple[int, int] | None = None

    def __post_init__(self):
        if self.mask_polarity not in ("portrait", "background"):
            raise ValueError("mask_polarity must be 'portrait' or 'background'")


@dataclass
class StepRecord:
    loss: float
    t: np.ndarray
    coeffs: list[FusionCoefficients]


def _draws(rng: np.random.Generator, batch: TrainBatch, settings: TrainSettings):
    # fixed draw order so runs with different conditioning stay in lockstep
    b = batch.size
    t = rng.integers(0, settings.schedule.T_steps, size=b)
    eps = rng.standard_normal(batch.video_latents.shape)
    u = rng.random((b, 2))
    if settings.force_coeffs is not None:
        coeffs = [FusionCoefficients(*settings.force_coeffs) for _ in range(b)]
    else:
        pa, pb = settings.fusion_probs
        coeffs = [FusionCoefficients(int(ua < pa), int(ub < pb)) for ua, ub in u]
    return t, eps, coeffs


def loss_and_grads(model: ToyModel, batch: TrainBatch, t, eps, coeffs, settings: TrainSettings):
    """Total loss and its gradient for every parameter (same order as ``model.params()``)."""
    b, f, h, w, c = batch.video_latents.shape
    schedule = settings.schedule
    z0 = batch.video_latents
    z_t = np.stack([forward_diffuse(z0[i], int(t[i]), eps[i], schedule) for i in range(b)])
    ref = np.stack([prepare_reference_latent(z0[i, :1], batch.portrait_masks[i, 0], f) for i in range(b)])
    sqrt_ab = np.repeat(np.sqrt(schedule.alpha_bars[t]), f)
    x = denoiser_input(z_t.reshape(b * f, h, w, c), ref.reshape(b * f, h, w, c), sqrt_ab)

    cf = model.feature_channels
    use_s = any(k.alpha for k in coeffs)
    use_r = any(k.beta for k in coeffs)
    s_cache: list = []
    r_cache: list = []
    F_s = F_r = None
    if use_s:
        hints = batch.shading_hints.reshape((b * f,) + batch.shading_hints.shape[2:])
        F_s = run_layers(model.shading.layers, hints, s_cache).reshape(b, f, cf, h, w)
    if use_r:
        F_r = run_layers(model.reference.layers, batch.reference_frames[:, 0], r_cache)  # (B, C', h, w)
    guidance = None
    if use_s or use_r:
        guidance = np.stack([
            fuse(
                None if F_s is None else F_s[i],
                None if F_r is None else np.repeat(F_r[i : i + 1], f, axis=0),
                coeffs[i],
                shape=(f, cf, h, w),
            )
            for i in range(b)
        ]).reshape(b * f, cf, h, w)

    d_cache: list = []
    pred = denoiser_forward(model.denoiser, x, guidance, d_cache).reshape(z0.shape)
    portrait = batch.portrait_masks
    loss_mask = portrait if settings.mask_polarity == "portrait" else 1.0 - portrait
    loss = total_loss(eps, pred, loss_mask)

    g_pred = total_loss_grad(eps, pred, loss_mask).reshape(b * f, h, w, c)
    d_grads, g_guid, _ = denoiser_backward(model.denoiser, d_cache, g_pred)
    g_guid = g_guid.reshape(b, f, cf, h, w)

    def zero_grads(net: AdapterNet):
        return [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]

    s_grads = zero_grads(model.shading)
    r_grads = zero_grads(model.reference)
    if use_s:
        alpha = np.array([k.alpha for k in coeffs], dtype=np.float64)[:, None, None, None, None]
        s_grads, _ = backprop_layers(model.shading.layers, s_cache, (alpha * g_guid).reshape(b * f, cf, h, w))
    if use_r:
        beta = np.array([k.beta for k in coeffs], dtype=np.float64)[:, None, None, None]
        r_grads, _ = backprop_layers(model.reference.layers, r_cache, beta * g_guid.sum(axis=1))

    grads = []
    for gw, gb in d_grads + s_grads + r_grads:
        grads += [gw, gb]
    return loss, grads


def train_step(model: ToyModel, batch: TrainBatch, rng: np.random.Generator, settings: TrainSettings = TrainSettings()):
    """One plain gradient-descent step. Returns ``(new_model, StepRecord)``."""
    t, eps, coeffs = _draws(rng, batch, settings)
    loss, grads = loss_and_grads(model, batch, t, eps, coeffs, settings)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss} at timesteps {t.tolist()}")
    new = model.copy()
    for p, g in zip(new.params(), grads):
        p -= settings.lr * g
    return new, StepRecord(loss, t, coeffs)


def train(
    model: ToyModel,
    batches: Iterable[TrainBatch],
    seed: int,
    settings: TrainSettings = TrainSettings(),
) -> tuple[ToyModel, list[float]]:
    rng = np.random.default_rng(seed)
    losses = []
    for step, batch in enumerate(prefetch(batches)):
        try:
            model, rec = train_step(model, batch, rng, settings)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"step {step}: {exc}") from None
        losses.append(rec.loss)
    return model, losses


def with_lr(settings: TrainSettings, lr: float) -> TrainSettings:
    return replace(settings, lr=lr)
