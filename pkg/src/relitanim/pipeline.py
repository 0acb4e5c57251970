"""End-to-end runs: hints, alignment, oracle sampling, toy training, relighting.

Guidance uses the condition sets c1 = F_r (reference only) and
c2 = F_s + F_r (shading + reference), so omega scales only the shading
direction. Every run writes ``manifest.json`` (config, config hash, seeds,
format versions, output file hashes); wall-clock timings go to
``timing.json`` so manifests stay byte-identical across reruns.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, toylatent
from .adapters import (
    WEIGHTS_FORMAT_VERSION,
    AdapterNet,
    adapter_forward,
    build_adapter,
    load_networks,
    prepare_reference_latent,
    save_networks,
)
from .align import AlignedSequence, align_relative, align_scale_consistent, load_driving
from .config import PipelineConfig, config_to_dict
from .diffusion import (
    GaussianOracleSpec,
    ddim_sample,
    default_step_indices,
    make_schedule,
    oracle_denoiser,
)
from .face import MODEL_FORMAT_VERSION, ParametricFaceModel, PoseParams, build_model, forward, load_model
from .io import (
    canonical_json,
    read_image,
    sha256_file,
    sha256_text,
    write_json,
    write_latents,
    write_loss_csv,
    write_mask_png,
    write_png,
)
from .raster import BACKEND, Camera, ShadingFrame, render_shading_hints
from .sh import SHCoefficients
from .training import (
    ToyCondition,
    ToyDims,
    ToyModel,
    TrainSettings,
    build_toy_model,
    synth_dataset,
    toy_denoiser,
    train,
)
from .windows import plan_windows, sample_windows

DEFAULT_MODEL = {"m": 642, "n_shape": 100, "n_expr": 50, "seed": 0}
REFERENCE_ALBEDO = (0.9, 0.75, 0.65)
REFERENCE_BACKGROUND = (0.2, 0.2, 0.2)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, frame: int | None = None):
        self.stage = stage
        self.frame = frame
        where = f"stage {stage}" + (f", frame {frame}" if frame is not None else "")
        super().__init__(f"{where}: {message}")

    def to_dict(self) -> dict:
        return {"error": "PipelineError", "stage": self.stage, "frame": self.frame, "message": str(self)}


@contextmanager
def stage(name: str, frame: int | None = None):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, f"{type(exc).__name__}: {exc}", frame) from exc


class _Timer:
    def __init__(self):
        self.records: dict[str, float] = {}

    @contextmanager
    def __call__(self, key: str):
        t0 = time.perf_counter()
        yield
        self.records[key] = self.records.get(key, 0.0) + time.perf_counter() - t0


@dataclass
class Reference:
    pose: PoseParams
    shape: np.ndarray
    lighting: SHCoefficients
    image_path: Path | None


def neutral_lighting(level: float = 0.8) -> SHCoefficients:
    c = np.zeros((9, 3))
    c[0] = level / 0.28209479177387814
    c[2] = 0.2
    return SHCoefficients(c)


def load_face_model(cfg: PipelineConfig) -> ParametricFaceModel:
    return load_model(cfg.model) if cfg.model is not None else build_model(**DEFAULT_MODEL)


def load_lighting(path) -> SHCoefficients:
    return SHCoefficients.from_dict(json.loads(Path(path).read_text()))


def load_reference(path, model: ParametricFaceModel) -> Reference:
    if path is None:
        return Reference(PoseParams(), np.zeros(model.n_shape), neutral_lighting(), None)
    path = Path(path)
    data = json.loads(path.read_text())
    unknown = set(data) - {"rotation", "translation", "shape", "lighting", "image"}
    if unknown:
        raise ValueError(f"unknown reference keys: {sorted(unknown)}")
    shape = np.asarray(data.get("shape", np.zeros(model.n_shape)), dtype=np.float64)
    light = SHCoefficients.from_dict(data["lighting"]) if "lighting" in data else neutral_lighting()
    image = data.get("image")
    if image is not None:
        image = Path(image) if Path(image).is_absolute() else path.parent / image
    pose = PoseParams(data.get("rotation", [0, 0, 0]), data.get("translation", [0, 0, 0]))
    return Reference(pose, shape, light, image)


def aligned_sequence(cfg: PipelineConfig, model: ParametricFaceModel, ref: Reference) -> AlignedSequence:
    driving = load_driving(cfg.driving)
    if len(driving.expressions[0]) != model.n_expr:
        raise ValueError(f"driving expressions have {len(driving.expressions[0])} dims, model has {model.n_expr}")
    light = load_lighting(cfg.lighting)
    if cfg.alignment == "relative":
        return align_relative(driving, ref.pose, ref.shape, light)
    return align_scale_consistent(driving, ref.shape, light)


def render_sequence(model, aligned: AlignedSequence, camera: Camera, res: int) -> list[ShadingFrame]:
    frames = []
    for i, (pose, expr) in enumerate(zip(aligned.poses, aligned.expressions)):
        with stage("render", i):
            mesh = forward(model, aligned.shape, pose, expr)
            frames.append(render_shading_hints(mesh, camera, aligned.lighting, (res, res)))
    return frames


def reference_image(model, ref: Reference, camera: Camera, res: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference portrait (3, H, W) and its portrait mask (H, W)."""
    mesh = forward(model, ref.shape, ref.pose, np.zeros(model.n_expr))
    frame = render_shading_hints(mesh, camera, ref.lighting, (res, res))
    if ref.image_path is not None:
        return read_image(ref.image_path, res), frame.mask
    return toylatent.compose_portrait(frame.image, frame.mask, REFERENCE_ALBEDO, REFERENCE_BACKGROUND), frame.mask


def _write_hints(out: Path, frames: list[ShadingFrame]) -> list[Path]:
    (out / "hints").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    written = []
    for i, fr in enumerate(frames):
        with stage("write-hints", i):
            p, q = out / "hints" / f"hint_{i:04d}.png", out / "masks" / f"mask_{i:04d}.png"
            write_png(p, fr.image)
            write_mask_png(q, fr.mask)
            written += [p, q]
    return written


def _manifest(cfg: PipelineConfig, out: Path, files: list[Path], **extra) -> dict:
    config = config_to_dict(cfg)
    manifest = {
        "package_version": __version__,
        "formats": {"model": MODEL_FORMAT_VERSION, "weights": WEIGHTS_FORMAT_VERSION, "latents": 1},
        "mode": cfg.mode,
        "config": config,
        "config_hash": sha256_text(canonical_json(config)),
        "files": {str(p.relative_to(out)): sha256_file(p) for p in sorted(files)},
        **extra,
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def _write_timing(out: Path, timer: _Timer, **extra) -> None:
    write_json(out / "timing.json", {"raster_backend": BACKEND, "seconds": timer.records, **extra})


def run_hints(cfg: PipelineConfig) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    with stage("load"):
        model = load_face_model(cfg)
        ref = load_reference(cfg.reference, model)
    with stage("align"):
        aligned = aligned_sequence(cfg, model, ref)
    with timer("render"):
        frames = render_sequence(model, aligned, Camera.framing(cfg.resolution), cfg.resolution)
    files = _write_hints(out, frames)
    _write_timing(out, timer)
    return _manifest(cfg, out, files, frames=len(frames))


def run_align(cfg: PipelineConfig) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with stage("load"):
        model = load_face_model(cfg)
        ref = load_reference(cfg.reference, model)
    with stage("align"):
        aligned = aligned_sequence(cfg, model, ref)
    path = out / "aligned.json"
    write_json(path, aligned.to_dict())
    return _manifest(cfg, out, [path], frames=len(aligned))


# ----------------------------------------------------------------------------- sampling


def oracle_projection(feature_channels: int, seed: int, latent_channels: int = toylatent.LATENT_CHANNELS) -> np.ndarray:
    rng = np.random.default_rng([seed, 3])
    return rng.standard_normal((feature_channels, latent_channels)) * (0.5 / np.sqrt(feature_channels))


def oracle_mean(projection: np.ndarray):
    """mu(condition) = masked reference latent + per-pixel projection of the guidance features.

    The result is memoized per condition object (conditions are fixed across
    all sampling steps of a window) and returned read-only.
    """
    cache: dict[int, tuple[ToyCondition, np.ndarray]] = {}

    def mu(cond: ToyCondition) -> np.ndarray:
        hit = cache.get(id(cond))
        if hit is not None and hit[0] is cond:
            return hit[1]
        out = np.array(cond.reference_latent, dtype=np.float64, copy=True)
        if cond.guidance is not None:
            out += np.moveaxis(cond.guidance, 1, -1) @ projection
        out.setflags(write=False)
        if len(cache) >= 4:
            cache.pop(next(iter(cache)))
        cache[id(cond)] = (cond, out)
        return out

    return mu


@dataclass
class Conditioning:
    F_s: np.ndarray  # (N, C', h, w)
    F_r: np.ndarray  # (1, C', h, w)
    ref_latent: np.ndarray  # (1, h, w, c) with the portrait removed


def build_conditioning(cfg: PipelineConfig, hints: list[ShadingFrame], shading: AdapterNet,
                       reference: AdapterNet, ref_img: np.ndarray, ref_mask: np.ndarray) -> Conditioning:
    feats = []
    for i, fr in enumerate(hints):
        with stage("shading-adapter", i):
            feats.append(adapter_forward(shading, np.moveaxis(fr.image, -1, 0)[None])[0])
    with stage("reference-adapter"):
        F_r = adapter_forward(reference, ref_img[None])
        lat = toylatent.encode(ref_img[None])
        ref_latent = prepare_reference_latent(lat, toylatent.downsample_mask(ref_mask), 1)
    return Conditioning(np.stack(feats), F_r, ref_latent)


def window_conditions(cond: Conditioning, start: int, end: int) -> tuple[ToyCondition, ToyCondition]:
    n = end - start
    ref = np.repeat(cond.ref_latent, n, axis=0)
    F_r = np.repeat(cond.F_r, n, axis=0)
    return ToyCondition(ref, F_r), ToyCondition(ref, cond.F_s[start:end] + F_r)


def _networks(cfg: PipelineConfig):
    if cfg.backend == "toy":
        nets, _ = load_networks(cfg.weights.with_suffix(""))
        model = ToyModel.from_networks(nets)
        return model.shading, model.reference, model
    shading = build_adapter(cfg.feature_channels, seed=cfg.seed * 2 + 1000)
    reference = build_adapter(cfg.feature_channels, seed=cfg.seed * 2 + 1001)
    return shading, reference, None


def _sample(cfg: PipelineConfig, write_frames: bool) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    res = cfg.resolution
    camera = Camera.framing(res)
    with stage("load"):
        model = load_face_model(cfg)
        ref = load_reference(cfg.reference, model)
        shading, reference, toy = _networks(cfg)
        schedule = make_schedule(cfg.schedule.T_steps, cfg.schedule.beta_start, cfg.schedule.beta_end)
    with stage("align"):
        aligned = aligned_sequence(cfg, model, ref)
    with timer("render"):
        hints = render_sequence(model, aligned, camera, res)
        with stage("reference"):
            ref_img, ref_mask = reference_image(model, ref, camera, res)
    with timer("adapters"):
        cond = build_conditioning(cfg, hints, shading, reference, ref_img, ref_mask)

    if toy is not None:
        denoiser = toy_denoiser(toy, schedule)
        mu = None
    else:
        mu = oracle_mean(oracle_projection(shading.out_channels, cfg.seed))
        denoiser = oracle_denoiser(GaussianOracleSpec(mu, cfg.sigma0), schedule)

    steps = default_step_indices(schedule, cfg.steps)
    plan = plan_windows(len(hints), cfg.window, cfg.overlap)
    h = res // toylatent.FACTOR
    window_times = []

    def sample_fn(start: int, end: int, seed: int) -> np.ndarray:
        t0 = time.perf_counter()
        with stage("sample", start):
            c1, c2 = window_conditions(cond, start, end)
            z = ddim_sample(denoiser, schedule, (end - start, h, h, toylatent.LATENT_CHANNELS),
                            c1, c2, cfg.omega, steps, seed)
        window_times.append({"window": [start, end], "seconds": time.perf_counter() - t0})
        return z

    with timer("sample"):
        latents, seeds = sample_windows(plan, sample_fn, cfg.seed)

    files = []
    with stage("write"):
        write_latents(out / "latents", latents)
        files += [out / "latents.f32", out / "latents.json"]
        if mu is not None:
            c1, c2 = window_conditions(cond, 0, len(hints))
            write_latents(out / "mu_c1", mu(c1))
            write_latents(out / "mu_c2", mu(c2))
            files += [out / "mu_c1.f32", out / "mu_c1.json", out / "mu_c2.f32", out / "mu_c2.json"]
    if write_frames:
        files += _write_hints(out, hints)
        (out / "frames").mkdir(exist_ok=True)
        decoded = toylatent.decode(latents)
        for i, img in enumerate(decoded):
            with stage("write-frames", i):
                p = out / "frames" / f"frame_{i:04d}.png"
                write_png(p, img)
                files.append(p)
        write_png(out / "reference.png", ref_img)
        files.append(out / "reference.png")
    _write_timing(out, timer, windows=window_times)
    return _manifest(
        cfg, out, files,
        frames=len(hints),
        windows=[list(w) for w in plan.windows],
        window_seeds=seeds,
        sampling_steps=[int(t) for t in steps],
    )


def run_sample(cfg: PipelineConfig) -> dict:
    """Oracle-backed sampling; writes latents plus the two condition means."""
    if cfg.backend != "oracle":
        cfg = cfg.model_copy(update={"backend": "oracle"})
    return _sample(cfg, write_frames=False)


def run_relight(cfg: PipelineConfig) -> dict:
    return _sample(cfg, write_frames=True)


def run_train(cfg: PipelineConfig) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = cfg.train
    timer = _Timer()
    dims = ToyDims(frames=tc.frames, latent=tc.latent)
    settings = TrainSettings(
        lr=tc.lr,
        schedule=make_schedule(cfg.schedule.T_steps, cfg.schedule.beta_start, cfg.schedule.beta_end),
        mask_polarity=cfg.mask_polarity,
    )
    with stage("train"), timer("train"):
        model = build_toy_model(feature_channels=tc.feature_channels, adapter_channels=tc.adapter_channels, seed=cfg.seed)
        batches = synth_dataset(cfg.seed, tc.steps, dims, tc.batch_size)
        model, losses = train(model, batches, cfg.seed, settings)
    with stage("write"):
        save_networks(out / "weights", model.networks(), {"feature_channels": model.feature_channels})
        write_loss_csv(out / "loss.csv", losses)
    _write_timing(out, timer)
    files = [out / "weights.bin", out / "weights.json", out / "loss.csv"]
    return _manifest(cfg, out, files, final_loss=losses[-1], first_loss=losses[0])


RUNNERS = {
    "relight-animate": run_relight,
    "hints-only": run_hints,
    "sample-oracle": run_sample,
    "train-toy": run_train,
}


def run(cfg: PipelineConfig) -> dict:
    return RUNNERS[cfg.mode](cfg)
