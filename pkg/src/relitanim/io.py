"""File formats: PNG/PPM images, raw float dumps with JSON sidecars, CSV curves."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image: np.ndarray) -> None:
    """(H, W, 3) or (3, H, W) float image in [0, 1] -> 8-bit RGB PNG."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 3 and image.shape[-1] != 3:
        image = np.moveaxis(image, 0, -1)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def write_mask_png(path, mask: np.ndarray) -> None:
    """Binary mask -> single-channel PNG with values {0, 255}."""
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path, format="PNG")


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 portable pixmap, for golden-image comparisons."""
    data = to_uint8(np.asarray(image))
    h, w, _ = data.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError("not an 8-bit P6 pixmap")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def read_image(path, size: int | None = None) -> np.ndarray:
    """RGB image as (3, H, W) floats in [0, 1], optionally resized to size x size."""
    img = Image.open(path).convert("RGB")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return np.moveaxis(np.asarray(img, dtype=np.float64) / 255.0, -1, 0)


def write_depth(path, depth: np.ndarray) -> None:
    """Little-endian float32 dump ``<path>.f32`` with JSON header ``<path>.json``."""
    path = Path(path)
    depth = np.asarray(depth)
    path.with_suffix(".f32").write_bytes(depth.astype("<f4").tobytes())
    header = {"H": depth.shape[0], "W": depth.shape[1], "dtype": "float32", "endianness": "little"}
    path.with_suffix(".json").write_text(json.dumps(header))


def read_depth(path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.with_suffix(".f32").read_bytes(), dtype="<f4")
    return data.reshape(header["H"], header["W"]).astype(np.float64)


def write_latents(path, latents: np.ndarray) -> None:
    """(frames, h, w, c) latents as raw little-endian float32 plus a JSON sidecar."""
    path = Path(path)
    latents = np.asarray(latents)
    if latents.ndim != 4:
        raise ValueError("latents must be frames x h x w x c")
    f, h, w, c = latents.shape
    path.with_suffix(".f32").write_bytes(latents.astype("<f4").tobytes())
    path.with_suffix(".json").write_text(json.dumps({"frames": f, "h": h, "w": w, "c": c}))


def read_latents(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.with_suffix(".f32").read_bytes(), dtype="<f4")
    return data.reshape(meta["frames"], meta["h"], meta["w"], meta["c"]).astype(np.float64)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(losses):
            writer.writerow([i, repr(float(loss))])
