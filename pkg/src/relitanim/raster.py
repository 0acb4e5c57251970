"""Z-buffered rasterization of SH-shaded meshes into shading hints.

Vertices are projected with a weak-perspective camera and snapped to a
1/256-pixel fixed-point grid; coverage is decided with exact integer edge
functions (pixel centers at +0.5, top-left fill rule). Back faces are culled.
Per-pixel normals are barycentric blends of vertex normals, renormalized and
shaded with :func:`relitanim.sh.shade_batch`. Background stays black.

The triangle-fill loop runs in a compiled extension when it is available and
falls back to a numpy implementation otherwise. Set ``RELITANIM_PURE_PYTHON=1``
to force the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _raster_py
from .face import Mesh
from .sh import SHCoefficients, shade_batch

SUBPIXEL = 256

try:
    if os.environ.get("RELITANIM_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from . import _raster_ext
except ImportError:
    _raster_ext = None

BACKEND = "compiled" if _raster_ext is not None else "python"


def get_kernel(backend: str | None = None):
    """Return the triangle-fill kernel for ``backend`` ("compiled"/"python")."""
    backend = backend or BACKEND
    if backend == "compiled":
        if _raster_ext is None:
            raise RuntimeError("compiled raster kernel is not built")
        return _raster_ext.rasterize
    if backend == "python":
        return _raster_py.rasterize
    raise ValueError(f"unknown raster backend {backend!r}")


@dataclass(frozen=True)
class Camera:
    """Weak-perspective camera: pixel = scale * (x, y) + center, depth = -z."""

    scale: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("camera scale must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @classmethod
    def framing(cls, resolution: int, fill: float = 0.4) -> Camera:
        """Camera that maps the unit sphere to ``fill * resolution`` pixels radius, centered."""
        return cls(fill * resolution, (resolution / 2.0, resolution / 2.0))


def project(camera: Camera, v) -> tuple[np.ndarray, float | np.ndarray]:
    v = np.asarray(v, dtype=np.float64)
    pixel = camera.scale * v[..., :2] + np.asarray(camera.center)
    return pixel, -v[..., 2]


@dataclass(frozen=True)
class ShadingFrame:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) bool, True on portrait pixels
    depth: np.ndarray  # (H, W), +inf off the mesh
    normals: np.ndarray  # (H, W, 3) interpolated unit normals, zero off the mesh


def _snap(camera: Camera, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # scale term and center snapped separately so integer center shifts are exact
    xy = np.rint(vertices[:, :2] * (camera.scale * SUBPIXEL)).astype(np.int64)
    cx, cy = (int(np.rint(c * SUBPIXEL)) for c in camera.center)
    return np.ascontiguousarray(xy[:, 0] + cx), np.ascontiguousarray(xy[:, 1] + cy)


def rasterize_mesh(mesh: Mesh, camera: Camera, resolution: tuple[int, int], backend: str | None = None):
    """Coverage pass: (depth, triangle id, barycentric weights) buffers."""
    height, width = resolution
    vertices = np.asarray(mesh.vertices, dtype=np.float64)
    faces = np.ascontiguousarray(np.asarray(mesh.faces, dtype=np.int64).reshape(-1, 3))
    if len(vertices) == 0 or len(faces) == 0:
        return (
            np.full((height, width), np.inf),
            np.full((height, width), -1, dtype=np.int64),
            np.zeros((height, width, 3)),
        )
    xs, ys = _snap(camera, vertices)
    depth = np.ascontiguousarray(-vertices[:, 2])
    return get_kernel(backend)(xs, ys, depth, faces, height, width, SUBPIXEL)


def render_shading_hints(
    mesh: Mesh,
    camera: Camera,
    light: SHCoefficients,
    resolution: tuple[int, int] = (512, 512),
    backend: str | None = None,
) -> ShadingFrame:
    height, width = resolution
    if height < 16 or width < 16:
        raise ValueError("resolution must be at least 16x16")
    zbuf, tri, wts = rasterize_mesh(mesh, camera, resolution, backend)
    mask = tri >= 0
    image = np.zeros((height, width, 3))
    normals = np.zeros((height, width, 3))
    if mask.any():
        f = np.asarray(mesh.faces, dtype=np.int64)[tri[mask]]
        vn = np.asarray(mesh.normals, dtype=np.float64)
        w = wts[mask]
        n = w[:, 0:1] * vn[f[:, 0]] + w[:, 1:2] * vn[f[:, 1]] + w[:, 2:3] * vn[f[:, 2]]
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        normals[mask] = n
        image[mask] = shade_batch(n, light)
    return ShadingFrame(image, mask, zbuf, normals)
