"""Linear blendshape head model with a rigid pose.

    V = R(p) @ (template + shape_basis . s + expr_basis . e) + t(p)

The template is a unit icosphere; bases are smooth seeded fields built from
low-order spherical harmonics of the template directions. This stands in for
a full FLAME asset: same (s, p, e) -> m x 3 interface, no skinning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .sh import sh_basis_batch

MODEL_FORMAT_VERSION = 1
BASIS_BOUND = 0.1


def icosphere_vertex_count(subdivisions: int) -> int:
    return 10 * 4**subdivisions + 2


@lru_cache(maxsize=8)
def _icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts)
    f = np.array(faces, dtype=np.int64)
    # winding is counter-clockwise seen from outside: face normals point outward
    return v, f


def icosphere(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere with exactly ``m`` vertices (m = 10*4^k + 2)."""
    k = 0
    while icosphere_vertex_count(k) < m:
        k += 1
    if icosphere_vertex_count(k) != m:
        raise ValueError(
            f"m={m} is not an icosphere vertex count (12, 42, 162, 642, 2562, ...)"
        )
    v, f = _icosphere(k)
    return v.copy(), f.copy()


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PoseParams:
    """Rigid head pose: axis-angle rotation (radians) and translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation)
        if r.shape != (3,) or t.shape != (3,):
            raise ValueError("rotation and translation must be 3-vectors")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> PoseParams:
        return cls()

    def matrix(self) -> np.ndarray:
        return Rotation.from_rotvec(np.array(self.rotation)).as_matrix()

    def __add__(self, other: PoseParams) -> PoseParams:
        return PoseParams(self.rotation + other.rotation, self.translation + other.translation)

    def __sub__(self, other: PoseParams) -> PoseParams:
        return PoseParams(self.rotation - other.rotation, self.translation - other.translation)

    def __eq__(self, other):
        if not isinstance(other, PoseParams):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


@dataclass(frozen=True)
class ParametricFaceModel:
    template: np.ndarray  # (m, 3)
    faces: np.ndarray  # (n_faces, 3) int
    shape_basis: np.ndarray  # (m, 3, n_shape)
    expr_basis: np.ndarray  # (m, 3, n_expr)

    def __post_init__(self):
        template = _frozen(self.template)
        faces = _frozen(self.faces, np.int64)
        sb = _frozen(self.shape_basis)
        eb = _frozen(self.expr_basis)
        m = template.shape[0]
        if template.ndim != 2 or template.shape[1] != 3:
            raise ValueError("template must be m x 3")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError("faces must be n x 3")
        if faces.size and (faces.min() < 0 or faces.max() >= m):
            raise ValueError("face index out of range")
        for name, b in (("shape_basis", sb), ("expr_basis", eb)):
            if b.ndim != 3 or b.shape[:2] != (m, 3) or b.shape[2] < 1:
                raise ValueError(f"{name} must be m x 3 x k with k >= 1")
            if not np.all(np.isfinite(b)):
                raise ValueError(f"{name} contains non-finite values")
        for k, v in (("template", template), ("faces", faces), ("shape_basis", sb), ("expr_basis", eb)):
            object.__setattr__(self, k, v)

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def n_expr(self) -> int:
        return self.expr_basis.shape[2]

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "template": self.template.tolist(),
            "faces": self.faces.tolist(),
            "shape_basis": self.shape_basis.tolist(),
            "expr_basis": self.expr_basis.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> ParametricFaceModel:
        version = data.get("version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version!r}")
        return cls(
            np.asarray(data["template"]),
            np.asarray(data["faces"], dtype=np.int64),
            np.asarray(data["shape_basis"]),
            np.asarray(data["expr_basis"]),
        )


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    flagged: tuple[int, ...] = ()  # vertices whose incident faces are all degenerate

    def to_obj(self) -> str:
        lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in self.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.faces]
        return "\n".join(lines) + "\n"

    def write_obj(self, path) -> None:
        Path(path).write_text(self.to_obj())


def build_model(m: int = 642, n_shape: int = 100, n_expr: int = 50, seed: int = 0) -> ParametricFaceModel:
    """Deterministic toy model: unit icosphere + smooth random bases in [-0.1, 0.1]."""
    if m < 12:
        raise ValueError(f"m must be >= 12, got {m}")
    if n_shape < 1 or n_expr < 1:
        raise ValueError("basis dimensions must be positive")
    template, faces = icosphere(m)
    rng = np.random.default_rng(seed)
    harmonics = sh_basis_batch(template)  # (m, 9)

    def smooth_basis(k: int) -> np.ndarray:
        out = np.empty((m, 3, k))
        for j in range(k):
            field_ = harmonics @ rng.standard_normal((9, 3))
            peak = np.abs(field_).max()
            out[:, :, j] = field_ * (BASIS_BOUND * rng.uniform(0.5, 1.0) / peak)
        return out

    return ParametricFaceModel(template, faces, smooth_basis(n_shape), smooth_basis(n_expr))


def save_model(model: ParametricFaceModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path) -> ParametricFaceModel:
    """Load a serialized model, or build one from a description JSON.

    A description is ``{"m": .., "n_shape": .., "n_expr": .., "seed": ..}``.
    """
    data = json.loads(Path(path).read_text())
    if "template" in data:
        return ParametricFaceModel.from_dict(data)
    unknown = set(data) - {"m", "n_shape", "n_expr", "seed"}
    if unknown:
        raise ValueError(f"unknown model description keys: {sorted(unknown)}")
    return build_model(**data)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Area-weighted vertex normals.

    Returns ``(normals, flagged)``. Vertices with no non-degenerate incident
    face are listed in ``flagged`` and given the normal (0, 0, 1).
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    acc = np.zeros_like(vertices)
    if len(faces):
        v0, v1, v2 = (vertices[faces[:, i]] for i in range(3))
        # cross product magnitude = 2 * area, so this is area weighting
        fn = np.cross(v1 - v0, v2 - v0)
        for i in range(3):
            np.add.at(acc, faces[:, i], fn)
    norms = np.linalg.norm(acc, axis=1)
    bad = norms == 0.0
    normals = np.empty_like(acc)
    normals[~bad] = acc[~bad] / norms[~bad, None]
    normals[bad] = (0.0, 0.0, 1.0)
    return normals, np.flatnonzero(bad).tolist()


def _check_params(model: ParametricFaceModel, s, e) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if s.shape != (model.n_shape,):
        raise ValueError(f"shape coefficients: expected ({model.n_shape},), got {s.shape}")
    if e.shape != (model.n_expr,):
        raise ValueError(f"expression coefficients: expected ({model.n_expr},), got {e.shape}")
    return s, e


def unposed_vertices(model: ParametricFaceModel, s, e) -> np.ndarray:
    s, e = _check_params(model, s, e)
    return model.template + model.shape_basis @ s + model.expr_basis @ e


def forward(model: ParametricFaceModel, s, pose: PoseParams, e) -> Mesh:
    """Posed mesh for shape ``s``, pose ``pose`` and expression ``e``."""
    v = unposed_vertices(model, s, e)
    v = v @ pose.matrix().T + pose.translation
    normals, flagged = vertex_normals(v, model.faces)
    return Mesh(v, model.faces, normals, tuple(flagged))
