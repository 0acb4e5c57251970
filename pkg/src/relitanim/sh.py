"""Second-order real spherical harmonics: irradiance shading and its inverse.

Band ordering is fixed everywhere in the package::

    0: Y00                      (l=0)
    1: y   2: z   3: x          (l=1)
    4: xy  5: yz  6: 3z^2-1  7: xz  8: x^2-y^2   (l=2)

Normalization constants (7 significant digits)::

    Y00   0.2820948 = 1/2 sqrt(1/pi)
    l=1   0.4886025 = sqrt(3/(4 pi))
    xy,yz,xz   1.0925484 = 1/2 sqrt(15/pi)
    3z^2-1     0.3153916 = 1/4 sqrt(5/pi)
    x^2-y^2    0.5462742 = 1/4 sqrt(15/pi)

Coefficients are treated as already-convolved radiance weights, so shading is a
plain dot product with the basis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SH_C0 = 0.5 * np.sqrt(1.0 / np.pi)
SH_C1 = np.sqrt(3.0 / (4.0 * np.pi))
SH_C2 = 0.5 * np.sqrt(15.0 / np.pi)
SH_C3 = 0.25 * np.sqrt(5.0 / np.pi)
SH_C4 = 0.25 * np.sqrt(15.0 / np.pi)

N_COEFFS = 9
UNIT_TOL = 1e-6


class RankDeficientError(ValueError):
    """Design matrix of an SH fit does not span all nine basis functions."""

    def __init__(self, rank: int):
        self.rank = rank
        self.deficiency = N_COEFFS - rank
        super().__init__(
            f"SH design matrix has rank {rank}/{N_COEFFS}; "
            f"a {self.deficiency}-dimensional coefficient subspace is unobservable"
        )


@dataclass(frozen=True)
class SHCoefficients:
    """9x3 lighting coefficients (basis index x RGB channel)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.shape != (N_COEFFS, 3):
            raise ValueError(f"SH coefficients must be 9x3, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("SH coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls) -> SHCoefficients:
        return cls(np.zeros((N_COEFFS, 3)))

    @classmethod
    def from_gray(cls, values) -> SHCoefficients:
        """Same 9 coefficients on all three channels."""
        v = np.asarray(values, dtype=np.float64).reshape(N_COEFFS, 1)
        return cls(np.repeat(v, 3, axis=1))

    def to_dict(self) -> dict:
        # channel-major: three lists of nine floats
        return {"sh": self.coeffs.T.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> SHCoefficients:
        sh = np.asarray(data["sh"], dtype=np.float64)
        if sh.shape != (3, N_COEFFS):
            raise ValueError(f'"sh" must be 3 lists of 9 floats, got shape {sh.shape}')
        return cls(sh.T)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> SHCoefficients:
        return cls.from_dict(json.loads(text))

    def __add__(self, other: SHCoefficients) -> SHCoefficients:
        return SHCoefficients(self.coeffs + other.coeffs)

    def __mul__(self, k: float) -> SHCoefficients:
        return SHCoefficients(self.coeffs * k)

    __rmul__ = __mul__


def sh_basis_batch(normals: np.ndarray) -> np.ndarray:
    """Basis values for an (..., 3) array of unit normals, shape (..., 9).

    No unit-length check; callers own normalization.
    """
    n = np.asarray(normals, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    out = np.empty(n.shape[:-1] + (N_COEFFS,), dtype=np.float64)
    out[..., 0] = SH_C0
    out[..., 1] = SH_C1 * y
    out[..., 2] = SH_C1 * z
    out[..., 3] = SH_C1 * x
    out[..., 4] = SH_C2 * x * y
    out[..., 5] = SH_C2 * y * z
    out[..., 6] = SH_C3 * (3.0 * z * z - 1.0)
    out[..., 7] = SH_C2 * x * z
    out[..., 8] = SH_C4 * (x * x - y * y)
    return out


def _check_unit(n: np.ndarray) -> None:
    norms = np.linalg.norm(n, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= UNIT_TOL):
        raise ValueError("normal must have unit length (tolerance 1e-6)")


def sh_basis(n) -> np.ndarray:
    """The nine real SH basis values at a single unit direction."""
    n = np.asarray(n, dtype=np.float64)
    if n.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {n.shape}")
    _check_unit(n)
    return sh_basis_batch(n)


def shade_unclamped(normals: np.ndarray, light: SHCoefficients) -> np.ndarray:
    return sh_basis_batch(normals) @ light.coeffs


def shade_batch(normals: np.ndarray, light: SHCoefficients) -> np.ndarray:
    """Clamped RGB radiance for an (..., 3) array of unit normals."""
    return np.clip(shade_unclamped(normals, light), 0.0, 1.0)


def shade(n, light: SHCoefficients) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    _check_unit(n)
    return shade_batch(n, light)


class SHEstimate(NamedTuple):
    light: SHCoefficients
    residual: float  # sum of squared residuals over all samples and channels
    rank: int


def estimate_sh(normals, observed) -> SHEstimate:
    """Least-squares SH coefficients from (normal, radiance) samples.

    ``observed`` must not contain clamped/saturated values; the fit assumes the
    linear (unclamped) shading model.
    """
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    observed = np.asarray(observed, dtype=np.float64).reshape(-1, 3)
    if normals.shape[0] != observed.shape[0]:
        raise ValueError("normals and observations differ in length")
    if normals.shape[0] < N_COEFFS:
        raise RankDeficientError(np.linalg.matrix_rank(sh_basis_batch(normals)) if len(normals) else 0)
    _check_unit(normals)
    design = sh_basis_batch(normals)
    rank = int(np.linalg.matrix_rank(design))
    if rank < N_COEFFS:
        raise RankDeficientError(rank)
    coeffs, _, _, _ = np.linalg.lstsq(design, observed, rcond=None)
    residual = float(np.sum((design @ coeffs - observed) ** 2))
    return SHEstimate(SHCoefficients(coeffs), residual, rank)


def relative_error(estimate: SHCoefficients, truth: SHCoefficients) -> float:
    """Frobenius-norm relative error between two coefficient sets."""
    denom = np.linalg.norm(truth.coeffs)
    diff = np.linalg.norm(estimate.coeffs - truth.coeffs)
    return float(diff / denom) if denom > 0 else float(diff)
