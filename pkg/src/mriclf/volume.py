"""Volumes, masks, the JSON+raw file pair, and voxelwise pre-processing.

A volume is stored as a numpy array of shape ``(nx, ny, nz)``. On disk and in
every flat index the x axis varies fastest, which is numpy's Fortran order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyMask,
    GeometryMismatch,
    MissingPayload,
    NonFiniteData,
    NonPositiveIcv,
    NonPositiveJacobian,
    ProbabilityOutOfRange,
    ZeroVariance,
)

DTYPE_TAG = "f32le"
ORDER_TAG = "x-fastest"


@dataclass(frozen=True)
class Volume:
    data: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise GeometryMismatch(f"volume data must be 3D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteData("volume contains NaN or Inf")
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise GeometryMismatch(f"spacing must be three positive reals, got {self.spacing_mm}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def flat(self) -> np.ndarray:
        """Voxel values in storage (x-fastest) order."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, values, dims, spacing_mm=(1.0, 1.0, 1.0)) -> "Volume":
        values = np.asarray(values)
        if values.size != int(np.prod(dims)):
            raise GeometryMismatch(f"{values.size} values cannot fill dims {tuple(dims)}")
        return cls(values.reshape(tuple(dims), order="F"), spacing_mm)

    def same_geometry(self, other) -> bool:
        return self.dims == other.dims and np.allclose(self.spacing_mm, other.spacing_mm)


@dataclass(frozen=True)
class Mask:
    """Binary brain mask; at least one voxel must be inside."""

    data: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    index: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 3:
            raise GeometryMismatch(f"mask data must be 3D, got shape {raw.shape}")
        if raw.dtype != bool and not np.all((raw == 0) | (raw == 1)):
            raise GeometryMismatch("mask values must be 0 or 1")
        data = raw.astype(bool)
        if not data.any():
            raise EmptyMask("mask has no voxels inside")
        data.setflags(write=False)
        index = np.flatnonzero(data.ravel(order="F"))
        index.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        object.__setattr__(self, "index", index)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def count(self) -> int:
        return int(self.index.size)

    @classmethod
    def from_volume(cls, v: Volume) -> "Mask":
        return cls(v.data, v.spacing_mm)

    def to_volume(self) -> Volume:
        return Volume(self.data.astype(np.float32), self.spacing_mm)

    def same_geometry(self, other) -> bool:
        return self.dims == other.dims and np.allclose(self.spacing_mm, other.spacing_mm)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    voxel_index_map: np.ndarray
    dims: tuple[int, int, int]
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __len__(self):
        return int(self.values.size)


# -- file format -------------------------------------------------------------

def _pair(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def write_volume(v: Volume, path) -> None:
    header_path, raw_path = _pair(path)
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing_mm),
        "dtype": DTYPE_TAG,
        "order": ORDER_TAG,
    }
    payload = np.ascontiguousarray(v.flat(), dtype="<f4").tobytes()
    raw_path.write_bytes(payload)
    header_path.write_text(json.dumps(header, sort_keys=True) + "\n")


def read_volume(path) -> Volume:
    header_path, raw_path = _pair(path)
    if not header_path.exists():
        raise MissingPayload(f"header {header_path} not found")
    try:
        header = json.loads(header_path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise GeometryMismatch(f"{header_path}: unreadable header ({exc})") from exc
    try:
        dims = tuple(int(n) for n in header["dims"])
        spacing = tuple(float(s) for s in header["spacing_mm"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GeometryMismatch(f"{header_path}: malformed header ({exc})") from exc
    if len(dims) != 3 or min(dims) < 1:
        raise GeometryMismatch(f"{header_path}: dims must be three positive ints")
    if header.get("dtype", DTYPE_TAG) != DTYPE_TAG or header.get("order", ORDER_TAG) != ORDER_TAG:
        raise GeometryMismatch(f"{header_path}: only f32le / x-fastest payloads are supported")
    if not raw_path.exists():
        raise MissingPayload(f"payload {raw_path} not found")
    payload = raw_path.read_bytes()
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise GeometryMismatch(f"{raw_path}: {len(payload)} bytes, expected {expected} for dims {dims}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise NonFiniteData(f"{raw_path}: payload contains NaN or Inf")
    return Volume.from_flat(values, dims, spacing)


def read_mask(path) -> Mask:
    return Mask.from_volume(read_volume(path))


def write_mask(m: Mask, path) -> None:
    write_volume(m.to_volume(), path)


def volume_exists(path) -> bool:
    header_path, raw_path = _pair(path)
    return os.path.exists(header_path) and os.path.exists(raw_path)


# -- pre-processing ------------------------------------------------------------

def _check_geometry(a, b):
    if not a.same_geometry(b):
        raise GeometryMismatch(f"geometry {a.dims}/{a.spacing_mm} does not match {b.dims}/{b.spacing_mm}")


def normalize_in_mask(v: Volume, m: Mask) -> Volume:
    """Standardize in-mask voxels to zero mean and unit population variance.

    Voxels outside the mask are set to zero.
    """
    _check_geometry(v, m)
    inside = v.data.astype(np.float64)[m.data]
    mean = np.mean(inside)
    std = np.sqrt(np.mean((inside - mean) ** 2))
    if not std > 0:
        raise ZeroVariance("all voxels inside the mask are equal")
    out = np.zeros(v.dims, dtype=np.float64)
    out[m.data] = (inside - mean) / std
    return Volume(out, v.spacing_mm)


def modulate(prob: Volume, jac_det: Volume) -> Volume:
    """Scale a tissue probability map by the Jacobian determinant, voxel by voxel."""
    _check_geometry(prob, jac_det)
    p = prob.data.astype(np.float64)
    j = jac_det.data.astype(np.float64)
    if p.min() < 0 or p.max() > 1:
        raise ProbabilityOutOfRange(f"probabilities span [{p.min()}, {p.max()}]")
    if not j.min() > 0:
        raise NonPositiveJacobian(f"minimum Jacobian determinant is {j.min()}")
    return Volume(p * j, prob.spacing_mm)


def divide_by_icv(v: Volume, icv_mm3: float) -> Volume:
    if not icv_mm3 > 0:
        raise NonPositiveIcv(f"intracranial volume must be positive, got {icv_mm3}")
    return Volume(v.data.astype(np.float64) / float(icv_mm3), v.spacing_mm)


def apply_mask(v: Volume, m: Mask) -> Volume:
    _check_geometry(v, m)
    return Volume(np.where(m.data, v.data, 0.0), v.spacing_mm)


def flatten_masked(v: Volume, m: Mask) -> FeatureVector:
    _check_geometry(v, m)
    values = v.flat()[m.index].copy()
    return FeatureVector(values, m.index, m.dims, m.spacing_mm)


def unflatten(values, m: Mask, fill: float = 0.0) -> Volume:
    """Inverse of :func:`flatten_masked`; voxels outside the mask get ``fill``."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (m.count,):
        raise GeometryMismatch(f"{values.shape[0] if values.ndim else 0} features for a {m.count}-voxel mask")
    flat = np.full(int(np.prod(m.dims)), fill, dtype=np.float64)
    flat[m.index] = values
    return Volume.from_flat(flat, m.dims, m.spacing_mm)
