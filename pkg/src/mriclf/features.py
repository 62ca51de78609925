"""Turn manifest records into classifier inputs for the two pre-processing pipelines.

``minimal``: in-mask intensity standardization of the aligned T1w image.
``modulated``: the modulated gray-matter map divided by intracranial volume,
zeroed outside the mask.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError
from .volume import Mask, apply_mask, divide_by_icv, normalize_in_mask, read_volume

PIPELINES = ("minimal", "modulated")


def preprocess(record, mask: Mask, pipeline: str):
    v = read_volume(record.volume_path)
    if not v.same_geometry(mask):
        raise DataError(f"{record.subject_id}: volume geometry {v.dims} does not match the mask {mask.dims}")
    if pipeline == "minimal":
        return normalize_in_mask(v, mask)
    if pipeline == "modulated":
        if record.icv_mm3 is None:
            raise DataError(f"{record.subject_id}: modulated pipeline needs icv_mm3")
        return apply_mask(divide_by_icv(v, record.icv_mm3), mask)
    raise ConfigError(f"unknown pipeline {pipeline!r}; expected one of {PIPELINES}")


def load_volumes(records, mask: Mask, pipeline: str) -> np.ndarray:
    """(N, X, Y, Z) float32 stack of pre-processed volumes."""
    return np.stack([preprocess(r, mask, pipeline).data for r in records]).astype(np.float32)


def masked_features(volumes: np.ndarray, mask: Mask) -> np.ndarray:
    """(N, n_mask_voxels) matrix in ascending x-fastest voxel order."""
    flat = np.stack([v.ravel(order="F") for v in volumes])
    return flat[:, mask.index].astype(np.float64)
