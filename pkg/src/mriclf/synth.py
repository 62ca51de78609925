"""Synthetic two-class cohorts with a planted atrophy region.

Every subject gets a gray-matter probability map, a Jacobian determinant
field, the modulated map (their product) and a T1-like intensity image. Class
``AD`` subjects lose ``effect_size`` probability inside a fixed ellipsoid. The
T1-like image carries the same tissue signal plus nuisance that in-mask
standardization cannot remove (a random linear bias field), so the modulated
pipeline is the more informative of the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .dataset import SubjectRecord, write_manifest
from .errors import ConfigError
from .rng import substream
from .volume import Mask, Volume, modulate, write_mask, write_volume

REFERENCE_ICV_MM3 = 1.4e6
CLASSES = ("CN", "AD")


@dataclass(frozen=True)
class SynthCohort:
    root: Path
    manifest_minimal: Path
    manifest_modulated: Path
    mask_path: Path
    region_path: Path
    records_minimal: list
    records_modulated: list


def _grid(dims):
    axes = [np.arange(n, dtype=np.float64) - (n - 1) / 2.0 for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def brain_mask(dims) -> np.ndarray:
    x, y, z = _grid(dims)
    a = [0.42 * n for n in dims]
    return (x / a[0]) ** 2 + (y / a[1]) ** 2 + (z / a[2]) ** 2 <= 1.0


def atrophy_region(dims) -> np.ndarray:
    """Fixed off-center ellipsoid inside the brain mask."""
    x, y, z = _grid(dims)
    cx, cy, cz = 0.15 * dims[0], -0.1 * dims[1], 0.05 * dims[2]
    a = (0.17 * dims[0], 0.13 * dims[1], 0.13 * dims[2])
    inside = ((x - cx) / a[0]) ** 2 + ((y - cy) / a[1]) ** 2 + ((z - cz) / a[2]) ** 2 <= 1.0
    return inside & brain_mask(dims)


def _template(dims, brain):
    x, y, z = _grid(dims)
    r = np.sqrt((x / dims[0]) ** 2 + (y / dims[1]) ** 2 + (z / dims[2]) ** 2)
    # cortical-ribbon-like profile: GM probability peaks towards the brain edge
    gm = 0.45 + 0.35 * np.cos(2 * np.pi * 2.5 * r) ** 2
    return np.where(brain, gm, 0.0)


def synth_cohort(out_dir, n_per_class: int = 30, dims=(24, 24, 24), effect_size: float = 0.3,
                 noise_sigma: float = 0.05, seed: int = 0, cohort: str = "SYNTH",
                 spacing_mm=(2.0, 2.0, 2.0)) -> SynthCohort:
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or min(dims) < 16:
        raise ConfigError("synthetic dims must be three axes of at least 16 voxels")
    if n_per_class < 2:
        raise ConfigError("n_per_class must be at least 2")
    if effect_size < 0 or noise_sigma < 0:
        raise ConfigError("effect_size and noise_sigma must be nonnegative")

    root = Path(out_dir)
    vol_dir = root / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)
    brain = brain_mask(dims)
    region = atrophy_region(dims)
    template = _template(dims, brain)
    mask = Mask(brain, spacing_mm)
    mask_path = root / "mask"
    region_path = root / "atrophy_region"
    write_mask(mask, mask_path)
    write_mask(Mask(region, spacing_mm), region_path)

    x, y, z = _grid(dims)
    rec_min, rec_mod = [], []
    n_total = 2 * n_per_class
    for s in range(n_total):
        label = CLASSES[s % 2]
        sid = f"sub-{s:04d}"
        rng = substream(seed, "synth", s)

        anatomy = gaussian_filter(rng.standard_normal(dims), sigma=2.0)
        anatomy *= 0.04 / max(anatomy.std(), 1e-12)
        gm = template + anatomy
        if label == "AD":
            gm = gm - effect_size * region
        gm = gm + noise_sigma * rng.standard_normal(dims)
        gm = np.clip(np.where(brain, gm, 0.0), 0.0, 1.0)

        head_scale = rng.uniform(0.85, 1.15)
        local = gaussian_filter(rng.standard_normal(dims), sigma=3.0)
        local *= 0.02 / max(local.std(), 1e-12)
        jac = np.clip(head_scale * (1.0 + local), 0.05, None)
        icv = REFERENCE_ICV_MM3 * head_scale

        gm_vol = Volume(gm, spacing_mm)
        jac_vol = Volume(jac, spacing_mm)
        mod_vol = modulate(gm_vol, jac_vol)

        gradient = rng.standard_normal(3)
        gradient *= 0.5 / np.linalg.norm(gradient)
        bias = (gradient[0] * x / dims[0] + gradient[1] * y / dims[1] + gradient[2] * z / dims[2])
        tissue = 0.3 + 0.7 * gm
        t1 = 100.0 * (rng.uniform(0.8, 1.2) * tissue * (1.0 + bias) + rng.normal(0.0, 0.2))
        t1 = t1 + 100.0 * noise_sigma * rng.standard_normal(dims)
        t1 = np.where(brain, t1, 0.0)
        t1_vol = Volume(t1, spacing_mm)

        stem = vol_dir / sid
        write_volume(gm_vol, f"{stem}_gm")
        write_volume(jac_vol, f"{stem}_jac")
        write_volume(mod_vol, f"{stem}_mod")
        write_volume(t1_vol, f"{stem}_t1")
        rec_min.append(SubjectRecord(sid, cohort, label, str(Path(f"{stem}_t1.json")), icv, None))
        rec_mod.append(SubjectRecord(sid, cohort, label, str(Path(f"{stem}_mod.json")), icv, None))

    man_min = root / "manifest_minimal.csv"
    man_mod = root / "manifest_modulated.csv"
    write_manifest(rec_min, man_min, relative_to=root)
    write_manifest(rec_mod, man_mod, relative_to=root)
    return SynthCohort(root, man_min, man_mod, mask_path.with_suffix(".json"),
                       region_path.with_suffix(".json"), rec_min, rec_mod)
