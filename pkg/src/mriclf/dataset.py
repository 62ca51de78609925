"""Manifests, stratified splitting and same-class mixup augmentation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ClassTooSmall, DuplicateSubjectId, EmptyClass, MalformedRow, UnknownDiagnosis
from .rng import substream
from .volume import Volume

DIAGNOSES = ("AD", "CN", "SCD", "MCIc", "MCInc")
MANIFEST_COLUMNS = ("subject_id", "cohort", "diagnosis", "volume_path", "icv_mm3", "followup_years")


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    cohort: str
    diagnosis: str
    volume_path: str
    icv_mm3: float | None = None
    followup_years: float | None = None


def _optional_float(text, what, row_no):
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(f"row {row_no}: {what} {text!r} is not a number") from None
    if not math.isfinite(value):
        raise MalformedRow(f"row {row_no}: {what} must be finite")
    return value


def load_manifest(path) -> list[SubjectRecord]:
    """Parse a manifest CSV. Relative volume paths resolve against the CSV's directory.

    Volume files are not opened here.
    """
    path = Path(path)
    base = path.parent
    records: list[SubjectRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(f"{path}: empty manifest") from None
        if tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise MalformedRow(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise MalformedRow(f"{path}:{row_no}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}")
            sid, cohort, diagnosis, vpath, icv, followup = (c.strip() for c in row)
            if not sid or not vpath:
                raise MalformedRow(f"{path}:{row_no}: subject_id and volume_path are required")
            if diagnosis not in DIAGNOSES:
                raise UnknownDiagnosis(f"{path}:{row_no}: diagnosis {diagnosis!r} not in {DIAGNOSES}")
            if sid in seen:
                raise DuplicateSubjectId(f"{path}:{row_no}: subject_id {sid!r} appears twice")
            seen.add(sid)
            icv_val = _optional_float(icv, "icv_mm3", row_no)
            if icv_val is not None and icv_val <= 0:
                raise MalformedRow(f"{path}:{row_no}: icv_mm3 must be positive")
            fu_val = _optional_float(followup, "followup_years", row_no)
            if fu_val is not None and fu_val < 0:
                raise MalformedRow(f"{path}:{row_no}: followup_years must be nonnegative")
            vp = Path(vpath)
            if not vp.is_absolute():
                vp = base / vp
            records.append(SubjectRecord(sid, cohort, diagnosis, str(vp), icv_val, fu_val))
    return records


def write_manifest(records: Sequence[SubjectRecord], path, relative_to=None) -> None:
    def fmt(x):
        return "" if x is None else repr(float(x))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            vpath = r.volume_path
            if relative_to is not None:
                vpath = str(Path(vpath).relative_to(relative_to))
            writer.writerow([r.subject_id, r.cohort, r.diagnosis, vpath, fmt(r.icv_mm3), fmt(r.followup_years)])


def _labels_of(items) -> list:
    return [getattr(it, "diagnosis", it) for it in items]


def _class_indices(labels) -> dict:
    groups: dict = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    return {k: np.asarray(v) for k, v in sorted(groups.items(), key=lambda kv: str(kv[0]))}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    iterations: int
    train_fraction: float
    train: list = field(repr=False)
    test: list = field(repr=False)

    def __iter__(self):
        return iter(zip(self.train, self.test))

    def __len__(self):
        return self.iterations


def stratified_splits(records, J: int, train_fraction: float, seed: int) -> SplitPlan:
    """``J`` independent stratified train/test splits.

    Each class contributes ``round(n_class * (1 - train_fraction))`` subjects to
    every test set. Iteration ``j`` draws from its own substream, so a plan's
    first iterations do not depend on ``J``.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    groups = _class_indices(_labels_of(records))
    n_test = {}
    for lab, idx in groups.items():
        k = _round_half_up(idx.size * (1 - train_fraction))
        if idx.size < 2 or k < 1 or k >= idx.size:
            raise ClassTooSmall(f"class {lab!r} with {idx.size} subjects cannot be split at fraction {train_fraction}")
        n_test[lab] = k
    trains, tests = [], []
    for j in range(J):
        rng = substream(seed, "splits", j)
        tr, te = [], []
        for lab, idx in groups.items():
            perm = rng.permutation(idx)
            te.append(perm[: n_test[lab]])
            tr.append(perm[n_test[lab]:])
        trains.append(np.sort(np.concatenate(tr)))
        tests.append(np.sort(np.concatenate(te)))
    return SplitPlan(int(seed), int(J), float(train_fraction), trains, tests)


def validation_split(train, fraction: float, seed: int, labels=None):
    """Hold out a stratified validation subset of original subjects.

    Returns ``(core_idx, val_idx)`` as sorted positions into ``train``.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    labels = _labels_of(train) if labels is None else list(labels)
    rng = substream(seed, "valsplit")
    core, val = [], []
    for lab, idx in _class_indices(labels).items():
        k = max(1, _round_half_up(idx.size * fraction))
        if k >= idx.size:
            raise ClassTooSmall(f"class {lab!r} with {idx.size} subjects leaves nothing to train on")
        perm = rng.permutation(idx)
        val.append(perm[:k])
        core.append(perm[k:])
    return np.sort(np.concatenate(core)), np.sort(np.concatenate(val))


@dataclass
class AugmentedSet:
    volumes: np.ndarray
    labels: np.ndarray
    provenance: list
    target_per_class: int

    def __len__(self):
        return int(self.labels.size)


def mixup_augment(samples, target_per_class: int, lam: float = 0.8, seed: int = 0, ids=None) -> AugmentedSet:
    """Same-class mixup: every output is ``lam * a + (1 - lam) * b``.

    ``samples`` is a sequence of ``(volume, label)`` where volume is a
    :class:`Volume` or an array. Sources are drawn uniformly with replacement
    from the class, with ``a != b`` unless the class has a single member.
    """
    if not 0.5 < lam <= 1:
        raise ValueError("lam must lie in (0.5, 1]")
    if target_per_class < 1:
        raise ValueError("target_per_class must be positive")
    if not samples:
        raise EmptyClass("no samples to augment")
    arrays = [np.asarray(v.data if isinstance(v, Volume) else v, dtype=np.float32) for v, _ in samples]
    labels = [lab for _, lab in samples]
    ids = [str(i) for i in range(len(samples))] if ids is None else [str(i) for i in ids]
    groups = _class_indices(labels)
    if len(groups) < 2:
        raise EmptyClass("mixup needs samples from both classes")
    rng = substream(seed, "mixup")
    out = np.empty((target_per_class * len(groups),) + arrays[0].shape, dtype=np.float32)
    out_labels, provenance = [], []
    k = 0
    for lab, idx in groups.items():
        first = rng.integers(0, idx.size, size=target_per_class)
        if idx.size > 1:
            # second source is uniform over the class minus the first
            offset = rng.integers(1, idx.size, size=target_per_class)
            second = (first + offset) % idx.size
        else:
            second = first
        for a, b in zip(idx[first], idx[second]):
            out[k] = lam * arrays[a].astype(np.float64) + (1.0 - lam) * arrays[b].astype(np.float64)
            out_labels.append(lab)
            provenance.append((ids[a], ids[b]))
            k += 1
    return AugmentedSet(out, np.asarray(out_labels), provenance, target_per_class)
