"""Training subjects, unpaired patch sampling and PK scaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import AcqParams, DatasetTooSmall, ShapeMismatch, TkModel
from ..networks import CP_SCALE, scale_pk


@dataclass(frozen=True)
class Subject:
    """One training volume. ``pk`` is the physical stack (K^trans in min^-1) or None."""

    series: np.ndarray  # [n, H, W]
    s0: np.ndarray
    t1: np.ndarray
    mask: np.ndarray
    cp: np.ndarray  # [n] mM
    pk: np.ndarray | None = None

    @classmethod
    def from_phantom(cls, ph) -> "Subject":
        return cls(ph.series.data, ph.aux.s0, ph.aux.t1_seconds, ph.aux.mask, ph.cp.values_mM, ph.pk.as_stack())


@dataclass(frozen=True)
class TrainingSet:
    subjects: tuple
    acq: AcqParams
    model: TkModel

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "model", TkModel.parse(self.model))
        if not self.subjects:
            raise DatasetTooSmall("training set is empty")
        for s in self.subjects:
            if s.series.shape[0] != self.acq.n_frames or s.cp.shape != (self.acq.n_frames,):
                raise ShapeMismatch("subject frame count differs from the acquisition")
            if s.pk is not None and s.pk.shape[0] != self.model.n_params:
                raise ShapeMismatch("subject PK stack does not match the model")

    @property
    def has_labels(self) -> bool:
        return all(s.pk is not None for s in self.subjects)

    @classmethod
    def from_phantoms(cls, phantoms) -> "TrainingSet":
        phantoms = list(phantoms)
        if not phantoms:
            raise DatasetTooSmall("training set is empty")
        return cls(tuple(Subject.from_phantom(p) for p in phantoms), phantoms[0].config.acq, phantoms[0].config.model)


@dataclass(frozen=True)
class UnpairedBatch:
    """S patches (with the S0/T1 crops f_TK needs) and independently drawn P patches and Cp curves.

    ``s_labels``/``s_cp`` are the ground truth at the S locations; only the
    supervised modes read them.
    """

    s: np.ndarray  # [B, n, p, p]
    s0: np.ndarray  # [B, p, p]
    t1: np.ndarray
    p: np.ndarray  # [B, C, p, p] scaled
    cp: np.ndarray  # [B, n] scaled
    s_labels: np.ndarray | None
    s_cp: np.ndarray


def _corner_candidates(mask: np.ndarray, patch: int) -> np.ndarray:
    """Top-left corners whose crop lies fully in the mask, or else whose centre does."""
    h, w = mask.shape
    if h < patch or w < patch:
        return np.zeros((0, 2), dtype=np.int64)
    ii = np.pad(np.cumsum(np.cumsum(mask.astype(np.int64), 0), 1), ((1, 0), (1, 0)))
    cover = ii[patch:, patch:] - ii[:-patch, patch:] - ii[patch:, :-patch] + ii[:-patch, :-patch]
    full = np.argwhere(cover == patch * patch)
    if len(full):
        return full
    centre = mask[patch // 2: patch // 2 + h - patch + 1, patch // 2: patch // 2 + w - patch + 1]
    inside = np.argwhere(centre)
    return inside if len(inside) else np.argwhere(np.ones_like(cover, dtype=bool))


class PatchSampler:
    """Draws unpaired batches; every draw is a function of the generator state only."""

    def __init__(self, dataset: TrainingSet, patch: int):
        self.dataset = dataset
        self.patch = patch
        self.corners = [_corner_candidates(s.mask, patch) for s in dataset.subjects]
        if any(len(c) == 0 for c in self.corners):
            raise DatasetTooSmall(f"a subject is smaller than the {patch}x{patch} patch")

    def _crop(self, rng, need_pk: bool):
        subjects = self.dataset.subjects
        i = int(rng.integers(len(subjects)))
        corners = self.corners[i]
        y, x = corners[int(rng.integers(len(corners)))]
        flip_v, flip_h = rng.random(2) < 0.5
        sl = (slice(y, y + self.patch), slice(x, x + self.patch))
        s = subjects[i]

        def tf(a):
            a = a[(Ellipsis, *sl)]
            if flip_v:
                a = a[..., ::-1, :]
            if flip_h:
                a = a[..., :, ::-1]
            return a

        pk = tf(s.pk) if need_pk else None
        return i, tf(s.series), tf(s.s0), tf(s.t1), pk

    def sample(self, batch_size: int, rng: np.random.Generator) -> UnpairedBatch:
        ds = self.dataset
        labelled = ds.has_labels
        s_rows, s0_rows, t1_rows, lab_rows, scp_rows = [], [], [], [], []
        for _ in range(batch_size):
            i, ser, s0, t1, pk = self._crop(rng, labelled)
            s_rows.append(ser)
            s0_rows.append(s0)
            t1_rows.append(t1)
            scp_rows.append(ds.subjects[i].cp)
            if labelled:
                lab_rows.append(pk)
        # independent draws for the PK-domain pool and the plasma-curve pool
        p_rows, cp_rows = [], []
        if labelled:
            for _ in range(batch_size):
                p_rows.append(self._crop(rng, True)[4])
        for _ in range(batch_size):
            cp_rows.append(ds.subjects[int(rng.integers(len(ds.subjects)))].cp)
        f32 = np.float32
        p = scale_pk(np.stack(p_rows), ds.model, axis=1).astype(f32) if p_rows else np.zeros((0,), f32)
        labels = scale_pk(np.stack(lab_rows), ds.model, axis=1).astype(f32) if lab_rows else None
        return UnpairedBatch(
            s=np.stack(s_rows).astype(f32),
            s0=np.stack(s0_rows),
            t1=np.stack(t1_rows),
            p=p,
            cp=(np.stack(cp_rows) * CP_SCALE).astype(f32),
            s_labels=labels,
            s_cp=(np.stack(scp_rows) * CP_SCALE).astype(f32),
        )


def sample_patches(dataset: TrainingSet, cfg, rng: np.random.Generator) -> UnpairedBatch:
    return PatchSampler(dataset, cfg.patch).sample(cfg.batch_size, rng)
