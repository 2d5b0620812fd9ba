"""Recording manifests, dataset loading and train/val/test splits."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .events import ViewStream, normalize_volume, read_events, render_volume

CROSS_SUBJECT = "cross-subject"
CROSS_VIEW = "cross-view"
SPLIT_MODES = (CROSS_SUBJECT, CROSS_VIEW)


@dataclass(frozen=True)
class RecordingManifest:
    recording_id: str
    label: int
    subject: int
    V: int
    X: int
    Y: int
    t_begin: int
    t_end: int
    views: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        if len(self.views) != self.V:
            raise ValueError(f"{self.recording_id}: {len(self.views)} view files for V={self.V}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["views"] = list(self.views)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RecordingManifest":
        fields = ("recording_id", "label", "subject", "V", "X", "Y", "t_begin", "t_end", "views")
        missing = [f for f in fields if f not in d]
        if missing:
            raise ValueError(f"manifest missing fields {missing}")
        return cls(**{f: d[f] for f in fields})

    def write(self, root: str | Path) -> Path:
        path = Path(root) / self.recording_id / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        return path

    def view_path(self, root: str | Path, v: int) -> Path:
        return Path(root) / self.recording_id / self.views[v]

    def read_view(self, root: str | Path, v: int) -> ViewStream:
        return read_events(self.view_path(root, v), self.X, self.Y, self.t_begin, self.t_end)

    def read_views(self, root: str | Path) -> list[ViewStream]:
        return [self.read_view(root, v) for v in range(self.V)]


def load_manifest(path: str | Path) -> RecordingManifest:
    return RecordingManifest.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def scan_dataset(root: str | Path) -> list[RecordingManifest]:
    """All ``<root>/*/manifest.json`` sorted by recording id."""
    paths = sorted(Path(root).glob("*/manifest.json"))
    return [load_manifest(p) for p in paths]


def load_volumes(manifest: RecordingManifest, root: str | Path, T: int) -> np.ndarray:
    """(V, T, Y, X) float array of per-view max-abs normalised event frames."""
    vols = [
        normalize_volume(render_volume(s, T, manifest.X, manifest.Y))
        for s in manifest.read_views(root)
    ]
    return np.stack(vols)


@dataclass(frozen=True)
class Sample:
    """One model input: a recording restricted to some of its views."""

    recording_id: str
    views: tuple[int, ...]
    label: int

    def to_json(self) -> dict:
        return {"recording_id": self.recording_id, "views": list(self.views), "label": self.label}

    @classmethod
    def from_json(cls, d: dict) -> "Sample":
        return cls(d["recording_id"], tuple(d["views"]), int(d["label"]))


@dataclass
class DatasetSplit:
    mode: str
    train: list[Sample] = field(default_factory=list)
    val: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)
    train_subjects: list[int] = field(default_factory=list)
    val_subjects: list[int] = field(default_factory=list)
    test_subjects: list[int] = field(default_factory=list)
    train_views: list[int] = field(default_factory=list)
    val_views: list[int] = field(default_factory=list)
    test_views: list[int] = field(default_factory=list)

    def partition(self, name: str) -> list[Sample]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown partition {name!r}")
        return getattr(self, name)

    def to_json(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("train", "val", "test")}
        for name in ("train", "val", "test"):
            d[name] = [s.to_json() for s in self.partition(name)]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DatasetSplit":
        d = dict(d)
        for name in ("train", "val", "test"):
            d[name] = [Sample.from_json(s) for s in d.get(name, [])]
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetSplit":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def subject_partition(subjects: Iterable[int], seed: int) -> tuple[list[int], list[int], list[int]]:
    """8:1:1 split of subjects; val and test each get floor(n/10), train the rest."""
    subjects = sorted(set(subjects))
    n = len(subjects)
    if n < 10:
        raise ValueError(f"cross-subject split needs >= 10 subjects, have {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [subjects[i] for i in order]
    k = n // 10
    val, test, train = shuffled[:k], shuffled[k:2 * k], shuffled[2 * k:]
    return sorted(train), sorted(val), sorted(test)


def split_by_subjects(
    manifests: Sequence[RecordingManifest],
    train: Iterable[int],
    val: Iterable[int],
    test: Iterable[int],
) -> DatasetSplit:
    """Cross-subject split with explicit subject lists; all views per sample."""
    train, val, test = sorted(set(train)), sorted(set(val)), sorted(set(test))
    if set(train) & set(val) or set(train) & set(test) or set(val) & set(test):
        raise ValueError("subject sets overlap")
    split = DatasetSplit(CROSS_SUBJECT, train_subjects=train, val_subjects=val, test_subjects=test)
    where = {s: "train" for s in train} | {s: "val" for s in val} | {s: "test" for s in test}
    for m in sorted(manifests, key=lambda m: m.recording_id):
        part = where.get(m.subject)
        if part is not None:
            split.partition(part).append(Sample(m.recording_id, tuple(range(m.V)), m.label))
    return split


def make_splits(
    manifests: Sequence[RecordingManifest],
    mode: str,
    seed: int,
    val_views: int = 1,
) -> DatasetSplit:
    """Cross-subject (8:1:1 by subject) or cross-view split, deterministic in
    ``seed``.

    Cross-view: views are shuffled; the last one is the test view and the
    ``val_views`` before it are validation views. Each recording yields one
    training sample over all training views plus one single-view sample per
    held-out view.
    """
    if not manifests:
        raise ValueError("no recordings")
    if mode == CROSS_SUBJECT:
        train, val, test = subject_partition((m.subject for m in manifests), seed)
        return split_by_subjects(manifests, train, val, test)
    if mode != CROSS_VIEW:
        raise ValueError(f"unknown split mode {mode!r}; expected one of {SPLIT_MODES}")
    Vs = {m.V for m in manifests}
    if len(Vs) != 1:
        raise ValueError(f"recordings disagree on view count: {sorted(Vs)}")
    V = Vs.pop()
    if val_views < 0 or V < val_views + 2:
        raise ValueError(f"cross-view split needs >= {val_views + 2} views, have {V}")
    order = np.random.default_rng(seed).permutation(V).tolist()
    test_v = order[-1:]
    val_v = order[V - 1 - val_views:V - 1]
    train_v = sorted(order[:V - 1 - val_views])
    subjects = sorted({m.subject for m in manifests})
    split = DatasetSplit(
        CROSS_VIEW,
        train_subjects=subjects,
        val_subjects=subjects,
        test_subjects=subjects,
        train_views=train_v,
        val_views=sorted(val_v),
        test_views=test_v,
    )
    for m in sorted(manifests, key=lambda m: m.recording_id):
        split.train.append(Sample(m.recording_id, tuple(train_v), m.label))
        split.val.extend(Sample(m.recording_id, (v,), m.label) for v in sorted(val_v))
        split.test.extend(Sample(m.recording_id, (v,), m.label) for v in test_v)
    return split
