"""Synthetic multi-view event recordings.

A scene is a handful of Gaussian blobs moving along one of five parametric
trajectories. Each camera on a ring around the origin renders the blobs
with a pinhole projection into log-intensity frames, and a threshold-crossing
event camera model turns the frames into events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import RecordingManifest
from .events import ViewStream, write_events

FAMILIES = (
    "horizontal-circle",
    "vertical-oscillation",
    "expand-contract",
    "zigzag",
    "spin-pair",
)

# highest oscillation frequency of each trajectory, in multiples of its base frequency
_FREQ_MULT = {"zigzag": 3.0}
_MAX_JITTER = 1.2
# absorbs rounding in |change| / threshold so an exact m*theta step counts as m
_CROSSING_EPS = 1e-9


@dataclass(frozen=True)
class EventCameraParams:
    threshold: float = 0.2
    refractory_us: int = 100
    floor_log_intensity: float = -2.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"contrast threshold must be > 0, got {self.threshold}")
        if self.refractory_us < 0:
            raise ValueError("refractory period must be >= 0")


@dataclass(frozen=True)
class CameraRig:
    """Cameras on a horizontal ring, each looking at the scene origin."""

    azimuths: tuple[float, ...]
    distances: tuple[float, ...]
    width: int = 32
    height: int = 32
    focal: float = 40.0  # pixels per scene unit at unit depth

    def __post_init__(self):
        object.__setattr__(self, "azimuths", tuple(float(a) for a in self.azimuths))
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))
        if len(self.azimuths) < 1:
            raise ValueError("rig needs at least one view")
        if len(self.distances) != len(self.azimuths):
            raise ValueError("one distance per azimuth")
        wrapped = [round(a % (2 * math.pi), 12) for a in self.azimuths]
        if len(set(wrapped)) != len(wrapped):
            raise ValueError("camera azimuths must be distinct")

    @property
    def V(self) -> int:
        return len(self.azimuths)

    @classmethod
    def ring(cls, V: int, distance: float = 4.0, width: int = 32, height: int = 32, focal: float = 40.0):
        az = tuple(2 * math.pi * v / V for v in range(V))
        return cls(az, (distance,) * V, width, height, focal)

    def project(self, points: np.ndarray, v: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points (..., 3) -> pixel column, pixel row, depth for view v."""
        a, D = self.azimuths[v], self.distances[v]
        c, s = math.cos(a), math.sin(a)
        px, py, pz = points[..., 0], points[..., 1], points[..., 2]
        depth = D - (px * c + py * s)
        lateral = -px * s + py * c
        u = (self.width - 1) / 2 + self.focal * lateral / depth
        w = (self.height - 1) / 2 - self.focal * pz / depth
        return u, w, depth


@dataclass(frozen=True)
class ActionSpec:
    class_id: int
    family: str
    base_speed: float  # base angular frequency, rad/s
    duration_us: int = 2_340_000
    frame_rate: float = 200.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown trajectory family {self.family!r}")
        if self.duration_us <= 0:
            raise ValueError("duration must be > 0")
        if self.base_speed < 0:
            raise ValueError("speed must be >= 0")
        if self.frame_rate < 2 * self.max_frequency:
            raise ValueError(
                f"frame rate {self.frame_rate} Hz below twice the highest motion "
                f"frequency {self.max_frequency:.2f} Hz"
            )

    @property
    def max_frequency(self) -> float:
        return self.base_speed * _MAX_JITTER * _FREQ_MULT.get(self.family, 1.0) / (2 * math.pi)

    @classmethod
    def for_class(cls, class_id: int, **kw) -> "ActionSpec":
        """Classes cycle through the families; every fifth class gets faster."""
        family = FAMILIES[class_id % len(FAMILIES)]
        speed = 2 * math.pi * (0.8 + 0.35 * (class_id // len(FAMILIES)))
        return cls(class_id, family, speed, **kw)


@dataclass(frozen=True)
class SubjectTraits:
    """Per-subject variation drawn from the subject seed."""

    size: float
    speed_jitter: float
    phase: float
    amplitude: float
    offsets: np.ndarray = field(repr=False)  # (blobs, 3)

    @property
    def blob_count(self) -> int:
        return len(self.offsets)

    @classmethod
    def from_seed(cls, seed: int) -> "SubjectTraits":
        rng = np.random.default_rng([int(seed), 0x5EED])
        size = rng.uniform(0.18, 0.28)
        jitter = rng.uniform(1 / _MAX_JITTER, _MAX_JITTER)
        phase = rng.uniform(0, 2 * math.pi)
        amplitude = rng.uniform(0.8, 1.2)
        count = int(rng.integers(2, 5))
        offsets = rng.normal(scale=0.25, size=(count, 3))
        return cls(size, jitter, phase, amplitude, offsets)


def _triangle(x: np.ndarray) -> np.ndarray:
    """Triangle wave with period 2*pi, range [-1, 1]."""
    return 2 / math.pi * np.arcsin(np.sin(x))


def blob_positions(spec: ActionSpec, traits: SubjectTraits, times_s: np.ndarray) -> np.ndarray:
    """(frames, blobs, 3) world positions."""
    w = spec.base_speed * traits.speed_jitter
    ph = w * times_s[:, None] + traits.phase  # (F, 1)
    off = traits.offsets[None, :, :]  # (1, B, 3)
    zero = np.zeros_like(ph)
    fam = spec.family
    if fam == "horizontal-circle":
        centre = np.stack([0.8 * np.cos(ph), 0.8 * np.sin(ph), zero], axis=-1)
        return centre + off
    if fam == "vertical-oscillation":
        centre = np.stack([zero, zero, 0.7 * np.sin(ph)], axis=-1)
        return centre + off
    if fam == "expand-contract":
        norm = np.linalg.norm(traits.offsets, axis=1, keepdims=True)
        dirs = traits.offsets / np.maximum(norm, 1e-9)
        radius = 0.45 * (1 + 0.7 * np.sin(ph))[..., None]
        return radius * dirs[None, :, :]
    if fam == "zigzag":
        centre = np.stack([zero, 0.8 * _triangle(ph), 0.4 * _triangle(3 * ph)], axis=-1)
        return centre + off
    # spin-pair: alternate blobs sit on opposite ends of an arm turning in the x-z plane
    sign = np.where(np.arange(traits.blob_count) % 2 == 0, 1.0, -1.0)[None, :, None]
    arm = np.stack([0.7 * np.cos(ph), zero, 0.7 * np.sin(ph)], axis=-1)
    return sign * arm + 0.4 * off


def frame_times_us(spec: ActionSpec) -> np.ndarray:
    n = int(math.floor(spec.duration_us * spec.frame_rate / 1e6)) + 1
    t = np.round(np.arange(n) * (1e6 / spec.frame_rate)).astype(np.int64)
    t = t[t <= spec.duration_us]
    if t[-1] != spec.duration_us:
        t = np.append(t, spec.duration_us)
    return t


def render_log_frames(
    positions: np.ndarray,
    traits: SubjectTraits,
    rig: CameraRig,
    v: int,
    params: EventCameraParams,
) -> np.ndarray:
    """(frames, Y, X) log intensity for view v."""
    u, w, depth = rig.project(positions, v)  # (F, B)
    sigma = rig.focal * traits.size / depth
    cols = np.arange(rig.width)[None, None, None, :]
    rows = np.arange(rig.height)[None, None, :, None]
    du2 = (cols - u[..., None, None]) ** 2
    dw2 = (rows - w[..., None, None]) ** 2
    blobs = np.exp(-(du2 + dw2) / (2 * sigma[..., None, None] ** 2))  # (F, B, Y, X)
    intensity = math.exp(params.floor_log_intensity) + traits.amplitude * blobs.sum(axis=1)
    return np.log(intensity)


def simulate_camera(log_frames, timestamps, params: EventCameraParams) -> ViewStream:
    """Threshold-crossing event camera over a sequence of log-intensity frames.

    Each pixel keeps a reference level, initialised from the first frame.
    Whenever the level difference to the current frame reaches ``m``
    thresholds, ``m`` events of that sign are emitted, the reference moving
    by one threshold per event; their timestamps are interpolated linearly
    inside the frame gap. A pixel is silent for ``refractory_us`` after an
    event; suppressed crossings are deferred to later frames.
    """
    frames = np.asarray(log_frames, dtype=np.float64)
    ts = np.asarray(timestamps, dtype=np.int64)
    if frames.ndim != 3:
        raise ValueError(f"expected (frames, Y, X) array, got shape {frames.shape}")
    if len(frames) != len(ts):
        raise ValueError(f"{len(frames)} frames but {len(ts)} timestamps")
    if len(ts) == 0:
        raise ValueError("need at least one frame")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("frame timestamps must be strictly increasing")
    _, Y, X = frames.shape
    theta = params.threshold
    refr = params.refractory_us
    ref = frames[0].reshape(-1).copy()
    last_t = np.full(X * Y, np.iinfo(np.int64).min // 2, dtype=np.int64)
    chunks = []
    for f in range(1, len(frames)):
        prev = frames[f - 1].reshape(-1)
        cur = frames[f].reshape(-1)
        diff = cur - ref
        n = np.floor(np.abs(diff) / theta + _CROSSING_EPS).astype(np.int64)
        pix = np.flatnonzero(n)
        if pix.size == 0:
            continue
        t0, gap = ts[f - 1], ts[f] - ts[f - 1]
        cnt = n[pix]
        pol = np.sign(diff[pix])
        rep = np.repeat(np.arange(pix.size), cnt)
        starts = np.cumsum(cnt) - cnt
        j = np.arange(rep.size) - starts[rep] + 1  # crossing number, 1-based
        level = ref[pix][rep] + pol[rep] * j * theta
        span = (cur - prev)[pix][rep]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(span != 0, (level - prev[pix][rep]) / span, 1.0)
        tau = t0 + np.round(np.clip(s, 0.0, 1.0) * gap).astype(np.int64)
        # refractory: first crossing must clear the previous event, and the
        # rest only go out together if they are spaced at least refr apart
        first_ok = tau[starts] - last_t[pix] >= refr
        if cnt.max() > 1:
            steps = np.diff(tau, prepend=tau[0])
            steps[starts] = np.iinfo(np.int64).max
            spaced = np.minimum.reduceat(steps, starts) >= refr
        else:
            spaced = np.ones(pix.size, dtype=bool)
        emit_n = np.where(first_ok, np.where(spaced, cnt, 1), 0)
        keep = (j <= emit_n[rep])
        if not keep.any():
            continue
        ref[pix] += pol * emit_n * theta
        done = emit_n > 0
        last_idx = starts[done] + emit_n[done] - 1
        last_t[pix[done]] = tau[last_idx]
        kp = pix[rep[keep]]
        order = np.lexsort((j[keep], kp, tau[keep]))
        chunks.append(
            (tau[keep][order], (kp % X)[order], (kp // X)[order], pol[rep[keep]].astype(np.int64)[order])
        )
    if chunks:
        t, x, y, p = (np.concatenate(c) for c in zip(*chunks))
    else:
        t = x = y = p = np.zeros(0, dtype=np.int64)
    return ViewStream(X, Y, t, x, y, p, int(ts[0]), int(ts[-1]))


@dataclass(frozen=True, eq=False)
class Recording:
    recording_id: str
    label: int
    subject: int
    streams: tuple[ViewStream, ...]

    @property
    def V(self) -> int:
        return len(self.streams)


def recording_id(label: int, subject: int) -> str:
    return f"c{label:03d}_s{subject:05d}"


def synth_recording(
    spec: ActionSpec,
    subject: int,
    rig: CameraRig,
    params: EventCameraParams | None = None,
) -> Recording:
    """Render and simulate one labelled multi-view recording."""
    params = params or EventCameraParams()
    traits = SubjectTraits.from_seed(subject)
    ts = frame_times_us(spec)
    pos = blob_positions(spec, traits, ts / 1e6)
    streams = tuple(
        simulate_camera(render_log_frames(pos, traits, rig, v, params), ts, params)
        for v in range(rig.V)
    )
    return Recording(recording_id(spec.class_id, subject), spec.class_id, int(subject), streams)


def write_recording(rec: Recording, root: str | Path) -> RecordingManifest:
    root = Path(root)
    views = tuple(f"view{v}.csv" for v in range(rec.V))
    s0 = rec.streams[0]
    manifest = RecordingManifest(
        rec.recording_id, rec.label, rec.subject, rec.V, s0.width, s0.height, s0.t_begin, s0.t_end, views
    )
    folder = root / rec.recording_id
    folder.mkdir(parents=True, exist_ok=True)
    for name, stream in zip(views, rec.streams):
        write_events(stream, folder / name)
    manifest.write(root)
    return manifest


def synth_dataset(
    C: int,
    subjects: Sequence[int],
    rig: CameraRig,
    params: EventCameraParams | None = None,
    out_dir: str | Path = "data",
    duration_us: int = 2_340_000,
    frame_rate: float = 200.0,
    progress=None,
) -> list[RecordingManifest]:
    """Write C x len(subjects) recordings (one per class and subject)."""
    if C < 2:
        raise ValueError(f"need at least 2 classes, got {C}")
    if len(set(subjects)) != len(subjects):
        raise ValueError("subject seeds must be distinct")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifests = []
    for c in range(C):
        spec = ActionSpec.for_class(c, duration_us=duration_us, frame_rate=frame_rate)
        for s in subjects:
            manifests.append(write_recording(synth_recording(spec, s, rig, params), out))
            if progress is not None:
                progress(manifests[-1])
    return manifests
