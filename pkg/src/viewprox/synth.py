"""Synthetic landmark streams with analytically known ground truth.

A symmetric 68-point head template is posed in front of a pinhole camera
following a distance and rotation schedule. Each frame yields pixel
landmarks (optionally jittered) and a local 3D copy that is rescaled and
shifted by a random per-frame similarity, as a landmark detector's
per-frame 3D output would be. The archetype samplers at the bottom build
labeled datasets whose classes differ in how the viewer moves; the
archetype-to-label mapping is a test convention only.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from viewprox import CLASSES
from viewprox import landmarks as lm
from viewprox.errors import InvalidSpec
from viewprox.geometry import LandmarkFrame, estimate_distance_trace
from viewprox.trace import MAX_FRAMES, DistanceTrace

ARCHETYPES = ("approach", "neutral", "disengaged")
ARCHETYPE_LABEL = {"neutral": "TD", "approach": "ASD", "disengaged": "ID"}
LABEL_ARCHETYPE = {v: k for k, v in ARCHETYPE_LABEL.items()}
MIN_DISTANCE_CM = 15.0
MAX_DISTANCE_CM = 120.0


@dataclass
class HeadTemplate:
    points: np.ndarray  # 68x3, cm
    bitragion_cm: float = 10.6

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float)
        if self.points.shape != (lm.N_LANDMARKS, 3):
            raise InvalidSpec("template needs 68x3 points")
        a, b = lm.TRAGION_PROXIES
        if not math.isclose(np.linalg.norm(self.points[a] - self.points[b]), self.bitragion_cm, rel_tol=1e-12):
            raise InvalidSpec("tragion proxies are not bitragion_cm apart")
        centered = self.points - self.points.mean(axis=0)
        _, _, vt = np.linalg.svd(centered)
        if np.ptp(centered @ vt[2]) <= 1.0:
            raise InvalidSpec("template is too flat")

    @property
    def eye_midpoint(self) -> np.ndarray:
        return 0.5 * (self.points[list(lm.RIGHT_EYE)].mean(axis=0) + self.points[list(lm.LEFT_EYE)].mean(axis=0))


def load_template(bitragion_cm: float = 10.6) -> HeadTemplate:
    """The packaged head mesh, uniformly scaled to the requested bitragion breadth."""
    doc = json.loads(resources.files("viewprox").joinpath("data/head_template.json").read_text())
    pts = np.array(doc["points"], dtype=float)
    a, b = lm.TRAGION_PROXIES
    pts *= bitragion_cm / np.linalg.norm(pts[a] - pts[b])
    return HeadTemplate(pts, bitragion_cm)


@dataclass
class Intrinsics:
    focal_px: float = 500.0
    cx: float = 320.0
    cy: float = 240.0

    def __post_init__(self) -> None:
        if not self.focal_px > 0:
            raise InvalidSpec("focal length must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.focal_px, 0, self.cx], [0, self.focal_px, self.cy], [0, 0, 1.0]])


@dataclass
class TrajectorySpec:
    """Everything needed to render one synthetic viewer.

    Waypoints are (frame, value) pairs interpolated linearly and held
    constant outside their range. An explicit per-frame ``distances``
    list overrides ``distance_waypoints``. Gaps are half-open
    [start, end) frame intervals with no face.
    """

    duration_frames: int
    distance_waypoints: list = field(default_factory=lambda: [(0, 40.0)])
    distances: list | None = None
    yaw_waypoints: list = field(default_factory=lambda: [(0, 0.0)])  # degrees
    pitch_waypoints: list = field(default_factory=lambda: [(0, 0.0)])
    roll_waypoints: list = field(default_factory=lambda: [(0, 0.0)])
    offset_cm: tuple = (0.0, 0.0)
    gaps: list = field(default_factory=list)
    jitter_px: float = 0.0
    jitter3d: float = 0.0
    dropout: float = 0.0
    seed: int = 0
    archetype: str = "neutral"

    def __post_init__(self) -> None:
        for key in ("distance_waypoints", "yaw_waypoints", "pitch_waypoints", "roll_waypoints", "gaps"):
            setattr(self, key, [tuple(p) for p in getattr(self, key)])
        self.offset_cm = tuple(self.offset_cm)

    def validate(self) -> None:
        if self.archetype not in ARCHETYPES:
            raise InvalidSpec(f"unknown archetype {self.archetype!r}")
        if not isinstance(self.duration_frames, int) or not 1 <= self.duration_frames <= MAX_FRAMES:
            raise InvalidSpec(f"duration_frames must be an integer in [1, {MAX_FRAMES}]")
        d = self.distance_schedule()
        if not np.all(np.isfinite(d)) or d.min() < MIN_DISTANCE_CM or d.max() > MAX_DISTANCE_CM:
            raise InvalidSpec(f"distances must lie in [{MIN_DISTANCE_CM}, {MAX_DISTANCE_CM}] cm")
        if math.hypot(*self.offset_cm) >= 0.5 * MIN_DISTANCE_CM:
            raise InvalidSpec("offset too large")
        for start, end in self.gaps:
            if not 0 <= start < end <= self.duration_frames:
                raise InvalidSpec(f"gap ({start}, {end}) outside [0, {self.duration_frames})")
        if not 0 <= self.dropout <= 1:
            raise InvalidSpec("dropout must be a probability")
        if self.jitter_px < 0 or self.jitter3d < 0:
            raise InvalidSpec("noise levels must be nonnegative")

    def _interp(self, waypoints) -> np.ndarray:
        if not waypoints:
            raise InvalidSpec("empty waypoint list")
        wp = np.asarray(waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 2 or np.any(np.diff(wp[:, 0]) <= 0):
            raise InvalidSpec("waypoints must be (frame, value) pairs with increasing frames")
        return np.interp(np.arange(self.duration_frames), wp[:, 0], wp[:, 1])

    def distance_schedule(self) -> np.ndarray:
        if self.distances is not None:
            d = np.asarray(self.distances, dtype=float)
            if d.shape != (self.duration_frames,):
                raise InvalidSpec("distances must have one entry per frame")
            return d
        return self._interp(self.distance_waypoints)

    def angle_schedule(self) -> np.ndarray:
        """(N, 3) yaw, pitch, roll in radians."""
        return np.radians(
            np.column_stack(
                [self._interp(self.yaw_waypoints), self._interp(self.pitch_waypoints), self._interp(self.roll_waypoints)]
            )
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("distance_waypoints", "yaw_waypoints", "pitch_waypoints", "roll_waypoints", "gaps"):
            d[key] = [list(p) for p in d[key]]
        d["offset_cm"] = list(d["offset_cm"])
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrajectorySpec":
        if not isinstance(doc, dict):
            raise InvalidSpec("spec must be a mapping")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidSpec(f"unknown spec fields {sorted(unknown)}")
        if "duration_frames" not in doc:
            raise InvalidSpec("spec needs duration_frames")
        try:
            spec = cls(**doc)
            spec.validate()
        except InvalidSpec:
            raise
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(str(exc)) from exc
        return spec


def rotation(yaw: float, pitch: float, roll: float = 0.0) -> np.ndarray:
    """Ry(yaw) @ Rx(pitch) @ Rz(roll)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return Ry @ Rx @ Rz


@dataclass
class GroundTruth:
    """Per-frame truth; rotations/translations map head cm to camera cm."""

    distances: np.ndarray
    angles: np.ndarray  # (N, 3) yaw, pitch, roll radians
    rotations: np.ndarray  # (N, 3, 3)
    translations: np.ndarray  # (N, 3)
    local_scales: np.ndarray  # per-frame scale of the emitted 3D
    local_offsets: np.ndarray  # (N, 3)
    K: np.ndarray

    def projection(self, k: int) -> np.ndarray:
        return self.K @ np.column_stack([self.rotations[k], self.translations[k]])

    def camera_center_head(self, k: int) -> np.ndarray:
        return -self.rotations[k].T @ self.translations[k]

    def camera_center_local(self, k: int, ref: int) -> np.ndarray:
        """Camera of frame k expressed in frame ref's local 3D coordinates."""
        c = self.camera_center_head(k)
        return self.local_scales[ref] * (self.rotations[ref] @ c) + self.local_offsets[ref]

    def to_dict(self) -> dict:
        return {
            "distance_cm": self.distances.tolist(),
            "yaw_rad": self.angles[:, 0].tolist(),
            "pitch_rad": self.angles[:, 1].tolist(),
            "roll_rad": self.angles[:, 2].tolist(),
            "rotations": self.rotations.tolist(),
            "translations_cm": self.translations.tolist(),
            "K": self.K.tolist(),
        }


def generate_stream(
    template: HeadTemplate, spec: TrajectorySpec, camera: Intrinsics | None = None
) -> tuple[list[LandmarkFrame], GroundTruth]:
    spec.validate()
    camera = camera or Intrinsics()
    n = spec.duration_frames
    rng = np.random.default_rng(spec.seed)
    dist = spec.distance_schedule()
    angles = spec.angle_schedule()
    ox, oy = spec.offset_cm
    eye = template.eye_midpoint
    X = template.points

    # Draw all randomness up front so the stream does not depend on detection outcomes.
    jitter2d = rng.normal(0.0, 1.0, size=(n, lm.N_LANDMARKS, 2)) * spec.jitter_px
    jitter3d = rng.normal(0.0, 1.0, size=(n, lm.N_LANDMARKS, 3)) * spec.jitter3d
    scales = np.exp(rng.uniform(math.log(0.5), math.log(2.0), size=n))
    offsets = rng.normal(0.0, 5.0, size=(n, 3))
    dropped = rng.random(n) < spec.dropout
    in_gap = np.zeros(n, dtype=bool)
    for start, end in spec.gaps:
        in_gap[start:end] = True

    K = camera.K
    rotations = np.empty((n, 3, 3))
    translations = np.empty((n, 3))
    frames = []
    for k in range(n):
        R = rotation(*angles[k])
        eye_cam = np.array([ox, oy, math.sqrt(dist[k] ** 2 - ox * ox - oy * oy)])
        t = eye_cam - R @ eye
        rotations[k], translations[k] = R, t
        cam = X @ R.T + t
        if np.any(cam[:, 2] <= 0):
            raise InvalidSpec(f"frame {k}: landmarks behind the camera")
        h = cam @ K.T
        uv = h[:, :2] / h[:, 2:] + jitter2d[k]
        local = scales[k] * (X @ R.T + jitter3d[k]) + offsets[k]
        if in_gap[k] or dropped[k]:
            frames.append(LandmarkFrame(k, False))
        else:
            frames.append(LandmarkFrame(k, True, uv, local))
    truth = GroundTruth(
        distances=np.linalg.norm(translations + np.einsum("nij,j->ni", rotations, eye), axis=1),
        angles=angles,
        rotations=rotations,
        translations=translations,
        local_scales=scales,
        local_offsets=offsets,
        K=K,
    )
    return frames, truth


def validation_spec(jitter_px: float = 0.1, seed: int = 7) -> TrajectorySpec:
    """Viewer starting at 30 cm, backing off to 50 cm and returning."""
    return TrajectorySpec(
        duration_frames=300,
        distance_waypoints=[(0, 30.0), (40, 30.0), (140, 50.0), (160, 50.0), (260, 30.0), (299, 30.0)],
        yaw_waypoints=[(0, 0.0), (60, 6.0), (120, -4.0), (180, 5.0), (240, -6.0), (299, 0.0)],
        pitch_waypoints=[(0, 0.0), (90, 4.0), (200, -3.0), (299, 0.0)],
        offset_cm=(1.0, 2.0),
        jitter_px=jitter_px,
        seed=seed,
    )


def yaw_sweep_spec(frontal_frame: int = 57, max_yaw_deg: float = 40.0, distance_cm: float = 40.0) -> TrajectorySpec:
    """Yaw swept linearly from -max to +max, exactly frontal at ``frontal_frame``."""
    n = 2 * frontal_frame + 1
    return TrajectorySpec(
        duration_frames=n,
        distance_waypoints=[(0, distance_cm)],
        yaw_waypoints=[(0, -max_yaw_deg), (n - 1, max_yaw_deg)],
    )


# Archetype samplers. Distances are cm, times are frames at 30 fps.


def _wobble(rng: np.random.Generator, n: int, amplitude_deg: float) -> list:
    knots = list(range(0, n, 40)) + ([n - 1] if (n - 1) % 40 else [])
    return [(k, float(rng.uniform(-amplitude_deg, amplitude_deg))) for k in knots]


def _neutral(rng: np.random.Generator, n: int) -> tuple[np.ndarray, list]:
    t = np.arange(n)
    base = rng.uniform(36, 46)
    amp = rng.uniform(2.0, 4.0)
    period = rng.uniform(50, 90)
    d = base + amp * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi)) + 0.002 * (t - n / 2) * rng.normal()
    return d, []


def _approach(rng: np.random.Generator, n: int) -> tuple[np.ndarray, list]:
    base = rng.uniform(28, 36)
    d = np.empty(n)
    k = 0
    while k < n:
        lean = int(rng.uniform(150, 300))
        back = int(rng.uniform(10, 20))
        depth = rng.uniform(6, 12)
        seg = np.concatenate([np.linspace(base, base - depth, lean), np.linspace(base - depth, base, back)])
        d[k : k + len(seg)] = seg[: n - k]
        k += len(seg)
    return d, []


def _disengaged(rng: np.random.Generator, n: int) -> tuple[np.ndarray, list]:
    base = rng.uniform(38, 50)
    d = np.empty(n)
    k = 0
    while k < n:
        hold = int(rng.uniform(20, 45))
        d[k : k + hold] = np.clip(base + rng.normal(0, 4), 25, 70)
        k += hold
    gaps = []
    k = int(rng.uniform(40, 150))
    while k < n - 1:
        length = int(rng.uniform(30, 80))
        gaps.append((k, min(n, k + length)))
        k += length + int(rng.uniform(100, 200))
    return d, gaps


_SAMPLERS = {"neutral": _neutral, "approach": _approach, "disengaged": _disengaged}


def sample_trajectory(archetype: str, seed: int, jitter_px: float = 0.3) -> TrajectorySpec:
    if archetype not in _SAMPLERS:
        raise InvalidSpec(f"unknown archetype {archetype!r}")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(400, 1201))
    d, gaps = _SAMPLERS[archetype](rng, n)
    spec = TrajectorySpec(
        duration_frames=n,
        distances=np.clip(d, MIN_DISTANCE_CM, MAX_DISTANCE_CM).tolist(),
        yaw_waypoints=_wobble(rng, n, 12.0),
        pitch_waypoints=_wobble(rng, n, 8.0),
        offset_cm=(float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))),
        gaps=gaps,
        jitter_px=jitter_px,
        dropout=0.01,
        seed=int(rng.integers(2**31)),
        archetype=archetype,
    )
    spec.validate()
    return spec


@dataclass
class SubjectRecord:
    subject_id: str
    label: str
    trace: DistanceTrace
    truth: GroundTruth
    spec: TrajectorySpec


def generate_subject(subject_id: str, label: str, seed: int, template: HeadTemplate | None = None,
                     camera: Intrinsics | None = None) -> SubjectRecord:
    template = template or load_template()
    spec = sample_trajectory(LABEL_ARCHETYPE[label], seed)
    frames, truth = generate_stream(template, spec, camera)
    trace = estimate_distance_trace(frames, subject_id=subject_id, label=label)
    return SubjectRecord(subject_id, label, trace, truth, spec)


def generate_dataset(class_counts: tuple[int, int, int], seed: int = 0) -> list[SubjectRecord]:
    """Labeled subjects in TD, ASD, ID order; subject i is seeded by (seed, i)."""
    if len(class_counts) != 3 or any(int(c) < 1 for c in class_counts):
        raise InvalidSpec("need at least one subject per class")
    template = load_template()
    camera = Intrinsics()
    records = []
    for label, count in zip(CLASSES, class_counts):
        for _ in range(int(count)):
            idx = len(records)
            subj_seed = int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])
            records.append(generate_subject(f"S{idx:03d}", label, subj_seed, template, camera))
    return records


def load_spec(path: str | Path) -> TrajectorySpec:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidSpec(f"{path}: {exc}") from exc
    return TrajectorySpec.from_dict(doc)
