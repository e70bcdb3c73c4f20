"""Camera-centre recovery against a rigid face model and metric scaling.

The detector supplies, for every frame, 2D landmarks in pixels and 3D
landmarks in a per-frame local coordinate system. The local 3D is not
comparable across frames, so a single reference frame (the most frontal
one) is promoted to a rigid face model. Every other frame is resected
against that model with a normalized DLT, which yields the camera centre
in model units. Bitragion breadth converts model units to centimetres.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from viewprox import landmarks as lm
from viewprox.errors import DegenerateLandmarks, EmptyStream, IllConditioned, NotDetected
from viewprox.trace import DistanceTrace

BITRAGION_CM = 10.6
CONDITIONING_THRESHOLD = 10.0
# Smallest/largest principal extent below which a model counts as planar.
PLANARITY_TOL = 1e-3
RANK_TOL = 1e-10
MIN_CORRESPONDENCES = 6
EYE_MODES = ("mid", "left", "right")


@dataclass
class LandmarkFrame:
    frame_index: int
    detected: bool
    points2d: np.ndarray | None = None
    points3d: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        if self.points2d is not None:
            self.points2d = np.asarray(self.points2d, dtype=float)
        if self.points3d is not None:
            self.points3d = np.asarray(self.points3d, dtype=float)
        if self.detected:
            if self.points2d is None or self.points2d.shape != (lm.N_LANDMARKS, 2):
                raise ValueError(f"frame {self.frame_index}: detected frames need 68x2 points2d")
            if not np.all(np.isfinite(self.points2d)):
                raise ValueError(f"frame {self.frame_index}: non-finite 2D landmark")
        if self.points3d is not None and self.points3d.shape != (lm.N_LANDMARKS, 3):
            raise ValueError(f"frame {self.frame_index}: points3d must be 68x3")


@dataclass
class FaceModel:
    reference_frame: int
    points3d: np.ndarray
    bitragion_model_units: float
    scale_cm_per_unit: float

    def eye_point(self, mode: str = "mid") -> np.ndarray:
        right = self.points3d[list(lm.RIGHT_EYE)].mean(axis=0)
        left = self.points3d[list(lm.LEFT_EYE)].mean(axis=0)
        if mode == "mid":
            return 0.5 * (left + right)
        if mode == "left":
            return left
        if mode == "right":
            return right
        raise ValueError(f"eye mode must be one of {EYE_MODES}")


@dataclass
class CameraPose:
    projection: np.ndarray  # 3x4, unit Frobenius norm, positive depth for the model
    center: np.ndarray
    reprojection_rms: float


def _check_points3d(points3d) -> np.ndarray:
    pts = np.asarray(points3d, dtype=float)
    if pts.shape != (lm.N_LANDMARKS, 3) or not np.all(np.isfinite(pts)):
        raise DegenerateLandmarks("need 68 finite 3D landmarks")
    return pts


def _face_axes_batch(pts: np.ndarray) -> np.ndarray:
    """(N, 3, 3) face frames for (N, 68, 3) landmark sets; raises on any degenerate set."""
    right = pts[:, [a for a, _ in lm.MIRROR_PAIRS]]
    left = pts[:, [b for _, b in lm.MIRROR_PAIRS]]
    diffs = left - right
    extent = np.ptp(pts, axis=1).max(axis=1)
    if np.any(extent == 0):
        raise DegenerateLandmarks("all landmarks coincide")
    _, s, vt = np.linalg.svd(diffs / extent[:, None, None], full_matrices=False)
    if np.any(s[:, 0] < 1e-9):
        raise DegenerateLandmarks("symmetric pairs do not define a lateral axis")
    lateral = vt[:, 0]
    flip = np.einsum("ni,ni->n", lateral, diffs.sum(axis=1)) < 0
    lateral[flip] *= -1
    up = pts[:, lm.NASION] - pts[:, lm.CHIN]
    up -= np.einsum("ni,ni->n", up, lateral)[:, None] * lateral
    norm = np.linalg.norm(up, axis=1)
    if np.any(norm < 1e-9 * extent):
        raise DegenerateLandmarks("chin-nasion axis is parallel to the lateral axis")
    up /= norm[:, None]
    return np.stack([lateral, up, np.cross(lateral, up)], axis=2)


def face_axes(points3d) -> np.ndarray:
    """Orthonormal face frame as columns (lateral, up, facing).

    The lateral axis is the dominant direction of the mirror-pair
    differences, i.e. the normal of the best-fit sagittal plane. The up
    axis is chin-to-nasion projected into that plane. The facing axis
    points out of the face.
    """
    return _face_axes_batch(_check_points3d(points3d)[None])[0]


def _angles_from_axes(axes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # R @ e_z is the into-head direction, the opposite of facing.
    f = -axes[..., 2]
    pitch = np.arcsin(np.clip(-f[..., 1], -1.0, 1.0))
    yaw = np.arctan2(f[..., 0], f[..., 2])
    return yaw, pitch


def head_angles(points3d) -> tuple[float, float]:
    """(yaw, pitch) in radians of a landmark set, zero for a frontal face.

    Angles follow R = Ry(yaw) @ Rx(pitch) @ Rz(roll), where R carries the
    frontal head frame onto the observed one. Roll does not enter.
    """
    yaw, pitch = _angles_from_axes(face_axes(points3d))
    return float(yaw), float(pitch)


def frontality_score(points3d) -> float:
    yaw, pitch = head_angles(points3d)
    return yaw * yaw + pitch * pitch


def select_reference_frame(stream: Iterable[LandmarkFrame]) -> int:
    """Index of the detected frame with the lowest frontality score.

    Ties go to the earliest frame; frames whose 3D is degenerate are skipped.
    """
    candidates = [
        f for f in stream if f.detected and f.points3d is not None and np.all(np.isfinite(f.points3d))
    ]
    if not candidates:
        raise EmptyStream("no detected frame with 3D landmarks")
    try:
        yaw, pitch = _angles_from_axes(_face_axes_batch(np.stack([f.points3d for f in candidates])))
        scores = yaw**2 + pitch**2
    except DegenerateLandmarks:
        scores = np.full(len(candidates), np.inf)
        for i, f in enumerate(candidates):
            try:
                scores[i] = frontality_score(f.points3d)
            except DegenerateLandmarks:
                pass
        if not np.any(np.isfinite(scores)):
            raise EmptyStream("no frame with usable 3D landmarks") from None
    best = min(range(len(candidates)), key=lambda i: (scores[i], candidates[i].frame_index))
    return candidates[best].frame_index


def bitragion_scale(points3d) -> float:
    """Centimetres per model unit, assuming a 10.6 cm bitragion breadth."""
    pts = _check_points3d(points3d)
    a, b = lm.TRAGION_PROXIES
    width = float(np.linalg.norm(pts[a] - pts[b]))
    extent = float(np.ptp(pts, axis=0).max())
    if width == 0 or width < 1e-9 * extent:
        raise DegenerateLandmarks("tragion proxies coincide")
    return BITRAGION_CM / width


def build_face_model(points3d, reference_frame: int = 0) -> FaceModel:
    pts = _check_points3d(points3d).copy()
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0 or s[2] / s[0] < PLANARITY_TOL:
        raise DegenerateLandmarks("face model is (near-)planar")
    scale = bitragion_scale(pts)
    return FaceModel(
        reference_frame=reference_frame,
        points3d=pts,
        bitragion_model_units=BITRAGION_CM / scale,
        scale_cm_per_unit=scale,
    )


def _normalizer(pts: np.ndarray) -> np.ndarray:
    """Similarity taking pts to zero centroid and RMS distance sqrt(dim)."""
    dim = pts.shape[1]
    centroid = pts.mean(axis=0)
    rms = math.sqrt(np.mean(np.sum((pts - centroid) ** 2, axis=1)))
    if rms == 0:
        raise DegenerateLandmarks("correspondences collapse to a point")
    s = math.sqrt(dim) / rms
    T = np.eye(dim + 1)
    T[:dim, :dim] *= s
    T[:dim, dim] = -s * centroid
    return T


def _design_matrices(X: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(N, 2n, 12) DLT systems for homogeneous 3D X (n, 4) and 2D x (N, n, 3)."""
    N, n = x.shape[:2]
    A = np.zeros((N, 2 * n, 12))
    A[:, 0::2, 0:4] = X
    A[:, 0::2, 8:12] = -x[..., :1] * X
    A[:, 1::2, 4:8] = X
    A[:, 1::2, 8:12] = -x[..., 1:2] * X
    return A


def _dlt_batch(points3d: np.ndarray, points2d: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Projection matrices for one 3D point set seen in N images.

    Returns (P, ok): P is (N, 3, 4) with unit Frobenius norm and positive
    mean depth, ok flags systems that pass the conditioning test.
    """
    n = len(points3d)
    if n < MIN_CORRESPONDENCES:
        raise IllConditioned(f"{n} correspondences, need {MIN_CORRESPONDENCES}")
    T3 = _normalizer(points3d)
    Xh = np.column_stack([points3d, np.ones(n)])
    X = Xh @ T3.T
    T2 = np.stack([_normalizer(p) for p in points2d])
    x = np.concatenate([points2d, np.ones(points2d.shape[:2] + (1,))], axis=2) @ T2.transpose(0, 2, 1)
    _, s, vt = np.linalg.svd(_design_matrices(X, x), full_matrices=False)
    with np.errstate(divide="ignore"):
        ratio = np.where(s[:, -1] == 0, np.inf, s[:, -2] / s[:, -1])
    P = np.linalg.solve(T2, vt[:, -1].reshape(-1, 3, 4)) @ T3
    P /= np.linalg.norm(P, axis=(1, 2))[:, None, None]
    depth = (P[:, 2] @ Xh.T).mean(axis=1)
    P[depth < 0] *= -1
    # A second vanishing singular value means a multi-dimensional null space.
    return P, (ratio >= threshold) & (s[:, -2] > RANK_TOL * s[:, 0])


def dlt(points3d: np.ndarray, points2d: np.ndarray, threshold: float = CONDITIONING_THRESHOLD) -> np.ndarray:
    """Homogeneous least-squares projection matrix from 2D-3D correspondences.

    Both point sets are Hartley-normalized first. The system is rejected
    when its two smallest singular values are within a factor
    ``threshold`` of each other, since the solution is then ambiguous.
    """
    P, ok = _dlt_batch(np.asarray(points3d, float), np.asarray(points2d, float)[None], threshold)
    if not ok[0]:
        raise IllConditioned(f"singular value ratio below {threshold}")
    return P[0]


def camera_center(P: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(P)
    c = vt[-1]
    if abs(c[3]) < 1e-12 * np.linalg.norm(c):
        raise IllConditioned("camera centre at infinity")
    return c[:3] / c[3]


def project(P: np.ndarray, points3d: np.ndarray) -> np.ndarray:
    h = np.column_stack([points3d, np.ones(len(points3d))]) @ P.T
    return h[:, :2] / h[:, 2:]


def resect_camera(model: FaceModel, frame: LandmarkFrame, threshold: float = CONDITIONING_THRESHOLD) -> CameraPose:
    if not frame.detected:
        raise NotDetected(f"frame {frame.frame_index} has no face")
    usable = np.all(np.isfinite(frame.points2d), axis=1) & np.all(np.isfinite(model.points3d), axis=1)
    X = model.points3d[usable]
    x = frame.points2d[usable]
    P = dlt(X, x, threshold)
    center = camera_center(P)
    rms = float(np.sqrt(np.mean(np.sum((project(P, X) - x) ** 2, axis=1))))
    return CameraPose(projection=P, center=center, reprojection_rms=rms)


def reference_model(stream: Sequence[LandmarkFrame]) -> FaceModel:
    ref = select_reference_frame(stream)
    frame = next(f for f in stream if f.frame_index == ref)
    return build_face_model(frame.points3d, reference_frame=ref)


def estimate_distance_trace(
    stream: Sequence[LandmarkFrame],
    subject_id: str = "",
    label: str | None = None,
    eye: str = "mid",
    threshold: float = CONDITIONING_THRESHOLD,
) -> DistanceTrace:
    """Per-frame metric distance between camera centre and the eyes.

    Undetected frames and frames whose resection is ill-conditioned come
    out missing.
    """
    stream = list(stream)
    if not stream:
        raise EmptyStream("empty landmark stream")
    indices = [f.frame_index for f in stream]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ValueError("frame indices must be strictly increasing")
    model = reference_model(stream)
    target = model.eye_point(eye)
    values = np.full(len(stream), np.nan)
    rows = [i for i, f in enumerate(stream) if f.detected]
    if rows:
        P, ok = _dlt_batch(model.points3d, np.stack([stream[i].points2d for i in rows]), threshold)
        _, _, vt = np.linalg.svd(P)
        c = vt[:, -1]
        ok &= np.abs(c[:, 3]) >= 1e-12 * np.linalg.norm(c, axis=1)
        centers = c[ok, :3] / c[ok, 3:]
        values[np.array(rows)[ok]] = model.scale_cm_per_unit * np.linalg.norm(centers - target, axis=1)
    return DistanceTrace(values, subject_id=subject_id, label=label, frames=np.array(indices))


# Landmark stream files: one JSON object per line.


def frame_to_record(frame: LandmarkFrame) -> dict:
    return {
        "frame": int(frame.frame_index),
        "detected": bool(frame.detected),
        "points2d": None if frame.points2d is None else frame.points2d.tolist(),
        "points3d": None if frame.points3d is None else frame.points3d.tolist(),
    }


def frame_from_record(rec: dict) -> LandmarkFrame:
    missing = {"frame", "detected", "points2d"} - rec.keys()
    if missing:
        raise ValueError(f"landmark record lacks {sorted(missing)}")
    return LandmarkFrame(
        frame_index=int(rec["frame"]),
        detected=bool(rec["detected"]),
        points2d=None if rec["points2d"] is None else np.array(rec["points2d"], dtype=float),
        points3d=None if rec.get("points3d") is None else np.array(rec["points3d"], dtype=float),
    )


def write_landmarks(path: str | Path, stream: Iterable[LandmarkFrame]) -> None:
    with open(path, "w") as fh:
        for frame in stream:
            fh.write(json.dumps(frame_to_record(frame)) + "\n")


def read_landmarks(path: str | Path) -> list[LandmarkFrame]:
    frames = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                frames.append(frame_from_record(json.loads(line)))
            except (ValueError, TypeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return frames
