"""Planar pose from a detected quad and camera localization from a marker map.

Conventions match the renderer: camera +z forward, +x right, +y down; the
marker frame has x right and y down in the panel plane, so its +z axis
points away from a camera that sees the panel frontally.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from ledmarker.errors import BehindCamera, ConfigError, UnknownMarker
from ledmarker.geometry import dlt_homography
from ledmarker.optics import CameraModel, marker_corners_3d


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    rotation: np.ndarray
    translation: np.ndarray

    @property
    def distance(self) -> float:
        return float(self.translation[2])

    @property
    def yaw(self) -> float:
        """Turn of the panel normal about the camera's vertical axis, degrees."""
        return math.degrees(math.atan2(self.rotation[0, 2], self.rotation[2, 2]))

    @property
    def roll(self) -> float:
        return math.degrees(math.atan2(self.rotation[1, 0], self.rotation[1, 1]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "distance": self.distance,
            "yaw": self.yaw,
        }


def homography_from_quad(corners, marker_side: float) -> np.ndarray:
    """DLT from the panel corners (+-side/2) to image ``corners`` (TL, TR, BR, BL)."""
    corners = np.asarray(getattr(corners, "corners", corners), dtype=float)
    return dlt_homography(marker_corners_3d(marker_side), corners)


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def decompose(H: np.ndarray, camera: CameraModel) -> PoseEstimate:
    h = np.linalg.solve(camera.K, np.asarray(H, dtype=float))
    h1, h2, h3 = h[:, 0], h[:, 1], h[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    t = lam * h3
    if t[2] < 0:
        lam, t = -lam, -t
    if not t[2] > 0:
        raise BehindCamera("translation has no positive depth")
    r1, r2 = lam * h1, lam * h2
    R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return PoseEstimate(R, t)


def camera_position(pose: PoseEstimate, marker_position, marker_orientation) -> np.ndarray:
    """World position of the camera given one marker's world placement."""
    p = np.asarray(marker_position, dtype=float)
    Rw = np.asarray(marker_orientation, dtype=float)
    return p - Rw @ pose.rotation.T @ pose.translation


@dataclass(frozen=True, eq=False)
class MapEntry:
    position: np.ndarray
    orientation: np.ndarray
    marker_side: float


class MarkerMap:
    """Surveyed world placement of each marker ID."""

    def __init__(self, entries: Mapping[int, MapEntry] | None = None):
        self.entries: dict[int, MapEntry] = {}
        for marker_id, e in (entries or {}).items():
            self.add(marker_id, e.position, e.orientation, e.marker_side)

    def add(self, marker_id: int, position, orientation, marker_side: float) -> None:
        if marker_id in self.entries:
            raise ConfigError(f"duplicate marker id {marker_id}")
        R = np.asarray(orientation, dtype=float).reshape(3, 3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ConfigError(f"orientation for marker {marker_id} is not a rotation")
        pos = np.asarray(position, dtype=float).reshape(3)
        self.entries[int(marker_id)] = MapEntry(pos, R, float(marker_side))

    def __getitem__(self, marker_id: int) -> MapEntry:
        try:
            return self.entries[marker_id]
        except KeyError:
            raise UnknownMarker(f"marker {marker_id} is not in the map") from None

    def __contains__(self, marker_id: object) -> bool:
        return marker_id in self.entries

    def to_dict(self) -> dict[str, Any]:
        return {
            "entries": [
                {
                    "id": i,
                    "position": e.position.tolist(),
                    "orientation": e.orientation.ravel().tolist(),
                    "marker_side": e.marker_side,
                }
                for i, e in sorted(self.entries.items())
            ]
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MarkerMap:
        m = cls()
        try:
            for e in data["entries"]:
                m.add(int(e["id"]), e["position"], e["orientation"], e["marker_side"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed marker map: {exc}") from exc
        return m

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> MarkerMap:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read marker map {path}: {exc}") from exc


def localize(detection, pose: PoseEstimate, marker_map: MarkerMap) -> np.ndarray:
    """Camera world position from one detection (or bare marker id) and its pose."""
    marker_id = getattr(detection, "id", detection)
    entry = marker_map[marker_id]
    return camera_position(pose, entry.position, entry.orientation)


def localize_many(fixes, marker_map: MarkerMap) -> np.ndarray:
    """Mean camera position over several ``(detection, pose)`` pairs.

    Each marker gives an independent fix; their pixel-quantization errors
    are unrelated, so the mean is tighter than any single one.
    """
    fixes = list(fixes)
    if not fixes:
        raise ConfigError("need at least one (detection, pose) fix")
    return np.mean([localize(det, pose, marker_map) for det, pose in fixes], axis=0)


def reprojection_error(pose: PoseEstimate, corners, camera: CameraModel, marker_side: float) -> np.ndarray:
    obj = np.column_stack([marker_corners_3d(marker_side), np.zeros(4)])
    P = (obj @ pose.rotation.T + pose.translation) @ camera.K.T
    return P[:, :2] / P[:, 2:] - np.asarray(corners, dtype=float)


def refine_pose(pose: PoseEstimate, corners, camera: CameraModel, marker_side: float) -> PoseEstimate:
    """Levenberg-Marquardt polish of a homography pose on corner reprojection.

    The linear decomposition spreads error evenly across the nine homography
    entries; minimizing pixel residuals instead weights the corners the way
    the detector actually measured them.
    """
    corners = np.asarray(corners, dtype=float)
    x0 = np.concatenate([Rotation.from_matrix(pose.rotation).as_rotvec(), pose.translation])

    def residuals(x):
        R = Rotation.from_rotvec(x[:3]).as_matrix()
        return reprojection_error(PoseEstimate(R, x[3:]), corners, camera, marker_side).ravel()

    sol = least_squares(residuals, x0, method="lm")
    if not sol.success or sol.x[5] <= 0:
        return pose
    return PoseEstimate(Rotation.from_rotvec(sol.x[:3]).as_matrix(), sol.x[3:].copy())


def estimate_pose(detection, camera: CameraModel, marker_side: float, refine: bool = True) -> PoseEstimate:
    """Pose of a detected marker, using corners in the marker's own order."""
    corners = detection.marker_corners()
    pose = decompose(homography_from_quad(corners, marker_side), camera)
    return refine_pose(pose, corners, camera, marker_side) if refine else pose
