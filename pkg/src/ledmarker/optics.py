"""Rolling-shutter pinhole camera and the LED-panel renderer.

Row ``v`` of a frame is read out at ``t0 + v * frame_scan_time / height``, so
a source blinking at ``f`` Hz leaves horizontal bands ``height /
frame_scan_time / (2 f)`` lines tall.

Frame conventions: camera +z forward, +x right, +y down.  The marker plane
has its origin at the panel center with x right and y down; its +z axis
points away from a frontal camera.  Pixel ``(u, v)`` has its center at
integer coordinates.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
from scipy import ndimage

from ledmarker.codec import BlinkAssignment, SquareWave
from ledmarker.errors import ConfigError, DegeneratePose

# Brightness of an "off" cell as a fraction of full scale.  The diffuser in
# front of the LEDs never goes fully dark, which keeps the panel outline
# visible between bands.
DEFAULT_GLOW = 0.25


def _from_mapping(cls, data: dict[str, Any]):
    names = {f.name for f in fields(cls)}
    data = {k: v for k, v in data.items() if k != "description"}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__} config: {exc}") from exc


def load_json(path: str | Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


@dataclass(frozen=True)
class CameraModel:
    width: int = 640
    height: int = 480
    fx: float = 1000.0
    fy: float = 1000.0
    cx: float = 319.5
    cy: float = 239.5
    frame_scan_time: float = 0.01

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("camera resolution must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if self.frame_scan_time <= 0:
            raise ConfigError("frame_scan_time must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def line_time(self) -> float:
        return self.frame_scan_time / self.height

    def line_times(self, t0: float) -> np.ndarray:
        return t0 + np.arange(self.height) * self.frame_scan_time / self.height

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CameraModel:
        return _from_mapping(cls, data)


@dataclass(frozen=True)
class ScenePose:
    """Marker placement in front of the camera.

    ``yaw`` turns the panel about its vertical axis (0 is frontal); ``roll``
    spins it in its own plane, clockwise in the image for positive values.
    """

    distance: float = 0.6
    yaw: float = 0.0
    marker_side: float = 0.16
    roll: float = 0.0

    def __post_init__(self):
        if self.distance <= 0:
            raise ConfigError("distance must be positive")
        if not abs(self.yaw) < 90:
            raise ConfigError("|yaw| must be below 90 degrees")
        if self.marker_side <= 0:
            raise ConfigError("marker_side must be positive")

    def rotation(self) -> np.ndarray:
        return rotation_yaw_roll(self.yaw, self.roll)

    def translation(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.distance])

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenePose:
        return _from_mapping(cls, data)


@dataclass(frozen=True)
class NoiseModel:
    gaussian_sigma: float = 0.0
    ambient: float = 0.0
    blur_radius: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.ambient < 0 or self.blur_radius < 0:
            raise ConfigError("noise parameters must be non-negative")

    def with_seed(self, seed: int) -> NoiseModel:
        return NoiseModel(self.gaussian_sigma, self.ambient, self.blur_radius, seed)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> NoiseModel:
        return _from_mapping(cls, data)


@dataclass(frozen=True, eq=False)
class Frame:
    """8-bit grayscale image, ``pixels[v, u]`` with row 0 read out first."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2:
            raise ConfigError("frame pixels must be 2-D")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and self.pixels.tobytes() == other.pixels.tobytes()

    def to_pgm(self) -> bytes:
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.pixels.tobytes()

    @classmethod
    def from_pgm(cls, data: bytes) -> Frame:
        # Header tokens may be separated by any whitespace and '#' comments.
        pos = 0
        tokens: list[bytes] = []
        token_re = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")
        while len(tokens) < 4:
            m = token_re.match(data, pos)
            if m is None:
                raise ConfigError("truncated PGM header")
            tokens.append(m.group(1))
            pos = m.end()
        if tokens[0] != b"P5":
            raise ConfigError(f"only binary PGM (P5) is supported, got {tokens[0]!r}")
        width, height, maxval = (int(t) for t in tokens[1:])
        if maxval != 255:
            raise ConfigError(f"only maxval 255 is supported, got {maxval}")
        pos += 1  # single whitespace byte after maxval
        body = data[pos : pos + width * height]
        if len(body) != width * height:
            raise ConfigError("PGM pixel data is truncated")
        return cls(np.frombuffer(body, dtype=np.uint8).reshape(height, width))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_pgm())

    @classmethod
    def load(cls, path: str | Path) -> Frame:
        try:
            return cls.from_pgm(Path(path).read_bytes())
        except OSError as exc:
            raise ConfigError(f"cannot read frame {path}: {exc}") from exc


def band_width(camera: CameraModel, f: float) -> float:
    """Predicted height in scan lines of one on (or off) band at ``f`` Hz."""
    if f <= 0:
        raise ConfigError("frequency must be positive")
    return camera.height / camera.frame_scan_time / (2.0 * f)


def sample_wave(wave: SquareWave, t):
    """Luminance of ``wave`` at time ``t`` (scalar or array)."""
    cycles = (np.asarray(t, dtype=float) - wave.phase) * wave.frequency
    frac = cycles - np.floor(cycles)
    out = np.where(frac < wave.duty, wave.amplitude, 0.0)
    return float(out) if out.ndim == 0 else out


def rotation_yaw_roll(yaw_deg: float, roll_deg: float = 0.0) -> np.ndarray:
    """Marker-to-camera rotation: roll in the marker plane, then yaw about y."""
    a, b = math.radians(yaw_deg), math.radians(roll_deg)
    ry = np.array([[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0], [-math.sin(a), 0.0, math.cos(a)]])
    rz = np.array([[math.cos(b), -math.sin(b), 0.0], [math.sin(b), math.cos(b), 0.0], [0.0, 0.0, 1.0]])
    return ry @ rz


def marker_corners_3d(marker_side: float) -> np.ndarray:
    """Panel corners in the marker plane: top-left, top-right, bottom-right, bottom-left."""
    h = marker_side / 2.0
    return np.array([[-h, -h], [h, -h], [h, h], [-h, h]])


def pose_homography(camera: CameraModel, rotation: np.ndarray, translation: np.ndarray, marker_side: float) -> np.ndarray:
    """Homography from marker-plane meters to pixels for an arbitrary rigid pose."""
    rotation = np.asarray(rotation, dtype=float)
    translation = np.asarray(translation, dtype=float).reshape(3)
    corners = marker_corners_3d(marker_side)
    depth = corners @ rotation[2, :2] + translation[2]
    if np.any(depth <= 0):
        raise DegeneratePose("marker corner lies on or behind the camera plane")
    H = camera.K @ np.column_stack([rotation[:, 0], rotation[:, 1], translation])
    return H / H[2, 2]


def marker_homography(camera: CameraModel, pose: ScenePose) -> np.ndarray:
    return pose_homography(camera, pose.rotation(), pose.translation(), pose.marker_side)


def project_points(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    homog = np.column_stack([pts, np.ones(len(pts))]) @ H.T
    return homog[:, :2] / homog[:, 2:3]


def projected_corners(camera: CameraModel, pose: ScenePose) -> np.ndarray:
    """Image positions of the panel corners in marker order (TL, TR, BR, BL)."""
    return project_points(marker_homography(camera, pose), marker_corners_3d(pose.marker_side))


def render_frame(
    camera: CameraModel,
    pose: ScenePose,
    panel: BlinkAssignment,
    t0: float,
    noise: NoiseModel = NoiseModel(),
    glow: float = DEFAULT_GLOW,
) -> Frame:
    H = marker_homography(camera, pose)
    return render_homography(camera, H, pose.marker_side, panel, t0, noise, glow)


def render_homography(
    camera: CameraModel,
    H: np.ndarray,
    marker_side: float,
    panel: BlinkAssignment,
    t0: float,
    noise: NoiseModel = NoiseModel(),
    glow: float = DEFAULT_GLOW,
) -> Frame:
    """Render the blinking panel seen through homography ``H``.

    Each pixel center is mapped back onto the marker plane; pixels landing on
    the panel take the luminance of their cell's wave at the row's readout
    time.  Blur, ambient offset and Gaussian noise are applied afterwards.
    """
    if not 0.0 <= glow < 1.0:
        raise ConfigError("glow must be in [0, 1)")
    w, h = camera.width, camera.height
    image = np.zeros((h, w), dtype=float)

    corners = project_points(H, marker_corners_3d(marker_side))
    u0 = max(int(math.floor(corners[:, 0].min())) - 1, 0)
    u1 = min(int(math.ceil(corners[:, 0].max())) + 2, w)
    v0 = max(int(math.floor(corners[:, 1].min())) - 1, 0)
    v1 = min(int(math.ceil(corners[:, 1].max())) + 2, h)

    if u1 > u0 and v1 > v0:
        uu, vv = np.meshgrid(np.arange(u0, u1, dtype=float), np.arange(v0, v1, dtype=float))
        Hinv = np.linalg.inv(H)
        X = Hinv[0, 0] * uu + Hinv[0, 1] * vv + Hinv[0, 2]
        Y = Hinv[1, 0] * uu + Hinv[1, 1] * vv + Hinv[1, 2]
        W = Hinv[2, 0] * uu + Hinv[2, 1] * vv + Hinv[2, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = X / W
            y = Y / W
        half = marker_side / 2.0
        inside = (W > 0) & (x >= -half) & (x < half) & (y >= -half) & (y < half)

        n = panel.grid_size
        cell = marker_side / n
        col = np.clip(np.floor((x + half) / cell), 0, n - 1).astype(np.intp, copy=False)
        row = np.clip(np.floor((y + half) / cell), 0, n - 1).astype(np.intp, copy=False)
        col[~inside] = 0
        row[~inside] = 0

        waves = panel.waves()
        wave_index = np.array(
            [[waves.index(panel.wave(r, c)) for c in range(n)] for r in range(n)], dtype=np.intp
        )
        times = camera.line_times(t0)[v0:v1]
        # Luminance table indexed by (wave, row within the box).
        table = np.stack([np.atleast_1d(sample_wave(wv, times)) for wv in waves])
        lum = table[wave_index[row, col], (vv - v0).astype(np.intp)]
        image[v0:v1, u0:u1] = np.where(inside, 255.0 * (glow + (1.0 - glow) * lum), 0.0)

        if noise.blur_radius > 0:
            # Outside the panel box the image is flat zero, so blurring a
            # padded box equals blurring the whole frame.
            pad = int(math.ceil(4 * noise.blur_radius)) + 1
            bu0, bu1 = max(u0 - pad, 0), min(u1 + pad, w)
            bv0, bv1 = max(v0 - pad, 0), min(v1 + pad, h)
            image[bv0:bv1, bu0:bu1] = ndimage.gaussian_filter(
                image[bv0:bv1, bu0:bu1], sigma=noise.blur_radius, mode="constant", cval=0.0, truncate=4.0
            )
    image += noise.ambient
    if noise.gaussian_sigma > 0:
        rng = np.random.default_rng(noise.rng_seed)
        image += noise.gaussian_sigma * rng.standard_normal(size=image.shape, dtype=np.float32)
    return Frame(np.clip(np.rint(image), 0, 255).astype(np.uint8))
