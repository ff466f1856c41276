"""Frame-to-ID pipeline for blinking LED markers.

Stages, in order: global binarization (bands become black/white stripes),
a second binarization plus vertical closing that turns the whole panel into
one solid blob, quad extraction from the blob outline, per-cell band-width
measurement, bit reconstruction and dictionary lookup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Union

import numpy as np
from scipy import ndimage

from ledmarker.codec import Dictionary, MarkerPattern, decode
from ledmarker.errors import (
    AmbiguousMatch,
    ConfigError,
    DegenerateHistogram,
    LedMarkerError,
    NoMatch,
    NoQuad,
    RecognitionFailed,
    TooFewBands,
    UnknownCells,
)
from ledmarker.geometry import dlt_homography, is_convex, signed_area
from ledmarker.optics import CameraModel, Frame, band_width

LOW, HIGH, UNKNOWN = 0, 1, -1

Threshold = Union[str, int, dict]


@dataclass(frozen=True, eq=False)
class BinaryImage:
    bits: np.ndarray = field(repr=False)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def to_frame(self) -> Frame:
        return Frame(np.where(self.bits, 255, 0).astype(np.uint8))


@dataclass(frozen=True)
class Quad:
    """Four image points, clockwise from the top-left one (smallest x + y)."""

    corners: tuple[tuple[float, float], ...]

    def array(self) -> np.ndarray:
        return np.asarray(self.corners, dtype=float)

    @property
    def area(self) -> float:
        return signed_area(self.array())

    @classmethod
    def from_points(cls, pts) -> Quad:
        pts = np.asarray(pts, dtype=float)
        if signed_area(pts) < 0:
            pts = pts[::-1]
        start = int(np.argmin(pts.sum(axis=1)))
        pts = np.roll(pts, -start, axis=0)
        return cls(tuple((float(x), float(y)) for x, y in pts))


@dataclass(frozen=True, eq=False)
class CellClassGrid:
    grid_size: int
    classes: np.ndarray
    widths: np.ndarray
    # True where the window never showed two complete runs; ``widths`` then
    # holds a lower bound rather than a measurement.
    censored: np.ndarray

    def unknown_fraction(self) -> float:
        return float(np.mean(self.classes == UNKNOWN))

    def inverted(self) -> CellClassGrid:
        flipped = np.where(self.classes == UNKNOWN, UNKNOWN, 1 - self.classes)
        return replace(self, classes=flipped)


@dataclass(frozen=True)
class DetectionResult:
    quad: Quad
    cell_grid: CellClassGrid
    pattern: MarkerPattern
    id: int
    rotation: int
    polarity_inverted: bool

    def marker_corners(self) -> np.ndarray:
        """Quad corners re-ordered to the marker's own TL, TR, BR, BL."""
        return np.roll(self.quad.array(), -(self.rotation // 90), axis=0)


@dataclass(frozen=True)
class DetectorConfig:
    threshold: Threshold = "otsu"
    close_run: int | str = "auto"
    min_area: float = 400.0
    cell_window_fraction: float = 0.6
    expected_frequencies: tuple[float, float] | None = (500.0, 2000.0)
    # Only used to turn expected_frequencies into expected band widths.
    frame_scan_time: float = 0.01
    max_unknown_fraction: float = 0.25
    refine_corners: bool = True

    def __post_init__(self):
        _parse_threshold(self.threshold)
        if self.close_run != "auto" and (not isinstance(self.close_run, int) or self.close_run < 1):
            raise ConfigError("close_run must be 'auto' or a positive integer")
        if not 0.0 < self.cell_window_fraction <= 1.0:
            raise ConfigError("cell_window_fraction must be in (0, 1]")
        if self.expected_frequencies is not None:
            lo, hi = self.expected_frequencies
            if not 0 < lo < hi:
                raise ConfigError("expected_frequencies must satisfy 0 < f_low < f_high")
            object.__setattr__(self, "expected_frequencies", (float(lo), float(hi)))

    def expected_widths(self, height: int) -> tuple[float, float] | None:
        if self.expected_frequencies is None:
            return None
        cam = CameraModel(width=1, height=height, frame_scan_time=self.frame_scan_time)
        lo, hi = self.expected_frequencies
        return band_width(cam, lo), band_width(cam, hi)

    def to_dict(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "close_run": self.close_run,
            "min_area": self.min_area,
            "cell_window_fraction": self.cell_window_fraction,
            "expected_frequencies": list(self.expected_frequencies) if self.expected_frequencies else None,
            "frame_scan_time": self.frame_scan_time,
            "max_unknown_fraction": self.max_unknown_fraction,
            "refine_corners": self.refine_corners,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DetectorConfig:
        data = dict(data)
        if data.get("expected_frequencies") is not None:
            data["expected_frequencies"] = tuple(data["expected_frequencies"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad detector config: {exc}") from exc


def _parse_threshold(threshold: Threshold) -> int | None:
    """``None`` means Otsu; otherwise the fixed level."""
    if threshold == "otsu":
        return None
    if isinstance(threshold, dict) and set(threshold) == {"fixed"}:
        threshold = threshold["fixed"]
    if isinstance(threshold, (int, np.integer)) and not isinstance(threshold, bool) and 0 <= threshold <= 256:
        return int(threshold)
    raise ConfigError(f"threshold must be 'otsu' or {{'fixed': level}}, got {threshold!r}")


# --- thresholding and morphology -------------------------------------------


def otsu_threshold(values: np.ndarray) -> int:
    """Level ``t`` maximizing between-class variance of ``values < t`` vs ``>= t``.

    When several levels tie (empty histogram bins between the classes) the
    middle of the tied range is returned.
    """
    hist = np.bincount(np.asarray(values, dtype=np.uint8).ravel(), minlength=256).astype(float)
    total = hist.sum()
    if total == 0 or np.count_nonzero(hist) < 2:
        raise DegenerateHistogram("histogram has fewer than two occupied levels")
    levels = np.arange(256, dtype=float)
    w0 = np.cumsum(hist)[:-1]  # class 0 = levels < t for t = 1..255
    m0 = np.cumsum(hist * levels)[:-1]
    w1 = total - w0
    m1 = (hist * levels).sum() - m0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (m0 / w0 - m1 / w1) ** 2
    between = np.nan_to_num(between, nan=-1.0)
    best = between.max()
    ties = np.flatnonzero(between >= best * (1 - 1e-12))
    return int(ties[len(ties) // 2]) + 1


def binarize(frame: Frame, threshold: Threshold = "otsu") -> BinaryImage:
    level = _parse_threshold(threshold)
    if level is None:
        try:
            level = otsu_threshold(frame.pixels)
        except DegenerateHistogram:
            level = 128
    return BinaryImage(frame.pixels >= level)


def close_vertical(b: BinaryImage, run: int) -> BinaryImage:
    """Closing with a ``run``-pixel vertical line (dilate, then erode)."""
    if run < 1:
        raise ConfigError("run must be >= 1")
    if run == 1:
        return b
    # Zero padding: the image is treated as a window onto a dark plane.
    src = np.pad(b.bits.astype(np.uint8), ((run, run), (0, 0)))
    dil = ndimage.maximum_filter1d(src, size=run, axis=0, mode="constant", cval=0)
    # Even lengths need the reflected element for the erosion.
    ero = ndimage.minimum_filter1d(
        dil, size=run, axis=0, mode="constant", cval=0, origin=-1 if run % 2 == 0 else 0
    )
    return BinaryImage(ero[run:-run].astype(bool))


def _bounded_gaps(bits: np.ndarray) -> np.ndarray:
    """Lengths of vertical false runs that have true pixels above and below."""
    gaps = []
    for col in bits.T:
        idx = np.flatnonzero(col)
        if len(idx) > 1:
            d = np.diff(idx) - 1
            gaps.append(d[d > 0])
    return np.concatenate(gaps) if gaps else np.zeros(0, dtype=int)


# --- quad extraction -------------------------------------------------------

# Moore neighborhood, clockwise on screen (y down), starting west.
_DIRS = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_DIR_INDEX = {d: i for i, d in enumerate(_DIRS)}


def trace_contour(mask: np.ndarray) -> np.ndarray:
    """Outer boundary of the single component in ``mask`` as (x, y) points.

    Moore-neighbor tracing with Jacob's stopping rule.
    """
    padded = np.pad(mask, 1)
    rows, cols = np.nonzero(padded)
    if len(rows) == 0:
        return np.zeros((0, 2))
    start = (int(rows[0]), int(cols[0]))
    contour = [start]
    back = (start[0], start[1] - 1)
    cur = start
    first_step = None
    limit = 4 * padded.size
    for _ in range(limit):
        b = _DIR_INDEX[(back[0] - cur[0], back[1] - cur[1])]
        nxt = None
        for k in range(1, 9):
            d = _DIRS[(b + k) % 8]
            q = (cur[0] + d[0], cur[1] + d[1])
            if padded[q]:
                nxt = q
                pd = _DIRS[(b + k - 1) % 8]
                back = (cur[0] + pd[0], cur[1] + pd[1])
                break
        if nxt is None:
            break  # isolated pixel
        if cur == start and first_step is not None and nxt == first_step:
            break
        if first_step is None:
            first_step = nxt
        cur = nxt
        contour.append(cur)
    if len(contour) > 1 and contour[-1] == start:
        contour.pop()
    pts = np.asarray(contour, dtype=float) - 1.0
    return pts[:, ::-1]


def _dp_open(pts: np.ndarray, eps: float) -> list[int]:
    keep = [0, len(pts) - 1]
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        seg = pts[i + 1 : j]
        a, b = pts[i], pts[j]
        d = b - a
        norm = math.hypot(d[0], d[1])
        if norm == 0:
            dist = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
        else:
            dist = np.abs(d[0] * (seg[:, 1] - a[1]) - d[1] * (seg[:, 0] - a[0])) / norm
        k = int(np.argmax(dist))
        if dist[k] > eps:
            m = i + 1 + k
            keep.append(m)
            stack.append((i, m))
            stack.append((m, j))
    return sorted(set(keep))


def simplify_closed(pts: np.ndarray, eps: float) -> list[int]:
    """Douglas-Peucker on a closed contour; returns kept indices in order."""
    n = len(pts)
    if n < 3:
        return list(range(n))
    a = int(np.argmax(np.hypot(*(pts - pts[0]).T)))
    b = int(np.argmax(np.hypot(*(pts - pts[a]).T)))
    i, j = sorted((a, b))
    if i == j:
        return [i]
    first = _dp_open(pts[i : j + 1], eps)
    wrapped = np.concatenate([pts[j:], pts[: i + 1]])
    second = _dp_open(wrapped, eps)
    idx = [i + k for k in first] + [(j + k) % n for k in second[1:-1]]
    return sorted(set(idx))


def contour_perimeter(pts: np.ndarray) -> float:
    d = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def _fit_edge_line(pts: np.ndarray, centroid: np.ndarray) -> tuple[np.ndarray, float] | None:
    """Total-least-squares line ``n . p = c`` pushed half a pixel outward.

    Boundary pixels sit inside the true edge by ``max(|nx|, |ny|) / 2`` on
    average for a straight edge sampled at pixel centers.
    """
    if len(pts) < 3:
        return None
    mean = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - mean)
    normal = vt[1]
    if np.dot(normal, mean - centroid) < 0:
        normal = -normal
    c = float(np.dot(normal, mean)) + 0.5 * float(np.max(np.abs(normal)))
    return normal, c


def _refine(contour: np.ndarray, vertex_idx: list[int], trim: float = 0.04) -> np.ndarray | None:
    n = len(contour)
    corners = contour[vertex_idx]
    centroid = corners.mean(axis=0)
    lines = []
    for k in range(4):
        i, j = vertex_idx[k], vertex_idx[(k + 1) % 4]
        span = (j - i) % n
        seq = (i + np.arange(1, span)) % n
        # Skip the rounded corner pixels but keep the end steps of shallow
        # staircases; those carry most of the slope information.
        cut = max(int(len(seq) * trim), 3)
        seq = seq[cut : len(seq) - cut]
        line = _fit_edge_line(contour[seq], centroid)
        if line is None:
            return None
        lines.append(line)
    refined = []
    for k in range(4):
        (n1, c1), (n2, c2) = lines[k - 1], lines[k]
        A = np.array([n1, n2])
        if abs(np.linalg.det(A)) < 1e-9:
            return None
        refined.append(np.linalg.solve(A, [c1, c2]))
    refined = np.asarray(refined)
    if np.max(np.hypot(*(refined - corners).T)) > 3.0:
        return None
    return refined


def find_quad(b: BinaryImage, min_area: float = 400.0, refine: bool = True) -> Quad:
    """Largest 8-connected blob, traced and simplified to a convex 4-gon.

    Blobs touching the image border are skipped: a clipped panel has no
    trustworthy corners.
    """
    labels, count = ndimage.label(b.bits, structure=np.ones((3, 3), dtype=int))
    if count == 0:
        raise NoQuad("image has no foreground")
    areas = np.bincount(labels.ravel())[1:]
    edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    boxes = ndimage.find_objects(labels)
    for lab in np.argsort(areas)[::-1] + 1:
        if areas[lab - 1] < min_area:
            break
        if lab in edge:
            continue
        sl = boxes[lab - 1]
        mask = labels[sl] == lab
        contour = trace_contour(mask) + np.array([sl[1].start, sl[0].start], dtype=float)
        eps = 0.02 * contour_perimeter(contour)
        idx = simplify_closed(contour, eps)
        if len(idx) != 4:
            raise NoQuad(f"outline simplifies to {len(idx)} vertices, not 4")
        pts = contour[idx]
        if refine:
            better = _refine(contour, idx)
            if better is not None:
                pts = better
        if not is_convex(pts):
            raise NoQuad("outline is not convex")
        quad = Quad.from_points(pts)
        if quad.area < min_area:
            raise NoQuad("quad area below min_area")
        return quad
    raise NoQuad(f"no blob of at least {min_area} pixels clear of the border")


# --- cell measurement ------------------------------------------------------


def _polygon_mask(shape: tuple[int, int], poly: np.ndarray) -> np.ndarray:
    h, w = shape
    u0 = max(int(math.floor(poly[:, 0].min())), 0)
    u1 = min(int(math.ceil(poly[:, 0].max())) + 1, w)
    v0 = max(int(math.floor(poly[:, 1].min())), 0)
    v1 = min(int(math.ceil(poly[:, 1].max())) + 1, h)
    mask = np.zeros(shape, dtype=bool)
    if u1 <= u0 or v1 <= v0:
        return mask
    uu, vv = np.meshgrid(np.arange(u0, u1), np.arange(v0, v1))
    inside = np.ones(uu.shape, dtype=bool)
    sign = 1.0 if signed_area(poly) > 0 else -1.0
    for k in range(len(poly)):
        a, c = poly[k], poly[(k + 1) % len(poly)]
        cross = (c[0] - a[0]) * (vv - a[1]) - (c[1] - a[1]) * (uu - a[0])
        inside &= sign * cross >= 0
    mask[v0:v1, u0:u1] = inside
    return mask


def _column_span(poly: np.ndarray, u: float) -> tuple[float, float] | None:
    """Vertical extent of convex ``poly`` along the image column ``x = u``."""
    vs = []
    for k in range(len(poly)):
        (x0, y0), (x1, y1) = poly[k], poly[(k + 1) % len(poly)]
        if (x0 - u) * (x1 - u) <= 0 and x0 != x1:
            vs.append(y0 + (u - x0) * (y1 - y0) / (x1 - x0))
    if len(vs) < 2:
        return None
    return min(vs), max(vs)


def _runs(bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    change = np.flatnonzero(np.diff(bits.astype(np.int8))) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [len(bits)]]))
    return bits[starts], lengths


@dataclass
class _CellStats:
    width: float
    censored: bool
    window: float
    transitions: float


def _measure_window(img_bits_fn, poly: np.ndarray, max_columns: int = 9) -> _CellStats | None:
    umin, umax = poly[:, 0].min(), poly[:, 0].max()
    cols = np.arange(math.ceil(umin), math.floor(umax) + 1)
    if len(cols) == 0:
        return None
    if len(cols) > max_columns:
        cols = cols[np.round(np.linspace(0, len(cols) - 1, max_columns)).astype(int)]
    bright, dark, ncomplete, longest, lengths, flips = [], [], [], [], [], []
    for u in cols:
        span = _column_span(poly, float(u))
        if span is None:
            continue
        v0, v1 = math.ceil(span[0]), math.floor(span[1])
        if v1 - v0 + 1 < 2:
            continue
        col = img_bits_fn(int(u), v0, v1 + 1)
        vals, lens = _runs(col)
        inner_v, inner_l = vals[1:-1], lens[1:-1]
        bright.extend(inner_l[inner_v])
        dark.extend(inner_l[~inner_v])
        ncomplete.append(len(inner_l))
        longest.append(lens.max())
        lengths.append(len(col))
        flips.append(len(lens) - 1)
    if not lengths:
        return None
    window = float(np.median(lengths))
    k = float(np.median(flips))
    if np.median(ncomplete) >= 2 and (bright or dark):
        parts = [float(np.median(x)) for x in (bright, dark) if x]
        return _CellStats(float(np.mean(parts)), False, window, k)
    return _CellStats(float(np.median(longest)), True, window, k)


def _two_means_split(values: np.ndarray, iters: int = 50) -> tuple[float, float] | None:
    """1-D 2-means on log values; returns the two cluster centers (low, high)."""
    x = np.log(values)
    lo, hi = x.min(), x.max()
    if hi - lo < 1e-9:
        return None
    for _ in range(iters):
        split = 0.5 * (lo + hi)
        a, b = x[x < split], x[x >= split]
        if len(a) == 0 or len(b) == 0:
            return None
        new = a.mean(), b.mean()
        if np.allclose(new, (lo, hi)):
            break
        lo, hi = new
    return math.exp(lo), math.exp(hi)


def measure_cells(
    frame: Frame,
    quad: Quad,
    grid_size: int,
    threshold: Threshold = "otsu",
    expected_widths: tuple[float, float] | None = None,
    window_fraction: float = 0.6,
    max_unknown_fraction: float = 0.25,
) -> CellClassGrid:
    """Classify every cell of ``quad`` as LOW or HIGH frequency by band width.

    Each cell is read through its central window along a handful of image
    columns.  With at least two complete runs per column the width is the
    median run length; otherwise only a lower bound (the longest, clipped
    run) is known.  A clipped cell is still LOW when the bound clears the
    class split, and either class can be assigned from the transition count
    when the window is tall enough for the two classes' possible counts not
    to overlap.
    """
    corners = quad.array()
    H = dlt_homography(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float), corners)

    level = _parse_threshold(threshold)
    if level is None:
        inside = frame.pixels[_polygon_mask(frame.pixels.shape, corners)]
        try:
            level = otsu_threshold(inside)
        except DegenerateHistogram:
            level = 128
    bits = frame.pixels >= level

    def column(u: int, v0: int, v1: int) -> np.ndarray:
        return bits[max(v0, 0) : min(v1, frame.height), u]

    n = grid_size
    m = (1.0 - window_fraction) / 2.0
    stats: list[list[_CellStats | None]] = []
    for r in range(n):
        row_stats = []
        for c in range(n):
            unit = np.array(
                [[c + m, r + m], [c + 1 - m, r + m], [c + 1 - m, r + 1 - m], [c + m, r + 1 - m]]
            ) / n
            homog = np.column_stack([unit, np.ones(4)]) @ H.T
            poly = homog[:, :2] / homog[:, 2:3]
            poly = np.clip(poly, [0, 0], [frame.width - 1, frame.height - 1])
            row_stats.append(_measure_window(column, poly))
        stats.append(row_stats)

    widths = np.full((n, n), np.nan)
    censored = np.ones((n, n), dtype=bool)
    window = np.zeros((n, n))
    flips = np.zeros((n, n))
    for r in range(n):
        for c in range(n):
            s = stats[r][c]
            if s is not None:
                widths[r, c], censored[r, c] = s.width, s.censored
                window[r, c], flips[r, c] = s.window, s.transitions

    classes = np.full((n, n), UNKNOWN, dtype=int)
    valid = ~np.isnan(widths) & (widths > 0)
    if expected_widths is not None:
        w_low, w_high = expected_widths
    else:
        centers = _two_means_split(widths[valid]) if valid.sum() >= 2 else None
        # Both clusters must be real and well apart, and the narrow one must
        # rest on actual measurements rather than clipped bounds.
        narrow_real = centers is not None and np.any(
            valid & ~censored & (widths < math.sqrt(centers[0] * centers[1]))
        )
        if centers is None or centers[1] / centers[0] < 1.6 or not narrow_real:
            w_low = w_high = None
        else:
            w_high, w_low = centers
    if w_low is not None:
        split = math.sqrt(w_low * w_high)
        measured = valid & ~censored
        classes[measured & (widths >= split)] = LOW
        classes[measured & (widths < split)] = HIGH
        # A clipped window still bounds the transition count: a run of w
        # lines yields at least floor((L-1)/w) and at most ceil((L-1)/w)
        # transitions in an L-line window.
        clipped = valid & censored
        span = np.maximum(window - 1, 0)
        high_min = np.floor(span / w_high)
        low_max = np.ceil(span / w_low)
        as_low = (widths >= split) | ((flips <= low_max) & (flips < high_min))
        as_high = (widths < split) & (flips >= high_min) & (flips > low_max)
        classes[clipped & as_low] = LOW
        classes[clipped & as_high & ~as_low] = HIGH

    grid = CellClassGrid(n, classes, widths, censored)
    unknown = grid.unknown_fraction()
    if unknown > max_unknown_fraction:
        raise TooFewBands(f"{unknown:.0%} of cells could not be classified")
    return grid


def reconstruct_pattern(cells: CellClassGrid) -> tuple[MarkerPattern, MarkerPattern]:
    """Both polarity readings: (LOW->black, HIGH->white) and its inverse."""
    if np.any(cells.classes == UNKNOWN):
        raise UnknownCells(f"{int(np.sum(cells.classes == UNKNOWN))} cells unclassified")
    direct = MarkerPattern(cells.classes == HIGH)
    return direct, direct.inverted()


# --- full pipeline ---------------------------------------------------------


def resolve_close_run(band: BinaryImage, config: DetectorConfig) -> int:
    if config.close_run != "auto":
        return int(config.close_run)
    widths = config.expected_widths(band.height)
    if widths is not None:
        return int(math.ceil(2 * widths[0])) + 1
    gaps = _bounded_gaps(band.bits)
    if len(gaps) == 0:
        return 1
    return min(2 * int(np.percentile(gaps, 90)) + 1, band.height // 2)


def panel_region(frame: Frame, band: BinaryImage, run: int) -> BinaryImage:
    """Solid panel mask: the second binarization of the pipeline.

    Off bands still glow above the background, so when the dark pixels
    inside the closed band image sit clearly above the background level a
    threshold halfway between the two recovers the whole panel outline.
    Otherwise the closed band image is used as is.  Work is confined to the
    rows and columns where bands appear, padded by ``run`` vertically.
    """
    px = frame.pixels
    out = np.zeros(px.shape, dtype=bool)
    rows = np.flatnonzero(band.bits.sum(axis=1) >= 3)
    cols = np.flatnonzero(band.bits.sum(axis=0) >= 3)
    if len(rows) == 0 or len(cols) == 0:
        return BinaryImage(out)
    r0, r1 = max(rows[0] - run, 0), min(rows[-1] + run + 1, px.shape[0])
    c0, c1 = max(cols[0] - 4, 0), min(cols[-1] + 5, px.shape[1])
    sub = (slice(r0, r1), slice(c0, c1))
    bits = band.bits[sub]
    region = close_vertical(BinaryImage(bits), run).bits

    ring = np.concatenate([px[0], px[-1], px[1:-1, 0], px[1:-1, -1]]).astype(float)
    bg = float(np.median(ring))
    bg_sd = 1.4826 * float(np.median(np.abs(ring - bg)))
    inner_dark = px[sub][region & ~bits]
    if inner_dark.size > 0.05 * max(int(region.sum()), 1):
        glow = float(np.median(inner_dark))
        # The 3x3 mean below cuts pixel noise by 3; keep the midpoint >= 3 sigma clear.
        if glow - bg > max(8.0, 2.0 * bg_sd):
            level = (bg + glow) / 2.0
            # Cap at the glow level first, or lit bands bleed a pixel outward.
            capped = np.minimum(px[sub].astype(np.float32), glow)
            smooth = ndimage.uniform_filter(capped, size=3, mode="nearest")
            mask = ndimage.binary_opening(smooth >= level, structure=np.ones((3, 3), dtype=bool))
            region = close_vertical(BinaryImage(mask), run).bits
    out[sub] = region
    return BinaryImage(out)


def detect(
    frame: Frame,
    dictionary: Dictionary,
    config: DetectorConfig = DetectorConfig(),
    debug_dir: str | Path | None = None,
) -> DetectionResult:
    stage = "binarize"
    try:
        band = binarize(frame, config.threshold)
        run = resolve_close_run(band, config)
        region = panel_region(frame, band, run)
        stage = "find_quad"
        quad = find_quad(region, config.min_area, config.refine_corners)
        stage = "measure_cells"
        cells = measure_cells(
            frame,
            quad,
            dictionary.grid_size,
            config.threshold,
            config.expected_widths(frame.height),
            config.cell_window_fraction,
            config.max_unknown_fraction,
        )
        stage = "reconstruct"
        direct, inverted = reconstruct_pattern(cells)
        stage = "decode"
        hits = []
        for pattern, flipped in ((direct, False), (inverted, True)):
            try:
                hits.append((pattern, flipped, *decode(dictionary, pattern)))
            except NoMatch:
                pass
        if not hits:
            raise NoMatch("neither polarity matches a dictionary entry")
        if len(hits) == 2 and hits[0][2:] != hits[1][2:]:
            raise AmbiguousMatch(f"polarities decode to {hits[0][2:]} and {hits[1][2:]}")
        pattern, flipped, marker_id, rotation = hits[0]
    except LedMarkerError as exc:
        if debug_dir is not None:
            _dump_debug(debug_dir, frame, locals())
        raise RecognitionFailed(stage, exc) from exc
    result = DetectionResult(quad, cells, pattern, marker_id, rotation, flipped)
    if debug_dir is not None:
        _dump_debug(debug_dir, frame, locals())
    return result


def failure_stage(exc: RecognitionFailed) -> str:
    """Collapse pipeline stages into the four reporting buckets."""
    return {
        "binarize": "binarize",
        "find_quad": "quad",
        "measure_cells": "bands",
        "reconstruct": "bands",
        "decode": "decode",
    }[exc.stage]


def _pattern_image(bits: np.ndarray, scale: int = 20, border: bool = True) -> np.ndarray:
    img = np.where(bits, 255, 0).astype(np.uint8)
    if border:
        img = np.pad(img, 1, constant_values=255)
    return np.kron(img, np.ones((scale, scale), dtype=np.uint8))


def _dump_debug(debug_dir: str | Path, frame: Frame, ctx: dict[str, Any]) -> None:
    """Write whichever per-stage images exist so far as PGM files."""
    out = Path(debug_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame.save(out / "b_frame.pgm")
    if "band" in ctx:
        ctx["band"].to_frame().save(out / "c_binarized.pgm")
    if "region" in ctx:
        img = ctx["region"].to_frame().pixels.copy()
        if "quad" in ctx:
            for x, y in ctx["quad"].corners:
                u, v = int(round(x)), int(round(y))
                img[max(v - 2, 0) : v + 3, max(u - 2, 0) : u + 3] = 128
        Frame(img).save(out / "e_square.pgm")
    if "cells" in ctx:
        cls = ctx["cells"].classes
        shade = np.select([cls == LOW, cls == HIGH], [85, 170], 0).astype(np.uint8)
        Frame(np.kron(shade, np.ones((20, 20), dtype=np.uint8))).save(out / "d_classes.pgm")
        framed = np.pad(shade, 1, constant_values=255)
        Frame(np.kron(framed, np.ones((20, 20), dtype=np.uint8))).save(out / "f_framed.pgm")
    if "pattern" in ctx and isinstance(ctx["pattern"], MarkerPattern):
        Frame(_pattern_image(ctx["pattern"].bits)).save(out / "g_pattern.pgm")
