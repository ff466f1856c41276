"""Small planar-geometry helpers shared by the detector and pose code."""

from __future__ import annotations

import numpy as np

from ledmarker.errors import DegenerateQuad


def _normalizer(pts: np.ndarray) -> np.ndarray:
    # Hartley normalization: centroid to origin, mean distance sqrt(2).
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d == 0:
        raise DegenerateQuad("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def dlt_homography(src, dst) -> np.ndarray:
    """Exact 4-point (or least-squares N-point) DLT, normalized so H[2,2] = 1."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.shape[0] < 4 or src.shape[1] != 2:
        raise DegenerateQuad("need at least four 2-D correspondences")
    Ts, Td = _normalizer(src), _normalizer(dst)
    s = np.column_stack([src, np.ones(len(src))]) @ Ts.T
    d = np.column_stack([dst, np.ones(len(dst))]) @ Td.T
    rows = []
    for (x, y, _), (u, v, _) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    A = np.asarray(rows)
    _, sv, vt = np.linalg.svd(A)
    if sv[7] < 1e-9 * sv[0]:
        raise DegenerateQuad("correspondences are degenerate (collinear points)")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(H[2, 2]) < 1e-15:
        raise DegenerateQuad("homography maps the origin to infinity")
    return H / H[2, 2]


def signed_area(poly) -> float:
    """Shoelace area; positive for clockwise order in a y-down image."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def is_convex(poly) -> bool:
    p = np.asarray(poly, dtype=float)
    e = np.roll(p, -1, axis=0) - p
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    return bool(np.all(cross > 0) or np.all(cross < 0))
