"""Exact 2-D convex polygon primitives: rectangles, SAT intersection, Minkowski sums, offsets, hulls."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

# Vertex dedup / projection comparison tolerance, meters-scale workspace in double precision.
TOL = 1e-9


class DegenerateGeometryError(ValueError):
    """Raised when an operation would produce or received a degenerate polygon."""


def wrap_angle(phi: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    phi = math.fmod(phi, 2.0 * math.pi)
    if phi <= -math.pi:
        phi += 2.0 * math.pi
    elif phi > math.pi:
        phi -= 2.0 * math.pi
    return phi


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, phi); phi is normalized to (-pi, pi] on construction."""

    x: float
    y: float
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phi", wrap_angle(float(self.phi)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi])


@dataclass(frozen=True)
class RobotSpec:
    """Rectangular robot footprint (width along local x, height along local y) and wheelbase."""

    width: float = 4.07
    height: float = 1.74
    wheelbase: float = 2.7

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.wheelbase <= 0:
            raise ValueError("robot dimensions must be positive")

    def footprint(self, pose: Pose2) -> "ConvexPolygon":
        return rect_polygon(self.width, self.height, pose)


class ConvexPolygon:
    """Strictly convex polygon with >= 3 CCW vertices.

    Construction dedups coincident vertices (tolerance 1e-9 m), drops collinear
    ones, and verifies counter-clockwise winding. The vertex array is read-only.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must be an (n, 2) array-like")
        v = _dedup_ring(v)
        if len(v) < 3:
            raise DegenerateGeometryError("polygon needs at least 3 distinct vertices")
        if _signed_area(v) < 0:
            v = v[::-1]
        v = _drop_collinear(v)
        if len(v) < 3 or _signed_area(v) <= TOL * TOL:
            raise DegenerateGeometryError("polygon is degenerate (zero area)")
        cross = _edge_cross_products(v)
        if np.any(cross <= 0):
            raise DegenerateGeometryError("vertices do not form a convex CCW polygon")
        v.flags.writeable = False
        self.vertices = v

    def __len__(self) -> int:
        return len(self.vertices)

    def __repr__(self) -> str:
        return f"ConvexPolygon({self.vertices.tolist()})"

    def area(self) -> float:
        return _signed_area(self.vertices)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def edges(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    def bounding_box(self) -> tuple[float, float, float, float]:
        xs, ys = self.vertices[:, 0], self.vertices[:, 1]
        return xs.min(), ys.min(), xs.max(), ys.max()

    def contains_point(self, x: float, y: float, tol: float = TOL) -> bool:
        """Closed-set membership: boundary points count as inside."""
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        rel = np.array([x, y]) - v
        cross = e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0]
        return bool(np.all(cross >= -tol))

    def contains_polygon(self, other: "ConvexPolygon", tol: float = TOL) -> bool:
        return all(self.contains_point(px, py, tol) for px, py in other.vertices)

    def translated(self, dx: float, dy: float) -> "ConvexPolygon":
        return ConvexPolygon(self.vertices + np.array([dx, dy]))


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _dedup_ring(v: np.ndarray) -> np.ndarray:
    keep = [v[0]]
    for p in v[1:]:
        if max(abs(p[0] - keep[-1][0]), abs(p[1] - keep[-1][1])) > TOL:
            keep.append(p)
    if len(keep) > 1 and max(abs(keep[0][0] - keep[-1][0]), abs(keep[0][1] - keep[-1][1])) <= TOL:
        keep.pop()
    return np.array(keep)


def _edge_cross_products(v: np.ndarray) -> np.ndarray:
    e = np.roll(v, -1, axis=0) - v
    e_next = np.roll(e, -1, axis=0)
    return e[:, 0] * e_next[:, 1] - e[:, 1] * e_next[:, 0]


def _drop_collinear(v: np.ndarray) -> np.ndarray:
    # drop vertices whose deviation height from the neighbor chord is below TOL
    out = list(v)
    changed = True
    while changed and len(out) >= 3:
        changed = False
        n = len(out)
        for i in range(n):
            a = out[(i - 1) % len(out)]
            b = out[i]
            c = out[(i + 1) % len(out)]
            ab = (b[0] - a[0], b[1] - a[1])
            bc = (c[0] - b[0], c[1] - b[1])
            cross = ab[0] * bc[1] - ab[1] * bc[0]
            span = math.hypot(*ab) + math.hypot(*bc)
            if abs(cross) <= TOL * span:
                out.pop(i)
                changed = True
                break
    return np.array(out)


def rect_polygon(l1: float, l2: float, pose: Pose2 | None = None) -> ConvexPolygon:
    """CCW rectangle with side l1 along local x and l2 along local y, centered at pose."""
    if l1 <= 0 or l2 <= 0:
        raise ValueError("rectangle sides must be positive")
    if pose is None:
        pose = Pose2(0.0, 0.0, 0.0)
    a, b = l1 / 2.0, l2 / 2.0
    local = np.array([[a, b], [-a, b], [-a, -b], [a, -b]])
    c, s = math.cos(pose.phi), math.sin(pose.phi)
    rot = np.array([[c, -s], [s, c]])
    return ConvexPolygon(local @ rot.T + np.array([pose.x, pose.y]))


def _project(v: np.ndarray, ax: float, ay: float) -> tuple[float, float]:
    d = v[:, 0] * ax + v[:, 1] * ay
    return float(d.min()), float(d.max())


def intersects(a: ConvexPolygon, b: ConvexPolygon) -> bool:
    """Separating-axis test with closed-set semantics: touching boundaries collide."""
    for poly in (a, b):
        v = poly.vertices
        e = np.roll(v, -1, axis=0) - v
        for ex, ey in e:
            ax, ay = ey, -ex
            lo_a, hi_a = _project(a.vertices, ax, ay)
            lo_b, hi_b = _project(b.vertices, ax, ay)
            scale = max(1.0, abs(lo_a), abs(hi_a), abs(lo_b), abs(hi_b))
            if lo_a > hi_b + TOL * scale or lo_b > hi_a + TOL * scale:
                return False
    return True


def minkowski_sum(a: ConvexPolygon, b: ConvexPolygon) -> ConvexPolygon:
    """Minkowski sum of two convex CCW polygons via the rotating edge merge."""
    va = _roll_to_lowest(a.vertices)
    vb = _roll_to_lowest(b.vertices)
    ea = np.roll(va, -1, axis=0) - va
    eb = np.roll(vb, -1, axis=0) - vb
    n, m = len(va), len(vb)
    out = []
    i = j = 0
    p = va[0] + vb[0]
    while i < n or j < m:
        out.append(p.copy())
        if i >= n:
            step = eb[j]
            j += 1
        elif j >= m:
            step = ea[i]
            i += 1
        else:
            cross = ea[i][0] * eb[j][1] - ea[i][1] * eb[j][0]
            if cross > 0:
                step = ea[i]
                i += 1
            elif cross < 0:
                step = eb[j]
                j += 1
            else:
                step = ea[i] + eb[j]
                i += 1
                j += 1
        p = p + step
    return ConvexPolygon(np.array(out))


def _roll_to_lowest(v: np.ndarray) -> np.ndarray:
    # start the edge walk at the bottom-most (then left-most) vertex
    idx = np.lexsort((v[:, 0], v[:, 1]))[0]
    return np.roll(v, -idx, axis=0)


def offset(p: ConvexPolygon, d: float) -> ConvexPolygon:
    """Translate every edge outward by d along its normal (inward for d < 0)."""
    v = p.vertices
    e = np.roll(v, -1, axis=0) - v
    lengths = np.hypot(e[:, 0], e[:, 1])
    # outward normals of a CCW polygon
    nx, ny = e[:, 1] / lengths, -e[:, 0] / lengths
    c = nx * v[:, 0] + ny * v[:, 1] + d
    if d >= 0:
        # grown polygon: adjacent shifted edge lines intersect directly
        out = []
        n = len(v)
        for i in range(n):
            jprev = (i - 1) % n
            pt = _line_intersection(nx[jprev], ny[jprev], c[jprev], nx[i], ny[i], c[i])
            out.append(pt)
        return ConvexPolygon(np.array(out))
    # shrunk polygon: clip by every shifted half-plane, may collapse
    poly = [tuple(pt) for pt in v]
    for k in range(len(v)):
        poly = _clip_halfplane(poly, nx[k], ny[k], c[k])
        if len(poly) < 3:
            raise DegenerateGeometryError("offset shrink collapsed the polygon")
    try:
        return ConvexPolygon(np.array(poly))
    except DegenerateGeometryError as exc:
        raise DegenerateGeometryError("offset shrink collapsed the polygon") from exc


def _line_intersection(n1x, n1y, c1, n2x, n2y, c2) -> tuple[float, float]:
    det = n1x * n2y - n1y * n2x
    if abs(det) < 1e-15:
        raise DegenerateGeometryError("parallel edge lines in offset")
    x = (c1 * n2y - c2 * n1y) / det
    y = (n1x * c2 - n2x * c1) / det
    return (x, y)


def _clip_halfplane(poly, nx, ny, c):
    """Keep the part of poly with n . p <= c (Sutherland-Hodgman step)."""
    out = []
    n = len(poly)
    for i in range(n):
        p0 = poly[i]
        p1 = poly[(i + 1) % n]
        d0 = nx * p0[0] + ny * p0[1] - c
        d1 = nx * p1[0] + ny * p1[1] - c
        if d0 <= TOL:
            out.append(p0)
        if (d0 < -TOL and d1 > TOL) or (d0 > TOL and d1 < -TOL):
            t = d0 / (d0 - d1)
            out.append((p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])))
    return out


def ellipse_polygon(rx: float, ry: float, n: int = 32) -> ConvexPolygon:
    """n-vertex polygon inscribed in the axis-aligned ellipse, vertices at angles 2*pi*k/n."""
    if rx <= 0 or ry <= 0:
        raise ValueError("ellipse semi-axes must be positive")
    if n < 8:
        raise ValueError("ellipse polygonization needs n >= 8")
    ang = 2.0 * math.pi * np.arange(n) / n
    return ConvexPolygon(np.column_stack([rx * np.cos(ang), ry * np.sin(ang)]))


def convex_hull(points) -> ConvexPolygon:
    """Convex hull of a point set; collinear interior points are removed."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("need at least 3 points of dimension 2")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateGeometryError("points are collinear or degenerate") from exc
    return ConvexPolygon(pts[hull.vertices])
