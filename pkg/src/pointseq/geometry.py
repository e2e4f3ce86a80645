"""Deterministic point-cloud geometry: normalization, sampling, grouping.

Every selection here is a pure function of point *coordinates*: distance ties
break on lexicographic (x, y, z) first and on index only between exact
duplicates. Reductions over points run in a sorted order, so the outcome of
the whole pipeline is invariant under permutations of the input, up to index
relabeling between duplicate points.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PointCloud",
    "Centroids",
    "ScaleSpec",
    "MultiScaleGrouping",
    "SpatialIndex",
    "normalize_unit_ball",
    "farthest_point_sample",
    "knn_search",
    "brute_force_knn",
    "group_areas",
    "to_relative",
]

_LEAF_SIZE = 16


@dataclass(eq=False)
class PointCloud:
    """N points in R^3 with optional integer per-point labels."""

    points: np.ndarray
    labels: np.ndarray | None = None
    _index: "SpatialIndex | None" = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must have shape [n, 3], got {self.points.shape}")
        if len(self.points) < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.points),):
                raise ValueError(
                    f"labels shape {self.labels.shape} does not match {len(self.points)} points"
                )

    def __len__(self):
        return len(self.points)

    def index(self) -> "SpatialIndex":
        """The spatial index for this cloud, built on first use."""
        if self._index is None:
            self._index = SpatialIndex(self.points)
        return self._index


@dataclass(frozen=True)
class Centroids:
    """Region centers selected from a cloud; coords mirror indices."""

    indices: np.ndarray
    coords: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class ScaleSpec:
    """Strictly increasing neighborhood sizes, smallest to largest."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not sizes:
            raise ValueError("at least one scale is required")
        if any(s < 1 for s in sizes):
            raise ValueError(f"scales must be positive, got {sizes}")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"scales must be strictly increasing, got {sizes}")

    def __len__(self):
        return len(self.sizes)


@dataclass(frozen=True)
class MultiScaleGrouping:
    """Per-region neighbor indices, nested across scales.

    ``neighbor_indices[j]`` holds the largest-scale neighborhood of region j
    in ascending distance order; each smaller scale is a prefix of it.
    """

    neighbor_indices: np.ndarray
    scales: ScaleSpec

    def area(self, region, scale) -> np.ndarray:
        """Indices of the points in area ``(region, scale)``."""
        return self.neighbor_indices[region, : self.scales.sizes[scale]]


def _stable_mean(points):
    # summed in lexicographic point order so the result is permutation-free
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return points[order].mean(axis=0)


def _argbest(distances, points, exclude=None):
    """Index maximizing distance; ties prefer low (x, y, z) then low index."""
    d = distances
    if exclude is not None:
        d = np.where(exclude, -np.inf, d)
    best = d.max()
    candidates = np.flatnonzero(d == best)
    if len(candidates) == 1:
        return int(candidates[0])
    c = points[candidates]
    order = np.lexsort((candidates, c[:, 2], c[:, 1], c[:, 0]))
    return int(candidates[order[0]])


def normalize_unit_ball(cloud: PointCloud) -> PointCloud:
    """Center the cloud on its mean and scale it into the unit ball.

    A cloud of identical points maps to all zeros. Labels carry over.
    """
    centered = cloud.points - _stable_mean(cloud.points)
    radius = np.sqrt((centered * centered).sum(axis=1)).max()
    if radius > 0.0:
        centered = centered / radius
    else:
        centered = np.zeros_like(centered)
    return PointCloud(centered, cloud.labels)


def farthest_point_sample(cloud: PointCloud, m: int) -> Centroids:
    """Greedy farthest-point selection of ``m`` distinct indices.

    The walk starts at the point farthest from the cloud mean and repeatedly
    takes the point with the largest distance to the chosen set, so the
    selected coordinates depend only on cloud content.
    """
    points = cloud.points
    n = len(points)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} centroids from {n} points")
    chosen = np.empty(m, dtype=np.int64)
    taken = np.zeros(n, dtype=bool)
    diff = points - _stable_mean(points)
    dist = (diff * diff).sum(axis=1)
    for step in range(m):
        pick = _argbest(dist, points, exclude=taken)
        chosen[step] = pick
        taken[pick] = True
        diff = points - points[pick]
        fresh = (diff * diff).sum(axis=1)
        dist = fresh if step == 0 else np.minimum(dist, fresh)
    return Centroids(chosen, points[chosen].copy())


class SpatialIndex:
    """Static axis-aligned median-split tree over a fixed point set."""

    class _Node:
        __slots__ = ("axis", "split", "left", "right", "indices")

        def __init__(self, axis=None, split=0.0, left=None, right=None, indices=None):
            self.axis = axis
            self.split = split
            self.left = left
            self.right = right
            self.indices = indices

    def __init__(self, points):
        self._points = np.asarray(points, dtype=np.float64)
        self._root = self._build(np.arange(len(self._points), dtype=np.int64))

    def _build(self, indices):
        if len(indices) <= _LEAF_SIZE:
            return self._Node(indices=indices)
        coords = self._points[indices]
        axis = int(np.argmax(coords.max(axis=0) - coords.min(axis=0)))
        order = indices[np.argsort(coords[:, axis], kind="stable")]
        mid = len(order) // 2
        split = float(self._points[order[mid], axis])
        return self._Node(
            axis=axis,
            split=split,
            left=self._build(order[:mid]),
            right=self._build(order[mid:]),
        )

    def query(self, query_point, k) -> np.ndarray:
        """Indices of the k nearest points, ascending by (distance, coords, index)."""
        n = len(self._points)
        if not 1 <= k <= n:
            raise ValueError(f"cannot search {k} neighbors among {n} points")
        q = np.asarray(query_point, dtype=np.float64)
        points = self._points
        # heap of negated sort keys; its root is the current worst candidate
        heap: list = []

        def consider(i):
            p = points[i]
            dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
            entry = (-(dx * dx + dy * dy + dz * dz), -p[0], -p[1], -p[2], -i)
            if len(heap) < k:
                heapq.heappush(heap, entry)
            elif entry > heap[0]:
                heapq.heapreplace(heap, entry)

        def visit(node):
            if node.axis is None:
                for i in node.indices:
                    consider(i)
                return
            delta = q[node.axis] - node.split
            near, far = (node.left, node.right) if delta < 0.0 else (node.right, node.left)
            visit(near)
            # equal plane distance may still win a tie, so prune strictly
            if len(heap) < k or delta * delta <= -heap[0][0]:
                visit(far)

        visit(self._root)
        ordered = sorted(heap, reverse=True)
        return np.array([int(-entry[4]) for entry in ordered], dtype=np.int64)


def knn_search(cloud: PointCloud, query_point, k) -> np.ndarray:
    """K nearest cloud points to ``query_point`` via the cloud's spatial index."""
    return cloud.index().query(query_point, k)


def brute_force_knn(cloud: PointCloud, query_point, k) -> np.ndarray:
    """Oracle nearest-neighbor search: full sort with the same tie rules."""
    points = cloud.points
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"cannot search {k} neighbors among {n} points")
    q = np.asarray(query_point, dtype=np.float64)
    d = ((points - q) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(n), points[:, 2], points[:, 1], points[:, 0], d))
    return order[:k].astype(np.int64)


def group_areas(cloud: PointCloud, centroids: Centroids, scales: ScaleSpec) -> MultiScaleGrouping:
    """Multi-scale areas around each centroid; scales nest by construction."""
    largest = scales.sizes[-1]
    rows = [knn_search(cloud, c, largest) for c in centroids.coords]
    return MultiScaleGrouping(np.stack(rows), scales)


def to_relative(points, centroid) -> np.ndarray:
    """Coordinates of ``points`` relative to ``centroid``."""
    points = np.asarray(points, dtype=np.float64)
    centroid = np.asarray(centroid, dtype=np.float64)
    if centroid.shape != (3,):
        raise ValueError(f"centroid must have shape (3,), got {centroid.shape}")
    return points - centroid
