"""Feature maps from feedback-point clouds to low-dimensional configuration vectors.

Global features (centroid, stacked positions) and local ones (pairwise
distance, surface variation, extended FPFH histogram) compose into a
:class:`FeatureSpec` whose output is the controller's state ``x``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from .errors import DegenerateInputError, InputError

log = logging.getLogger(__name__)

COINCIDENT_TOL = 1e-9
NORMAL_TOL = 1e-6


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if pts.shape[0] < 1:
            raise InputError("a point cloud needs at least one point")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if nrm.shape != pts.shape:
                raise InputError(f"{nrm.shape[0]} normals for {pts.shape[0]} points")
            if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > NORMAL_TOL):
                raise InputError("normals must have unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, R, t) -> "PointCloud":
        """Apply the rigid motion p -> R p + t (normals are rotated only)."""
        R = np.asarray(R, dtype=float)
        pts = self.points @ R.T + np.asarray(t, dtype=float)
        nrm = None if self.normals is None else self.normals @ R.T
        if nrm is not None:
            nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        return PointCloud(pts, nrm)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx, dtype=int)
        return PointCloud(self.points[idx], None if self.normals is None else self.normals[idx])


def centroid(cloud: PointCloud) -> np.ndarray:
    return cloud.points.mean(axis=0)


def stacked_positions(cloud: PointCloud) -> np.ndarray:
    return cloud.points.reshape(-1).copy()


def pairwise_distance(p1, p2) -> float:
    return float(np.linalg.norm(np.asarray(p1, dtype=float) - np.asarray(p2, dtype=float)))


def surface_variation(neighborhood: PointCloud) -> float:
    """Smallest eigenvalue share of the neighbourhood covariance, in [0, 1/3].

    Zero for coplanar points, 1/3 for an isotropic spread.
    """
    pts = neighborhood.points
    if pts.shape[0] < 3:
        raise DegenerateInputError(f"surface variation needs >= 3 points, got {pts.shape[0]}")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    lam = np.linalg.eigvalsh(cov)
    total = float(lam.sum())
    if total < 1e-15:
        raise DegenerateInputError("neighbourhood has (near) zero spread")
    return float(np.clip(lam[0] / total, 0.0, 1.0 / 3.0))


def mean_spacing(points: np.ndarray) -> float:
    """Mean nearest-neighbour distance."""
    if len(points) < 2:
        return 0.0
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


def center_index(cloud: PointCloud) -> int:
    """Index of the cloud point closest to the geometric centroid."""
    d = np.linalg.norm(cloud.points - centroid(cloud), axis=1)
    return int(np.argmin(d))


def darboux_angles(p_c, n_c, p_i, n_i) -> tuple[float, float, float]:
    """(cos alpha, cos phi, theta) of point ``i`` relative to the reference point."""
    d = np.asarray(p_i, dtype=float) - np.asarray(p_c, dtype=float)
    dist = np.linalg.norm(d)
    if dist < COINCIDENT_TOL:
        raise DegenerateInputError("point coincides with the reference point")
    d /= dist
    u = np.asarray(n_c, dtype=float)
    v = np.cross(d, u)
    vn = np.linalg.norm(v)
    # d parallel to the reference normal leaves v undefined; use a null frame
    v = v / vn if vn > 1e-12 else np.zeros(3)
    w = np.cross(u, v)
    cos_alpha = float(v @ n_i)
    cos_phi = float(u @ d)
    theta = float(np.arctan2(w @ n_i, u @ n_i))
    return cos_alpha, cos_phi, theta


FPFH_RANGES = ((-1.0, 1.0), (-1.0, 1.0), (-np.pi, np.pi))


def extended_fpfh(cloud: PointCloud, bins: int = 45) -> np.ndarray:
    """Three concatenated ``bins``-bin histograms of the angle triple, each summing to 1."""
    if cloud.normals is None:
        raise InputError("extended FPFH needs normals")
    if len(cloud) < 2:
        raise InputError("extended FPFH needs at least two points")
    if bins < 1:
        raise InputError("bins must be >= 1")
    c = center_index(cloud)
    p_c, n_c = cloud.points[c], cloud.normals[c]
    triples = []
    for i in range(len(cloud)):
        if i == c:
            continue
        if np.linalg.norm(cloud.points[i] - p_c) < COINCIDENT_TOL:
            log.debug("skipping point %d, coincident with reference point %d", i, c)
            continue
        triples.append(darboux_angles(p_c, n_c, cloud.points[i], cloud.normals[i]))
    if not triples:
        raise DegenerateInputError("every point coincides with the reference point")
    vals = np.asarray(triples)
    hists = []
    for ch, (lo, hi) in enumerate(FPFH_RANGES):
        h, _ = np.histogram(np.clip(vals[:, ch], lo, hi), bins=bins, range=(lo, hi))
        hists.append(h / h.sum())
    return np.concatenate(hists)


# -- composable specs -------------------------------------------------------


@dataclass(frozen=True, kw_only=True)
class Component:
    """One block of a feature vector. ``scale`` divides the raw values."""

    kind: ClassVar[str] = ""
    scale: float = 1.0

    def dim(self, n_points: int) -> int:
        raise NotImplementedError

    def raw(self, cloud: PointCloud) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, cloud: PointCloud) -> np.ndarray:
        return np.atleast_1d(self.raw(cloud)).astype(float) / self.scale


@dataclass(frozen=True)
class Centroid(Component):
    kind: ClassVar[str] = "centroid"

    def dim(self, n_points):
        return 3

    def raw(self, cloud):
        return centroid(cloud)


@dataclass(frozen=True)
class Positions(Component):
    kind: ClassVar[str] = "positions"

    def dim(self, n_points):
        return 3 * n_points

    def raw(self, cloud):
        return stacked_positions(cloud)


@dataclass(frozen=True)
class Distance(Component):
    kind: ClassVar[str] = "distance"
    i: int = 0
    j: int = 1

    def dim(self, n_points):
        return 1

    def raw(self, cloud):
        n = len(cloud)
        if not (0 <= self.i < n and 0 <= self.j < n):
            raise InputError(f"distance({self.i}, {self.j}) on a {n}-point cloud")
        return pairwise_distance(cloud.points[self.i], cloud.points[self.j])


@dataclass(frozen=True)
class SurfaceVariation(Component):
    """Surface variation of the points within ``radius`` of point ``center``.

    ``radius=None`` uses three times the cloud's mean nearest-neighbour spacing.
    """

    kind: ClassVar[str] = "surface_variation"
    center: int = 0
    radius: float | None = None

    def dim(self, n_points):
        return 1

    def raw(self, cloud):
        if not 0 <= self.center < len(cloud):
            raise InputError(f"center index {self.center} out of range")
        radius = self.radius if self.radius is not None else 3.0 * mean_spacing(cloud.points)
        d = np.linalg.norm(cloud.points - cloud.points[self.center], axis=1)
        return surface_variation(cloud.subset(np.flatnonzero(d <= radius)))


@dataclass(frozen=True)
class FpfhHistogram(Component):
    kind: ClassVar[str] = "fpfh_histogram"
    bins: int = 45

    def dim(self, n_points):
        return 3 * self.bins

    def raw(self, cloud):
        return extended_fpfh(cloud, self.bins)


COMPONENTS = {c.kind: c for c in (Centroid, Positions, Distance, SurfaceVariation, FpfhHistogram)}


@dataclass(frozen=True)
class FeatureSpec:
    components: tuple[Component, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    def dim(self, n_points: int) -> int:
        return sum(c.dim(n_points) for c in self.components)

    def labels(self, n_points: int) -> list[str]:
        out = []
        for idx, c in enumerate(self.components):
            out += [f"{c.kind}{idx}_{k}" for k in range(c.dim(n_points))]
        return out

    @classmethod
    def from_dicts(cls, items) -> "FeatureSpec":
        comps = []
        for n, item in enumerate(items):
            item = dict(item)
            kind = item.pop("kind", None)
            if kind not in COMPONENTS:
                raise InputError(f"feature component {n}: unknown kind {kind!r}")
            try:
                comps.append(COMPONENTS[kind](**item))
            except TypeError as exc:
                raise InputError(f"feature component {n} ({kind}): {exc}") from None
        return cls(tuple(comps))


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    spec: FeatureSpec

    def __len__(self):
        return len(self.values)


def extract(spec: FeatureSpec, cloud: PointCloud) -> FeatureVector:
    if not spec.components:
        raise InputError("feature spec has no components")
    parts = []
    for idx, comp in enumerate(spec.components):
        try:
            parts.append(comp(cloud))
        except InputError as exc:
            raise type(exc)(f"feature component {idx} ({comp.kind}): {exc}") from exc
    values = np.concatenate(parts)
    if not np.all(np.isfinite(values)):
        raise InputError("feature vector contains non-finite values")
    return FeatureVector(values, spec)
