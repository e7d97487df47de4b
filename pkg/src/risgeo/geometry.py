"""Point-process deployments in a disk cell and LoS thinning."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .numerics import InvalidInputError, RngLike, as_generator

DEPLOYMENT_FORMAT = "risgeo.deployment"
DEPLOYMENT_VERSION = 1

# 3GPP UMi street-canyon LoS model constants (meters)
_LOS_D1 = 18.0
_LOS_D2 = 63.0
_HUT_MAX = 23.0


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return np.zeros((0, 2))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInputError(f"points must have shape (n, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("points must be finite")
    return pts


@dataclass
class Deployment:
    """One spatial realization of the cell.

    The BS sits at the origin. ``los_marks[u, n]`` tells whether RIS ``n`` is
    in line of sight of user ``u``; it may be empty when marks were not drawn.
    """

    cell_radius: float
    ris_points: np.ndarray
    user_points: np.ndarray
    los_marks: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), bool))

    def __post_init__(self):
        self.ris_points = _as_points(self.ris_points)
        self.user_points = _as_points(self.user_points)
        self.los_marks = np.asarray(self.los_marks, dtype=bool)
        if self.los_marks.size == 0:
            self.los_marks = np.zeros((len(self.user_points), len(self.ris_points)), bool) \
                if len(self.user_points) and len(self.ris_points) else np.zeros((0, len(self.ris_points)), bool)
        if self.los_marks.ndim != 2 or self.los_marks.shape[1] != len(self.ris_points):
            raise InvalidInputError("los_marks must have one column per RIS")
        tol = 1e-9 * self.cell_radius
        for name, pts in (("ris", self.ris_points), ("user", self.user_points)):
            if len(pts) and np.max(np.hypot(pts[:, 0], pts[:, 1])) > self.cell_radius + tol:
                raise InvalidInputError(f"{name} point outside the cell")

    @property
    def bs(self) -> np.ndarray:
        return np.zeros(2)

    @property
    def n_ris(self) -> int:
        return len(self.ris_points)

    @property
    def n_users(self) -> int:
        return len(self.user_points)

    def bs_ris_distance(self) -> np.ndarray:
        return np.hypot(self.ris_points[:, 0], self.ris_points[:, 1])

    def bs_user_distance(self) -> np.ndarray:
        return np.hypot(self.user_points[:, 0], self.user_points[:, 1])

    def user_ris_distance(self) -> np.ndarray:
        """Distances with shape (n_users, n_ris)."""
        diff = self.user_points[:, None, :] - self.ris_points[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def user_user_distance(self) -> np.ndarray:
        diff = self.user_points[:, None, :] - self.user_points[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def to_json(self) -> str:
        doc = {
            "format": DEPLOYMENT_FORMAT,
            "version": DEPLOYMENT_VERSION,
            "cell_radius_m": float(self.cell_radius),
            "ris_points_m": self.ris_points.tolist(),
            "user_points_m": self.user_points.tolist(),
            "los_marks": self.los_marks.astype(int).tolist(),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Deployment":
        doc = json.loads(text)
        if doc.get("format") != DEPLOYMENT_FORMAT:
            raise InvalidInputError("not a deployment document")
        if doc.get("version") != DEPLOYMENT_VERSION:
            raise InvalidInputError(f"unsupported deployment version {doc.get('version')}")
        n = len(doc["ris_points_m"])
        marks = np.array(doc["los_marks"], dtype=bool).reshape(-1, n) if n else \
            np.zeros((len(doc["user_points_m"]), 0), bool)
        return cls(cell_radius=doc["cell_radius_m"],
                   ris_points=np.array(doc["ris_points_m"], float).reshape(-1, 2),
                   user_points=np.array(doc["user_points_m"], float).reshape(-1, 2),
                   los_marks=marks)


@dataclass(frozen=True)
class PcpParams:
    """Thomas cluster process parameters.

    parent_density : parents per m^2
    mean_per_cluster : mean offspring per parent
    scatter_std : per-axis std of the Gaussian offspring scatter (m)
    """

    parent_density: float
    mean_per_cluster: float
    scatter_std: float

    def __post_init__(self):
        if not (self.parent_density > 0 and self.mean_per_cluster > 0 and self.scatter_std >= 0):
            raise InvalidInputError("PCP parameters must be positive")

    @classmethod
    def matched(cls, total_density: float, mean_per_cluster: float, scatter_std: float) -> "PcpParams":
        """Parameters whose overall intensity equals ``total_density``."""
        return cls(total_density / mean_per_cluster, mean_per_cluster, scatter_std)

    @property
    def total_density(self) -> float:
        return self.parent_density * self.mean_per_cluster


def sample_disk_uniform(count: int, radius: float, rng: RngLike) -> np.ndarray:
    """``count`` i.i.d. points uniform on the disk (sqrt transform on the radius)."""
    gen = as_generator(rng)
    r = radius * np.sqrt(gen.random(count))
    phi = 2.0 * np.pi * gen.random(count)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def sample_ppp_disk(density: float, radius: float, rng: RngLike) -> np.ndarray:
    """Homogeneous PPP of the given intensity on the disk of ``radius``."""
    if density < 0 or not radius > 0:
        raise InvalidInputError("density must be >= 0 and radius > 0")
    gen = as_generator(rng)
    count = int(gen.poisson(density * np.pi * radius ** 2)) if density > 0 else 0
    return sample_disk_uniform(count, radius, gen)


def sample_fixed_count_disk(density: float, radius: float, rng: RngLike) -> np.ndarray:
    """Binomial process with ``round(density * pi * radius^2)`` points."""
    if density < 0 or not radius > 0:
        raise InvalidInputError("density must be >= 0 and radius > 0")
    count = int(round(density * np.pi * radius ** 2))
    return sample_disk_uniform(count, radius, rng)


def sample_pcp_disk(params: PcpParams, radius: float, rng: RngLike) -> np.ndarray:
    """Thomas process restricted to the disk.

    Parents form a PPP on the disk. Each parent gets a Poisson number of
    offspring scattered with an isotropic Gaussian. Offspring landing outside
    the disk are redrawn around the same parent.
    """
    if not radius > 0:
        raise InvalidInputError("radius must be > 0")
    gen = as_generator(rng)
    parents = sample_ppp_disk(params.parent_density, radius, gen)
    if len(parents) == 0:
        return np.zeros((0, 2))
    counts = gen.poisson(params.mean_per_cluster, len(parents))
    anchor = np.repeat(parents, counts, axis=0)
    pts = anchor.copy()
    if params.scatter_std == 0 or len(pts) == 0:
        return pts
    todo = np.arange(len(pts))
    for _ in range(10000):
        pts[todo] = anchor[todo] + params.scatter_std * gen.standard_normal((len(todo), 2))
        outside = np.hypot(pts[todo, 0], pts[todo, 1]) > radius
        todo = todo[outside]
        if len(todo) == 0:
            return pts
    raise InvalidInputError("offspring rejection did not terminate; scatter_std too large")


def los_probability(d2d, h_ut: float = 1.5):
    """3GPP UMi LoS probability at 2-D distance ``d2d`` for terminal height ``h_ut``.

    Returns 1 within 18 m. Beyond, the exponential blend is scaled by the
    height correction ``1 + C(h) * 5/4 * (d/100)^3 * exp(-d/150)``, which
    vanishes for terminals at or below 13 m. Accepts scalars or arrays.
    """
    if h_ut > _HUT_MAX:
        raise InvalidInputError(f"h_ut = {h_ut} m exceeds the model range (<= {_HUT_MAX} m)")
    d = np.asarray(d2d, dtype=float)
    if np.any(d < 0):
        raise InvalidInputError("d2d must be >= 0")
    c_h = 0.0 if h_ut <= 13.0 else ((h_ut - 13.0) / 10.0) ** 1.5
    far = d > _LOS_D1
    dd = np.where(far, d, _LOS_D1 + 1.0)
    base = _LOS_D1 / dd + np.exp(-dd / _LOS_D2) * (1.0 - _LOS_D1 / dd)
    corr = 1.0 + c_h * 1.25 * (dd / 100.0) ** 3 * np.exp(-dd / 150.0)
    p = np.where(far, np.clip(base * corr, 0.0, 1.0), 1.0)
    return float(p) if p.ndim == 0 else p


def height_correction(h_ut: float) -> float:
    """The terminal-height coefficient C(h_ut) of the LoS model."""
    if h_ut > _HUT_MAX:
        raise InvalidInputError(f"h_ut = {h_ut} m exceeds the model range")
    return 0.0 if h_ut <= 13.0 else ((h_ut - 13.0) / 10.0) ** 1.5


def thin_los(points, observer, h_ut: float, rng: RngLike,
             prob_fn: Optional[Callable] = None) -> np.ndarray:
    """Independent LoS marks for ``points`` as seen from ``observer``.

    Each point is kept with probability ``prob_fn(distance)``, which defaults
    to :func:`los_probability` at height ``h_ut``.
    """
    pts = _as_points(points)
    obs = np.asarray(observer, dtype=float).reshape(2)
    dist = np.hypot(pts[:, 0] - obs[0], pts[:, 1] - obs[1])
    p = los_probability(dist, h_ut) if prob_fn is None else np.broadcast_to(
        np.asarray(prob_fn(dist), float), dist.shape)
    return as_generator(rng).random(len(pts)) < p
