"""Discretised anisotropic grid: box, sampling, integration, sets, dilations.

The ambient space is R^m x R^k with the dilation group
delta_lambda(x, y) = (lambda * x, lambda^(alpha+1) * y), under which the
Lebesgue measure scales by lambda^Q with Q = m + (alpha+1) * k.

Grids are uniform tensor products of interior nodes of a truncated box
(Dirichlet layout: the first/last node sits one spacing inside the wall),
so quadrature is the midpoint rule with a single cell volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .quadrature import ConfigurationError


def _as_tuple(value, n, cast):
    if np.isscalar(value):
        return tuple(cast(value) for _ in range(n))
    out = tuple(cast(v) for v in value)
    if len(out) != n:
        raise ConfigurationError(f"expected {n} per-axis entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the truncated box: m x-axes, k y-axes, anisotropy alpha."""

    m: int
    k: int
    alpha: float
    half_width: Union[float, Sequence[float]] = 2.0
    points: Union[int, Sequence[int]] = 64

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ConfigurationError("need m >= 1 and k >= 1")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        hw = _as_tuple(self.half_width, self.n, float)
        pts = _as_tuple(self.points, self.n, int)
        if any(h <= 0 for h in hw):
            raise ConfigurationError("half widths must be positive")
        if any(p < 3 for p in pts):
            raise ConfigurationError("need at least 3 nodes per axis")
        object.__setattr__(self, "half_width", hw)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.m + self.k

    @property
    def shape(self) -> tuple:
        return tuple(self.points)

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    def dilated(self, lam: float) -> "GridSpec":
        """Paired grid for a lambda-scaling experiment: x-axes scale by
        lambda, y-axes by lambda^(alpha+1), node counts unchanged."""
        if lam <= 0:
            raise ConfigurationError("dilation factor must be positive")
        hw = tuple(
            h * lam if a < self.m else h * lam ** (self.alpha + 1.0)
            for a, h in enumerate(self.half_width)
        )
        return GridSpec(self.m, self.k, self.alpha, hw, self.points)


def hom_dimension(spec: GridSpec) -> float:
    """Volume-growth exponent Q = m + (alpha + 1) * k."""
    return spec.m + (spec.alpha + 1.0) * spec.k


class Grid:
    """Realised grid: coordinates, spacing, cell volume, node helpers."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.axes = []
        self.spacing = []
        # midpoint layout: cells tile the box exactly (so quadrature is
        # exact for constants); the Dirichlet zero sits at ghost nodes one
        # spacing beyond the last row, half a cell outside the wall
        for h, p in zip(spec.half_width, spec.points):
            step = 2.0 * h / p
            self.axes.append(-h + step * (0.5 + np.arange(p)))
            self.spacing.append(step)
        self.spacing = np.asarray(self.spacing)
        self.cell_volume = float(np.prod(self.spacing))

    @property
    def shape(self):
        return self.spec.shape

    @property
    def size(self):
        return self.spec.size

    @property
    def alpha(self):
        return self.spec.alpha

    @property
    def m(self):
        return self.spec.m

    @property
    def k(self):
        return self.spec.k

    def coordinates(self) -> np.ndarray:
        """(size, n) array of node coordinates in C (row-major) node order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([c.ravel() for c in mesh], axis=1)

    def x_norm(self) -> np.ndarray:
        """|x| (norm over the m x-coordinates) per node."""
        coords = self.coordinates()
        return np.sqrt(np.sum(coords[:, : self.spec.m] ** 2, axis=1))

    def node_index(self, point) -> int:
        """Flat index of the node nearest to ``point``."""
        idx = []
        for a, ax in enumerate(self.axes):
            idx.append(int(np.argmin(np.abs(ax - point[a]))))
        return int(np.ravel_multi_index(idx, self.shape))

    def boundary_distance(self) -> np.ndarray:
        """Euclidean distance from each node to the nearest box wall."""
        coords = self.coordinates()
        gaps = [
            np.minimum(h - coords[:, a], coords[:, a] + h)
            for a, h in enumerate(self.spec.half_width)
        ]
        return np.min(np.stack(gaps, axis=1), axis=1)

    def interior_mask(self, margin: float) -> np.ndarray:
        return self.boundary_distance() >= margin

    def sample(self, func) -> "GridFunction":
        coords = self.coordinates()
        vals = np.asarray(func(coords), dtype=float)
        return GridFunction(self, vals)

    def dilated(self, lam: float) -> "Grid":
        return Grid(self.spec.dilated(lam))


@dataclass
class GridFunction:
    """Real field on a grid, stored flat in node order."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.size:
            raise ConfigurationError("value array does not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("grid function carries non-finite entries")

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_volume

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())


def integrate(u: GridFunction) -> float:
    """Midpoint-rule integral: uniform weight cell_volume per node."""
    return u.cell_volume * float(np.sum(u.values))


def lp_norm(u: GridFunction, p) -> float:
    if p == np.inf or p == "inf":
        return float(np.max(np.abs(u.values)))
    p = float(p)
    if p < 1:
        raise ConfigurationError("p must lie in [1, inf]")
    return float((u.cell_volume * np.sum(np.abs(u.values) ** p)) ** (1.0 / p))


# ---------------------------------------------------------------------------
# Analytic set descriptions and their rasterisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SetSpec:
    """Analytic set description.

    kind is one of "euclidean_box", "euclidean_ball", "metric_ball",
    "dilate", "superlevel".  Dilation is resolved analytically: the node is
    mapped through the inverse dilation before testing the inner spec.
    """

    kind: str
    center: Optional[tuple] = None
    half_sides: Optional[tuple] = None
    radius: Optional[float] = None
    lam: Optional[float] = None
    inner: Optional["SetSpec"] = None
    field_id: Optional[str] = None
    threshold: Optional[float] = None

    @classmethod
    def euclidean_box(cls, center, half_sides):
        return cls("euclidean_box", center=tuple(center), half_sides=tuple(half_sides))

    @classmethod
    def euclidean_ball(cls, center, radius):
        return cls("euclidean_ball", center=tuple(center), radius=float(radius))

    @classmethod
    def metric_ball(cls, center, radius):
        return cls("metric_ball", center=tuple(center), radius=float(radius))

    @classmethod
    def dilate(cls, lam, inner):
        if lam <= 0:
            raise ConfigurationError("dilation factor must be positive")
        return cls("dilate", lam=float(lam), inner=inner)

    @classmethod
    def superlevel(cls, field_id, threshold):
        return cls("superlevel", field_id=field_id, threshold=float(threshold))


@dataclass
class SetMask:
    """Rasterised set: node-centre membership, no partial cells."""

    grid: Grid
    indicator: np.ndarray

    def __post_init__(self):
        self.indicator = np.asarray(self.indicator, dtype=bool).ravel()
        if self.indicator.size != self.grid.size:
            raise ConfigurationError("indicator does not match the grid")

    @property
    def measure(self) -> float:
        return self.grid.cell_volume * float(np.count_nonzero(self.indicator))

    def function(self) -> GridFunction:
        return GridFunction(self.grid, self.indicator.astype(float))


def _predicate(spec: SetSpec, coords: np.ndarray, grid: Grid, aux) -> np.ndarray:
    if spec.kind == "euclidean_box":
        c = np.asarray(spec.center)
        hs = np.asarray(spec.half_sides)
        return np.all(np.abs(coords - c) < hs, axis=1)
    if spec.kind == "euclidean_ball":
        c = np.asarray(spec.center)
        return np.sum((coords - c) ** 2, axis=1) < spec.radius**2
    if spec.kind == "metric_ball":
        field = None if aux is None else aux.get("metric_field")
        if field is None:
            raise ConfigurationError("metric_ball rasterisation needs a distance field")
        return _interp_field(field, grid, coords) < spec.radius
    if spec.kind == "superlevel":
        fields = None if aux is None else aux.get("fields")
        if not fields or spec.field_id not in fields:
            raise ConfigurationError(
                f"superlevel rasterisation needs field {spec.field_id!r}"
            )
        return _interp_field(fields[spec.field_id], grid, coords) > spec.threshold
    if spec.kind == "dilate":
        alpha = grid.alpha
        scale = np.concatenate(
            [
                np.full(grid.m, spec.lam),
                np.full(grid.k, spec.lam ** (alpha + 1.0)),
            ]
        )
        return _predicate(spec.inner, coords / scale, grid, aux)
    raise ConfigurationError(f"unknown set kind {spec.kind!r}")


def _interp_field(field, grid: Grid, coords: np.ndarray) -> np.ndarray:
    """Evaluate a sampled field at possibly off-node coordinates."""
    values = field.values if isinstance(field, GridFunction) else np.asarray(field)
    if coords.shape[0] == grid.size:
        node_coords = grid.coordinates()
        if np.allclose(coords, node_coords):
            return values.ravel()
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator(
        grid.axes,
        values.reshape(grid.shape),
        bounds_error=False,
        fill_value=None,
    )
    return interp(coords)


def rasterize(spec: SetSpec, grid: Grid, metric_field=None, fields=None) -> SetMask:
    """Node-centre rasterisation of an analytic set description."""
    aux = {"metric_field": metric_field, "fields": fields}
    coords = grid.coordinates()
    return SetMask(grid, _predicate(spec, coords, grid, aux))
