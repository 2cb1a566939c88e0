"""Uniform dyadic grids and compactly supported functions sampled on them.

Conventions used throughout the package:

- A grid covers the box ``origin + [0, cells_per_side * h]**n`` with
  ``cells_per_side`` a power of two, so the box carries an exact dyadic
  cube tree down to single cells.
- Functions are represented by their values at cell centers and integrated
  with the midpoint rule, which makes every integral an exact linear map
  of the sample vector.
- Ball membership means "cell center inside the closed ball", and ball
  volumes are *counted* volumes (number of member cells times ``h**n``).
  Using the same counted volume in numerators and denominators reproduces
  constants exactly and keeps atom normalisations self-consistent.
- "Almost everywhere" statements of the continuum theory become "at every
  cell" statements here; the grid has no null sets.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

SUPPORTED_DIMENSIONS = (1, 2)

#: Volume of the Euclidean unit ball per dimension.
UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi}


class GridError(ValueError):
    """Invalid grid data or arguments."""


class EmptyBallError(GridError):
    """A ball that contains no cell centers at this resolution."""


def _is_power_of_two(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a uniform grid on a square/cubical box.

    Parameters
    ----------
    n : int
        Spatial dimension, 1 or 2.
    cells_per_side : int
        Number of cells along each axis; must be a power of two so the box
        supports exact dyadic descent.
    h : float
        Side length of one cell.
    origin : tuple of float
        Coordinates of the corner anchoring cell ``(0, ..., 0)``.
    """

    n: int
    cells_per_side: int
    h: float
    origin: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n not in SUPPORTED_DIMENSIONS:
            raise GridError(f"dimension must be one of {SUPPORTED_DIMENSIONS}, got {self.n}")
        if not _is_power_of_two(self.cells_per_side):
            raise GridError("cells_per_side must be a power of two")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise GridError("cell size h must be positive and finite")
        origin = tuple(float(x) for x in self.origin) if self.origin else (0.0,) * self.n
        if len(origin) != self.n:
            raise GridError("origin length must match the dimension")
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_side,) * self.n

    @property
    def num_cells(self) -> int:
        return self.cells_per_side**self.n

    @property
    def box_side(self) -> float:
        return self.cells_per_side * self.h

    @property
    def max_level(self) -> int:
        """Deepest dyadic level: cubes at this level are single cells."""
        return self.cells_per_side.bit_length() - 1

    def axis_centers(self, axis: int = 0) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.cells_per_side) + 0.5) * self.h

    def center_grid(self) -> np.ndarray:
        """Cell center coordinates, shape ``shape + (n,)``."""
        axes = [self.axis_centers(a) for a in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_center(self, index: Sequence[int]) -> np.ndarray:
        idx = np.asarray(index, dtype=float)
        return np.asarray(self.origin) + (idx + 0.5) * self.h

    def box_center(self) -> np.ndarray:
        return np.asarray(self.origin) + 0.5 * self.box_side


@dataclass
class GridFunction:
    """Real-valued samples at the cell centers of a :class:`GridSpec`.

    Values must be finite.  Operations that convolve or decompose assume the
    support leaves a margin inside the box; those preconditions are checked
    by the operations themselves (see :func:`support_margin_cells`), not at
    construction, because derived quantities such as maximal functions
    legitimately fill the whole box.
    """

    spec: GridSpec
    values: np.ndarray
    unit: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.spec.shape:
            raise GridError(f"values shape {v.shape} does not match grid shape {self.spec.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("grid function values must be finite")
        self.values = v

    def copy_with(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.spec, np.array(values, dtype=float), self.unit)

    def support_mask(self) -> np.ndarray:
        return self.values != 0.0

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check_same_grid(other)
        return GridFunction(self.spec, self.values + other.values, self.unit)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check_same_grid(other)
        return GridFunction(self.spec, self.values - other.values, self.unit)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.spec, self.values * float(scalar), self.unit)

    __rmul__ = __mul__

    def _check_same_grid(self, other: "GridFunction") -> None:
        if other.spec != self.spec:
            raise GridError("grid functions live on different grids")


@dataclass(frozen=True)
class Ball:
    """Closed Euclidean ball.

    ``center_half``/``r2_quarter`` optionally carry an exact representation
    (center in units of ``h/2`` relative to the grid origin, squared radius
    in units of ``h**2/4``) which makes cell membership decidable in integer
    arithmetic.  Balls derived from dyadic cubes always carry it.
    """

    center: tuple[float, ...]
    radius: float
    center_half: tuple[int, ...] | None = None
    r2_quarter: Fraction | None = None

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise GridError("ball radius must be positive and finite")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def volume_geometric(self) -> float:
        """Lebesgue volume ``omega_n * r**n`` of the ball."""
        n = len(self.center)
        return UNIT_BALL_VOLUME[n] * self.radius**n

    def scaled(self, factor: float) -> "Ball":
        """Concentric ball with the radius multiplied by ``factor``."""
        r2 = None
        if self.r2_quarter is not None:
            r2 = Fraction(factor) ** 2 * self.r2_quarter
        return Ball(self.center, self.radius * factor, self.center_half, r2)


def ball_cell_mask(spec: GridSpec, ball: Ball) -> np.ndarray:
    """Boolean mask of cells whose centers lie in the closed ball.

    Uses the exact integer representation when the ball carries one, so
    membership of boundary cells is deterministic.
    """
    if ball.center_half is not None and ball.r2_quarter is not None:
        idx = np.indices(spec.shape)
        d2 = np.zeros(spec.shape, dtype=np.int64)
        for a in range(spec.n):
            delta = 2 * idx[a] + 1 - ball.center_half[a]
            d2 += delta * delta
        bound = ball.r2_quarter
        # d2 <= bound  <=>  d2 * denom <= numer
        return d2 * bound.denominator <= bound.numerator
    centers = spec.center_grid()
    delta = centers - np.asarray(ball.center)
    return np.sum(delta * delta, axis=-1) <= ball.radius**2 * (1 + 1e-15)


def counted_volume(spec: GridSpec, ball: Ball) -> float:
    """Number of member cells times ``h**n`` (the measure used everywhere)."""
    count = int(np.count_nonzero(ball_cell_mask(spec, ball)))
    if count == 0:
        raise EmptyBallError("empty ball at this resolution")
    return count * spec.h**spec.n


def integrate(f: GridFunction) -> float:
    """Midpoint-rule integral ``h**n * sum(values)``; exact and linear."""
    return float(np.sum(f.values)) * f.spec.h**f.spec.n


def lq_norm(f: GridFunction, q: float) -> float:
    """L^q norm with midpoint quadrature; ``q = inf`` gives the sup norm.

    Raises
    ------
    GridError
        If ``q < 1``.
    """
    if q < 1:
        raise GridError(f"lq_norm requires q >= 1, got {q}")
    v = np.abs(f.values)
    if math.isinf(q):
        return float(v.max(initial=0.0))
    hn = f.spec.h**f.spec.n
    if q == 1:
        return float(v.sum()) * hn
    return float(np.sum(v**q) * hn) ** (1.0 / q)


def mean_on_ball(f: GridFunction, ball: Ball) -> float:
    """Average of ``f`` over the cells of a ball.

    Numerator and denominator use the same counted cells, so constants are
    reproduced exactly: ``mean_on_ball(c, B) == c``.
    """
    mask = ball_cell_mask(f.spec, ball)
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise EmptyBallError("empty ball at this resolution")
    return float(np.sum(f.values[mask])) / count


def enclosing_ball(f: GridFunction) -> Ball:
    """Smallest ball centered at the support bounding-box center that
    contains the closures of all nonzero cells.

    A single nonzero cell yields its circumscribed ball (radius = half the
    cell diameter).
    """
    mask = f.support_mask()
    if not mask.any():
        raise GridError("enclosing_ball of the zero function")
    spec = f.spec
    idx = np.argwhere(mask)  # (#cells, n)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    origin = np.asarray(spec.origin)
    box_lo = origin + lo * spec.h
    box_hi = origin + (hi + 1) * spec.h
    center = 0.5 * (box_lo + box_hi)
    # farthest corner of any nonzero cell from the center, per axis
    cell_lo = origin + idx * spec.h
    cell_hi = cell_lo + spec.h
    reach = np.maximum(np.abs(cell_lo - center), np.abs(cell_hi - center))
    radius = float(np.sqrt(np.sum(reach**2, axis=1)).max())
    return Ball(tuple(center), radius)


def support_margin_cells(f: GridFunction) -> int:
    """Number of zero boundary layers around the support (min over axes)."""
    mask = f.support_mask()
    if not mask.any():
        return f.spec.cells_per_side
    idx = np.argwhere(mask)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    return int(min(lo.min(), (f.spec.cells_per_side - 1 - hi).min()))


# ---------------------------------------------------------------------------
# dyadic cubes


@dataclass(frozen=True)
class DyadicCube:
    """Dyadic subcube of the grid box: level ``j >= 0``, index in ``[0, 2^j)^n``.

    Cubes are aligned to the grid box's own dyadic tree, so every cube is a
    union of whole cells as long as ``level <= spec.max_level``.
    """

    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise GridError("cube level must be >= 0")
        if any(not (0 <= i < 2**self.level) for i in self.index):
            raise GridError("cube index out of range for its level")
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))

    def side_cells(self, spec: GridSpec) -> int:
        if self.level > spec.max_level:
            raise GridError("cube level finer than the grid")
        return spec.cells_per_side >> self.level

    def side(self, spec: GridSpec) -> float:
        return self.side_cells(spec) * spec.h

    def diam(self, spec: GridSpec) -> float:
        return math.sqrt(spec.n) * self.side(spec)

    def cell_slices(self, spec: GridSpec) -> tuple[slice, ...]:
        s = self.side_cells(spec)
        return tuple(slice(i * s, (i + 1) * s) for i in self.index)

    def cell_bounds(self, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) cell-index bounds, inclusive-exclusive, per axis."""
        s = self.side_cells(spec)
        lo = np.array(self.index, dtype=np.int64) * s
        return lo, lo + s

    def center(self, spec: GridSpec) -> np.ndarray:
        lo, hi = self.cell_bounds(spec)
        return np.asarray(spec.origin) + 0.5 * (lo + hi) * spec.h

    def center_half(self, spec: GridSpec) -> tuple[int, ...]:
        """Cube center in units of ``h/2`` relative to the origin (exact)."""
        lo, hi = self.cell_bounds(spec)
        return tuple(int(a + b) for a, b in zip(lo, hi))

    def circumscribed_ball(self, spec: GridSpec) -> Ball:
        s = self.side_cells(spec)
        r2q = Fraction(spec.n * s * s)  # (sqrt(n)*s*h/2)^2 in units of h^2/4
        return Ball(
            tuple(self.center(spec)),
            0.5 * self.diam(spec),
            self.center_half(spec),
            r2q,
        )

    def children(self) -> Iterator["DyadicCube"]:
        n = len(self.index)
        for corner in np.ndindex(*(2,) * n):
            yield DyadicCube(self.level + 1, tuple(2 * i + c for i, c in zip(self.index, corner)))


def dyadic_cubes(spec: GridSpec, level: int) -> Iterator[DyadicCube]:
    """All dyadic cubes of the box at one level."""
    for idx in np.ndindex(*(2**level,) * spec.n):
        yield DyadicCube(level, tuple(idx))


def cube_gap_sq_cells(spec: GridSpec, cube: DyadicCube, omega: np.ndarray) -> int | None:
    """Squared Euclidean gap, in cell units, between the cube (as a closed
    box) and the closures of cells outside the mask.  ``None`` when the mask
    is the whole grid.  Adjacent boxes have gap 0."""
    omega = np.asarray(omega, dtype=bool)
    if omega.shape != spec.shape:
        raise GridError("mask shape does not match the grid")
    lo, hi = cube.cell_bounds(spec)
    if not omega[cube.cell_slices(spec)].all():
        raise GridError("cube is not contained in the mask")
    outside = np.argwhere(~omega)
    if outside.size == 0:
        return None
    # per-axis gap between [lo, hi] and the unit cell [c, c+1]
    gap = np.maximum(0, np.maximum(lo - (outside + 1), outside - hi))
    return int(np.min(np.sum(gap * gap, axis=1)))


def cube_dist_to_complement(spec: GridSpec, cube: DyadicCube, omega: np.ndarray) -> float:
    """Euclidean distance from a cube to the nearest cell outside the mask.

    Distances are box-to-cell-closure within the grid box (the box is the
    universe), so a cube touching the mask boundary has distance 0.  Returns
    ``inf`` when the mask covers the whole grid; callers that need finite
    distances must treat that as ineligible.
    """
    g = cube_gap_sq_cells(spec, cube, omega)
    if g is None:
        return math.inf
    return math.sqrt(g) * spec.h


# ---------------------------------------------------------------------------
# serialization

_FORMAT = "hardygrid.gridfunction.v1"


def _float_to_str(x: float) -> str:
    return float(x).hex()


def _float_from_str(s: str) -> float:
    s = s.strip()
    try:
        return float.fromhex(s)
    except ValueError:
        return float(s)


def grid_function_to_obj(f: GridFunction) -> dict:
    """JSON-ready dict; values as hex floats for bit-exact round trips."""
    return {
        "format": _FORMAT,
        "n": f.spec.n,
        "cells_per_side": f.spec.cells_per_side,
        "h": _float_to_str(f.spec.h),
        "origin": [_float_to_str(x) for x in f.spec.origin],
        "unit": f.unit,
        "values": [_float_to_str(v) for v in f.values.ravel(order="C")],
    }


def grid_function_from_obj(obj: dict) -> GridFunction:
    try:
        n = int(obj["n"])
        cells = int(obj["cells_per_side"])
        h = _float_from_str(str(obj["h"]))
        origin = tuple(_float_from_str(str(x)) for x in obj.get("origin", [0.0] * n))
        values = np.array([_float_from_str(str(v)) for v in obj["values"]], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise GridError(f"malformed grid function object: {exc}") from exc
    spec = GridSpec(n, cells, h, origin)
    if values.size != spec.num_cells:
        raise GridError("value count does not match the grid")
    return GridFunction(spec, values.reshape(spec.shape, order="C"), obj.get("unit", ""))


def save_grid_function(f: GridFunction, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(grid_function_to_obj(f), fh, sort_keys=True)
        fh.write("\n")


def load_grid_function(path: str) -> GridFunction:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".csv") or (text.lstrip() and text.lstrip()[0] != "{"):
        return grid_function_from_csv(text)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridError(f"not valid JSON: {exc}") from exc
    return grid_function_from_obj(obj)


def grid_function_to_csv(f: GridFunction) -> str:
    """CSV form: a comment header with the grid data, then one row per cell
    (index tuple, then the value as a hex float)."""
    buf = io.StringIO()
    spec = f.spec
    buf.write(
        f"# {_FORMAT} n={spec.n} cells_per_side={spec.cells_per_side} "
        f"h={_float_to_str(spec.h)} origin={','.join(_float_to_str(x) for x in spec.origin)} "
        f"unit={f.unit}\n"
    )
    writer = csv.writer(buf)
    for idx in np.ndindex(*spec.shape):
        writer.writerow(list(idx) + [_float_to_str(f.values[idx])])
    return buf.getvalue()


def grid_function_from_csv(text: str) -> GridFunction:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise GridError("CSV grid function must start with a header comment")
    header = dict(
        part.split("=", 1) for part in lines[0].lstrip("# ").split() if "=" in part
    )
    try:
        n = int(header["n"])
        cells = int(header["cells_per_side"])
        h = _float_from_str(header["h"])
        origin = tuple(_float_from_str(x) for x in header["origin"].split(","))
    except (KeyError, ValueError) as exc:
        raise GridError(f"malformed CSV header: {exc}") from exc
    spec = GridSpec(n, cells, h, origin)
    values = np.zeros(spec.shape)
    for row in csv.reader(lines[1:]):
        if not row:
            continue
        idx = tuple(int(x) for x in row[: spec.n])
        values[idx] = _float_from_str(row[spec.n])
    return GridFunction(spec, values, header.get("unit", ""))
