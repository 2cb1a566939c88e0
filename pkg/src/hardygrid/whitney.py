"""Whitney decomposition of cell masks into dyadic cubes.

A mask ``omega`` (a boolean cell array, neither empty nor the whole grid)
is tiled by dyadic cubes ``Q`` satisfying the two-sided proportionality

    diam(Q) <= eta * dist(Q, omega^c) <= 4 * diam(Q),        eta in (0, 1),

where ``dist`` is the *certificate distance*

    dist(Q, omega^c) = h * sqrt(gap(Q)^2 + w0^2).

``gap(Q)`` is the Euclidean box gap (in cells) between the cube and the
nearest complement cell closure, and ``w0`` is a virtual boundary depth in
cells.  The pure box gap cannot work on a grid: a cell adjacent to the
complement has gap 0 but diameter ``sqrt(n)*h``, so no eta < 1 could ever
tile a mask down to its boundary.  The depth term models the fact that the
true boundary of the open set represented by the mask is unresolved below
cell scale; with ``w0 = ceil(2*sqrt(n)/eta)`` (the default) every mask
admits a full tiling and both inequalities hold for every emitted cube, by
the parent-rejection argument.  Away from the boundary the certificate
distance agrees with the box gap up to O(w0*h).

All selection tests and certificates are evaluated in exact integer /
rational arithmetic: cube sides and gaps are integers in cell units and
``eta`` is taken as the exact binary rational of the float passed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from hardygrid.grid import Ball, DyadicCube, GridError, GridSpec, ball_cell_mask


class WhitneyError(GridError):
    """The decomposition could not certify the two-sided inequality."""


class ResolutionTooCoarse(WhitneyError):
    """A single cell inside omega violates diam <= eta * dist."""


def default_depth_offset(n: int, eta: float) -> int:
    """Virtual boundary depth (cells) guaranteeing full coverage."""
    return math.ceil(2.0 * math.sqrt(n) / eta)


# ---------------------------------------------------------------------------
# exact per-cell gap transform


def _gap_sq_1d(omega: np.ndarray) -> np.ndarray:
    """For each cell, min over complement cells of max(0, |d-c|-1)^2."""
    n = omega.shape[0]
    big = np.int64(4 * n * n + 4)
    comp = ~omega
    # nearest complement index scanning left and right
    idx = np.arange(n, dtype=np.int64)
    last = np.where(comp, idx, -1)
    np.maximum.accumulate(last, out=last)
    dist_left = np.where(last >= 0, idx - last, big)
    nxt = np.where(comp, idx, 2 * n)
    nxt = np.minimum.accumulate(nxt[::-1])[::-1]
    dist_right = np.where(nxt < 2 * n, nxt - idx, big)
    d = np.minimum(dist_left, dist_right)
    g = np.maximum(d - 1, 0)
    out = np.where(d >= big, big, g * g)
    return out.astype(np.int64)


def _gap_sq_2d(omega: np.ndarray) -> np.ndarray:
    """Separable exact transform of the box-gap metric in 2D."""
    n0, n1 = omega.shape
    big = np.int64(4 * (n0 * n0 + n1 * n1) + 4)
    # phase 1: per column, gap^2 along axis 0 to complement cells of that column
    d0 = np.arange(n0, dtype=np.int64)
    a = np.full((n0, n1), big, dtype=np.int64)
    comp = ~omega
    for c1 in range(n1):
        col = comp[:, c1]
        if not col.any():
            continue
        a[:, c1] = _gap_sq_1d(~col)
    # phase 2: per row d0, min over c1 of a[d0, c1] + g(|d1-c1|)^2
    d1 = np.arange(n1, dtype=np.int64)
    gmat = np.maximum(np.abs(d1[:, None] - d1[None, :]) - 1, 0) ** 2  # (d1, c1)
    out = np.empty((n0, n1), dtype=np.int64)
    for i in range(n0):
        out[i] = np.min(a[i][None, :] + gmat, axis=1)
    return np.minimum(out, big)


def cell_gap_sq(omega: np.ndarray) -> np.ndarray:
    """Exact squared box gap (cells) from each cell to the complement."""
    omega = np.asarray(omega, dtype=bool)
    if omega.ndim == 1:
        return _gap_sq_1d(omega)
    if omega.ndim == 2:
        return _gap_sq_2d(omega)
    raise GridError("only 1D and 2D masks are supported")


# ---------------------------------------------------------------------------
# cover data


@dataclass(frozen=True)
class WhitneyCube:
    cube: DyadicCube
    gap_sq: int  # squared box gap to the complement, in cell units

    def dist(self, spec: GridSpec, depth_offset: int) -> float:
        return math.sqrt(self.gap_sq + depth_offset**2) * spec.h


@dataclass
class WhitneyCover:
    """Certified Whitney cover of a cell mask."""

    spec: GridSpec
    omega: np.ndarray
    eta: float
    depth_offset: int
    cubes: list[WhitneyCube]
    expansion: float = 2.0

    def verify(self) -> dict:
        """Re-check the contract in exact rational arithmetic.

        Returns a report dict; raises :class:`WhitneyError` on any failure of
        the two-sided inequality, coverage or disjointness.
        """
        spec = self.spec
        eta = Fraction(self.eta)
        p, q = eta.numerator, eta.denominator
        w2 = self.depth_offset**2
        covered = np.zeros(spec.shape, dtype=np.int64)
        for wc in self.cubes:
            s = wc.cube.side_cells(spec)
            diam_sq = spec.n * s * s
            d2 = wc.gap_sq + w2
            if not (diam_sq * q * q <= p * p * d2):
                raise WhitneyError(f"lower inequality fails for {wc.cube}")
            if not (p * p * d2 <= 16 * q * q * diam_sq):
                raise WhitneyError(f"upper inequality fails for {wc.cube}")
            covered[wc.cube.cell_slices(spec)] += 1
        if np.any(covered > 1):
            raise WhitneyError("cubes overlap")
        if not np.array_equal(covered == 1, self.omega):
            raise WhitneyError("union of cubes differs from omega")
        return {
            "cubes": len(self.cubes),
            "eta": self.eta,
            "depth_offset": self.depth_offset,
            "coverage_exact": True,
            "disjoint": True,
        }

    def to_obj(self) -> dict:
        return {
            "format": "hardygrid.whitneycover.v1",
            "eta": self.eta,
            "depth_offset": self.depth_offset,
            "expansion": self.expansion,
            "cubes": [
                {
                    "level": wc.cube.level,
                    "index": list(wc.cube.index),
                    "gap_sq_cells": wc.gap_sq,
                    "dist_to_complement": wc.dist(self.spec, self.depth_offset),
                }
                for wc in self.cubes
            ],
        }


def whitney_decompose(
    spec: GridSpec,
    omega: np.ndarray,
    eta: float,
    depth_offset: int | None = None,
) -> WhitneyCover:
    """Tile a cell mask with dyadic cubes satisfying the Whitney contract.

    Greedy dyadic descent: starting from the root cube, a cube is selected
    as soon as it lies inside the mask and passes ``diam <= eta * dist`` for
    the certificate distance; otherwise it is subdivided.  The upper
    proportionality ``eta * dist <= 4 * diam`` is asserted for every
    selected cube rather than trusted from the parent-rejection argument.

    Parameters
    ----------
    spec, omega : grid and boolean cell mask (nonempty, not the whole grid).
    eta : float in (0, 1)
        Proportionality constant; used as its exact binary rational.
    depth_offset : int, optional
        Virtual boundary depth ``w0`` in cells.  Defaults to
        ``ceil(2*sqrt(n)/eta)``.  Passing 0 recovers the raw box-gap
        distance, under which masks with boundary-adjacent cells fail with
        :class:`ResolutionTooCoarse`.
    """
    omega = np.asarray(omega, dtype=bool)
    if omega.shape != spec.shape:
        raise GridError("mask shape does not match the grid")
    if not omega.any():
        raise GridError("omega is empty")
    if omega.all():
        raise GridError("omega is the whole grid; complement must be nonempty")
    if not (0.0 < eta < 1.0):
        raise GridError("eta must lie in (0, 1)")
    if depth_offset is None:
        depth_offset = default_depth_offset(spec.n, eta)
    if depth_offset < 0:
        raise GridError("depth_offset must be >= 0")

    eta_frac = Fraction(eta)
    p2 = eta_frac.numerator**2
    q2 = eta_frac.denominator**2
    w2 = depth_offset**2

    gap_sq = cell_gap_sq(omega)

    # min-gap and all-inside pyramids over the dyadic tree, finest to coarsest
    levels = spec.max_level
    gap_pyr: list[np.ndarray] = [gap_sq]
    in_pyr: list[np.ndarray] = [omega]
    any_pyr: list[np.ndarray] = [omega]
    cur_g, cur_i, cur_a = gap_sq, omega, omega
    for _ in range(levels):
        if spec.n == 1:
            cur_g = np.minimum(cur_g[0::2], cur_g[1::2])
            cur_i = cur_i[0::2] & cur_i[1::2]
            cur_a = cur_a[0::2] | cur_a[1::2]
        else:
            cur_g = np.minimum.reduce(
                [cur_g[0::2, 0::2], cur_g[0::2, 1::2], cur_g[1::2, 0::2], cur_g[1::2, 1::2]]
            )
            cur_i = cur_i[0::2, 0::2] & cur_i[0::2, 1::2] & cur_i[1::2, 0::2] & cur_i[1::2, 1::2]
            cur_a = cur_a[0::2, 0::2] | cur_a[0::2, 1::2] | cur_a[1::2, 0::2] | cur_a[1::2, 1::2]
        gap_pyr.append(cur_g)
        in_pyr.append(cur_i)
        any_pyr.append(cur_a)
    gap_pyr.reverse()  # index by level: 0 = root
    in_pyr.reverse()
    any_pyr.reverse()

    cubes: list[WhitneyCube] = []
    stack: list[DyadicCube] = [DyadicCube(0, (0,) * spec.n)]
    while stack:
        cube = stack.pop()
        idx = cube.index
        if not any_pyr[cube.level][idx]:
            continue
        if in_pyr[cube.level][idx]:
            s = spec.cells_per_side >> cube.level
            g = int(gap_pyr[cube.level][idx])
            diam_sq = spec.n * s * s
            d2 = g + w2
            if diam_sq * q2 <= p2 * d2:
                if not (p2 * d2 <= 16 * q2 * diam_sq):
                    raise WhitneyError(
                        f"upper proportionality fails for cube {cube} "
                        f"(eta={eta}, depth_offset={depth_offset})"
                    )
                cubes.append(WhitneyCube(cube, g))
                continue
            if cube.level == levels:
                raise ResolutionTooCoarse(
                    f"resolution too coarse for eta: single cell {idx} inside omega "
                    f"violates diam <= eta*dist"
                )
        elif cube.level == levels:
            continue  # cell outside omega
        stack.extend(cube.children())

    cubes.sort(key=lambda wc: (wc.cube.level, wc.cube.index))
    return WhitneyCover(spec, omega, eta, depth_offset, cubes)


# ---------------------------------------------------------------------------
# expanded balls and overlap


def expanded_balls(cover: WhitneyCover, factor: float) -> list[Ball]:
    """Concentric ball of each cube with radius ``factor * diam / 2``.

    Balls carry the exact squared radius so membership of boundary cells is
    deterministic.  Containment in omega is not guaranteed near the mask
    boundary (where the certificate distance is depth-dominated); use
    :func:`containment_violations` to inspect it rather than relying on it.
    """
    if factor < 1:
        raise GridError("expansion factor must be >= 1")
    spec = cover.spec
    fac = Fraction(factor)
    balls = []
    for wc in cover.cubes:
        s = wc.cube.side_cells(spec)
        r2q = fac * fac * spec.n * s * s  # (factor * sqrt(n) s h / 2)^2 in h^2/4 units
        balls.append(
            Ball(
                tuple(wc.cube.center(spec)),
                factor * 0.5 * wc.cube.diam(spec),
                wc.cube.center_half(spec),
                r2q,
            )
        )
    return balls


def containment_violations(
    spec: GridSpec, omega: np.ndarray, balls: list[Ball]
) -> list[tuple[int, int]]:
    """(ball index, number of member cells outside omega), violations only."""
    omega = np.asarray(omega, dtype=bool)
    out = []
    for i, b in enumerate(balls):
        mask = ball_cell_mask(spec, b)
        bad = int(np.count_nonzero(mask & ~omega))
        if bad:
            out.append((i, bad))
    return out


def overlap_count(spec: GridSpec, balls: list[Ball]) -> int:
    """Maximum over grid cells of the number of balls containing the center."""
    if not balls:
        return 0
    counts = np.zeros(spec.shape, dtype=np.int64)
    for b in balls:
        counts += ball_cell_mask(spec, b)
    return int(counts.max())
