"""Reference function families for experiments and the acceptance suite.

All corpus functions are mean-zero (exactly, after a small correction),
normalised to unit L^1 norm, and supported in the central eighth of the
box so that the doubled enclosing ball plus the largest convolution scale
still leave empty cells on both sides.  Continuous entries are built from
piecewise-polynomial ramps sampled analytically, so the same continuum
function is reproduced exactly at every refinement; their mean correction
uses a smooth bump (a constant-block correction would reintroduce jumps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hardygrid.grid import GridFunction, GridSpec, integrate, lq_norm
from hardygrid.maximal import TestFamily, build_family

# The support window is a single dyadic cube (level 3, index 3) so LP
# dictionaries can be restricted to it, placed off-center with enough box
# margin for the largest convolution scale on both sides.
SUPPORT_LO = 0.375
SUPPORT_HI = 0.5
FAMILY_R_MAX = 0.09


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    f: GridFunction
    continuous: bool


def corpus_spec(cells: int) -> GridSpec:
    return GridSpec(1, cells, 1.0 / cells, (0.0,))


def corpus_family(spec: GridSpec, num_scales: int = 40) -> TestFamily:
    return build_family(spec.n, spec.h, FAMILY_R_MAX, num_scales=num_scales)


def _smooth_bump(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)
    u = (x - c) / r
    out = np.zeros_like(x)
    inside = np.abs(u) < 1
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def _finalize(spec: GridSpec, vals: np.ndarray, smooth_correction: bool) -> GridFunction:
    x = spec.axis_centers()
    if smooth_correction:
        bump = _smooth_bump(x, SUPPORT_LO, SUPPORT_HI)
        for _ in range(2):
            m = vals.sum()
            if m == 0.0:
                break
            vals = vals - (m / bump.sum()) * bump
    else:
        supp = vals != 0.0
        if supp.any():
            for _ in range(2):
                m = vals[supp].sum()
                vals[supp] -= m / supp.sum()
    f = GridFunction(spec, vals)
    l1 = lq_norm(f, 1)
    if l1 == 0:
        raise ValueError("degenerate corpus function")
    return f.copy_with(f.values / l1)


def haar_atom(spec: GridSpec, lo: float, hi: float) -> GridFunction:
    """Two-block mean-zero step on [lo, hi): +1 left half, -1 right half."""
    x = spec.axis_centers()
    mid = 0.5 * (lo + hi)
    vals = np.where((x >= lo) & (x < mid), 1.0, 0.0) - np.where((x >= mid) & (x < hi), 1.0, 0.0)
    return _finalize(spec, vals, smooth_correction=False)


def smoothed_step(spec: GridSpec, edge: float, ramp: float) -> GridFunction:
    """C^1 step: -1 left of the edge, +1 right, smoothstep ramp of width
    2*ramp, supported in the corpus window with smooth shoulders."""
    x = spec.axis_centers()
    u = np.clip((x - (edge - ramp)) / (2 * ramp), 0.0, 1.0)
    step = 2.0 * (3 * u**2 - 2 * u**3) - 1.0
    window = _smooth_bump(x, SUPPORT_LO, SUPPORT_HI)
    return _finalize(spec, step * window, smooth_correction=True)


def triangle_wave(spec: GridSpec, periods: int) -> GridFunction:
    """Continuous sawtooth (triangle) oscillation on the support window."""
    x = spec.axis_centers()
    t = (x - SUPPORT_LO) / (SUPPORT_HI - SUPPORT_LO)
    phase = np.mod(t * periods, 1.0)
    tri = 1.0 - 4.0 * np.abs(phase - 0.5)
    tri[(t < 0) | (t >= 1)] = 0.0
    window = _smooth_bump(x, SUPPORT_LO, SUPPORT_HI)
    return _finalize(spec, tri * window, smooth_correction=True)


def random_atom_sum(spec: GridSpec, rng: np.random.Generator, nterms: int) -> GridFunction:
    """Sum of a few Haar blocks on random dyadic subintervals of the window."""
    x = spec.axis_centers()
    vals = np.zeros(spec.shape)
    width = SUPPORT_HI - SUPPORT_LO
    for _ in range(nterms):
        level = int(rng.integers(1, 4))
        nsub = 2**level
        i = int(rng.integers(0, nsub))
        lo = SUPPORT_LO + i * width / nsub
        hi = lo + width / nsub
        mid = 0.5 * (lo + hi)
        amp = float(rng.uniform(0.5, 2.0)) * (1 if rng.random() < 0.5 else -1)
        vals += amp * (
            np.where((x >= lo) & (x < mid), 1.0, 0.0)
            - np.where((x >= mid) & (x < hi), 1.0, 0.0)
        )
    if not np.any(vals):
        return haar_atom(spec, SUPPORT_LO, SUPPORT_HI)
    return _finalize(spec, vals, smooth_correction=False)


def build_corpus(spec: GridSpec, seed: int = 0, size: int = 30) -> list[CorpusEntry]:
    """Deterministic corpus: atoms, sums of atoms, smoothed steps, sawtooths.

    Entries are closed under refinement: building on a finer grid samples
    the same continuum functions.
    """
    rng = np.random.default_rng(seed)
    width = SUPPORT_HI - SUPPORT_LO
    entries: list[CorpusEntry] = []
    for i in range(4):
        nsub = 2 ** (i % 3)
        lo = SUPPORT_LO + (i % nsub) * width / nsub
        entries.append(
            CorpusEntry(f"atom{i}", haar_atom(spec, lo, lo + width / nsub), False)
        )
    n_sums = max(2, size - 16)
    for i in range(n_sums):
        entries.append(
            CorpusEntry(
                f"atomsum{i}", random_atom_sum(spec, rng, 2 + i % 4), False
            )
        )
    for i in range(6):
        edge = SUPPORT_LO + width * (0.3 + 0.07 * i)
        ramp = width * (0.05 + 0.02 * i)
        entries.append(CorpusEntry(f"step{i}", smoothed_step(spec, edge, ramp), True))
    for i in range(6):
        entries.append(CorpusEntry(f"saw{i}", triangle_wave(spec, 2 + 2 * i), True))
    return entries[:size]


def smoke_function_2d(cells: int = 32) -> tuple[GridSpec, GridFunction]:
    """A small 2D mean-zero quadrant pattern with margin, for smoke tests."""
    spec = GridSpec(2, cells, 1.0 / cells, (0.0, 0.0))
    xx = spec.center_grid()
    vals = np.zeros(spec.shape)
    lo, hi = 0.4375, 0.5625  # central dyadic square with margin
    mid = 0.5 * (lo + hi)
    inside = (
        (xx[..., 0] >= lo) & (xx[..., 0] < hi) & (xx[..., 1] >= lo) & (xx[..., 1] < hi)
    )
    sign = np.where(
        ((xx[..., 0] < mid) & (xx[..., 1] < mid)) | ((xx[..., 0] >= mid) & (xx[..., 1] >= mid)),
        1.0,
        -1.0,
    )
    vals[inside] = sign[inside]
    f = GridFunction(spec, vals)
    supp = f.support_mask()
    vals[supp] -= vals[supp].mean()
    f = GridFunction(spec, vals)
    return spec, f.copy_with(f.values / lq_norm(f, 1))
