"""Atom certification and the norms of the theory.

Four norms live here:

- :func:`atom_validate` certifies the (1, q)-atom conditions for a grid
  function against a ball: support, mean zero, and the size bound
  ``(counted-mean of |a|^q)^(1/q) <= vol(B)**-1`` (sup bound for q = inf),
  with counted cell volumes throughout.
- :func:`h1_proxy_norm` is the L^1 norm of the finite-family grand maximal
  function, the working stand-in for the Hardy-space norm.
- :func:`bmo_norm` is the maximal mean oscillation over a declared ball
  family (all dyadic circumscribed balls by default) - a lower bound for
  the supremum over all balls.
- :func:`finite_atomic_norm_lp` computes the least l^1 coefficient cost of
  writing ``f`` as a finite combination of dictionary atoms, as a linear
  program solved by the in-package simplex.  The value is exact *relative
  to the dictionary*: an upper bound for the infimum over all atoms, exact
  at grid scale on tiny grids where the dictionary provably spans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from hardygrid.grid import (
    Ball,
    DyadicCube,
    GridError,
    GridFunction,
    GridSpec,
    ball_cell_mask,
    counted_volume,
    integrate,
    lq_norm,
)
from hardygrid.maximal import TestFamily, grand_maximal
from hardygrid import simplex

MEAN_ZERO_TOL = 1e-10  # relative to ||a||_1
SIZE_TOL = 1e-9
LP_TOL = 1e-9

MAX_LP_CONSTRAINTS = 4096
MAX_LP_VARIABLES = 6000


class NormError(GridError):
    pass


class DictionarySpanError(NormError):
    """f is not representable by the dictionary."""


# ---------------------------------------------------------------------------
# atom certification


@dataclass(frozen=True)
class AtomCertificate:
    q: float
    ball: Ball
    mean_abs: float
    mean_tol: float
    size_ratio: float
    support_ok: bool

    @property
    def valid(self) -> bool:
        return (
            self.support_ok
            and self.mean_abs <= self.mean_tol
            and self.size_ratio <= 1.0 + SIZE_TOL
        )


def atom_validate(a: GridFunction, ball: Ball, q: float) -> AtomCertificate:
    """Certify the (1, q)-atom conditions of ``a`` on ``ball``.

    The certificate carries the verdict; nothing is raised.  ``size_ratio``
    is the size-condition left-hand side divided by ``vol(B)**-1``, so
    validity means ``size_ratio <= 1`` up to tolerance.
    """
    if not (q > 1):
        raise NormError("atoms require q > 1")
    spec = a.spec
    mask = ball_cell_mask(spec, ball)
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise NormError("atom ball contains no cell centers")
    vol = count * spec.h**spec.n
    support_ok = not np.any(a.values[~mask])
    l1 = lq_norm(a, 1)
    mean_abs = abs(integrate(a))
    mean_tol = MEAN_ZERO_TOL * l1 + 1e-300
    if math.isinf(q):
        lhs = float(np.abs(a.values[mask]).max(initial=0.0))
    else:
        hn = spec.h**spec.n
        lhs = float(np.sum(np.abs(a.values[mask]) ** q) * hn / vol) ** (1.0 / q)
    return AtomCertificate(
        q=q,
        ball=ball,
        mean_abs=mean_abs,
        mean_tol=mean_tol,
        size_ratio=lhs * vol,
        support_ok=bool(support_ok),
    )


def pack_as_atom(
    values: np.ndarray, spec: GridSpec, ball: Ball, q: float
) -> tuple[float, GridFunction]:
    """Split ``values`` into ``coefficient * atom`` with the atom exactly
    extremal for the (1, q) size condition on ``ball`` (counted volume).

    Returns ``(0, zero)`` for identically zero input.
    """
    f = GridFunction(spec, values)
    if f.is_zero:
        return 0.0, f
    vol = counted_volume(spec, ball)
    if math.isinf(q):
        coef = float(np.abs(values).max()) * vol
    else:
        coef = lq_norm(f, q) * vol ** (1.0 - 1.0 / q)
    return coef, f.copy_with(values / coef)


# ---------------------------------------------------------------------------
# proxy H^1 and BMO


def h1_proxy_norm(f: GridFunction, family: TestFamily) -> float:
    """L^1 norm of the finite-family grand maximal function."""
    return lq_norm(grand_maximal(f, family), 1)


def dyadic_balls(spec: GridSpec, max_level: int | None = None) -> list[Ball]:
    """Circumscribed balls of all dyadic cubes down to ``max_level``."""
    if max_level is None:
        max_level = spec.max_level
    balls = []
    for level in range(min(max_level, spec.max_level) + 1):
        side = spec.cells_per_side >> level
        r2q = Fraction(spec.n * side * side)
        radius = 0.5 * math.sqrt(spec.n) * side * spec.h
        for idx in np.ndindex(*(2**level,) * spec.n):
            lo = np.array(idx, dtype=np.int64) * side
            center_half = tuple(int(2 * l + side) for l in lo)
            center = tuple(np.asarray(spec.origin) + 0.5 * (2 * lo + side) * spec.h)
            balls.append(Ball(center, radius, center_half, r2q))
    return balls


def bmo_norm(g: GridFunction, balls: Sequence[Ball] | None = None) -> float:
    """Max mean oscillation ``(1/vol(B)) * sum_B |g - g_B|`` over a ball family.

    Defaults to all dyadic circumscribed balls; documented as a lower bound
    for the supremum over arbitrary balls.  Vanishes exactly on constants
    and is invariant under adding constants.
    """
    if balls is None:
        balls = dyadic_balls(g.spec)
    if not balls:
        raise NormError("bmo_norm needs a nonempty ball family")
    best = 0.0
    for ball in balls:
        mask = ball_cell_mask(g.spec, ball)
        vals = g.values[mask]
        if vals.size == 0:
            raise NormError("ball without cell centers in the BMO family")
        best = max(best, float(np.mean(np.abs(vals - vals.mean()))))
    return best


# ---------------------------------------------------------------------------
# atom dictionary


@dataclass(frozen=True)
class DictionaryAtom:
    """One generator: a certified extremal (1, q)-atom on a dyadic ball."""

    id: int
    kind: str  # "split0", "split1", "quad", "pair0", "pair1"
    cube: DyadicCube
    ball: Ball
    values: np.ndarray


@dataclass
class AtomDictionary:
    spec: GridSpec
    q: float
    atoms: list[DictionaryAtom]
    base_cube: DyadicCube

    def matrix(self) -> np.ndarray:
        """Dense (num_cells x num_atoms) matrix of flattened generators."""
        return np.stack([a.values.ravel() for a in self.atoms], axis=1)

    def coverage_mask(self) -> np.ndarray:
        cov = np.zeros(self.spec.shape, dtype=bool)
        for a in self.atoms:
            cov |= a.values != 0.0
        return cov

    def spans_mean_zero(self) -> bool:
        """Rank check: generators span the mean-zero subspace over the base
        cube's cells.  Intended for tiny grids (<= 32 cells per side)."""
        cells = self.base_cube.side_cells(self.spec) ** self.spec.n
        rank = np.linalg.matrix_rank(self.matrix(), tol=1e-10)
        return rank >= cells - 1


def _rescale_to_atom(spec: GridSpec, shape_values: np.ndarray, ball: Ball, q: float) -> np.ndarray:
    coef, atom = pack_as_atom(shape_values, spec, ball, q)
    return atom.values


def _pair_cube(spec: GridSpec, cell_a: tuple[int, ...], cell_b: tuple[int, ...]) -> DyadicCube:
    """Smallest dyadic cube containing two cells."""
    side = 1
    for a, b in zip(cell_a, cell_b):
        while a // side != b // side:
            side *= 2
    level = spec.max_level - side.bit_length() + 1
    idx = tuple(a // side for a in cell_a)
    return DyadicCube(level, idx)


def build_dictionary(
    spec: GridSpec,
    q: float,
    max_level: int | None = None,
    base_cube: DyadicCube | None = None,
    include_pairs: bool = True,
    include_cellmean: bool = False,
    cellmean_min_side: int = 2,
) -> AtomDictionary:
    """Dictionary of extremal atoms on dyadic balls.

    Per dyadic cube (within ``base_cube``, down to ``max_level``): the
    two-block bisection patterns along each axis (plus the quadrant pattern
    in 2D), each rescaled to size ratio 1 on the cube's circumscribed ball.
    With ``include_pairs``, adjacent-cell difference atoms are added on the
    smallest dyadic cube containing the pair, which makes the dictionary
    extreme-point-rich at the finest scale.  With ``include_cellmean``,
    single-cell-minus-cube-mean shapes are added for cubes of side >= 2;
    flat two-block shapes carry the same normalisation for every exponent
    (in 1D the cube ball holds exactly the cube cells), so these non-flat
    shapes are what lets a finite-q dictionary actually exploit the L^q
    size slack.  The bisection family alone spans the mean-zero subspace
    of the base cube.
    """
    if q <= 1:
        raise NormError("dictionary requires q > 1")
    if base_cube is None:
        base_cube = DyadicCube(0, (0,) * spec.n)
    if max_level is None:
        max_level = spec.max_level
    max_level = min(max_level, spec.max_level)

    atoms: list[DictionaryAtom] = []

    def add(kind: str, cube: DyadicCube, shape: np.ndarray) -> None:
        ball = cube.circumscribed_ball(spec)
        vals = _rescale_to_atom(spec, shape, ball, q)
        atoms.append(DictionaryAtom(len(atoms), kind, cube, ball, vals))

    # bisection generators
    stack = [base_cube]
    while stack:
        cube = stack.pop()
        s = cube.side_cells(spec)
        if s >= 2:
            sl = cube.cell_slices(spec)
            lo, hi = cube.cell_bounds(spec)
            for axis in range(spec.n):
                shape = np.zeros(spec.shape)
                mid = (lo[axis] + hi[axis]) // 2
                left = list(sl)
                right = list(sl)
                left[axis] = slice(lo[axis], mid)
                right[axis] = slice(mid, hi[axis])
                shape[tuple(left)] = 1.0
                shape[tuple(right)] = -1.0
                add(f"split{axis}", cube, shape)
            if spec.n == 2:
                shape = np.zeros(spec.shape)
                m0 = (lo[0] + hi[0]) // 2
                m1 = (lo[1] + hi[1]) // 2
                shape[lo[0] : m0, lo[1] : m1] = 1.0
                shape[m0 : hi[0], m1 : hi[1]] = 1.0
                shape[lo[0] : m0, m1 : hi[1]] = -1.0
                shape[m0 : hi[0], lo[1] : m1] = -1.0
                add("quad", cube, shape)
            if cube.level < max_level:
                stack.extend(cube.children())

    if include_cellmean:
        stack = [base_cube]
        while stack:
            cube = stack.pop()
            s = cube.side_cells(spec)
            if s >= max(2, cellmean_min_side):
                sl = cube.cell_slices(spec)
                lo, hi = cube.cell_bounds(spec)
                ncells = s**spec.n
                for cell in np.ndindex(*(s,) * spec.n):
                    shape = np.zeros(spec.shape)
                    shape[sl] = -1.0 / ncells
                    shape[tuple(l + c for l, c in zip(lo, cell))] += 1.0
                    add("cellmean", cube, shape)
                if cube.level < max_level:
                    stack.extend(cube.children())

    if include_pairs:
        lo, hi = base_cube.cell_bounds(spec)
        for axis in range(spec.n):
            ranges = [range(lo[a], hi[a]) for a in range(spec.n)]
            ranges[axis] = range(lo[axis], hi[axis] - 1)
            for cell in np.ndindex(*(len(r) for r in ranges)):
                ca = tuple(r[c] for r, c in zip(ranges, cell))
                cb = tuple(x + (1 if a == axis else 0) for a, x in enumerate(ca))
                cube = _pair_cube(spec, ca, cb)
                if cube.level < base_cube.level:
                    continue  # pair straddles the base cube
                shape = np.zeros(spec.shape)
                shape[ca] = 1.0
                shape[cb] = -1.0
                add(f"pair{axis}", cube, shape)

    return AtomDictionary(spec, q, atoms, base_cube)


def random_valid_atom(
    spec: GridSpec, q: float, rng: np.random.Generator, max_level: int | None = None
) -> tuple[np.ndarray, Ball]:
    """Random mean-zero values on a random dyadic ball, scaled to size ratio 1.

    Single-cell balls are excluded: no nonzero mean-zero function lives on
    one cell.
    """
    if max_level is None:
        max_level = spec.max_level
    level = int(rng.integers(0, max(1, max_level)))
    idx = tuple(int(rng.integers(0, 2**level)) for _ in range(spec.n))
    cube = DyadicCube(level, idx)
    ball = cube.circumscribed_ball(spec)
    mask = ball_cell_mask(spec, ball)
    vals = np.zeros(spec.shape)
    raw = rng.standard_normal(int(mask.sum()))
    raw -= raw.mean()
    if not np.any(raw):
        raw[...] = 0.0
        raw[0] = 1.0
        raw[-1] = -1.0
    vals[mask] = raw
    _, atom = pack_as_atom(vals, spec, ball, q)
    return atom.values, ball


# ---------------------------------------------------------------------------
# the finite atomic norm as a linear program


@dataclass
class LPNormResult:
    value: float
    witness: list[tuple[int, float]]  # (generator id, signed coefficient)
    dual_cells: np.ndarray  # flattened dual values on constraint cells
    constraint_cells: np.ndarray  # flat indices of the constraint cells
    iterations: int
    duality_gap: float
    reconstruction_error: float


def finite_atomic_norm_lp(
    f: GridFunction, dictionary: AtomDictionary, max_iter: int | None = None
) -> LPNormResult:
    """Least l^1 coefficient cost of ``f`` over the dictionary.

    Solves ``min sum(l+ + l-)`` subject to ``G (l+ - l-) = f`` with one
    equality per cell of the dictionary coverage, by the in-package
    simplex (Bland's rule, deterministic).  The optimum is the exact
    infimum *relative to the dictionary* and therefore an upper bound for
    the norm over all atoms.  Strong duality and the witness reconstruction
    are verified to ``LP_TOL`` before returning.
    """
    spec = f.spec
    if dictionary.spec != spec:
        raise NormError("dictionary built for a different grid")
    cov = dictionary.coverage_mask().ravel()
    fvals = f.values.ravel()
    outside = np.abs(fvals[~cov])
    if outside.size and outside.max() > 0:
        raise DictionarySpanError("f not in dictionary span: support outside coverage")
    cells = np.nonzero(cov)[0]
    if cells.size > MAX_LP_CONSTRAINTS:
        raise NormError(
            f"{cells.size} constraint cells exceed the dense-simplex budget "
            f"({MAX_LP_CONSTRAINTS}); restrict the dictionary's base cube"
        )
    gmat = np.stack([a.values.ravel()[cells] for a in dictionary.atoms], axis=1)
    nat = gmat.shape[1]
    if 2 * nat > MAX_LP_VARIABLES:
        raise NormError("dictionary too large for the dense simplex budget")
    a = np.concatenate([gmat, -gmat], axis=1)
    b = fvals[cells]
    c = np.ones(2 * nat)
    res = simplex.solve_lp(a, b, c, max_iter=max_iter)
    lam = res.x[:nat] - res.x[nat:]
    witness = [(int(j), float(lam[j])) for j in np.nonzero(np.abs(lam) > 0)[0]]
    recon = gmat @ lam
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    rec_err = float(np.abs(recon - b).max(initial=0.0))
    if rec_err > 1e-7 * scale:
        raise NormError(f"simplex witness does not reconstruct f (err {rec_err:.2e})")
    gap = abs(res.value - float(b @ res.dual))
    return LPNormResult(
        value=res.value,
        witness=witness,
        dual_cells=res.dual,
        constraint_cells=cells,
        iterations=res.iterations,
        duality_gap=gap,
        reconstruction_error=rec_err,
    )


def decomposition_cost(decomposition) -> float:
    """Sum of |coefficient| over the terms of a decomposition (plus the tail
    coefficient when one is present).  Works on any object exposing
    ``terms`` with ``lam`` attributes, or ``pairs`` of (coef, atom)."""
    total = 0.0
    terms = getattr(decomposition, "terms", None)
    if terms is not None:
        total += sum(abs(t.lam) for t in terms)
    pairs = getattr(decomposition, "pairs", None)
    if pairs is not None:
        total += sum(abs(coef) for coef, *_ in pairs)
    tail = getattr(decomposition, "tail", None)
    if tail is not None:
        total += abs(tail[0])
    return total
