"""Computational machinery for atomic Hardy-space experiments on uniform grids.

The package is organised around a small stack of modules:

- ``grid``      uniform dyadic grids, grid functions, balls, dyadic cubes,
  elementary integrals and norms (everything is cell-center sampled).
- ``maximal``   a finite-family grand maximal function, a Hardy-Littlewood
  comparison operator and the support-decay certificate.
- ``whitney``   Whitney decompositions of cell masks into dyadic cubes with
  exact rational proportionality certificates.
- ``atomic``    level sets, the Calderon-Zygmund atomic decomposition, the
  low/high level split and finite truncations.
- ``norms``     atom certification, the H^1 proxy norm, BMO norms and the
  dictionary-relative finite atomic norm (a linear program).
- ``operators`` linear operators on grid functions: uniform atom bounds,
  extension by decomposition, BMO duality checks and the step-family
  norm-ratio experiment.
- ``cli``       command line front end emitting JSON/CSV artifacts.
"""

from hardygrid.grid import (
    Ball,
    DyadicCube,
    GridFunction,
    GridSpec,
    enclosing_ball,
    integrate,
    lq_norm,
    mean_on_ball,
)

__all__ = [
    "Ball",
    "DyadicCube",
    "GridFunction",
    "GridSpec",
    "enclosing_ball",
    "integrate",
    "lq_norm",
    "mean_on_ball",
]

__version__ = "0.1.0"
