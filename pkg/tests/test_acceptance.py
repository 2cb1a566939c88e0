"""Acceptance suite: one test per criterion, one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
Everything is property-based or measured-constant-stability-based at desk
scale; tolerances are pinned here and nowhere else.
"""

import json
import math
import os

import numpy as np
import pytest

from hardygrid import cli
from hardygrid.atomic import (
    continuity_index,
    cz_decompose,
    finite_decomposition,
    pointwise_domination_check,
    split_h_ell,
    verify_decomposition,
)
from hardygrid.grid import (
    DyadicCube,
    GridFunction,
    GridSpec,
    ball_cell_mask,
    enclosing_ball,
    integrate,
    lq_norm,
    save_grid_function,
)
from hardygrid.maximal import build_family, grand_maximal
from hardygrid.norms import (
    atom_validate,
    bmo_norm,
    build_dictionary,
    finite_atomic_norm_lp,
)
from hardygrid.operators import (
    OperatorSpec,
    apply_operator,
    atom_supremum,
    bmo_dual_check,
    certified_atom_bound_q2,
    consistency_check,
    exact_atom_bound_q2,
    hilbert_kernel,
    meyer_ratio_experiment,
)
from hardygrid.testfunctions import build_corpus, corpus_family, corpus_spec
from hardygrid.whitney import expanded_balls, overlap_count, whitney_decompose
from oracles import oracle_lp_vertices
from test_whitney import assert_cover_exact, random_mask_1d, random_mask_2d

SIZES = (512, 1024, 2048)
CORPUS_SEED = 2024


def _passline(name: str, detail: str = "") -> None:
    print(f"PASS {name}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture(scope="module")
def pipeline():
    """Corpus pipeline at three refinements, computed once."""
    data = {}
    for cells in SIZES:
        spec = corpus_spec(cells)
        family = corpus_family(spec)
        rows = []
        for entry in build_corpus(spec, seed=CORPUS_SEED, size=30):
            mf = grand_maximal(entry.f, family)
            d = cz_decompose(entry.f, family, mf=mf)
            rows.append((entry, d))
        data[cells] = {"spec": spec, "family": family, "rows": rows}
    return data


def _stable(values, factor=2.0):
    vals = [v for v in values]
    if all(v == 0 for v in vals):
        return True
    if min(vals) <= 0:
        return False
    return max(vals) / min(vals) <= factor


# ---------------------------------------------------------------------------


def test_criterion_01_whitney_contract():
    rng = np.random.default_rng(11)
    checked = 0
    for dim in (1, 2):
        for i in range(50):
            if dim == 1:
                spec = GridSpec(1, 512, 1.0 / 512)
                omega = random_mask_1d(spec, rng, max_blocks=5)
            else:
                spec = GridSpec(2, 64, 1.0 / 64)
                omega = random_mask_2d(spec, rng, max_blocks=5)
            cover = whitney_decompose(spec, omega, 0.125)
            cover.verify()
            assert_cover_exact(cover, oracle_gaps=(i < 2))
            checked += len(cover.cubes)
    # factor-2 ball overlap: identical across 3 dyadic refinements
    for dim in (1, 2):
        for trial in range(8):
            if dim == 1:
                base = random_mask_1d(GridSpec(1, 64, 1.0 / 64), rng)
            else:
                base = random_mask_2d(GridSpec(2, 16, 1.0 / 16), rng)
            overlaps = []
            for reps in (4, 8, 16):
                mask = np.repeat(base, reps, axis=0)
                if dim == 2:
                    mask = np.repeat(mask, reps, axis=1)
                cells = base.shape[0] * reps
                spec = GridSpec(dim, cells, 1.0 / cells)
                cover = whitney_decompose(spec, mask, 0.125)
                overlaps.append(overlap_count(spec, expanded_balls(cover, 2.0)))
            assert overlaps[0] == overlaps[1] == overlaps[2], (dim, trial, overlaps)
    _passline("criterion 1 (whitney contract)", f"{checked} cubes certified exactly")


def test_criterion_02_reconstruction(pipeline):
    worst = 0.0
    for entry, d in pipeline[1024]["rows"]:
        recon = d.sum_terms()
        err = float(np.abs(entry.f.values - recon).sum()) * entry.f.spec.h
        rel = err / lq_norm(entry.f, 1)
        worst = max(worst, rel)
        assert rel <= 1e-8, entry.name
    _passline("criterion 2 (reconstruction)", f"worst rel l1 error {worst:.2e}")


def test_criterion_03_properties_abc(pipeline):
    names = [e.name for e, _ in pipeline[512]["rows"]]
    for i, name in enumerate(names):
        prop_a, overlaps, costs = [], [], []
        for cells in SIZES:
            entry, d = pipeline[cells]["rows"][i]
            rep = verify_decomposition(d)
            assert rep["support_in_ball"], name
            assert rep["support_in_level_set"], name
            assert rep["ball_in_level_set_violations"] == 0, name
            prop_a.append(d.constants["property_a"])
            overlaps.append(max(d.constants["overlap_max"], 1))
            costs.append(d.constants["cost_over_mf_l1"])
        assert _stable(prop_a), (name, prop_a)
        assert _stable(overlaps), (name, overlaps)
        assert _stable(costs), (name, costs)
    _passline("criterion 3 (properties a-c)", f"{len(names)} functions x 3 refinements")


def test_criterion_04_decay(pipeline):
    worst = 0.0
    for cells in SIZES:
        for entry, d in pipeline[cells]["rows"]:
            assert d.decay is not None, entry.name
            assert d.decay.max_ratio <= 1.0 + 1e-12, (entry.name, cells)
            worst = max(worst, d.decay.max_ratio)
    _passline("criterion 4 (decay outside 2B)", f"max ratio {worst:.3e}")


def test_criterion_05_h_part(pipeline):
    names = [e.name for e, _ in pipeline[512]["rows"]]
    for i, name in enumerate(names):
        chs = []
        for cells in SIZES:
            entry, d = pipeline[cells]["rows"][i]
            sp = split_h_ell(d)
            outside = ~ball_cell_mask(entry.f.spec, sp.ball2)
            assert not np.any(sp.h.values[outside]), name  # exact vanishing
            if sp.c_h > 0:
                assert sp.h_cert.valid, name
            chs.append(sp.c_h)
        assert _stable(chs), (name, chs)
    _passline("criterion 5 (h-part atom)", "h = 0 outside 2B exactly, C_h stable x2")


def test_criterion_06_pointwise_domination(pipeline):
    names = [e.name for e, _ in pipeline[512]["rows"]]
    for i, name in enumerate(names):
        ratios = []
        for cells in SIZES:
            _, d = pipeline[cells]["rows"][i]
            rep = pointwise_domination_check(d)
            assert rep["zero_where_mf_zero"], name
            ratios.append(rep["max_ratio"])
        assert _stable(ratios), (name, ratios)
    _passline("criterion 6 (pointwise domination)", "ratios stable x2")


def test_criterion_07_norm_ratio_interval(pipeline):
    base = DyadicCube(3, (3,))  # the corpus support window
    verdicts = []
    intervals = []
    for cells in SIZES:
        spec = pipeline[cells]["spec"]
        family = pipeline[cells]["family"]
        dictionary = build_dictionary(spec, 2.0, base_cube=base, include_pairs=True)
        ratios = []
        for entry, d in pipeline[cells]["rows"]:
            lp = finite_atomic_norm_lp(entry.f, dictionary)
            h1 = lq_norm(d.mf, 1)
            ratios.append(lp.value / h1)
        lo, hi = min(ratios), max(ratios)
        intervals.append((lo, hi))
        verdicts.append(hi / lo <= 20.0)
    assert all(verdicts), intervals
    _passline(
        "criterion 7 (norm ratio interval)",
        "; ".join(f"{c}: [{lo:.1f}, {hi:.1f}]" for c, (lo, hi) in zip(SIZES, intervals)),
    )


def test_criterion_08_continuous_mode(pipeline):
    names = [e.name for e, _ in pipeline[512]["rows"] if e.continuous]
    for name in names:
        cost_consts, steepness = [], []
        for cells in SIZES:
            family = pipeline[cells]["family"]
            entry, d = next(
                (e, dd) for e, dd in pipeline[cells]["rows"] if e.name == name
            )
            fd = finite_decomposition(
                entry.f, math.inf, 1e-2, family, decomposition=d
            )
            assert fd.reconstruction_l1_rel <= 1e-8, name
            assert all(p.cert.valid for p in fd.pairs), name
            cost_consts.append(fd.cost_over_h1)
            idx_f = continuity_index(entry.f, enclosing_ball(entry.f))
            idx_atoms = max(continuity_index(p.atom, p.ball) for p in fd.pairs)
            assert idx_atoms <= 3.0 * (idx_f + 5.0), (name, cells, idx_atoms, idx_f)
            steepness.append(idx_atoms)
        assert _stable(cost_consts), (name, cost_consts)
        assert _stable(steepness), (name, steepness)
    _passline("criterion 8 (continuous finite decomposition)", f"{len(names)} functions")


def test_criterion_09_ratio_growth():
    rows = meyer_ratio_experiment(cells=1024, jmax=4)
    rho_inf = [r["rho_inf_step"] for r in rows]
    rho_2 = [r["rho_2_step"] for r in rows]
    rho_moll = [r["rho_inf_mollified"] for r in rows]
    assert all(b > a for a, b in zip(rho_inf, rho_inf[1:])), rho_inf
    assert max(rho_2) / min(rho_2) <= 2.0, rho_2
    assert max(rho_moll) / min(rho_moll) <= 2.0, rho_moll
    _passline(
        "criterion 9 (sup-norm ratio growth)",
        f"rho_inf {rho_inf[0]:.1f} -> {rho_inf[-1]:.1f}, "
        f"rho_2 band x{max(rho_2)/min(rho_2):.2f}, "
        f"mollified band x{max(rho_moll)/min(rho_moll):.2f}",
    )


def test_criterion_10_lp_oracle_equivalence():
    spec = GridSpec(1, 8, 0.25)
    rng = np.random.default_rng(5)
    worst = 0.0
    for case in range(100):
        q = 2.0 if case % 2 == 0 else math.inf
        d = build_dictionary(spec, q, include_pairs=False)
        v = rng.standard_normal(8)
        v -= v.mean()
        f = GridFunction(spec, v)
        res = finite_atomic_norm_lp(f, d)
        gmat = d.matrix()
        a = np.concatenate([gmat, -gmat], axis=1)
        want = oracle_lp_vertices(a, v, np.ones(a.shape[1]))
        assert res.value == pytest.approx(want, abs=1e-9), case
        worst = max(worst, abs(res.value - want))
    _passline("criterion 10 (LP vertex oracle)", f"100 cases, worst gap {worst:.1e}")


def test_criterion_11_bmo_duality():
    # tiny grids: exact polytope bound, 100 random bounded functions
    spec = GridSpec(1, 8, 0.25)
    rng = np.random.default_rng(17)
    worst = 0.0
    for t in range(10):
        op = OperatorSpec.dense(rng.standard_normal((8, 8)))
        a_exact = exact_atom_bound_q2(op, spec)
        for _ in range(10):
            f = GridFunction(spec, rng.uniform(-3, 3, 8))
            rep = bmo_dual_check(op, f, a_exact)
            assert rep["ok"], (t, rep)
            worst = max(worst, rep["ratio_vs_2a"])
    # desk scale: certified upper bound on dictionary-ball atoms
    spec_big = GridSpec(1, 1024, 1.0 / 1024)
    op = hilbert_kernel(spec_big)
    a_cert = certified_atom_bound_q2(op, spec_big)
    rng2 = np.random.default_rng(23)
    f = GridFunction(spec_big, np.sign(rng2.standard_normal(1024)))
    rep = bmo_dual_check(op, f, a_cert)
    assert rep["ratio_vs_2a"] <= 2.0 + 1e-9, rep
    _passline(
        "criterion 11 (BMO duality)",
        f"8-cell worst ratio {worst:.3f} <= 2; 1024-cell certified ratio "
        f"{rep['ratio_vs_2a']:.3f} <= 2",
    )


def test_criterion_12_consistency(pipeline):
    spec = pipeline[512]["spec"]
    family = pipeline[512]["family"]
    rng = np.random.default_rng(31)
    ops = [hilbert_kernel(spec)]
    for _ in range(5):
        ops.append(OperatorSpec.dense(rng.standard_normal((512, 512)) / 32.0))
    d_atoms = build_dictionary(spec, 2.0, max_level=7)
    worst = 0.0
    for entry, d in pipeline[512]["rows"]:
        fd = finite_decomposition(entry.f, 2.0, 1e-3, family, decomposition=d)
        for op in ops:
            a_est = atom_supremum(op, d_atoms, extra_samples=0)["a_est"]
            rep = consistency_check(op, entry.f, family, a_est=max(a_est, 1e-9), fd=fd)
            assert rep["ok"], (entry.name, rep)
            bound = rep["bound"]
            worst = max(worst, rep["diff_l1"] / bound if bound > 0 else 0.0)
    _passline("criterion 12 (consistency)", f"worst diff/bound {worst:.2e}")


def test_criterion_13_numerical_hygiene(tmp_path):
    # sublinearity + homogeneity on 50 random pairs
    spec = GridSpec(1, 128, 1.0 / 128)
    family = build_family(1, spec.h, 0.1, num_scales=8)
    rng = np.random.default_rng(41)
    for _ in range(50):
        a = np.zeros(128)
        b = np.zeros(128)
        a[40:88] = rng.standard_normal(48)
        b[40:88] = rng.standard_normal(48)
        fa, fb = GridFunction(spec, a), GridFunction(spec, b)
        ma = grand_maximal(fa, family).values
        mb = grand_maximal(fb, family).values
        mab = grand_maximal(fa + fb, family).values
        assert np.all(mab <= ma + mb + 1e-12 * (1 + ma + mb))
        c = float(rng.uniform(0.25, 4.0))
        assert np.allclose(grand_maximal(c * fa, family).values, c * ma, rtol=1e-12)
    # BMO hygiene
    g = GridFunction(spec, rng.standard_normal(128))
    assert bmo_norm(GridFunction(spec, np.full(128, 5.0))) == 0.0
    assert bmo_norm(g.copy_with(g.values + 3.0)) == pytest.approx(bmo_norm(g), rel=1e-12)
    # seeded CLI runs are byte-identical
    outs = []
    for tag in ("r1", "r2"):
        out = str(tmp_path / tag)
        code = cli.main(["--out-dir", out, "--seed", "9", "meyer", "--jmax", "1", "--cells", "256"])
        assert code == 0
        outs.append(open(os.path.join(out, "meyer.csv"), "rb").read())
    assert outs[0] == outs[1]
    spec_f = corpus_spec(256)
    from hardygrid.testfunctions import haar_atom

    fpath = str(tmp_path / "f.json")
    save_grid_function(haar_atom(spec_f, 0.375, 0.5), fpath)
    blobs = []
    for tag in ("d1", "d2"):
        out = str(tmp_path / tag)
        code = cli.main(["--out-dir", out, "--seed", "9", "decompose", "--input", fpath])
        assert code == 0
        blobs.append(
            open(os.path.join(out, "decomposition.json"), "rb").read()
            + open(os.path.join(out, "report.json"), "rb").read()
        )
    assert blobs[0] == blobs[1]
    _passline("criterion 13 (numerical hygiene)", "50 pairs + BMO + byte-identical runs")
