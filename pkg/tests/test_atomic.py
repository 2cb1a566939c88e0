import math

import numpy as np
import pytest

from hardygrid.atomic import (
    DecompositionError,
    continuity_radius,
    continuous_split,
    cz_decompose,
    finite_decomposition,
    level_sets,
    modulus_of_continuity,
    pointwise_domination_check,
    split_h_ell,
    truncate,
    verify_decomposition,
)
from hardygrid.grid import GridFunction, GridSpec, ball_cell_mask, integrate, lq_norm
from hardygrid.maximal import grand_maximal
from hardygrid.norms import atom_validate
from hardygrid.testfunctions import (
    build_corpus,
    corpus_family,
    corpus_spec,
    haar_atom,
    smoke_function_2d,
    smoothed_step,
    triangle_wave,
)


@pytest.fixture(scope="module")
def atom256(spec256, family256):
    f = haar_atom(spec256, 0.375, 0.5)
    return f, cz_decompose(f, family256)


@pytest.fixture(scope="module")
def step256(spec256, family256):
    f = smoothed_step(spec256, 0.44, 0.012)
    return f, cz_decompose(f, family256)


class TestLevelSets:
    def test_zero_maximal(self):
        spec = GridSpec(1, 32, 1.0 / 32)
        assert level_sets(GridFunction(spec, np.zeros(32))) == {}

    def test_constant_on_mask_threshold_arithmetic(self):
        spec = GridSpec(1, 32, 1.0 / 32)
        v = np.zeros(32)
        v[4:12] = 3.0
        sets = level_sets(GridFunction(spec, v))
        # 2^1 < 3 <= 2^2: present for k <= 1, absent for k >= 2
        assert 1 in sets and 2 not in sets
        assert np.array_equal(sets[1], v > 2.0)
        for k, mask in sets.items():
            assert np.array_equal(mask, v > 2.0**k)

    def test_nested(self, rng):
        spec = GridSpec(1, 64, 1.0 / 64)
        mf = GridFunction(spec, np.abs(rng.standard_normal(64)))
        sets = level_sets(mf)
        ks = sorted(sets)
        for k1, k2 in zip(ks, ks[1:]):
            assert np.all(sets[k2] <= sets[k1])

    def test_rejects_negative(self):
        spec = GridSpec(1, 32, 1.0 / 32)
        with pytest.raises(DecompositionError):
            level_sets(GridFunction(spec, -np.ones(32)))


class TestCzDecompose:
    def test_zero_function_empty(self, spec256, family256):
        d = cz_decompose(GridFunction(spec256, np.zeros(256)), family256)
        assert d.terms == []
        assert d.residual.is_zero

    def test_nonzero_mean_rejected(self, spec256, family256):
        v = np.zeros(256)
        v[100:110] = 1.0
        with pytest.raises(DecompositionError):
            cz_decompose(GridFunction(spec256, v), family256)

    def test_atom_reconstruction_oracle(self, atom256):
        f, d = atom256
        # direct summation oracle
        recon = np.zeros(f.spec.shape)
        for t in d.terms:
            recon += t.lam * t.atom.values
        err = float(np.abs(f.values - recon).sum()) * f.spec.h
        assert err <= 1e-8 * lq_norm(f, 1)

    def test_all_invariants(self, atom256):
        _, d = atom256
        report = verify_decomposition(d)
        assert report["all_ok"], report

    def test_invariants_on_continuous_input(self, step256):
        _, d = step256
        report = verify_decomposition(d)
        assert report["all_ok"], report

    def test_lambdas_positive_and_atoms_extremal(self, atom256):
        _, d = atom256
        for t in d.terms:
            assert t.lam > 0
            cert = atom_validate(t.atom, t.ball, math.inf)
            assert cert.valid
            assert cert.size_ratio == pytest.approx(1.0, rel=1e-9)

    def test_support_in_level_set_exact(self, atom256):
        _, d = atom256
        for t in d.terms:
            if t.is_bottom:
                continue
            omega = d.level_mask(t.k)
            assert not np.any(t.atom.values[~omega])

    def test_cost_ratio_refinement_stability(self, family256):
        # measured sum|lambda| / ||Mf||_1 stays within x2 across refinements
        ratios = []
        for cells in (256, 512):
            spec = corpus_spec(cells)
            f = haar_atom(spec, 0.375, 0.5)
            d = cz_decompose(f, corpus_family(spec, num_scales=24))
            ratios.append(d.constants["cost_over_mf_l1"])
        assert max(ratios) / min(ratios) <= 2.0

    def test_2d_smoke(self):
        spec, f = smoke_function_2d(32)
        fam = corpus_family(spec, num_scales=10)
        d = cz_decompose(f, fam)
        report = verify_decomposition(d)
        assert report["reconstruction_ok"]
        assert report["atoms_valid"]
        assert report["support_in_level_set"]


class TestSplit:
    def test_reconstruction_identity(self, atom256):
        f, d = atom256
        sp = split_h_ell(d)
        err = lq_norm(f - sp.h - sp.ell, 1)
        assert err <= 1e-8 * lq_norm(f, 1)

    def test_ell_inside_doubled_ball_exactly(self, atom256):
        _, d = atom256
        sp = split_h_ell(d)
        outside = ~ball_cell_mask(d.f.spec, sp.ball2)
        assert not np.any(sp.ell.values[outside])
        assert sp.ell_leak == 0.0

    def test_h_vanishes_outside_exactly(self, atom256):
        _, d = atom256
        sp = split_h_ell(d)
        outside = ~ball_cell_mask(d.f.spec, sp.ball2)
        assert not np.any(sp.h.values[outside])

    def test_h_certifies_as_atom(self, atom256):
        _, d = atom256
        sp = split_h_ell(d)
        assert sp.c_h > 0
        assert sp.h_cert.valid
        assert np.allclose(sp.c_h * sp.h_atom.values, sp.h.values)

    def test_levels_split_correctly(self, atom256):
        _, d = atom256
        sp = split_h_ell(d)
        ell_direct = d.sum_terms([t for t in d.terms if t.k > sp.k_prime])
        assert np.array_equal(sp.ell.values, ell_direct)


class TestDomination:
    def test_on_corpus_function(self, atom256):
        _, d = atom256
        rep = pointwise_domination_check(d)
        assert rep["zero_where_mf_zero"]
        assert rep["max_ratio"] >= 0

    def test_stability_under_refinement(self):
        ratios = []
        for cells in (256, 512):
            spec = corpus_spec(cells)
            f = haar_atom(spec, 0.375, 0.5)
            d = cz_decompose(f, corpus_family(spec, num_scales=24))
            ratios.append(pointwise_domination_check(d)["max_ratio"])
        assert max(ratios) / min(ratios) <= 2.0


class TestTruncate:
    def test_rejects_bad_eps_and_q(self, atom256):
        _, d = atom256
        with pytest.raises(DecompositionError):
            truncate(d, 0.0, 2.0)
        with pytest.raises(DecompositionError):
            truncate(d, 1e-3, math.inf)

    def test_huge_eps_keeps_nothing(self, atom256):
        _, d = atom256
        tr = truncate(d, 1e9, 2.0)
        assert tr.kept == []

    def test_tail_below_eps_curve_decreases_to_zero(self, atom256):
        # the tail coefficient need not fall strictly at every step
        # (dropping a term can lose cancellation), but it never exceeds the
        # starting value and ends below eps
        _, d = atom256
        tr = truncate(d, 1e-3, 2.0)
        assert tr.tail_coef < 1e-3
        assert all(c <= tr.curve[0] + 1e-12 for c in tr.curve)
        assert tr.curve[-1] == min(tr.curve)

    def test_kept_plus_tail_reconstruct_ell(self, atom256):
        _, d = atom256
        sp = split_h_ell(d)
        tr = truncate(d, 1e-4, 2.0)
        recon = d.sum_terms(tr.kept)
        if tr.tail_atom is not None:
            recon = recon + tr.tail_coef * tr.tail_atom.values
        # the tail atom got a tiny smooth mean correction; allow that dust
        assert np.abs(recon - sp.ell.values).max() <= 1e-9 * max(1.0, np.abs(sp.ell.values).max())

    def test_tail_atom_valid(self, atom256):
        _, d = atom256
        tr = truncate(d, 1e-3, 2.0)
        if tr.tail_atom is not None:
            assert tr.tail_cert.valid


class TestContinuity:
    def test_modulus_of_constant(self, spec256):
        f = GridFunction(spec256, np.full(256, 2.0))
        assert modulus_of_continuity(f, 5) == 0.0

    def test_modulus_monotone(self, step256):
        f, _ = step256
        vals = [modulus_of_continuity(f, k) for k in (1, 2, 4, 8)]
        assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))

    def test_continuity_radius(self, step256):
        f, _ = step256
        eps = 2.0 * modulus_of_continuity(f, 1)
        r = continuity_radius(f, eps)
        assert r >= 1
        assert modulus_of_continuity(f, r) < eps
        assert modulus_of_continuity(f, r + 1) >= eps or r == f.spec.cells_per_side - 1

    def test_split_small_eps_empty_f2(self, step256):
        f, d = step256
        cs = continuous_split(d, f, 1e-9)
        assert cs.f2_terms == []
        assert cs.f2_sup == 0.0

    def test_split_large_eps_all_f2(self, step256):
        f, d = step256
        cs = continuous_split(d, f, 1e9)
        assert cs.f1_terms == []
        # the bound C (k''-k') eps holds trivially
        assert cs.f2_sup <= cs.bound_constant * max(cs.k_span, 1) * 1e9 + 1e-12

    def test_split_partition_is_exact(self, step256):
        f, d = step256
        eps = 0.5 * lq_norm(f, math.inf)
        cs = continuous_split(d, f, eps)
        ell = [t for t in d.terms if t.k > d.k_prime_effective]
        assert len(cs.f1_terms) + len(cs.f2_terms) == len(ell)
        for t in cs.f2_terms:
            assert 2.0 * t.dep_ball.radius < cs.delta
            assert abs(t.lam) * np.abs(t.atom.values).max() <= cs.per_term_constant * eps + 1e-12


class TestFiniteDecomposition:
    def test_zero_rejected(self, spec256, family256):
        with pytest.raises(DecompositionError):
            finite_decomposition(GridFunction(spec256, np.zeros(256)), 2.0, 1e-3, family256)

    def test_truncated_mode_certified(self, spec256, family256, atom256):
        f, d = atom256
        fd = finite_decomposition(f, 2.0, 1e-3, family256, decomposition=d)
        assert fd.mode == "truncated"
        assert fd.reconstruction_l1_rel <= 1e-8
        assert all(p.cert.valid for p in fd.pairs)
        assert all(p.coef > 0 for p in fd.pairs)
        assert fd.total_cost >= fd.pairs[0].coef

    def test_continuous_mode_certified(self, spec256, family256, step256):
        f, d = step256
        fd = finite_decomposition(f, math.inf, 1e-2, family256, decomposition=d)
        assert fd.mode == "continuous-inf"
        assert fd.reconstruction_l1_rel <= 1e-8
        assert all(p.cert.valid for p in fd.pairs)
        # emitted atoms are continuous in the scale-normalised sense: their
        # steepness index stays within a fixed multiple of the input's
        from hardygrid.atomic import continuity_index
        from hardygrid.grid import enclosing_ball

        idx_f = continuity_index(f, enclosing_ball(f))
        for p in fd.pairs:
            assert continuity_index(p.atom, p.ball) <= 3.0 * (idx_f + 5.0)

    def test_triangle_wave_continuous_mode(self, spec256, family256):
        f = triangle_wave(spec256, 4)
        fd = finite_decomposition(f, math.inf, 1e-2, family256)
        assert fd.reconstruction_l1_rel <= 1e-8
        assert fd.cost_over_h1 > 0

    def test_cost_bounded_by_proxy_multiple(self, spec256, family256, atom256):
        f, d = atom256
        fd = finite_decomposition(f, 2.0, 1e-3, family256, decomposition=d)
        # the measured pipeline constant: recorded, positive, sane
        assert 0 < fd.cost_over_h1 < 1e4
