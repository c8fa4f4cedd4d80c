import numpy as np
import pytest

from rdcflow.grid import DiffusionMatrix, Grid, SpectralField, project_low_modes, sobolev_norm, to_spectral
from rdcflow.integrate import random_field
from rdcflow.linearization import linearize
from rdcflow.model import builtin, linear_system
from rdcflow.monodromy import certify_pd, solve_U, solve_V
from rdcflow.probes import (
    conjugation_residual,
    decomposition_residual,
    distinct_pairs,
    fit_envelope,
    low_mode_fractions,
    omega_independence,
    probe_decomposition,
    probe_Fl,
    probe_GrF,
    select_pairs,
    smooth_periodic,
    transformation_residual,
)

TWO_PI = 2 * np.pi


def mode_field(grid, m, ks, rng):
    x = grid.x
    nodal = np.zeros((m, grid.N))
    for k in ks:
        a, b = rng.standard_normal((2, m))
        nodal += a[:, None] * np.cos(TWO_PI * k * x) + b[:, None] * np.sin(TWO_PI * k * x)
    return to_spectral(nodal, grid)


class TestPairs:
    def test_select_all_under_budget(self):
        assert select_pairs(4, 10) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]

    def test_select_deterministic_subset(self):
        a, b = select_pairs(20, 7, seed=3), select_pairs(20, 7, seed=3)
        assert a == b and len(a) == 7 and len(set(a)) == 7

    def test_floor_excludes_coincident(self, rng):
        g = Grid(16)
        u = random_field(g, 1, rng)
        pairs = distinct_pairs([u, u, u * 2.0], 0.8, DiffusionMatrix([1.0]))
        assert [(a, b) for a, b, _ in pairs] == [(0, 2), (1, 2)]


class TestFl:
    def test_identical_pairs_inconclusive(self, rng):
        u = random_field(Grid(16), 1, rng)
        rep = probe_Fl(linear_system(1.0), [u, u], t_max=0.1)
        assert rep.verdict == "inconclusive" and rep.n_pairs == 0

    def test_linear_decay(self, rng):
        g = Grid(32)
        fields = [random_field(g, 1, rng) for _ in range(3)]
        rep = probe_Fl(linear_system(0.5), fields, t_max=0.5, dt=1e-3)
        assert rep.verdict == "ok"
        assert rep.kappa_est == 0.0
        assert rep.M_est == pytest.approx(1.0, abs=1e-12)
        for _, t, y in rep.series:
            assert np.all(np.diff(y) < 0)
            # every mode decays at least like e^{-t}
            assert y[-1] <= -0.5 + 1e-9

    def test_envelope_fit(self):
        t = np.linspace(0, 1, 11)
        M, kappa, resid = fit_envelope([t], [np.log(3.0) + 0.7 * t])
        assert M == pytest.approx(3.0) and kappa == pytest.approx(0.7) and resid <= 1e-12

    def test_burgers_stable_under_dt_halving(self, burgers_sample):
        sys, s = burgers_sample
        a = probe_Fl(sys, s, t_max=1.0, dt=4e-3, max_pairs=3)
        b = probe_Fl(sys, s, t_max=1.0, dt=2e-3, max_pairs=3)
        assert np.isfinite(a.M_est) and np.isfinite(a.kappa_est)
        assert b.M_est == pytest.approx(a.M_est, rel=0.05)
        assert b.kappa_est == pytest.approx(a.kappa_est, rel=0.05, abs=1e-3)


class TestGrF:
    def test_low_mode_differences(self, rng):
        g = Grid(32)
        base = random_field(g, 1, rng)
        fields = [base + mode_field(g, 1, [1, 2, 3], rng) for _ in range(4)]
        rep = probe_GrF(fields, n_keep=3, D=DiffusionMatrix([1.0]))
        assert rep.min_ratio == pytest.approx(1.0, abs=1e-12)

    def test_high_mode_differences(self, rng):
        g = Grid(32)
        base = random_field(g, 1, rng)
        fields = [base + mode_field(g, 1, [6, 7], rng) for _ in range(4)]
        rep = probe_GrF(fields, n_keep=3, D=DiffusionMatrix([1.0]))
        assert rep.min_ratio <= 1e-12

    def test_sweep_monotone(self, burgers_sample):
        sys, s = burgers_sample
        rep = probe_GrF(s, D=sys.D)
        r = [v for _, v in rep.sweep]
        assert all(a <= b + 1e-15 for a, b in zip(r, r[1:]))
        assert [n for n, _ in rep.sweep] == list(range(1, s.grid.N // 4 + 1))
        assert rep.histogram[0].sum() == rep.n_pairs

    def test_fractions_match_projection(self, rng):
        g = Grid(32)
        D = DiffusionMatrix([0.3, 0.6])
        w = random_field(g, 2, rng)
        fr = low_mode_fractions(w, 0.8, D)
        total = sobolev_norm(w, 0.8, D)
        for n in (0, 3, 9, 16):
            assert fr[n] == pytest.approx(sobolev_norm(project_low_modes(w, n), 0.8, D) / total, rel=1e-12)

    def test_nestedness(self, rng):
        g = Grid(32)
        D = DiffusionMatrix([1.0])
        for _ in range(5):
            fr = low_mode_fractions(random_field(g, 1, rng), 0.8, D)
            assert np.all(np.diff(fr) >= -1e-15)

    def test_floor_only_removes_pairs(self, rng):
        g = Grid(32)
        D = DiffusionMatrix([1.0])
        base = random_field(g, 1, rng)
        near = base + mode_field(g, 1, [8], rng) * 1e-9
        fields = [base, near] + [random_field(g, 1, rng) for _ in range(3)]
        loose = probe_GrF(fields, n_keep=4, D=D, floor=0.0)
        strict = probe_GrF(fields, n_keep=4, D=D, floor=1e-6)
        assert strict.n_pairs == loose.n_pairs - 1
        assert strict.min_ratio >= loose.min_ratio


class TestDecomposition:
    def test_equal_pair(self, rng):
        u = random_field(Grid(16), 1, rng)
        rep = probe_decomposition(builtin("scalar_burgers"), [u, u])
        assert rep.verdict == "inconclusive"

    def test_linear_exact(self, rng):
        g = Grid(32)
        sys = linear_system([0.4, 0.9], m=2, reaction=0.3)
        res, _ = decomposition_residual(sys, random_field(g, 2, rng), random_field(g, 2, rng))
        assert res <= 1e-12

    def test_burgers_pairs(self, burgers_sample):
        sys, s = burgers_sample
        rep = probe_decomposition(sys, s, max_pairs=4)
        assert rep.verdict == "ok" and rep.n_pairs == 4
        assert rep.max_residual <= 1e-6
        assert rep.omega_spread <= 1e-10
        assert rep.monodromy_spread <= 1e-7

    @pytest.mark.parametrize("name", ["example53", "prop55", "counterexample_style_noncommuting"])
    def test_omega_cancellation_and_transformation(self, name, rng):
        sys = builtin(name)
        g = Grid(64)
        u, v = smooth_periodic(g, 2, rng), smooth_periodic(g, 2, rng)
        lin = linearize(sys, u, v)
        assert omega_independence(sys, lin, u - v, omegas=(0.5, 3.0, 40.0)) <= 1e-10
        for _ in range(3):
            h = smooth_periodic(g, 2, rng)
            assert transformation_residual(sys, lin, solve_U(lin.B, sys.D), solve_V(lin.B, sys.D), h) <= 1e-7

    def test_conjugation(self, burgers_sample):
        sys, s = burgers_sample
        u, v = s.snapshots[0], s.snapshots[-1]
        lin = linearize(sys, u, v)
        cert = certify_pd(lin.B, sys.D)
        assert cert.ok
        U = solve_U(lin.B, sys.D)
        assert conjugation_residual(sys, lin, U, cert, 2.0) <= 1e-8
