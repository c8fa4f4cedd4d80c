import numpy as np
import pytest

from rdcflow.errors import ConfigError
from rdcflow.grid import DiffusionMatrix, Grid, SpectralField, sobolev_norm, symbol_A, to_nodal, to_spectral
from rdcflow.integrate import (
    IntegratorConfig,
    all_pairs,
    flow_pair,
    integrate,
    probe_dissipativity,
    random_field,
    sample_attractor,
    step,
)
from rdcflow.model import RDCSystem, builtin, eval_G, linear_system

TWO_PI = 2 * np.pi
SCHEMES = ["ETDRK4", "IMEX-CNAB2"]


def burgers_unforced():
    return builtin("scalar_burgers", {"forcing": 0.0})


class TestStep:
    @pytest.mark.parametrize("scheme, tol", [("ETDRK4", 1e-12), ("IMEX-CNAB2", (1 + 4 * np.pi**2) ** 2 * 1e-6)])
    def test_linear_decay_one_step(self, scheme, tol):
        g = Grid(32)
        sys = linear_system(1.0)
        u = to_spectral(np.cos(TWO_PI * g.x), g)
        dt = 1e-3
        out = to_nodal(step(sys, u, dt, scheme))[0]
        expect = np.exp(-(1 + 4 * np.pi**2) * dt) * np.cos(TWO_PI * g.x)
        assert np.max(np.abs(out - expect)) / np.max(np.abs(expect)) <= tol

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_constant_equilibrium_is_fixed(self, scheme):
        # u = sqrt(gain) solves -u + (1 + gain) u - u^3 = 0 and u_x = 0
        g = Grid(32)
        sys = burgers_unforced()
        u = to_spectral(np.full(32, np.sqrt(1.5)), g)
        out = integrate(sys, u, 0.1, 1e-3, scheme)
        np.testing.assert_allclose(to_nodal(out), np.sqrt(1.5), atol=1e-12)

    def test_semigroup_exact_for_pure_diffusion(self, rng):
        g = Grid(32)
        sys = linear_system([0.3, 0.8], m=2)
        u = random_field(g, 2, rng)
        two = step(sys, step(sys, u, 1e-2), 1e-2)
        one = integrate(sys, u, 2e-2, 2e-2)
        assert np.max(np.abs(two.coeffs - one.coeffs)) <= 1e-13

    def test_semigroup_within_scheme_order(self, rng):
        # the reaction term is treated explicitly, so agreement is O(dt^4)
        g = Grid(32)
        sys = linear_system([0.3, 0.8], m=2, reaction=0.5)
        u = random_field(g, 2, rng)
        exact = u.coeffs * np.exp((0.5 - symbol_A(g, sys.D)) * 2e-2)
        errs = [np.max(np.abs(integrate(sys, u, 2e-2, dt).coeffs - exact)) for dt in (1e-2, 5e-3)]
        assert errs[0] / errs[1] >= 10.0
        assert errs[1] <= 1e-7

    @pytest.mark.parametrize("scheme, min_ratio", [("ETDRK4", 10.0), ("IMEX-CNAB2", 3.0)])
    def test_self_convergence(self, scheme, min_ratio):
        g = Grid(64)
        sys = builtin("scalar_burgers")
        u = to_spectral(0.8 * np.sin(TWO_PI * g.x) + 0.3 * np.cos(4 * np.pi * g.x), g)
        T = 0.2
        ref = integrate(sys, u, T, 2.5e-4, scheme)
        errs = [np.max(np.abs(integrate(sys, u, T, dt, scheme).coeffs - ref.coeffs)) for dt in (1e-2, 5e-3)]
        assert errs[0] / errs[1] >= min_ratio

    def test_divergence_fault(self):
        g = Grid(32)
        sys = RDCSystem(m=1, D=DiffusionMatrix([0.1]), f=lambda x, u: np.zeros((u.shape[1], 1, 1)),
                        g=lambda x, u: (u**3).T, r_max=1e3)
        with pytest.raises(FloatingPointError):
            integrate(sys, to_spectral(np.full(32, 5.0), g), 1.0, 1e-3)

    @pytest.mark.parametrize("kw", [{"dt": 0.0}, {"t_transient": -1.0}, {"n_snapshots": 0}, {"scheme": "RK4"}])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            IntegratorConfig(**kw)


class TestDissipativity:
    def test_linear_contraction(self):
        sys = linear_system(0.5)
        rep = probe_dissipativity(sys, [0.1, 1.0, 10.0], IntegratorConfig(t_transient=4.0), Grid(32), n_per_radius=1)
        assert rep.entered_ball
        # slowest mode decays like e^{-t}: a <= 1.1 e^{-3} * largest initial radius
        assert rep.absorbing_radius <= 1.1 * np.exp(-3.0) * 10.0

    def test_antidissipative_blows_up(self):
        sys = RDCSystem(m=1, D=DiffusionMatrix([0.1]), f=lambda x, u: np.zeros((u.shape[1], 1, 1)),
                        g=lambda x, u: (2 * u + u**3).T)
        rep = probe_dissipativity(sys, [10.0], IntegratorConfig(t_transient=2.0), Grid(32), n_per_radius=1)
        assert not rep.entered_ball
        assert rep.diverged == [True]
        assert rep.faults and rep.faults[0]["radius"] == 10.0

    def test_box_widened_for_large_initial_data(self):
        sys = linear_system(0.5)
        small = probe_dissipativity(sys, [1.0], IntegratorConfig(t_transient=1.0), Grid(32), n_per_radius=1)
        assert small.box_widened_to is None
        # an alpha-norm of 1e4 puts the initial sup-norm far outside the default box |u| <= 10
        rep = probe_dissipativity(sys, [1e4], IntegratorConfig(t_transient=1.0), Grid(32), n_per_radius=2)
        assert rep.box_widened_to is not None and rep.box_widened_to > sys.r_max
        assert rep.entered_ball and not rep.faults

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ConfigError):
            probe_dissipativity(linear_system(1.0), [0.0], IntegratorConfig(), Grid(16))


class TestSampler:
    def test_single_snapshot(self):
        cfg = IntegratorConfig(t_transient=0.1, n_snapshots=1, n_trajectories=1, n_hull=4)
        s = sample_attractor(burgers_unforced(), cfg, Grid(32))
        assert s.pair_index == [(0, 0)]
        assert s.hull_points == []

    def test_linear_decay_is_degenerate(self):
        cfg = IntegratorConfig(t_transient=40.0, dt=1e-2, n_snapshots=3, n_trajectories=2, n_hull=4)
        s = sample_attractor(linear_system(0.5), cfg, Grid(16))
        assert s.degenerate
        assert s.norm_alpha_max <= 1e-12

    def test_gradient_like_clusters_at_equilibria(self):
        cfg = IntegratorConfig(t_transient=10.0, n_snapshots=4, n_trajectories=2, n_hull=4)
        sys = burgers_unforced()
        s = sample_attractor(sys, cfg, Grid(64))
        for u in s.snapshots:
            assert sobolev_norm(eval_G(sys, u), 0.0, sys.D) <= 1e-3 * max(1.0, sobolev_norm(u, 0.0, sys.D))

    def test_invariants(self, burgers_sample):
        sys, s = burgers_sample
        cfg = IntegratorConfig(t_transient=4.0)
        assert all(t >= cfg.t_transient for t in s.times)
        n = len(s.snapshots)
        assert all(0 <= a < n and 0 <= b < n for a, b in s.pair_index)
        assert len(s.pair_index) == n * (n - 1) // 2
        for idx, w in s.hull_weights:
            assert len(idx) in (2, 3)
            assert all(0.0 <= wi <= 1.0 for wi in w)
            assert sum(w) == pytest.approx(1.0, abs=1e-12)
        for u in s.snapshots:
            assert sobolev_norm(u, 0.8, sys.D) <= s.norm_alpha_max

    def test_hull_points_are_convex_combinations(self, burgers_sample):
        _, s = burgers_sample
        for pt, (idx, w) in zip(s.hull_points, s.hull_weights):
            combo = sum(wi * s.snapshots[j].coeffs for wi, j in zip(w, idx))
            np.testing.assert_array_equal(pt.coeffs, combo)

    def test_deterministic(self):
        cfg = IntegratorConfig(t_transient=0.5, t_sample=0.5, n_snapshots=3, n_trajectories=2, n_hull=4, seed=7)
        a = sample_attractor(builtin("scalar_burgers"), cfg, Grid(32))
        b = sample_attractor(builtin("scalar_burgers"), cfg, Grid(32))
        for u, v in zip(a.snapshots + a.hull_points, b.snapshots + b.hull_points):
            assert np.array_equal(u.coeffs, v.coeffs)

    @pytest.mark.parametrize("n, expect", [(1, [(0, 0)]), (3, [(0, 1), (0, 2), (1, 2)])])
    def test_all_pairs(self, n, expect):
        assert all_pairs(n) == expect


class TestFlowPair:
    def test_identical_inputs(self, rng):
        g = Grid(32)
        u = random_field(g, 1, rng)
        _, us, vs = flow_pair(builtin("scalar_burgers"), u, u, 0.05, 1e-3)
        for a, b in zip(us, vs):
            assert np.array_equal(a.coeffs, b.coeffs)

    def test_zero_time(self, rng):
        g = Grid(32)
        u, v = random_field(g, 1, rng), random_field(g, 1, rng)
        t, us, vs = flow_pair(builtin("scalar_burgers"), u, v, 0.0, 1e-3)
        assert list(t) == [0.0] and us[0] is u and vs[0] is v

    def test_linear_contraction_rate(self):
        g = Grid(32)
        d = 0.5
        sys = linear_system(d)
        u = to_spectral(np.cos(TWO_PI * g.x), g)
        v = SpectralField(np.zeros_like(u.coeffs), g)
        t, us, vs = flow_pair(sys, u, v, 0.2, 1e-3)
        D = DiffusionMatrix([d])
        d0 = sobolev_norm(u - v, 0.8, D)
        for ti, a, b in zip(t, us, vs):
            assert sobolev_norm(a - b, 0.8, D) == pytest.approx(np.exp(-(1 + 4 * np.pi**2 * d) * ti) * d0, rel=1e-10)
