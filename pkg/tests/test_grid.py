import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rdcflow.errors import GridMismatch
from rdcflow.grid import (
    DiffusionMatrix,
    Grid,
    SpectralField,
    apply_A,
    dx,
    dxx,
    project_low_modes,
    read_snapshot,
    sobolev_norm,
    to_nodal,
    to_spectral,
    write_snapshot,
)

TWO_PI = 2 * np.pi


def band_limited(rng, m, grid, band=None):
    band = band or grid.N // 3
    half = np.zeros((m, grid.N // 2 + 1), complex)
    half[:, : band + 1] = rng.standard_normal((m, band + 1)) + 1j * rng.standard_normal((m, band + 1))
    half[:, 0] = half[:, 0].real
    return to_spectral(np.fft.irfft(half * grid.N, n=grid.N), grid)


class TestGrid:
    def test_nodes_uniform_on_unit_circle(self):
        g = Grid(16)
        assert g.x[0] == 0.0
        np.testing.assert_allclose(np.diff(g.x), 1 / 16, rtol=0, atol=0)

    @pytest.mark.parametrize("n", [4, 6, 9, 127])
    def test_rejects_small_or_odd(self, n):
        with pytest.raises(ValueError):
            Grid(n)

    def test_padding_for_two_thirds_rule(self):
        assert Grid(128).padded_size == 192

    def test_diffusion_positive(self):
        with pytest.raises(ValueError):
            DiffusionMatrix([1.0, 0.0])
        assert DiffusionMatrix.scalar(0.3, 3).is_scalar
        assert not DiffusionMatrix([1.0, 2.0]).is_scalar


class TestTransforms:
    def test_constant_field(self):
        g = Grid(16)
        u = to_spectral(np.full(16, 2.5), g)
        assert u.coeffs[0, 0] == pytest.approx(2.5)
        np.testing.assert_allclose(u.coeffs[0, 1:], 0, atol=1e-15)

    def test_single_harmonic(self):
        g = Grid(32)
        u = to_spectral(np.cos(TWO_PI * g.x), g)
        k = g.k
        np.testing.assert_allclose(u.coeffs[0, k == 1], 0.5, atol=1e-15)
        np.testing.assert_allclose(u.coeffs[0, k == -1], 0.5, atol=1e-15)
        np.testing.assert_allclose(u.coeffs[0, np.abs(k) != 1], 0, atol=1e-15)

    def test_round_trip(self, rng):
        g = Grid(64)
        nodal = rng.standard_normal((3, 64))
        np.testing.assert_allclose(to_nodal(to_spectral(nodal, g)), nodal, rtol=0, atol=1e-12)

    def test_size_mismatch(self):
        with pytest.raises(GridMismatch):
            to_spectral(np.zeros(10), Grid(16))
        with pytest.raises(GridMismatch):
            SpectralField(np.zeros((1, 10)), Grid(16))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (2, 32), elements=st.floats(-1e3, 1e3)))
    def test_round_trip_property(self, nodal):
        g = Grid(32)
        back = to_nodal(to_spectral(nodal, g))
        np.testing.assert_allclose(back, nodal, rtol=0, atol=1e-12 * max(1.0, np.abs(nodal).max()))


class TestOperatorA:
    def test_constant_unchanged(self):
        g = Grid(16)
        u = to_spectral(np.full(16, 3.0), g)
        np.testing.assert_allclose(to_nodal(apply_A(u, DiffusionMatrix([1.0]))), 3.0, atol=1e-13)

    def test_cosine_scalar(self):
        g = Grid(32)
        u = to_spectral(np.cos(TWO_PI * g.x), g)
        out = to_nodal(apply_A(u, DiffusionMatrix([1.0])))
        np.testing.assert_allclose(out[0], (1 + 4 * np.pi**2) * np.cos(TWO_PI * g.x), atol=1e-12)

    def test_per_component_multiplier(self):
        g = Grid(32)
        s = np.sin(TWO_PI * g.x)
        u = to_spectral(np.stack([s, s]), g)
        out = to_nodal(apply_A(u, DiffusionMatrix([1.0, 2.0])))
        np.testing.assert_allclose(out[0], (1 + 4 * np.pi**2) * s, atol=1e-13 * 80)
        np.testing.assert_allclose(out[1], (1 + 8 * np.pi**2) * s, atol=1e-13 * 160)

    def test_coercive(self, rng):
        g = Grid(32)
        D = DiffusionMatrix([0.3, 1.7])
        for _ in range(10):
            u = band_limited(rng, 2, g)
            Au = apply_A(u, D)
            inner = np.sum((Au.coeffs * np.conj(u.coeffs)).real)
            assert inner >= np.sum(np.abs(u.coeffs) ** 2) * (1 - 1e-14)

    def test_projection_commutes_with_A(self, rng):
        g = Grid(32)
        D = DiffusionMatrix([0.5])
        u = band_limited(rng, 1, g)
        lhs = project_low_modes(apply_A(u, D), 5).coeffs
        rhs = apply_A(project_low_modes(u, 5), D).coeffs
        assert np.max(np.abs(lhs - rhs)) <= 1e-13 * np.max(np.abs(lhs))


class TestSobolevNorm:
    def test_zero(self):
        g = Grid(16)
        assert sobolev_norm(SpectralField(np.zeros((1, 16)), g), 0.8, DiffusionMatrix([1.0])) == 0.0

    def test_parseval_single_harmonic(self):
        g = Grid(32)
        u = to_spectral(np.cos(TWO_PI * g.x), g)
        assert sobolev_norm(u, 0.0, DiffusionMatrix([1.0])) == pytest.approx(np.sqrt(0.5), rel=1e-14)

    def test_alpha_one_equals_norm_of_Au(self, rng):
        g = Grid(32)
        D = DiffusionMatrix([0.4, 0.9])
        u = band_limited(rng, 2, g)
        assert sobolev_norm(u, 1.0, D) == pytest.approx(sobolev_norm(apply_A(u, D), 0.0, D), rel=1e-12)

    def test_parseval_nodal(self, rng):
        g = Grid(64)
        u = band_limited(rng, 2, g)
        nodal = to_nodal(u)
        assert sobolev_norm(u, 0.0, DiffusionMatrix([1.0, 1.0])) ** 2 == pytest.approx(
            np.sum(nodal**2) / g.N, rel=1e-10)

    def test_negative_alpha(self):
        with pytest.raises(ValueError):
            sobolev_norm(SpectralField(np.zeros((1, 16)), Grid(16)), -0.1, DiffusionMatrix([1.0]))


class TestProjection:
    def test_full_projection_is_identity(self, rng):
        g = Grid(32)
        u = band_limited(rng, 1, g, band=16)
        np.testing.assert_array_equal(project_low_modes(u, 16).coeffs, u.coeffs)

    def test_mean_free_harmonic_removed(self):
        g = Grid(32)
        u = to_spectral(np.cos(TWO_PI * g.x), g)
        np.testing.assert_allclose(project_low_modes(u, 0).coeffs, 0, atol=1e-15)

    def test_idempotent(self, rng):
        g = Grid(32)
        u = band_limited(rng, 2, g)
        P = project_low_modes(u, 4)
        assert np.max(np.abs(project_low_modes(P, 4).coeffs - P.coeffs)) <= 1e-14

    def test_range(self):
        with pytest.raises(ValueError):
            project_low_modes(SpectralField(np.zeros((1, 16)), Grid(16)), 9)


class TestDerivatives:
    def test_sine(self):
        g = Grid(32)
        u = to_spectral(np.sin(TWO_PI * g.x), g)
        np.testing.assert_allclose(to_nodal(dx(u))[0], TWO_PI * np.cos(TWO_PI * g.x), atol=1e-12)

    def test_constant(self):
        g = Grid(16)
        u = to_spectral(np.full(16, 1.5), g)
        np.testing.assert_allclose(to_nodal(dx(u)), 0, atol=1e-14)
        np.testing.assert_allclose(to_nodal(dxx(u)), 0, atol=1e-14)

    def test_second_derivative_two_paths(self, rng):
        g = Grid(64)
        u = band_limited(rng, 2, g)
        a, b = dxx(u).coeffs, dx(dx(u)).coeffs
        assert np.max(np.abs(a - b)) <= 1e-11 * np.max(np.abs(a))


class TestSnapshotFile:
    def test_exact_encoding(self, tmp_path, rng):
        g = Grid(32)
        u = to_spectral(rng.standard_normal((2, 32)), g)
        D = DiffusionMatrix([0.1, 0.4])
        p = tmp_path / "s.bin"
        write_snapshot(p, u, 0.8, D)
        raw = p.read_bytes()
        assert len(raw) == 24 + 8 * 2 + 8 * 64
        m, N = np.frombuffer(raw[:16], "<i8")
        assert (m, N) == (2, 32)
        assert np.frombuffer(raw[16:24], "<f8")[0] == 0.8
        np.testing.assert_array_equal(np.frombuffer(raw[24:40], "<f8"), D.d)
        np.testing.assert_array_equal(np.frombuffer(raw[40:], "<f8").reshape(2, 32), to_nodal(u))

    def test_deterministic_write(self, tmp_path, rng):
        g = Grid(32)
        u = to_spectral(rng.standard_normal((1, 32)), g)
        write_snapshot(tmp_path / "a.bin", u, 0.8, DiffusionMatrix([1.0]))
        write_snapshot(tmp_path / "b.bin", u, 0.8, DiffusionMatrix([1.0]))
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_read_back(self, tmp_path, rng):
        g = Grid(32)
        nodal = rng.standard_normal((2, 32))
        D = DiffusionMatrix([0.1, 0.4])
        write_snapshot(tmp_path / "s.bin", to_spectral(nodal, g), 0.8, D)
        v, alpha, D2 = read_snapshot(tmp_path / "s.bin")
        assert alpha == 0.8 and np.array_equal(D2.d, D.d) and v.grid.N == 32
        np.testing.assert_allclose(to_nodal(v), nodal, rtol=0, atol=1e-14)

    def test_truncated_file(self, tmp_path):
        g = Grid(16)
        p = tmp_path / "s.bin"
        write_snapshot(p, to_spectral(np.zeros(16), g), 0.8, DiffusionMatrix([1.0]))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(Exception):
            read_snapshot(p)
