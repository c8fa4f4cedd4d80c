"""Fourier representation of vector fields on the unit circle.

Fields are stored as complex Fourier coefficients ``c[j, n]`` normalised so
that ``u_j(x) = sum_k c[j, k] exp(2 pi i k x)``; the ordering along the last
axis is numpy's FFT ordering.  The operator ``A u = u - D u_xx`` and every
spectral projection are diagonal in this basis.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import GridMismatch

DEFAULT_N = 128
DEFAULT_ALPHA = 0.8


@dataclass(frozen=True)
class Grid:
    """Uniform collocation grid ``x_i = i / N`` on the circle of length one."""

    n_modes: int = DEFAULT_N
    dealias_fraction: Fraction = Fraction(2, 3)

    def __post_init__(self):
        if self.n_modes < 8 or self.n_modes % 2:
            raise ValueError(f"n_modes must be an even integer >= 8, got {self.n_modes}")
        frac = Fraction(self.dealias_fraction).limit_denominator(1000)
        if not 0 < frac <= 1:
            raise ValueError("dealias_fraction must lie in (0, 1]")
        object.__setattr__(self, "dealias_fraction", frac)

    @property
    def N(self) -> int:
        return self.n_modes

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.n_modes) / self.n_modes

    @cached_property
    def k(self) -> np.ndarray:
        """Integer wavenumbers in FFT order (the Nyquist entry is -N/2)."""
        return np.fft.fftfreq(self.n_modes, 1.0 / self.n_modes)

    @cached_property
    def padded_size(self) -> int:
        M = int(np.ceil(self.n_modes / self.dealias_fraction))
        return M + (M % 2)

    @cached_property
    def x_padded(self) -> np.ndarray:
        return np.arange(self.padded_size) / self.padded_size

    @cached_property
    def ik(self) -> np.ndarray:
        ik = 2j * np.pi * self.k
        ik[self.n_modes // 2] = 0.0
        return ik

    @cached_property
    def k2(self) -> np.ndarray:
        return (2 * np.pi * self.k) ** 2

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.n_modes * factor, self.dealias_fraction)


@dataclass(frozen=True)
class DiffusionMatrix:
    d: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        if d.ndim != 1 or np.any(~np.isfinite(d)) or np.any(d <= 0):
            raise ValueError(f"diffusion coefficients must be positive, got {self.d}")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @classmethod
    def scalar(cls, d: float, m: int) -> "DiffusionMatrix":
        return cls(np.full(m, float(d)))

    @property
    def m(self) -> int:
        return self.d.size

    @property
    def is_scalar(self) -> bool:
        return bool(np.all(self.d == self.d[0]))

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.d)

    @property
    def inverse(self) -> np.ndarray:
        return np.diag(1.0 / self.d)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A real periodic field with ``m`` components, held spectrally."""

    coeffs: np.ndarray
    grid: Grid = field(default_factory=Grid)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim == 1:
            c = c[None, :]
        if c.shape[-1] != self.grid.N:
            raise GridMismatch(f"coefficient length {c.shape[-1]} != grid size {self.grid.N}")
        object.__setattr__(self, "coeffs", c)

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    def nodal(self) -> np.ndarray:
        return to_nodal(self)

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid or other.m != self.m:
            raise GridMismatch("fields live on different grids or have different sizes")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.coeffs + other.coeffs, self.grid)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.coeffs - other.coeffs, self.grid)

    def __neg__(self):
        return SpectralField(-self.coeffs, self.grid)

    def __mul__(self, scalar):
        return SpectralField(self.coeffs * scalar, self.grid)

    __rmul__ = __mul__


def _full_from_half(half: np.ndarray, N: int) -> np.ndarray:
    full = np.empty(half.shape[:-1] + (N,), dtype=complex)
    full[..., : N // 2 + 1] = half
    full[..., N // 2 + 1:] = np.conj(half[..., 1: N // 2][..., ::-1])
    return full


def to_spectral(nodal, grid: Grid | None = None) -> SpectralField:
    u = np.asarray(nodal, dtype=float)
    if u.ndim == 1:
        u = u[None, :]
    grid = grid or Grid(u.shape[-1])
    if u.shape[-1] != grid.N:
        raise GridMismatch(f"nodal length {u.shape[-1]} != grid size {grid.N}")
    half = np.fft.rfft(u, axis=-1) / grid.N
    return SpectralField(_full_from_half(half, grid.N), grid)


def to_nodal(u: SpectralField) -> np.ndarray:
    N = u.grid.N
    return np.fft.irfft(u.coeffs[:, : N // 2 + 1] * N, n=N, axis=-1)


def fourier_interp(coeffs_half: np.ndarray, N: int, M: int) -> np.ndarray:
    """Evaluate band-limited data (half spectrum of length N/2+1) on M >= N points."""
    half = np.array(coeffs_half, dtype=complex, copy=True)
    half[..., N // 2] *= 0.5
    padded = np.zeros(half.shape[:-1] + (M // 2 + 1,), dtype=complex)
    padded[..., : N // 2 + 1] = half
    return np.fft.irfft(padded * M, n=M, axis=-1)


def padded_nodal(u: SpectralField) -> np.ndarray:
    """Nodal values on the anti-aliasing grid of size ``grid.padded_size``."""
    N = u.grid.N
    return fourier_interp(u.coeffs[:, : N // 2 + 1], N, u.grid.padded_size)


def from_padded(values: np.ndarray, grid: Grid) -> SpectralField:
    """Project nodal products on the padded grid back to N modes (Nyquist dropped)."""
    M = grid.padded_size
    half = np.fft.rfft(values, axis=-1)[..., : grid.N // 2 + 1] / M
    half[..., grid.N // 2] = 0.0
    return SpectralField(_full_from_half(half, grid.N), grid)


def curve_padded(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Trigonometric interpolation of nodal matrix data ``(N, ...)`` to the padded grid."""
    moved = np.moveaxis(values, 0, -1)
    half = np.fft.rfft(moved, axis=-1) / grid.N
    return np.moveaxis(fourier_interp(half, grid.N, grid.padded_size), -1, 0)


def symbol_A(grid: Grid, D: DiffusionMatrix) -> np.ndarray:
    """Per-component, per-mode eigenvalues ``1 + d_j (2 pi k)^2`` of A."""
    return 1.0 + D.d[:, None] * grid.k2[None, :]


def apply_A(u: SpectralField, D: DiffusionMatrix) -> SpectralField:
    if D.m != u.m:
        raise GridMismatch("diffusion matrix size does not match field")
    return SpectralField(u.coeffs * symbol_A(u.grid, D), u.grid)


def sobolev_norm(u: SpectralField, alpha: float, D: DiffusionMatrix) -> float:
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    weights = symbol_A(u.grid, D) ** alpha
    return float(np.sqrt(np.sum(np.abs(weights * u.coeffs) ** 2)))


def project_low_modes(u: SpectralField, n_keep: int) -> SpectralField:
    if not 0 <= n_keep <= u.grid.N // 2:
        raise ValueError(f"n_keep must lie in [0, {u.grid.N // 2}]")
    mask = np.abs(u.grid.k) <= n_keep
    return SpectralField(u.coeffs * mask, u.grid)


def dx(u: SpectralField) -> SpectralField:
    return SpectralField(u.coeffs * u.grid.ik, u.grid)


def dxx(u: SpectralField) -> SpectralField:
    return SpectralField(-u.coeffs * u.grid.k2, u.grid)


def curve_dx(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral x-derivative of nodal periodic data with leading axis of length N."""
    hat = np.fft.fft(values, axis=0)
    shape = (grid.N,) + (1,) * (values.ndim - 1)
    return np.fft.ifft(hat * grid.ik.reshape(shape), axis=0).real


# -- nodal snapshot files ---------------------------------------------------

_HEADER = struct.Struct("<qqd")


def write_snapshot(path, u: SpectralField, alpha: float, D: DiffusionMatrix) -> None:
    """Write ``m, N, alpha, d[m]`` then the ``m x N`` nodal values, little-endian float64."""
    nodal = to_nodal(u)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(u.m, u.grid.N, float(alpha)))
        fh.write(np.asarray(D.d, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(nodal, dtype="<f8").tobytes())


def read_snapshot(path, dealias_fraction=Fraction(2, 3)):
    data = Path(path).read_bytes()
    m, N, alpha = _HEADER.unpack_from(data, 0)
    off = _HEADER.size
    d = np.frombuffer(data, dtype="<f8", count=m, offset=off)
    off += 8 * m
    nodal = np.frombuffer(data, dtype="<f8", count=m * N, offset=off).reshape(m, N)
    if off + 8 * m * N != len(data):
        raise GridMismatch(f"{path}: file size inconsistent with header")
    grid = Grid(int(N), dealias_fraction)
    return to_spectral(nodal.astype(float), grid), float(alpha), DiffusionMatrix(d.copy())
