"""Pair-averaged linearisation of the vector field.

For a pair ``(u, v)`` with ``w = tau u + (1 - tau) v``:

* ``B(x)  = int_0^1 f(x, w) dtau``
* ``B0(x) = -E + int_0^1 (f_u(x, w) w_x + g_u(x, w)) dtau``
* ``Q(x)  = B0 - B_x / 2 - B D^{-1} B / 4``

so that ``G(u) - G(v) = D h_xx + B0 h + B h_x`` with ``h = u - v``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch
from .grid import (
    Grid,
    SpectralField,
    curve_dx,
    curve_padded,
    dx,
    dxx,
    from_padded,
    padded_nodal,
    to_nodal,
)
from .model import RDCSystem

N_QUAD = 16


@dataclass(frozen=True, eq=False)
class MatrixCurve:
    """``m x m`` matrices sampled at the collocation nodes of [0, 1).

    ``end`` holds the value at ``x = 1`` for curves that are not periodic
    (fundamental solutions); periodic curves have ``end is None``.
    """

    values: np.ndarray
    grid: Grid
    kind: str = "B"
    end: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3 or vals.shape[0] != self.grid.N or vals.shape[1] != vals.shape[2]:
            raise GridMismatch(f"curve values must have shape (N, m, m), got {vals.shape}")
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def periodic(self) -> bool:
        return self.end is None

    def at_one(self) -> np.ndarray:
        return self.values[0] if self.end is None else self.end

    def derivative(self) -> "MatrixCurve":
        return MatrixCurve(curve_dx(self.values, self.grid), self.grid, kind=self.kind + "_x")

    def dump(self, path) -> None:
        """Write ``N, m`` (int64) then the per-node ``m x m`` blocks as little-endian float64."""
        with open(path, "wb") as fh:
            fh.write(np.array([self.grid.N, self.m], dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, kind: str = "B") -> "MatrixCurve":
        data = np.fromfile(path, dtype="<u1")
        N, m = np.frombuffer(data[:16].tobytes(), dtype="<i8")
        vals = np.frombuffer(data[16:].tobytes(), dtype="<f8").reshape(int(N), int(m), int(m))
        return cls(vals.copy(), Grid(int(N)), kind=kind)


def _gauss_legendre(n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def _tau_states(u: SpectralField, v: SpectralField, n_quad: int):
    if u.grid != v.grid or u.m != v.m:
        raise GridMismatch("u and v must share a grid")
    tau, wts = _gauss_legendre(n_quad)
    U, V = to_nodal(u), to_nodal(v)
    W = tau[:, None, None] * U[None] + (1 - tau)[:, None, None] * V[None]
    return tau, wts, W


def build_B(sys: RDCSystem, u: SpectralField, v: SpectralField, n_quad: int = N_QUAD) -> MatrixCurve:
    grid = u.grid
    tau, wts, W = _tau_states(u, v, n_quad)
    N, m = grid.N, sys.m
    xs = np.tile(grid.x, n_quad)
    fv = sys.conv(xs, np.moveaxis(W, 1, 0).reshape(m, -1)).reshape(n_quad, N, m, m)
    return MatrixCurve(np.einsum("q,qnij->nij", wts, fv), grid, kind="B")


def build_B0(sys: RDCSystem, u: SpectralField, v: SpectralField, n_quad: int = N_QUAD) -> MatrixCurve:
    grid = u.grid
    tau, wts, W = _tau_states(u, v, n_quad)
    Ux, Vx = to_nodal(dx(u)), to_nodal(dx(v))
    Wx = tau[:, None, None] * Ux[None] + (1 - tau)[:, None, None] * Vx[None]
    N, m = grid.N, sys.m
    xs = np.tile(grid.x, n_quad)
    flat = np.moveaxis(W, 1, 0).reshape(m, -1)
    fu = sys.conv_u(xs, flat).reshape(n_quad, N, m, m, m)
    gu = sys.react_u(xs, flat).reshape(n_quad, N, m, m)
    integrand = np.einsum("qnilj,qln->qnij", fu, Wx) + gu
    return MatrixCurve(np.einsum("q,qnij->nij", wts, integrand) - np.eye(m), grid, kind="B0")


def build_Q(sys: RDCSystem, u: SpectralField | None = None, v: SpectralField | None = None,
            B: MatrixCurve | None = None, B0: MatrixCurve | None = None) -> MatrixCurve:
    """``Q = B0 - B_x / 2 - B D^{-1} B / 4``; pass ``B``/``B0`` to reuse built curves."""
    B = B if B is not None else build_B(sys, u, v)
    B0 = B0 if B0 is not None else build_B0(sys, u, v)
    Bx = curve_dx(B.values, B.grid)
    quad = np.einsum("nij,j,njk->nik", B.values, 1.0 / sys.D.d, B.values)
    return MatrixCurve(B0.values - 0.5 * Bx - 0.25 * quad, B.grid, kind="Q")


def quadrature_change(sys: RDCSystem, u: SpectralField, v: SpectralField) -> float:
    """Max change in ``B`` when the tau-rule doubles from 16 to 32 points."""
    return float(np.max(np.abs(build_B(sys, u, v, 2 * N_QUAD).values - build_B(sys, u, v).values)))


def pair_lipschitz(sys: RDCSystem, pairs, n_quad: int = N_QUAD) -> dict:
    """Sample estimates of how ``B`` and ``B0`` vary with the pair ``(u, v)``.

    For every two pairs the sup-norm change of the curve is divided by
    ``||u - u'||_inf + ||v - v'||_inf``; the maxima are returned.  This is a
    finite-sample Lipschitz estimate, not a regularity proof.
    """
    curves = [(build_B(sys, u, v, n_quad).values, build_B0(sys, u, v, n_quad).values,
               to_nodal(u), to_nodal(v)) for u, v in pairs]
    lip_B = lip_B0 = 0.0
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            Bi, B0i, ui, vi = curves[i]
            Bj, B0j, uj, vj = curves[j]
            dist = float(np.max(np.abs(ui - uj)) + np.max(np.abs(vi - vj)))
            if dist <= 1e-12:
                continue
            lip_B = max(lip_B, float(np.max(np.abs(Bi - Bj))) / dist)
            lip_B0 = max(lip_B0, float(np.max(np.abs(B0i - B0j))) / dist)
    return dict(lipschitz_B=lip_B, lipschitz_B0=lip_B0, n_pairs=len(curves))


@dataclass(frozen=True, eq=False)
class Linearization:
    B: MatrixCurve
    B0: MatrixCurve
    Q: MatrixCurve
    quad_change: float | None = None

    @property
    def quad_flagged(self) -> bool:
        return self.quad_change is not None and self.quad_change >= 1e-10


def linearize(sys: RDCSystem, u: SpectralField, v: SpectralField, check_quadrature: bool = False) -> Linearization:
    B = build_B(sys, u, v)
    B0 = build_B0(sys, u, v)
    Q = build_Q(sys, B=B, B0=B0)
    qc = quadrature_change(sys, u, v) if check_quadrature else None
    return Linearization(B, B0, Q, qc)


def curve_times(curve: MatrixCurve, h: SpectralField) -> SpectralField:
    """Dealiased multiplication ``M(x) h(x)`` of a periodic curve and a field."""
    if curve.grid != h.grid or curve.m != h.m:
        raise GridMismatch("curve and field live on different grids")
    prod = np.einsum("pij,jp->ip", curve_padded(curve.values, h.grid), padded_nodal(h))
    return from_padded(prod, h.grid)


def apply_T0(Q: MatrixCurve, omega: float, h: SpectralField) -> SpectralField:
    return h * omega + curve_times(Q, h)


def apply_R(sys: RDCSystem, B0: MatrixCurve, B: MatrixCurve, h: SpectralField) -> SpectralField:
    """``R h = D h_xx + B0 h + B h_x``."""
    hxx = dxx(h)
    Dhxx = SpectralField(hxx.coeffs * sys.D.d[:, None], h.grid)
    return Dhxx + curve_times(B0, h) + curve_times(B, dx(h))


def apply_T(sys: RDCSystem, lin: Linearization, omega: float, h: SpectralField) -> SpectralField:
    """``T h = T0 h - R h``, the second factor of the decomposition, on periodic ``h``."""
    return apply_T0(lin.Q, omega, h) - apply_R(sys, lin.B0, lin.B, h)
