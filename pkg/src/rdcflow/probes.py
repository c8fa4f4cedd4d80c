"""Numerical probes on sampled attractor pairs.

* Lipschitz flow envelope: ``||Phi_t u - Phi_t v||_a <= M ||u - v||_a e^{kappa t}``.
* Graph over low Fourier modes: ``||P u - P v||_a / ||u - v||_a`` bounded below.
* Decomposition ``G(u) - G(v) = R h`` and the transformed form of ``R``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    DEFAULT_ALPHA,
    DiffusionMatrix,
    SpectralField,
    dx,
    dxx,
    sobolev_norm,
    symbol_A,
    to_nodal,
    to_spectral,
)
from .integrate import all_pairs, flow_pair
from .linearization import Linearization, MatrixCurve, apply_R, apply_T, apply_T0, linearize
from .model import RDCSystem, eval_G

DISTANCE_FLOOR = 1e-8
N_BINS = 50


def _fields(sample) -> list:
    return list(sample.snapshots) if hasattr(sample, "snapshots") else list(sample)


def distinct_pairs(fields, alpha: float, D: DiffusionMatrix, floor: float = DISTANCE_FLOOR):
    """Index pairs whose alpha-distance is at least ``floor``, with the distances."""
    out = []
    for a, b in all_pairs(len(fields)):
        if a == b:
            continue
        d = sobolev_norm(fields[a] - fields[b], alpha, D)
        if d >= floor:
            out.append((a, b, d))
    return out


def select_pairs(n: int, max_pairs: int | None, seed: int = 0) -> list:
    """Deterministic subset of ``all_pairs(n)`` (all of them when under budget)."""
    pairs = all_pairs(n)
    if max_pairs is None or len(pairs) <= max_pairs:
        return pairs
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
    return [pairs[i] for i in idx]


# -- Lipschitz envelope ------------------------------------------------------------------


@dataclass
class FlReport:
    verdict: str
    M_est: float | None
    kappa_est: float | None
    fit_residual: float | None
    n_pairs: int
    series: list = field(default_factory=list)     # (pair, times, log distance ratio)
    n_excluded: int = 0

    def to_dict(self):
        return dict(verdict=self.verdict, M_est=self.M_est, kappa_est=self.kappa_est,
                    fit_residual=self.fit_residual, n_pairs=self.n_pairs, n_excluded=self.n_excluded)


def fit_envelope(times_list, logs_list):
    """Least-squares line for ``log d(t)/d(0)``; slope clipped at zero, then lifted to envelope."""
    t = np.concatenate(times_list)
    y = np.concatenate(logs_list)
    if np.ptp(t) > 0:
        kappa, logM = np.polyfit(t, y, 1)
    else:
        kappa, logM = 0.0, float(np.mean(y))
    kappa = max(0.0, float(kappa))
    resid = float(np.sqrt(np.mean((y - (logM + kappa * t)) ** 2)))
    logM = float(np.max(y - kappa * t))
    return float(np.exp(logM)), kappa, resid


def probe_Fl(sys: RDCSystem, sample, t_max: float = 2.0, dt: float = 2e-3, alpha: float = DEFAULT_ALPHA,
             max_pairs: int = 6, floor: float = DISTANCE_FLOOR, scheme: str = "ETDRK4",
             n_records: int = 50) -> FlReport:
    """Fit the forward-time envelope ``log M + kappa t`` over synchronised pair flows."""
    fields = _fields(sample)
    pairs = distinct_pairs(fields, alpha, sys.D, floor)
    n_excluded = len([p for p in all_pairs(len(fields)) if p[0] != p[1]]) - len(pairs)
    if not pairs:
        return FlReport("inconclusive", None, None, None, 0, n_excluded=n_excluded)
    pairs = pairs[:max_pairs]
    series, ts, ys = [], [], []
    for a, b, d0 in pairs:
        times, us, vs = flow_pair(sys, fields[a], fields[b], t_max, dt, scheme, n_records)
        d = np.array([sobolev_norm(u - v, alpha, sys.D) for u, v in zip(us, vs)])
        y = np.log(np.maximum(d, 1e-300) / d0)
        series.append(((a, b), times, y))
        ts.append(times)
        ys.append(y)
    M, kappa, resid = fit_envelope(ts, ys)
    return FlReport("ok", M, kappa, resid, len(pairs), series, n_excluded)


# -- graph over low modes -----------------------------------------------------------------


@dataclass
class GrFReport:
    verdict: str
    n_keep: int | None
    min_ratio: float | None
    achieving_pair: tuple | None
    histogram: tuple | None
    sweep: list = field(default_factory=list)      # (n_keep, min_ratio)
    n_pairs: int = 0

    def to_dict(self):
        return dict(verdict=self.verdict, n_keep=self.n_keep, min_ratio=self.min_ratio,
                    achieving_pair=self.achieving_pair, n_pairs=self.n_pairs,
                    histogram=None if self.histogram is None else
                    dict(counts=self.histogram[0].tolist(), edges=self.histogram[1].tolist()),
                    sweep=[[int(n), float(r)] for n, r in self.sweep])


def low_mode_fractions(w: SpectralField, alpha: float, D: DiffusionMatrix) -> np.ndarray:
    """``||P_n w||_a / ||w||_a`` for ``n = 0 .. N/2`` (cumulative over ``|k|``)."""
    grid = w.grid
    energy = np.abs(symbol_A(grid, D) ** alpha * w.coeffs) ** 2
    by_k = np.zeros(grid.N // 2 + 1)
    np.add.at(by_k, np.abs(grid.k).astype(int), energy.sum(axis=0))
    cum = np.cumsum(by_k)
    return np.sqrt(cum / cum[-1])


def probe_GrF(sample, n_keep: int | None = None, alpha: float = DEFAULT_ALPHA,
              D: DiffusionMatrix | None = None, floor: float = DISTANCE_FLOOR) -> GrFReport:
    """Projection ratios over all snapshot pairs, swept over ``n_keep = 1 .. N/4``."""
    fields = _fields(sample)
    D = D or DiffusionMatrix.scalar(1.0, fields[0].m)
    pairs = distinct_pairs(fields, alpha, D, floor)
    if not pairs:
        return GrFReport("inconclusive", n_keep, None, None, None)
    N = fields[0].grid.N
    fr = np.array([low_mode_fractions(fields[a] - fields[b], alpha, D) for a, b, _ in pairs])
    top = max(1, N // 4)
    sweep = [(n, float(fr[:, n].min())) for n in range(1, top + 1)]
    n_keep = top if n_keep is None else int(n_keep)
    ratios = fr[:, n_keep]
    i = int(np.argmin(ratios))
    hist = np.histogram(ratios, bins=N_BINS, range=(0.0, 1.0))
    return GrFReport("ok", n_keep, float(ratios[i]), (pairs[i][0], pairs[i][1]), hist, sweep, len(pairs))


# -- decomposition identity --------------------------------------------------------------


def _l2(u: SpectralField) -> float:
    return float(np.sqrt(np.sum(np.abs(u.coeffs) ** 2)))


def decomposition_residual(sys: RDCSystem, u: SpectralField, v: SpectralField,
                           lin: Linearization | None = None) -> tuple[float, float]:
    """``(||G(u) - G(v) - R h|| / ||G(u) - G(v)||, ||G(u) - G(v)||)``."""
    lin = lin or linearize(sys, u, v)
    dG = eval_G(sys, u) - eval_G(sys, v)
    r = dG - apply_R(sys, lin.B0, lin.B, u - v)
    denom = _l2(dG)
    return (_l2(r) / denom if denom > 0 else 0.0), denom


def omega_independence(sys: RDCSystem, lin: Linearization, h: SpectralField, omegas=(1.0, 7.0)) -> float:
    """Relative spread of ``(T0 - T) h`` over several ``omega``."""
    vals = [apply_T0(lin.Q, w, h) - apply_T(sys, lin, w, h) for w in omegas]
    scale = max(_l2(vals[0]), 1e-300)
    return max(_l2(v - vals[0]) for v in vals[1:]) / scale


def transformed_R(sys: RDCSystem, lin: Linearization, U: MatrixCurve, V: MatrixCurve,
                  h: SpectralField) -> np.ndarray:
    """Nodal ``D U eta_xx + Q U eta`` with ``eta = V h`` (so ``U eta = h`` is periodic).

    ``eta_xx`` is expanded with ``V_x = V D^{-1} B / 2`` and
    ``V_xx = V (D^{-1} B D^{-1} B / 4 + D^{-1} B_x / 2)``.
    """
    d_inv = 1.0 / sys.D.d
    B = lin.B.values
    Bx = lin.B.derivative().values
    W = d_inv[None, :, None] * B
    Wx = d_inv[None, :, None] * Bx
    Vn = V.values
    Vx = 0.5 * Vn @ W
    Vxx = Vn @ (0.25 * W @ W + 0.5 * Wx)
    hn, hx, hxx = to_nodal(h), to_nodal(dx(h)), to_nodal(dxx(h))
    eta_xx = (np.einsum("pij,jp->ip", Vxx, hn) + 2 * np.einsum("pij,jp->ip", Vx, hx)
              + np.einsum("pij,jp->ip", Vn, hxx))
    Ueta_xx = np.einsum("pij,jp->ip", U.values, eta_xx)
    return sys.D.d[:, None] * Ueta_xx + np.einsum("pij,jp->ip", lin.Q.values, hn)


def transformation_residual(sys: RDCSystem, lin: Linearization, U: MatrixCurve, V: MatrixCurve,
                            h: SpectralField) -> float:
    """Relative max-norm gap between ``R (U eta)`` and ``D U eta_xx + Q U eta``."""
    lhs = to_nodal(apply_R(sys, lin.B0, lin.B, h))
    rhs = transformed_R(sys, lin, U, V, h)
    return float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(lhs)), 1e-300))


def smooth_periodic(grid, m: int, rng: np.random.Generator, band: int | None = None) -> SpectralField:
    """Random real field with modes ``|k| <= band`` and geometrically decaying amplitudes."""
    band = band or grid.N // 8
    nodal = np.zeros((m, grid.N))
    x = grid.x
    for k in range(band + 1):
        amp = np.exp(-0.25 * k)
        a, b = rng.standard_normal((2, m)) * amp
        nodal += a[:, None] * np.cos(2 * np.pi * k * x) + (b[:, None] * np.sin(2 * np.pi * k * x) if k else 0)
    return to_spectral(nodal, grid)


@dataclass
class DecompositionReport:
    verdict: str
    residuals: list
    max_residual: float | None
    omega_spread: float | None
    monodromy_spread: float | None = None
    n_pairs: int = 0

    def to_dict(self):
        return dict(verdict=self.verdict, max_residual=self.max_residual, omega_spread=self.omega_spread,
                    monodromy_spread=self.monodromy_spread, n_pairs=self.n_pairs,
                    residuals=[float(r) for r in self.residuals])


def probe_decomposition(sys: RDCSystem, sample, max_pairs: int = 8, seed: int = 0,
                        monodromy: bool = True) -> DecompositionReport:
    """Residual of ``G(u) - G(v) = R h`` per pair, ``omega``-independence of ``(T0 - T) h``,
    and (for commuting diffusion) agreement of ``R h`` with the fundamental-solution form."""
    from .monodromy import solve_U, solve_V

    fields = _fields(sample)
    pairs = [p for p in select_pairs(len(fields), max_pairs, seed) if p[0] != p[1]]
    if not pairs:
        return DecompositionReport("inconclusive", [], None, None)
    residuals, spreads, mono = [], [], []
    for a, b in pairs:
        u, v = fields[a], fields[b]
        lin = linearize(sys, u, v)
        res, denom = decomposition_residual(sys, u, v, lin)
        if denom == 0:
            continue
        residuals.append(res)
        spreads.append(omega_independence(sys, lin, u - v))
        if monodromy:
            mono.append(transformation_residual(sys, lin, solve_U(lin.B, sys.D), solve_V(lin.B, sys.D), u - v))
    if not residuals:
        return DecompositionReport("inconclusive", [], None, None)
    return DecompositionReport("ok", residuals, max(residuals), max(spreads),
                               max(mono) if mono else None, len(residuals))


def conjugation_residual(sys: RDCSystem, lin: Linearization, U: MatrixCurve, cert, omega: float,
                         k_list=(0, 1, 2)) -> float:
    """Worst ``||T(U psi) - lambda U psi|| / ||lambda U psi||`` over built eigenfunctions.

    ``U psi`` is periodic, so the transformed operator ``T = T0 - R`` is
    applied spectrally (separately to real and imaginary parts).
    """
    from .spectrum import eigenfunction, lattice

    grid = U.grid
    K = max(abs(k) for k in k_list)
    lam = lattice(cert, sys.D, omega, K)
    worst = 0.0
    for k in k_list:
        for j in range(U.m):
            phi = np.einsum("pij,jp->ip", U.values, eigenfunction(cert, j, k, grid.x))
            out = np.zeros_like(phi)
            for part, unit in ((phi.real, 1.0), (phi.imag, 1j)):
                out = out + unit * to_nodal(apply_T(sys, lin, omega, to_spectral(part, grid)))
            target = lam[j, K + k] * phi
            worst = max(worst, float(np.max(np.abs(out - target)) / np.max(np.abs(target))))
    return worst
