"""Fundamental solutions on [0, 1], monodromy certificates and matrix logarithms.

``U`` solves ``U_x = -1/2 D^{-1} B(x) U`` and ``V`` solves
``V_x = 1/2 V D^{-1} B(x)``, both from the identity at ``x = 0``; ``V = U^{-1}``.
The monodromy ``V(1)`` decides whether the transformed operator is similar
to a normal one with explicitly known spectrum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import CommutatorToleranceExceeded, DomainFault, StepSizeFailure
from .grid import DiffusionMatrix, fourier_interp
from .linearization import MatrixCurve

log = logging.getLogger(__name__)

PD_TOL = 1e-8
SYM_TOL = 1e-8
STRUCT_TOL = 1e-10
COMMUTATOR_TOL = 1e-10


# -- Cauchy problems ------------------------------------------------------------


def _generator_fine(B: MatrixCurve, D: DiffusionMatrix, n_fine: int) -> np.ndarray:
    """``D^{-1} B`` trigonometrically interpolated to ``n_fine + 1`` points of [0, 1]."""
    A = B.values / D.d[None, :, None]
    half = np.fft.rfft(A, axis=0) / B.grid.N
    fine = np.moveaxis(fourier_interp(np.moveaxis(half, 0, -1), B.grid.N, n_fine), -1, 0)
    return np.concatenate([fine, fine[:1]], axis=0)


def _rk4(Af: np.ndarray, n_steps: int, right: bool) -> np.ndarray:
    """Classical RK4 for ``Y' = Af Y`` (or ``Y Af`` when ``right``) on [0, 1].

    ``Af`` holds the generator at the ``2 n_steps + 1`` half-step points.
    Returns ``Y`` at every step boundary, shape ``(n_steps + 1, m, m)``.
    """
    m = Af.shape[-1]
    h = 1.0 / n_steps
    Y = np.eye(m)
    out = np.empty((n_steps + 1, m, m))
    out[0] = Y
    for s in range(n_steps):
        A0, Ah, A1 = Af[2 * s], Af[2 * s + 1], Af[2 * s + 2]
        if right:
            k1 = Y @ A0
            k2 = (Y + 0.5 * h * k1) @ Ah
            k3 = (Y + 0.5 * h * k2) @ Ah
            k4 = (Y + h * k3) @ A1
        else:
            k1 = A0 @ Y
            k2 = Ah @ (Y + 0.5 * h * k1)
            k3 = Ah @ (Y + 0.5 * h * k2)
            k4 = A1 @ (Y + h * k3)
        Y = Y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[s + 1] = Y
    return out


def _solve(B: MatrixCurve, D: DiffusionMatrix, sign: float, right: bool, kind: str,
           substeps: int, tol: float, max_refine: int) -> MatrixCurve:
    N = B.grid.N
    s = max(4, int(substeps))

    def run(s):
        Af = sign * 0.5 * _generator_fine(B, D, 2 * N * s)
        return _rk4(Af, N * s, right)[::s]

    coarse = run(s)
    for level in range(max_refine + 1):
        fine = run(2 * s)
        scale = max(1.0, float(np.max(np.abs(fine))))
        err = float(np.max(np.abs(fine - coarse))) / (15.0 * scale)
        s *= 2
        coarse = fine
        if err <= tol:
            break
    else:
        if err > 1e-8:
            raise StepSizeFailure(f"RK4 error estimate {err:.2e} exceeds 1e-8 after refinement cap")
    return MatrixCurve(fine[:-1], B.grid, kind=kind, end=fine[-1],
                       meta=dict(substeps=s, error_estimate=err))


def solve_U(B: MatrixCurve, D: DiffusionMatrix, substeps: int = 4, tol: float = 1e-13,
            max_refine: int = 4) -> MatrixCurve:
    """Fundamental solution of ``U_x = -1/2 D^{-1} B U`` on the nodes plus ``x = 1``.

    RK4 with Richardson refinement: the step is halved until the estimated
    error falls below ``tol``; failing to reach ``1e-8`` raises.
    """
    return _solve(B, D, -1.0, False, "U", substeps, tol, max_refine)


def solve_V(B: MatrixCurve, D: DiffusionMatrix, substeps: int = 4, tol: float = 1e-13,
            max_refine: int = 4) -> MatrixCurve:
    """Fundamental solution of the adjoint problem ``V_x = 1/2 V D^{-1} B``."""
    return _solve(B, D, 1.0, True, "V", substeps, tol, max_refine)


def _max_commutator(M: np.ndarray) -> float:
    comm = np.einsum("aij,bjk->abik", M, M) - np.einsum("bij,ajk->abik", M, M)
    return float(np.max(np.abs(comm)))


def cumulative_integral(values: np.ndarray, grid) -> tuple[np.ndarray, np.ndarray]:
    """``int_0^x M`` for periodic nodal data; returns (values at nodes, value at 1)."""
    N = grid.N
    c = np.fft.fft(values, axis=0) / N
    k = grid.k.copy()
    k[N // 2] = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(k != 0, 1.0 / (2j * np.pi * k), 0.0)
    shape = (N,) + (1,) * (values.ndim - 1)
    ck = c * factor.reshape(shape)
    periodic_part = np.fft.ifft(ck, axis=0).real * N - ck.sum(axis=0).real
    x = grid.x.reshape(shape)
    return c[0].real * x + periodic_part, c[0].real


def explicit_U_commuting(W: MatrixCurve, C: np.ndarray | None = None, tol: float = COMMUTATOR_TOL) -> MatrixCurve:
    """``U(x) = C exp(-1/2 int_0^x W) C^{-1}`` for a commuting family ``W``.

    Refuses when some ``||[W(x_i), W(x_j)]||`` exceeds ``tol * max ||W||^2``.
    """
    m = W.m
    C = np.eye(m) if C is None else np.asarray(C, dtype=float)
    scale = float(np.max(np.abs(W.values))) ** 2
    comm = _max_commutator(W.values)
    if comm > tol * scale + 1e-300:
        raise CommutatorToleranceExceeded(f"commutator {comm:.2e} exceeds {tol:.0e} * max|W|^2")
    integral, total = cumulative_integral(W.values, W.grid)
    Ubar = expm(-0.5 * integral)
    Cinv = np.linalg.inv(C)
    return MatrixCurve(C @ Ubar @ Cinv, W.grid, kind="U", end=C @ expm(-0.5 * total) @ Cinv,
                       meta=dict(commutator=comm))


# -- matrix logarithm -------------------------------------------------------------


def _sqrtm_db(V: np.ndarray, max_iter: int = 60) -> np.ndarray:
    """Denman-Beavers square root; spectrum must avoid the closed negative axis."""
    Y, Z = V.copy(), np.eye(V.shape[0])
    for _ in range(max_iter):
        Yn = 0.5 * (Y + np.linalg.inv(Z))
        Z = 0.5 * (Z + np.linalg.inv(Y))
        done = np.max(np.abs(Yn - Y)) <= 1e-15 * np.max(np.abs(Yn))
        Y = Yn
        if done:
            break
    return Y


def _series_bounds(V: np.ndarray, b: float | None):
    ev = np.linalg.eigvals(V)
    scale = float(np.max(np.abs(ev)))
    if np.max(np.abs(ev.imag)) > 1e-10 * scale or np.min(ev.real) <= 0:
        raise DomainFault("matrix logarithm series needs a real positive spectrum")
    c1, c2 = float(np.min(ev.real)), float(np.max(ev.real))
    b = 2.0 * c2 if b is None else float(b)
    delta = 1.0 - c1 / b
    if not (0 <= delta < 1) or c2 / b - 1.0 >= 0:
        raise DomainFault(f"spectrum of V/b - E must lie in (-delta, 0) with delta < 1 (b={b:g})")
    return c1, c2, b, delta


def _terms_needed(delta: float, tol: float) -> float:
    if delta <= 0:
        return 1
    n = 1
    while delta**n / (n * (1 - delta)) >= tol:
        n = max(n + 1, int(n * 1.25))
        if n > 10**8:
            break
    return n


@dataclass
class LogSeriesInfo:
    b: float
    delta: float
    terms: int
    n_sqrt: int
    last_term_norm: float
    tail_bound: float
    partial_sums: list = field(default_factory=list, repr=False)


def matrix_log_series(V, b: float | None = None, tol: float = 1e-14, max_terms: int = 500,
                      return_info: bool = False, keep_partial_sums: bool = False):
    """Logarithm via ``ln V = ln(b) E + sum_n (-1)^(n-1)/n (V/b - E)^n``.

    ``b`` defaults to twice the largest eigenvalue.  When the contraction
    ``delta = 1 - c1/b`` is too close to one for the series to reach ``tol``
    within ``max_terms``, square roots are taken first (Denman-Beavers) and
    the result is scaled back by ``2**s``; the series itself is unchanged.
    """
    V = np.asarray(V, dtype=float)
    m = V.shape[0]
    c1, c2, b, delta = _series_bounds(V, b)
    n_sqrt = 0
    W, bw, dw = V, b, delta
    while _terms_needed(dw, tol) > max_terms:
        W = _sqrtm_db(W)
        n_sqrt += 1
        c1w, c2w, bw, dw = _series_bounds(W, None)
    X = W / bw - np.eye(m)
    S = np.zeros((m, m))
    P = np.eye(m)
    partial = []
    n, term_norm = 0, np.inf
    for n in range(1, max_terms + 1):
        P = P @ X
        term = ((-1) ** (n - 1) / n) * P
        S = S + term
        if keep_partial_sums:
            partial.append(np.log(bw) * np.eye(m) + S)
        term_norm = float(np.linalg.norm(term, 2))
        if term_norm < tol:
            break
    L = (2.0**n_sqrt) * (np.log(bw) * np.eye(m) + S)
    if not return_info:
        return L
    tail = dw ** (n + 1) / ((n + 1) * (1 - dw)) if dw < 1 else np.inf
    return L, LogSeriesInfo(b=bw, delta=dw, terms=n, n_sqrt=n_sqrt, last_term_norm=term_norm,
                            tail_bound=float(tail), partial_sums=partial)


def fractional_power(V, x: float, logV: np.ndarray | None = None) -> np.ndarray:
    """``V^{-x} = exp(-x ln V)``."""
    L = matrix_log_series(V) if logV is None else logV
    return expm(-x * L)


# -- certificates -----------------------------------------------------------------

VERDICTS = ("positive_definite", "similar_positive_definite", "diagonal_positive_definite", "failed")
ROUTES = ("remark42a", "remark42b", "similarity_445", "direct_symmetric_eig")


@dataclass
class MonodromyCertificate:
    U1: np.ndarray
    V1: np.ndarray
    C: np.ndarray
    V_script: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    logV: np.ndarray | None
    b: float | None
    delta: float | None
    c1: float | None
    c2: float | None
    pd_verdict: str
    pd_route: str | None
    pairing_error: float
    notes: list = field(default_factory=list)
    U: MatrixCurve | None = field(default=None, repr=False)
    V: MatrixCurve | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.pd_verdict != "failed"

    @property
    def is_diagonal(self) -> bool:
        return self.pd_verdict == "diagonal_positive_definite"

    def to_dict(self) -> dict:
        def mat(a):
            if a is None:
                return None
            a = np.asarray(a)
            if np.iscomplexobj(a):
                return [[[float(z.real), float(z.imag)] for z in row] for row in np.atleast_2d(a)]
            return np.atleast_2d(a).tolist()

        mu = np.asarray(self.mu)
        return dict(
            pd_verdict=self.pd_verdict, pd_route=self.pd_route,
            U1=mat(self.U1), V1=mat(self.V1), C=mat(self.C), V_script=mat(self.V_script),
            mu=[[float(z.real), float(z.imag)] for z in mu.astype(complex)],
            logV=mat(self.logV), b=self.b, delta=self.delta, c1=self.c1, c2=self.c2,
            pairing_error=self.pairing_error, notes=list(self.notes),
        )


def _is_pd_symmetric(M: np.ndarray) -> tuple[bool, float]:
    norm = float(np.linalg.norm(M, 2))
    asym = float(np.linalg.norm(M - M.T, 2))
    if asym > SYM_TOL * norm:
        return False, asym / norm
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    return bool(ev.min() >= PD_TOL * norm), asym / norm


def _offdiag(M: np.ndarray) -> float:
    return float(np.max(np.abs(M - np.diag(np.diag(M)))))


def certify_pd(B: MatrixCurve, D: DiffusionMatrix, C_hint: np.ndarray | None = None,
               keep_curves: bool = False) -> MonodromyCertificate:
    """Certify that the monodromy ``V(1)`` is (similar to) positive definite.

    Routes, first success wins:

    ``remark42a``
        ``D^{-1} B(x)`` symmetric and pairwise commuting; ``U(1)`` is the explicit
        exponential of the mean generator.
    ``remark42b``
        ``(D^{-1} B(x))^T = D^{-1} B(1 - x)`` on the grid; ``V(1)`` is solved and
        checked symmetric positive definite.
    ``similarity_445``
        ``C_hint`` is a common eigenbasis ``P`` with ``D^{-1} f = P H P^{-1}``;
        ``V_script = P^{-1} V(1) P`` must be symmetric positive definite.
    ``direct_symmetric_eig``
        ``V(1)`` itself is symmetric positive definite.

    ``C`` in the certificate is the similarity with ``V_script = C V1 C^{-1}``
    (so ``C = P^{-1}`` on the similarity route).
    """
    m, N = B.m, B.grid.N
    A = B.values / D.d[None, :, None]
    scale = max(float(np.max(np.abs(A))), 1e-300)
    E = np.eye(m)
    notes = ["c3 (time-derivative bound of V_script) not estimated; b = 2 c2"]

    U = V = None
    sym_ok = float(np.max(np.abs(A - np.swapaxes(A, 1, 2)))) <= STRUCT_TOL * scale + 1e-12
    route, C, U1, V1 = None, E, None, None
    if sym_ok and _max_commutator(A) <= COMMUTATOR_TOL * scale**2 + 1e-12:
        mean = A.mean(axis=0)
        U1, V1 = expm(-0.5 * mean), expm(0.5 * mean)
        if keep_curves:
            U = explicit_U_commuting(MatrixCurve(A, B.grid, kind="W"))
        route = "remark42a"
    if route is None or keep_curves:
        U = U if U is not None else solve_U(B, D)
        V = solve_V(B, D)
        if U1 is None:
            U1, V1 = U.end, V.end
    pairing = float(np.max(np.abs(U1 @ V1 - E)))

    candidates = []
    if route == "remark42a":
        candidates.append(("remark42a", E))
    reflect = A[(-np.arange(N)) % N]
    if float(np.max(np.abs(np.swapaxes(A, 1, 2) - reflect))) <= STRUCT_TOL * scale + 1e-12:
        candidates.append(("remark42b", E))
    if C_hint is not None:
        candidates.append(("similarity_445", np.linalg.inv(np.asarray(C_hint, dtype=float))))
    candidates.append(("direct_symmetric_eig", E))

    for name, Cm in candidates:
        Vs = Cm @ V1 @ np.linalg.inv(Cm)
        ok, asym = _is_pd_symmetric(Vs)
        if not ok:
            continue
        Vs = 0.5 * (Vs + Vs.T)
        b_is_diag = float(np.max(np.abs(B.values - np.einsum("nii->ni", B.values)[:, :, None] * E))) <= 1e-12 * max(1.0, scale)
        if name in ("remark42a", "direct_symmetric_eig") and b_is_diag and _offdiag(Vs) <= 1e-12 * np.abs(Vs).max():
            verdict = "diagonal_positive_definite"
            mu, phi = np.diag(Vs).copy(), E.copy()
        else:
            verdict = "similar_positive_definite" if name == "similarity_445" else "positive_definite"
            mu, phi = np.linalg.eigh(Vs)
        logV, info = matrix_log_series(Vs, return_info=True)
        return MonodromyCertificate(
            U1=U1, V1=V1, C=Cm, V_script=Vs, mu=mu, phi=phi, logV=logV, b=info.b * 1.0,
            delta=info.delta, c1=float(mu.min()), c2=float(mu.max()), pd_verdict=verdict,
            pd_route=name, pairing_error=pairing, notes=notes + [f"log series: {info.terms} terms, {info.n_sqrt} square roots"],
            U=U, V=V,
        )
    mu, phi = np.linalg.eig(V1)
    return MonodromyCertificate(
        U1=U1, V1=V1, C=E, V_script=V1, mu=mu, phi=phi, logV=None, b=None, delta=None,
        c1=None, c2=None, pd_verdict="failed", pd_route=None, pairing_error=pairing,
        notes=notes + ["no route established a positive definite monodromy"], U=U, V=V,
    )
