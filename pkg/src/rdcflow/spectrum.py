"""Eigenvalue lattice of the transformed operator, sector inclusion and spectral gaps.

For a positive definite monodromy with eigenvalues ``mu_j`` the operator
``omega - D d_xx`` with boundary relation ``eta(1) = V(1) eta(0)`` has
eigenvalues ``lambda_{k,j} = omega + d_j (2 pi k - i ln mu_j)^2`` and
eigenfunctions ``psi_{k,j}(x) = mu_j^x e^{2 pi i k x} C^{-1} phi_j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eig

from .errors import RouteMismatch
from .grid import DiffusionMatrix
from .monodromy import MonodromyCertificate

THETA = 0.5
SECTOR_SLACK = 1e-6


def beta_rule(alpha: float, theta: float = THETA) -> float:
    """Gap exponent: ``alpha/2`` when ``theta <= alpha/2``, else ``(alpha + theta)/3``."""
    return alpha / 2.0 if theta <= alpha / 2.0 else (alpha + theta) / 3.0


def _log_mu(cert: MonodromyCertificate) -> np.ndarray:
    mu = np.asarray(cert.mu)
    if np.iscomplexobj(mu):
        mu = mu.real
    return np.log(mu)


def sector_constant(certs, D: DiffusionMatrix) -> float:
    """``c = 2 max_j sqrt(d_j) |ln mu_j|`` (times a tiny slack) over all certificates."""
    worst = 0.0
    for cert in certs:
        worst = max(worst, float(np.max(np.sqrt(D.d) * np.abs(_log_mu(cert)))))
    return 2.0 * worst * (1.0 + SECTOR_SLACK) + 1e-12


def in_sector(lam: np.ndarray, c: float, theta: float = THETA) -> np.ndarray:
    """``|Im z| <= c (Re z)^theta`` with ``Re z > 0`` (boundary counted in)."""
    lam = np.asarray(lam)
    re = lam.real
    ok = re > 0
    bound = c * np.where(ok, re, 0.0) ** theta
    return ok & (np.abs(lam.imag) <= bound * (1 + 1e-12) + 1e-12)


@dataclass
class SpectrumReport:
    omega: float
    K: int
    lam: np.ndarray                      # shape (n_pairs, m, 2K+1), complex
    sector: tuple
    beta: float | None = None
    strips: list = field(default_factory=list)   # (n, a_n, xi_n)
    gap_ok: bool | None = None
    gap_verdict: str = "not_run"
    notes: list = field(default_factory=list)

    @property
    def ks(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    def to_dict(self) -> dict:
        return dict(
            omega=self.omega, K=self.K, sector=dict(c=self.sector[0], theta=self.sector[1]),
            beta=self.beta, gap_ok=self.gap_ok, gap_verdict=self.gap_verdict,
            strips=[dict(n=int(n), a=float(a), xi=float(x)) for n, a, x in self.strips],
            n_pairs=int(self.lam.shape[0]), notes=list(self.notes),
        )


def lattice(cert: MonodromyCertificate, D: DiffusionMatrix, omega: float, K: int) -> np.ndarray:
    """``lambda_{k,j}`` for ``|k| <= K``; shape ``(m, 2K+1)``."""
    if cert.pd_verdict == "failed":
        raise RouteMismatch("eigenvalue lattice needs a positive definite certificate")
    if not D.is_scalar and cert.pd_verdict != "diagonal_positive_definite":
        raise RouteMismatch("non-scalar diffusion requires a diagonal monodromy certificate")
    ln_mu = _log_mu(cert)
    k = np.arange(-K, K + 1)
    d = D.d[:, None]
    return omega + d * (2 * np.pi * k[None, :] - 1j * ln_mu[:, None]) ** 2


def eig_lattice(cert: MonodromyCertificate, D: DiffusionMatrix, omega: float, K: int,
                certs_for_sector=None) -> SpectrumReport:
    """Single-certificate spectrum report (use :func:`union_lattice` for many pairs)."""
    return union_lattice([cert], D, omega, K, certs_for_sector)


def union_lattice(certs, D: DiffusionMatrix, omega: float, K: int, certs_for_sector=None) -> SpectrumReport:
    lam = np.stack([lattice(c, D, omega, K) for c in certs])
    c = sector_constant(certs_for_sector or certs, D)
    report = SpectrumReport(omega=float(omega), K=int(K), lam=lam, sector=(c, THETA))
    if not np.all(in_sector(lam, c)):
        report.notes.append("lattice leaves the sector; omega too small")
    return report


def choose_omega(certs, D: DiffusionMatrix, K: int = 8, max_doublings: int = 60) -> float:
    """Smallest ``omega`` in ``{1, 2, 4, ...}`` with ``Re lambda >= 1`` and sector inclusion."""
    c = sector_constant(certs, D)
    omega = 1.0
    for _ in range(max_doublings):
        lam = np.stack([lattice(cert, D, omega, K) for cert in certs])
        if np.all(lam.real >= 1.0) and np.all(in_sector(lam, c)):
            return omega
        omega *= 2.0
    return omega


def _clusters(values: np.ndarray, threshold: float) -> list:
    v = np.sort(np.asarray(values).ravel())
    splits = np.nonzero(np.diff(v) > threshold)[0]
    bounds = np.split(v, splits + 1)
    return [(b[0], b[-1]) for b in bounds]


def gap_check(report: SpectrumReport, alpha: float, D: DiffusionMatrix | None = None,
              theta: float = THETA) -> SpectrumReport:
    """Locate spectrum-free vertical strips and test ``a_n^beta / xi_n`` decay.

    Real parts of the union lattice are clustered (split where consecutive
    values are further apart than ``2 pi^2 min d``); strip ``n`` sits between
    cluster ``n-1`` and cluster ``n`` with centre ``a_n`` and half-width
    ``xi_n``.  Only clusters reached by every mode ``|k| <= K`` are used.

    The verdict is a finite-data consistency check: the ratio must be strictly
    decreasing over the upper half of the strips and stay within a factor two
    of the predicted ``n^(2 beta - 1)`` law.
    """
    beta = beta_rule(alpha, theta)
    report.beta = beta
    dmin = float(np.min(D.d)) if D is not None else 1.0
    re = report.lam.real
    # the largest fully resolved real part: beyond it modes |k| > K would interleave
    ceiling = float(np.min(re[..., [0, -1]]))
    clusters = [cl for cl in _clusters(re, 2 * np.pi**2 * dmin) if cl[1] <= ceiling]
    strips = []
    for n in range(1, len(clusters)):
        lo, hi = clusters[n - 1][1], clusters[n][0]
        strips.append((n, 0.5 * (lo + hi), 0.5 * (hi - lo)))
    report.strips = strips
    if len(strips) < 3:
        report.gap_ok, report.gap_verdict = None, "inconclusive"
        return report
    n = np.array([s[0] for s in strips], dtype=float)
    a = np.array([s[1] for s in strips])
    xi = np.array([s[2] for s in strips])
    top = slice(len(strips) // 2, None)
    ratio = np.abs(a[top]) ** beta / xi[top]
    decreasing = bool(np.all(np.diff(ratio) < 0))
    predicted = ratio[0] * (n[top] / n[top][0]) ** (2 * beta - 1)
    fits = bool(np.all((ratio / predicted <= 2.0) & (ratio / predicted >= 0.5)))
    report.gap_ok = decreasing and fits
    report.gap_verdict = "asymptotics_consistent" if report.gap_ok else "fail"
    return report


# -- eigenfunctions of the boundary-value operator ---------------------------------------


def chebyshev_nodes(n: int):
    """Chebyshev points on [0, 1] and first-derivative matrix (Trefethen's ``cheb``)."""
    xc = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.r_[2.0, np.ones(n - 1), 2.0] * (-1.0) ** np.arange(n + 1)
    dX = xc[:, None] - xc[None, :]
    Dm = np.outer(c, 1.0 / c) / (dX + np.eye(n + 1))
    Dm -= np.diag(Dm.sum(axis=1))
    return 0.5 * (xc + 1.0), 2.0 * Dm


@dataclass
class Eigenpair:
    k: int
    j: int
    lam: complex
    x: np.ndarray                # evaluation points on [0, 1]
    psi: np.ndarray              # shape (m, len(x)), complex
    psi0: np.ndarray
    psi1: np.ndarray
    dpsi0: np.ndarray
    dpsi1: np.ndarray


def eigenfunction(cert: MonodromyCertificate, j: int, k: int, x: np.ndarray) -> np.ndarray:
    """``psi_{k,j}(x) = mu_j^x e^{2 pi i k x} C^{-1} phi_j``, shape ``(m, len(x))``."""
    s = _log_mu(cert)[j] + 2j * np.pi * k
    vec = np.linalg.solve(cert.C, np.asarray(cert.phi)[:, j])
    return vec[:, None] * np.exp(s * np.asarray(x))[None, :]


def build_H0_eigenpairs(cert: MonodromyCertificate, D: DiffusionMatrix, omega: float, k_list,
                        n_cheb: int = 48) -> list:
    lam = lattice(cert, D, omega, max(abs(int(k)) for k in k_list))
    K = (lam.shape[1] - 1) // 2
    x, _ = chebyshev_nodes(n_cheb)
    ln_mu = _log_mu(cert)
    out = []
    for k in k_list:
        for j in range(len(ln_mu)):
            s = ln_mu[j] + 2j * np.pi * k
            psi = eigenfunction(cert, j, k, x)
            p0 = eigenfunction(cert, j, k, [0.0])[:, 0]
            p1 = eigenfunction(cert, j, k, [1.0])[:, 0]
            out.append(Eigenpair(int(k), j, complex(lam[j, K + k]), x, psi, p0, p1, s * p0, s * p1))
    return out


def eigen_residual(pair: Eigenpair, D: DiffusionMatrix, omega: float) -> float:
    """``||(omega - D d_xx) psi - lambda psi|| / ||psi||`` by Chebyshev collocation."""
    n = len(pair.x) - 1
    _, D1 = chebyshev_nodes(n)
    D2 = D1 @ D1
    lhs = omega * pair.psi - D.d[:, None] * (pair.psi @ D2.T)
    return float(np.linalg.norm(lhs - pair.lam * pair.psi) / np.linalg.norm(pair.psi))


def boundary_residual(pair: Eigenpair, V1: np.ndarray) -> tuple[float, float]:
    """Errors in ``psi(1) = V1 psi(0)`` and ``psi'(1) = V1 psi'(0)``."""
    return (float(np.linalg.norm(pair.psi1 - V1 @ pair.psi0)),
            float(np.linalg.norm(pair.dpsi1 - V1 @ pair.dpsi0)))


def discrete_H0_eigenvalues(V1: np.ndarray, D: DiffusionMatrix, omega: float, n_cheb: int = 64) -> np.ndarray:
    """Finite eigenvalues of the collocated ``omega - D d_xx`` with the monodromy boundary rows.

    Boundary rows (one per component for values and for slopes) replace the
    interior equations at ``x = 0`` and ``x = 1``; the resulting pencil is
    solved as a generalized eigenproblem and infinite eigenvalues discarded.
    """
    m = V1.shape[0]
    x, D1 = chebyshev_nodes(n_cheb)
    n1 = n_cheb + 1
    D2 = D1 @ D1
    i0, i1 = int(np.argmin(x)), int(np.argmax(x))
    A = np.zeros((m * n1, m * n1))
    Bm = np.zeros_like(A)
    for j in range(m):
        blk = slice(j * n1, (j + 1) * n1)
        A[blk, blk] = omega * np.eye(n1) - D.d[j] * D2
        Bm[blk, blk] = np.eye(n1)
    for i in range(m):
        r_val, r_der = i * n1 + i0, i * n1 + i1
        A[r_val] = 0.0
        A[r_der] = 0.0
        Bm[r_val] = 0.0
        Bm[r_der] = 0.0
        A[r_val, i * n1 + i1] += 1.0
        A[r_der, i * n1:(i + 1) * n1] += D1[i1]
        for j in range(m):
            A[r_val, j * n1 + i0] -= V1[i, j]
            A[r_der, j * n1:(j + 1) * n1] -= V1[i, j] * D1[i0]
    w = eig(A, Bm, right=False)
    return w[np.isfinite(w)]


def match_discrete(lams, discrete: np.ndarray) -> float:
    """Largest relative distance from each lattice value to its nearest discrete eigenvalue."""
    worst = 0.0
    for lam in np.atleast_1d(lams):
        worst = max(worst, float(np.min(np.abs(discrete - lam)) / max(1.0, abs(lam))))
    return worst
