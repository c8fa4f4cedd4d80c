"""Structural checks on the convection matrix and the final certification verdict.

Every check evaluates ``f(x, u)`` on a finite set of states drawn from the
sampled attractor, its convex hull and a box ``|u| <= r`` around it.  A pass
is evidence on those samples, not a proof for the whole hull; the report
wording says so.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grid import DiffusionMatrix, Grid, to_nodal
from .integrate import AttractorSample
from .model import RDCSystem

log = logging.getLogger(__name__)

VERDICTS = ("pass", "fail", "inconclusive")
CONDITION_IDS = (
    "assumption35", "thm43_diagonal", "thm45_distinct_commuting", "thm46_symmetric_commuting",
    "lemma44_similarity", "prop51i", "prop51ii", "remark52", "example53", "example54", "prop55",
)
FLOOR = 1e-12
COMMUTE_TOL = 1e-10
DISTINCT_TOL = 1e-6
REAL_TOL = 1e-8
BASIS_TOL = 1e-8
PAIR_BUDGET = 10_000

SAMPLE_NOTE = "verified on sampled states only; evidence, not proof, for the whole convex hull"


@dataclass
class StateSamples:
    """Flat list of ``(x, u)`` states, ``x`` shape ``(P,)``, ``u`` shape ``(m, P)``."""

    x: np.ndarray
    u: np.ndarray
    r: float = 0.0

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx) -> "StateSamples":
        return StateSamples(self.x[idx], self.u[:, idx], self.r)

    def conv(self, sys: RDCSystem) -> np.ndarray:
        return sys.conv(self.x, self.u)


def collect_samples(sample: AttractorSample, n_box: int = 512, seed: int = 0,
                    include_hull: bool = True) -> StateSamples:
    """Snapshot nodes, hull-point nodes and a box sweep over ``|u| <= 1.1 max|u|``."""
    grid = sample.grid
    fields = list(sample.snapshots) + (list(sample.hull_points) if include_hull else [])
    nodal = np.concatenate([to_nodal(f) for f in fields], axis=1)
    xs = np.tile(grid.x, len(fields))
    r = 1.1 * float(np.max(np.linalg.norm(nodal, axis=0)))
    if n_box > 0:
        rng = np.random.default_rng(seed)
        m = nodal.shape[0]
        direction = rng.standard_normal((m, n_box))
        direction /= np.linalg.norm(direction, axis=0)
        radius = r * rng.random(n_box) ** (1.0 / m)
        nodal = np.concatenate([nodal, direction * radius], axis=1)
        xs = np.concatenate([xs, rng.random(n_box)])
    return StateSamples(xs, nodal, r)


def box_samples(m: int, r: float = 1.0, n: int = 512, seed: int = 0) -> StateSamples:
    """Uniform states in ``[0,1) x {|u| <= r}`` (used when no attractor sample exists)."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal((m, n))
    direction /= np.linalg.norm(direction, axis=0)
    return StateSamples(rng.random(n), direction * r * rng.random(n) ** (1.0 / m), r)


@dataclass
class ConditionReport:
    condition_id: str
    verdict: str
    violation: float = 0.0
    tolerance: float = 0.0
    witness: dict | None = None
    C_matrix: np.ndarray | None = None
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return dict(
            condition_id=self.condition_id, verdict=self.verdict, violation=float(self.violation),
            tolerance=float(self.tolerance), witness=self.witness,
            C_matrix=None if self.C_matrix is None else np.asarray(self.C_matrix).tolist(),
            detail=self.detail,
        )


def _witness(samples: StateSamples, i: int, magnitude: float, **extra) -> dict:
    return dict(x=float(samples.x[i]), u=samples.u[:, i].tolist(), magnitude=float(magnitude), **extra)


def _norms(mats: np.ndarray) -> np.ndarray:
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


# -- individual conditions -----------------------------------------------------------------


def check_assumption35(sys: RDCSystem, samples: StateSamples) -> ConditionReport:
    """``D f = f D`` relative to ``||f||``; automatic for scalar diffusion."""
    if sys.D.is_scalar:
        return ConditionReport("assumption35", "pass", 0.0, 1e-10, detail=dict(reason="scalar diffusion"))
    F = samples.conv(sys)
    d = sys.D.d
    comm = d[None, :, None] * F - F * d[None, None, :]
    rel = _norms(comm) / np.maximum(_norms(F), FLOOR)
    i = int(np.argmax(rel))
    verdict = "pass" if rel[i] <= 1e-10 else "fail"
    return ConditionReport("assumption35", verdict, float(rel[i]), 1e-10,
                           witness=_witness(samples, i, rel[i]) if verdict == "fail" else None)


def check_diagonal(sys: RDCSystem, samples: StateSamples) -> ConditionReport:
    """Largest off-diagonal entry of ``f`` over the samples."""
    F = samples.conv(sys)
    off = np.abs(F - np.einsum("pii->pi", F)[:, :, None] * np.eye(sys.m))
    per = off.reshape(len(samples), -1).max(axis=1)
    i = int(np.argmax(per))
    tol = max(FLOOR, FLOOR * float(np.max(np.abs(F))))
    verdict = "pass" if per[i] <= tol else "fail"
    return ConditionReport("thm43_diagonal", verdict, float(per[i]), tol,
                           witness=_witness(samples, i, per[i]) if verdict == "fail" else None)


def _pair_indices(n: int, budget: int, seed: int, anchor: int) -> tuple[np.ndarray, np.ndarray]:
    if n * (n - 1) // 2 <= budget:
        a, b = np.triu_indices(n, 1)
        return a, b
    rng = np.random.default_rng(seed)
    a = rng.integers(0, n, budget)
    b = rng.integers(0, n, budget)
    # every sample is also compared with the largest matrix so witnesses persist
    a = np.concatenate([a, np.arange(n)])
    b = np.concatenate([b, np.full(n, anchor)])
    return a, b


def max_commutator(F: np.ndarray, budget: int = PAIR_BUDGET, seed: int = 0):
    """Worst relative commutator ``||[A,B]|| / (||A|| ||B||)`` over sample pairs.

    Returns ``(relative, (i, j), failed)`` where ``failed`` means some pair
    exceeds ``1e-10 ||A|| ||B|| + 1e-12``; the witness is then the worst
    failing pair.
    """
    norms = _norms(F)
    a, b = _pair_indices(len(F), budget, seed, int(np.argmax(norms)))
    worst, where, failed = 0.0, (0, 0), False
    for start in range(0, len(a), 4096):
        ia, ib = a[start:start + 4096], b[start:start + 4096]
        cn = _norms(F[ia] @ F[ib] - F[ib] @ F[ia])
        rel = cn / np.maximum(norms[ia] * norms[ib], FLOOR)
        exceed = cn > COMMUTE_TOL * norms[ia] * norms[ib] + FLOOR
        if exceed.any() and not failed:
            worst, failed = 0.0, True
        pool = np.where(exceed, rel, -1.0) if failed else rel
        k = int(np.argmax(pool))
        if pool[k] > worst:
            worst, where = float(pool[k]), (int(ia[k]), int(ib[k]))
    return worst, where, failed


def check_commuting_family(sys: RDCSystem, samples: StateSamples, require: str = "symmetric",
                           budget: int = PAIR_BUDGET, seed: int = 0) -> ConditionReport:
    """Pairwise commutativity plus an eigen-structure requirement at every sample.

    ``require="symmetric"`` asks for symmetric matrices; ``"distinct_real_eigs"``
    for ``m`` real eigenvalues separated by at least ``1e-6`` times the scale.
    """
    cid = {"symmetric": "thm46_symmetric_commuting",
           "distinct_real_eigs": "thm45_distinct_commuting"}.get(require)
    if cid is None:
        raise ConfigError(f"unknown requirement {require!r}")
    if len(samples) < 2:
        return ConditionReport(cid, "inconclusive", detail=dict(reason="fewer than two samples"))
    F = samples.conv(sys)
    s = max(float(np.max(_norms(F))), FLOOR)
    rel, (i, j), failed = max_commutator(F, budget, seed)
    if failed:
        return ConditionReport(cid, "fail", rel, COMMUTE_TOL, witness=dict(
            _witness(samples, i, rel, stage="commutator"),
            x_other=float(samples.x[j]), u_other=samples.u[:, j].tolist()))
    if require == "symmetric":
        asym = _norms(F - np.swapaxes(F, 1, 2))
        k = int(np.argmax(asym))
        tol = COMMUTE_TOL * s + FLOOR
        if asym[k] > tol:
            return ConditionReport(cid, "fail", float(asym[k]), tol,
                                   witness=_witness(samples, k, asym[k], stage="symmetry"))
        return ConditionReport(cid, "pass", float(max(rel, asym[k] / s)), COMMUTE_TOL,
                               detail=dict(note=SAMPLE_NOTE, n_samples=len(samples)))
    ev = np.linalg.eigvals(F)
    imag = np.abs(ev.imag).max(axis=1)
    k = int(np.argmax(imag))
    if imag[k] > REAL_TOL * s:
        return ConditionReport(cid, "fail", float(imag[k]), REAL_TOL * s,
                               witness=_witness(samples, k, imag[k], stage="real_eigenvalues"))
    re = np.sort(ev.real, axis=1)
    gaps = np.diff(re, axis=1).min(axis=1) if sys.m > 1 else np.full(len(F), np.inf)
    k = int(np.argmin(gaps))
    if gaps[k] < DISTINCT_TOL * s:
        return ConditionReport(cid, "fail", float(gaps[k]), DISTINCT_TOL * s,
                               witness=_witness(samples, k, gaps[k], stage="distinct_eigenvalues"))
    return ConditionReport(cid, "pass", rel, COMMUTE_TOL,
                           detail=dict(note=SAMPLE_NOTE, n_samples=len(samples), min_gap=float(gaps[k])))


def _normalize_columns(P: np.ndarray) -> np.ndarray:
    P = P / np.linalg.norm(P, axis=0)
    for j in range(P.shape[1]):
        nz = np.nonzero(np.abs(P[:, j]) > 1e-12)[0]
        if len(nz) and P[nz[0], j] < 0:
            P[:, j] = -P[:, j]
    return P


def build_common_eigenbasis(mats: np.ndarray, require: str = "distinct_real_eigs", seed: int = 0,
                            retries: int = 3, max_combine: int = 64):
    """Common eigenbasis ``C`` (columns) of a commuting family, or ``None``.

    Diagonalises a random linear combination of (a subset of) the matrices;
    validates that ``C^{-1} M C`` is diagonal (``distinct_real_eigs``) or
    symmetric (``symmetric``) at every matrix to ``1e-8`` relative.
    """
    mats = np.asarray(mats, dtype=float)
    rng = np.random.default_rng(seed)
    scale = max(float(np.max(_norms(mats))), FLOOR)
    for attempt in range(retries):
        idx = rng.choice(len(mats), size=min(len(mats), max_combine), replace=False)
        combo = np.einsum("p,pij->ij", rng.standard_normal(len(idx)), mats[idx])
        if require == "symmetric":
            w, P = np.linalg.eigh(0.5 * (combo + combo.T))
        else:
            w, P = np.linalg.eig(combo)
            if np.max(np.abs(w.imag)) > REAL_TOL * max(1.0, np.max(np.abs(w))):
                continue
            w, P = w.real, P.real
            order = np.argsort(w)
            w, P = w[order], P[:, order]
        P = _normalize_columns(P)
        if np.linalg.cond(P) > 1e10:
            continue
        H = np.einsum("ij,pjk->pik", np.linalg.inv(P), mats @ P)
        if require == "symmetric":
            err = float(np.max(_norms(H - np.swapaxes(H, 1, 2))))
        else:
            err = float(np.max(np.abs(H - np.einsum("pii->pi", H)[:, :, None] * np.eye(H.shape[1]))))
        if err <= BASIS_TOL * scale:
            return P, dict(attempt=attempt, validation_error=err)
    return None, dict(attempt=retries, validation_error=None)


def check_similarity(sys: RDCSystem, samples: StateSamples, require: str = "distinct_real_eigs",
                     seed: int = 0) -> ConditionReport:
    """Common similarity ``D^{-1} f = C H C^{-1}`` with symmetric, commuting ``H``."""
    F = samples.conv(sys) / sys.D.d[None, :, None]
    C, info = build_common_eigenbasis(F, require, seed)
    if C is None:
        return ConditionReport("lemma44_similarity", "inconclusive", detail=dict(
            reason="eigenbasis validation failed after retries"))
    Cinv = np.linalg.inv(C)
    H = np.einsum("ij,pjk,kl->pil", Cinv, F, C)
    s = max(float(np.max(_norms(H))), FLOOR)
    asym = float(np.max(_norms(H - np.swapaxes(H, 1, 2)))) / s
    rel, _, _ = max_commutator(H, seed=seed)
    ok = asym <= BASIS_TOL and rel <= BASIS_TOL
    return ConditionReport("lemma44_similarity", "pass" if ok else "fail", max(asym, rel), BASIS_TOL,
                           C_matrix=C, detail=dict(info, note=SAMPLE_NOTE))


def _form(sys: RDCSystem) -> dict:
    return dict(sys.form or {})


def discriminant(Q) -> float:
    """``(q11 - q22)^2 + 4 q12 q21`` for a 2 x 2 matrix."""
    Q = np.asarray(Q, dtype=float)
    return float((Q[0, 0] - Q[1, 1]) ** 2 + 4.0 * Q[0, 1] * Q[1, 0])


def check_prop51(sys: RDCSystem, variant: str = "i", samples: StateSamples | None = None) -> ConditionReport:
    """Conditions for ``f = f1(x, u) Q`` with constant ``Q``.

    Variant ``"i"``: ``Q`` has distinct real eigenvalues (for ``m = 2`` the
    discriminant is positive) and ``f1`` does not vanish on the samples.
    Variant ``"ii"``: ``Q`` is symmetric.
    """
    form = _form(sys)
    if "Q" not in form or not str(form.get("kind", "")).startswith("prop51"):
        raise ConfigError("system is not of the scalar-times-constant-matrix form")
    Q = np.asarray(form["Q"], dtype=float)
    scale = max(float(np.max(np.abs(Q))), FLOOR)
    if variant == "ii":
        asym = float(np.max(np.abs(Q - Q.T)))
        return ConditionReport("prop51ii", "pass" if asym <= FLOOR * scale else "fail", asym, FLOOR * scale,
                               witness=None if asym <= FLOOR * scale else dict(Q=Q.tolist(), magnitude=asym))
    if variant != "i":
        raise ConfigError(f"unknown variant {variant!r}")
    if sys.m == 2:
        disc = discriminant(Q)
        eig_ok, detail = disc > 0, dict(discriminant=disc)
    else:
        ev = np.linalg.eigvals(Q)
        gaps = np.diff(np.sort(ev.real))
        eig_ok = bool(np.max(np.abs(ev.imag)) <= REAL_TOL * scale and np.min(gaps) >= DISTINCT_TOL * scale)
        detail = dict(eigenvalues=[[float(z.real), float(z.imag)] for z in ev])
    if not eig_ok:
        return ConditionReport("prop51i", "fail", float(detail.get("discriminant", 0.0)), 0.0,
                               witness=dict(Q=Q.tolist(), **detail), detail=detail)
    samples = samples if samples is not None else box_samples(sys.m, 1.0)
    F = samples.conv(sys)
    i0, j0 = np.unravel_index(int(np.argmax(np.abs(Q))), Q.shape)
    f1 = F[:, i0, j0] / Q[i0, j0]
    k = int(np.argmin(np.abs(f1)))
    if abs(f1[k]) <= FLOOR:
        return ConditionReport("prop51i", "fail", float(abs(f1[k])), FLOOR,
                               witness=_witness(samples, k, abs(f1[k]), stage="f1_vanishes"), detail=detail)
    return ConditionReport("prop51i", "pass", 0.0, 0.0, detail=dict(detail, min_abs_f1=float(abs(f1[k])),
                                                                      note=SAMPLE_NOTE))


def check_remark52(Q) -> ConditionReport:
    """Sign of the 2 x 2 discriminant."""
    disc = discriminant(Q)
    return ConditionReport("remark52", "pass" if disc > 0 else "fail", disc, 0.0,
                           detail=dict(discriminant=disc))


def check_example53(sys: RDCSystem, samples: StateSamples) -> ConditionReport:
    """``m = 2`` with ``f11 = f22`` and ``f12 = f21`` on every sample."""
    if sys.m != 2:
        return ConditionReport("example53", "fail", detail=dict(reason="needs m = 2"))
    F = samples.conv(sys)
    dev = np.maximum(np.abs(F[:, 0, 0] - F[:, 1, 1]), np.abs(F[:, 0, 1] - F[:, 1, 0]))
    k = int(np.argmax(dev))
    tol = max(FLOOR, FLOOR * float(np.max(np.abs(F))))
    ok = dev[k] <= tol and sys.D.is_scalar
    return ConditionReport("example53", "pass" if ok else "fail", float(dev[k]), tol,
                           witness=None if ok else _witness(samples, k, dev[k]))


def check_example54(sys: RDCSystem, samples: StateSamples) -> ConditionReport:
    """``f`` is a polynomial in a fixed symmetric ``Q`` (least-squares membership test)."""
    form = _form(sys)
    if "Q" not in form:
        return ConditionReport("example54", "inconclusive", detail=dict(reason="no matrix Q in system form"))
    Q = np.asarray(form["Q"], dtype=float)
    m = sys.m
    asym = float(np.max(np.abs(Q - Q.T)))
    if asym > FLOOR * max(1.0, float(np.max(np.abs(Q)))) or not sys.D.is_scalar:
        return ConditionReport("example54", "fail", asym, FLOOR, witness=dict(Q=Q.tolist(), magnitude=asym))
    basis = np.stack([np.linalg.matrix_power(Q, n).ravel() for n in range(m)], axis=1)
    F = samples.conv(sys).reshape(len(samples), -1)
    coef, *_ = np.linalg.lstsq(basis, F.T, rcond=None)
    resid = np.abs(basis @ coef - F.T).max(axis=0)
    k = int(np.argmax(resid))
    tol = max(FLOOR, 1e-10 * float(np.max(np.abs(F))))
    ok = resid[k] <= tol
    return ConditionReport("example54", "pass" if ok else "fail", float(resid[k]), tol,
                           witness=None if ok else _witness(samples, k, resid[k]))


def check_prop55(sys: RDCSystem, grid: Grid | None = None, samples: StateSamples | None = None) -> ConditionReport:
    """``f = Q(x)`` independent of ``u`` with ``Q(x)^T = Q(1 - x)`` on the collocation grid."""
    grid = grid or Grid()
    x = grid.x
    N, m = grid.N, sys.m
    Q = sys.conv(x, np.zeros((m, N)))
    scale = max(1.0, float(np.max(np.abs(Q))))
    probe = samples if samples is not None else box_samples(m, 1.0, 256)
    dep = np.abs(probe.conv(sys) - sys.conv(probe.x, np.zeros_like(probe.u))).reshape(len(probe), -1).max(axis=1)
    k = int(np.argmax(dep))
    if dep[k] > 1e-10 * scale:
        return ConditionReport("prop55", "fail", float(dep[k]), 1e-10 * scale,
                               witness=_witness(probe, k, dep[k], stage="depends_on_u"))
    refl = Q[(-np.arange(N)) % N]
    dev = np.abs(np.swapaxes(Q, 1, 2) - refl).reshape(N, -1).max(axis=1)
    i = int(np.argmax(dev))
    tol = 1e-10 * scale
    ok = dev[i] <= tol and sys.D.is_scalar
    return ConditionReport("prop55", "pass" if ok else "fail", float(dev[i]), tol,
                           witness=None if ok else dict(x=float(x[i]), u=None, magnitude=float(dev[i])))


# -- final verdict --------------------------------------------------------------------------


@dataclass
class FinalVerdict:
    status: str                 # certified | not_certified | inconclusive
    route: str | None
    failing_stage: str | None
    message: str

    @property
    def certified(self) -> bool:
        return self.status == "certified"

    def to_dict(self) -> dict:
        return dict(status=self.status, route=self.route, failing_stage=self.failing_stage, message=self.message)


NOT_CERTIFIED = "not certified by the available sufficient conditions"


def _same_similarity(certs) -> bool:
    C0 = certs[0].C
    return all(np.allclose(c.C, C0, rtol=1e-8, atol=1e-10) for c in certs)


def final_verdict(reports: dict, certificates: list, spectrum, D: DiffusionMatrix) -> FinalVerdict:
    """Combine condition reports, monodromy certificates and the gap verdict.

    Certification needs, for every sampled pair, a positive definite (or
    similar to positive definite) monodromy with one fixed similarity; for
    non-scalar diffusion the commuting assumption and diagonal monodromies;
    and a spectral gap verdict that is not a failure.
    """
    def rep(cid):
        r = reports.get(cid)
        return r is not None and r.passed

    if D.is_scalar:
        structural = next((cid for cid in ("thm46_symmetric_commuting", "thm45_distinct_commuting", "prop55")
                           if rep(cid)), None)
        if not certificates:
            return FinalVerdict("inconclusive", None, "monodromy_pd", "no attractor pairs to certify")
        if any(not c.ok for c in certificates):
            stage = "commuting_family" if structural is None else "monodromy_pd"
            return FinalVerdict("not_certified", None, stage, f"{NOT_CERTIFIED}: monodromy not positive definite")
        if not _same_similarity(certificates):
            return FinalVerdict("not_certified", None, "monodromy_pd",
                                f"{NOT_CERTIFIED}: no single similarity matrix for all pairs")
        route = structural or "lemma41_i"
    else:
        if not rep("assumption35"):
            return FinalVerdict("not_certified", None, "assumption35", f"{NOT_CERTIFIED}: D f != f D")
        if not certificates:
            return FinalVerdict("inconclusive", None, "monodromy_pd", "no attractor pairs to certify")
        if any(not c.is_diagonal for c in certificates) or not _same_similarity(certificates):
            return FinalVerdict("not_certified", None, "monodromy_pd",
                                f"{NOT_CERTIFIED}: monodromy not similar to diagonal positive definite")
        route = "thm43_diagonal" if rep("thm43_diagonal") else "lemma41_ii"
    if spectrum is None or spectrum.gap_ok is None:
        return FinalVerdict("inconclusive", route, "spectral_gap", "fewer than three spectral strips resolved")
    if not spectrum.gap_ok:
        return FinalVerdict("not_certified", None, "spectral_gap", f"{NOT_CERTIFIED}: spectral gap test failed")
    return FinalVerdict("certified", route, None,
                        f"finite-dimensional final dynamics certified via {route}; {SAMPLE_NOTE}; "
                        "gap asymptotics consistent on computed modes")
