"""Run configuration, snapshot store and the simulate / certify / probe / report stages."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .certifier import (
    FinalVerdict,
    build_common_eigenbasis,
    check_assumption35,
    check_commuting_family,
    check_diagonal,
    check_example53,
    check_example54,
    check_prop51,
    check_prop55,
    check_remark52,
    check_similarity,
    collect_samples,
    final_verdict,
)
from .errors import ConfigError
from .grid import DEFAULT_ALPHA, Grid, SpectralField, read_snapshot, write_snapshot
from .integrate import AttractorSample, IntegratorConfig, probe_dissipativity, sample_attractor
from .linearization import build_B, pair_lipschitz
from .model import REGISTRY, RDCSystem, from_definition
from .monodromy import certify_pd
from .probes import probe_decomposition, probe_Fl, probe_GrF, select_pairs
from .spectrum import choose_omega, gap_check, union_lattice

log = logging.getLogger(__name__)

WORKERS_ENV = "RDC_WORKERS"
EXIT_CODES = dict(certified=0, ok=0, error=1, not_certified=2, inconclusive=3)


@dataclass
class CertifyParams:
    K: int = 32
    max_pairs: int = 24
    n_box: int = 512
    pair_budget: int = 10_000
    alpha: float = DEFAULT_ALPHA


@dataclass
class ProbeParams:
    t_max: float = 2.0
    max_pairs: int = 6
    n_keep: int | None = None
    decomposition_pairs: int = 8


@dataclass
class RunConfig:
    system: dict = field(default_factory=lambda: {"registry": "scalar_burgers"})
    n_modes: int = 128
    dealias_fraction: str = "2/3"
    integrator: dict = field(default_factory=dict)
    certify: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    dissipativity_radii: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    dissipativity_per_radius: int = 1
    seed: int = 0
    output: str = "rdc_out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        sysdef = self.system
        if not isinstance(sysdef, dict) or not ("registry" in sysdef or "external" in sysdef):
            raise ConfigError("system must name a registry entry or give an external definition")
        if "registry" in sysdef and sysdef["registry"] not in REGISTRY:
            raise ConfigError(f"unknown registry system {sysdef['registry']!r}; known: {sorted(REGISTRY)}")
        if self.n_modes < 8 or self.n_modes % 2:
            raise ConfigError("n_modes must be an even integer >= 8")
        frac = Fraction(self.dealias_fraction)
        if not 0 < frac <= 1:
            raise ConfigError("dealias_fraction must lie in (0, 1]")
        if any(r <= 0 for r in self.dissipativity_radii):
            raise ConfigError("dissipativity radii must be positive")
        self.integrator_config()
        self.certify_params()
        self.probe_params()

    # -- typed views -------------------------------------------------------------
    def grid(self) -> Grid:
        return Grid(self.n_modes, Fraction(self.dealias_fraction))

    def integrator_config(self) -> IntegratorConfig:
        known = {f.name for f in fields(IntegratorConfig)}
        bad = set(self.integrator) - known
        if bad:
            raise ConfigError(f"unknown integrator fields {sorted(bad)}")
        return IntegratorConfig(**dict(self.integrator, seed=self.seed))

    def certify_params(self) -> CertifyParams:
        p = CertifyParams(**self.certify)
        if p.K < 3 or p.max_pairs < 1:
            raise ConfigError("certify.K must be >= 3 and certify.max_pairs >= 1")
        return p

    def probe_params(self) -> ProbeParams:
        return ProbeParams(**self.probe)

    def build_system(self) -> RDCSystem:
        return from_definition(self.system)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Hash of everything that affects results (the output directory excluded)."""
        d = self.to_dict()
        d.pop("output")
        return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config fields {sorted(bad)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# -- serialization ------------------------------------------------------------------


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (complex, np.complexfloating)):
        return [float(o.real), float(o.imag)]
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_default, separators=(",", ":"))


def write_json(path, obj, config: RunConfig) -> None:
    doc = dict(obj, config_hash=config.hash(), version=__version__)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1, default=_default) + "\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc


def _map(fn, items):
    n = workers()
    if n == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# -- snapshot store ---------------------------------------------------------------------


def save_store(root, sample: AttractorSample, sys: RDCSystem, config: RunConfig, dissipativity=None) -> Path:
    """Write snapshots and hull points as binary nodal files plus a JSON index."""
    root = Path(root)
    (root / "snapshots").mkdir(parents=True, exist_ok=True)
    (root / "hull").mkdir(parents=True, exist_ok=True)
    alpha = config.integrator_config().alpha
    for i, s in enumerate(sample.snapshots):
        write_snapshot(root / "snapshots" / f"{i:05d}.bin", s, alpha, sys.D)
    for i, s in enumerate(sample.hull_points):
        write_snapshot(root / "hull" / f"{i:05d}.bin", s, alpha, sys.D)
    index = dict(
        n_snapshots=len(sample.snapshots), n_hull=len(sample.hull_points), times=sample.times,
        trajectory=sample.trajectory, hull_weights=sample.hull_weights, seeds=sample.seeds,
        norm_alpha_max=sample.norm_alpha_max, degenerate=sample.degenerate,
    )
    write_json(root / "store.json", index, config)
    # the store's own location is left out so that stores are relocatable and comparable
    stored = config.to_dict()
    stored.pop("output")
    (root / "config.json").write_text(json.dumps(stored, sort_keys=True, indent=1) + "\n")
    if dissipativity is not None:
        write_json(root / "dissipativity.json", dissipativity.to_dict(), config)
    return root


def load_store(root, config: RunConfig | None = None) -> tuple[AttractorSample, RunConfig]:
    root = Path(root)
    if not (root / "store.json").exists():
        raise ConfigError(f"no snapshot store at {root}")
    config = config or RunConfig.load(root / "config.json")
    index = read_json(root / "store.json")
    frac = Fraction(config.dealias_fraction)

    def load(sub, n):
        return [read_snapshot(root / sub / f"{i:05d}.bin", frac)[0] for i in range(n)]

    snaps = load("snapshots", index["n_snapshots"])
    from .integrate import all_pairs

    sample = AttractorSample(
        snapshots=snaps, times=index["times"], trajectory=index["trajectory"],
        pair_index=all_pairs(len(snaps)), hull_points=load("hull", index["n_hull"]),
        hull_weights=index["hull_weights"], norm_alpha_max=index["norm_alpha_max"],
        degenerate=index["degenerate"], seeds=index["seeds"],
    )
    return sample, config


# -- certification --------------------------------------------------------------------------


@dataclass
class CertificationResult:
    reports: dict
    certificates: list
    pairs: list
    spectrum: object
    verdict: FinalVerdict
    C_hint: np.ndarray | None = None
    regularity: dict | None = None

    def to_dict(self) -> dict:
        return dict(
            verdict=self.verdict.to_dict(),
            conditions={k: r.to_dict() for k, r in sorted(self.reports.items())},
            pairs=[list(p) for p in self.pairs],
            certificates=[c.to_dict() for c in self.certificates],
            spectrum=None if self.spectrum is None else self.spectrum.to_dict(),
            regularity=self.regularity,
        )


def structural_reports(sys: RDCSystem, sample: AttractorSample, params: CertifyParams, seed: int = 0,
                       grid: Grid | None = None):
    """All condition checks that apply to ``sys``; returns ``(reports, C_hint)``."""
    samples = collect_samples(sample, params.n_box, seed)
    reports = {r.condition_id: r for r in (
        check_assumption35(sys, samples),
        check_diagonal(sys, samples),
        check_commuting_family(sys, samples, "symmetric", params.pair_budget, seed),
        check_commuting_family(sys, samples, "distinct_real_eigs", params.pair_budget, seed),
    )}
    C_hint = None
    if reports["thm45_distinct_commuting"].passed:
        sim = check_similarity(sys, samples, "distinct_real_eigs", seed)
        reports[sim.condition_id] = sim
        if sim.passed:
            C_hint = sim.C_matrix
        else:
            reports["thm45_distinct_commuting"].verdict = "inconclusive"
    elif reports["thm46_symmetric_commuting"].passed:
        reports["lemma44_similarity"] = check_similarity(sys, samples, "symmetric", seed)
    kind = str((sys.form or {}).get("kind", ""))
    if kind.startswith("prop51"):
        reports["prop51i"] = check_prop51(sys, "i", samples)
        reports["prop51ii"] = check_prop51(sys, "ii", samples)
        if sys.m == 2:
            reports["remark52"] = check_remark52(sys.form["Q"])
    if sys.m == 2:
        reports["example53"] = check_example53(sys, samples)
    if "Q" in (sys.form or {}) and not kind.startswith("prop51"):
        reports["example54"] = check_example54(sys, samples)
    reports["prop55"] = check_prop55(sys, grid or sample.grid, samples)
    return reports, C_hint


def certify_sample(sys: RDCSystem, sample: AttractorSample, params: CertifyParams | None = None,
                   seed: int = 0) -> CertificationResult:
    """Conditions, per-pair monodromy certificates, spectrum and the final verdict."""
    params = params or CertifyParams()
    reports, C_hint = structural_reports(sys, sample, params, seed)
    pairs = select_pairs(len(sample.snapshots), params.max_pairs, seed)

    def one(pair):
        a, b = pair
        B = build_B(sys, sample.snapshots[a], sample.snapshots[b])
        return certify_pd(B, sys.D, C_hint)

    certs = _map(one, pairs)
    spectrum = None
    usable = all(c.ok for c in certs) and (sys.D.is_scalar or all(c.is_diagonal for c in certs))
    if certs and usable:
        omega = choose_omega(certs, sys.D, params.K)
        spectrum = gap_check(union_lattice(certs, sys.D, omega, params.K), params.alpha, sys.D)
    verdict = final_verdict(reports, certs, spectrum, sys.D)
    regularity = pair_lipschitz(sys, [(sample.snapshots[a], sample.snapshots[b]) for a, b in pairs])
    return CertificationResult(reports, certs, pairs, spectrum, verdict, C_hint, regularity)


# -- stages -----------------------------------------------------------------------------


def cmd_simulate(config: RunConfig, out: Path | None = None) -> dict:
    out = Path(out or config.output)
    sys = config.build_system()
    grid = config.grid()
    icfg = config.integrator_config()
    diss = None
    if config.dissipativity_radii:
        diss = probe_dissipativity(sys, config.dissipativity_radii, icfg, grid, config.dissipativity_per_radius)
    sample = sample_attractor(sys, icfg, grid)
    save_store(out, sample, sys, config, diss)
    status = "ok" if diss is None or diss.entered_ball else "inconclusive"
    return dict(status=status, store=str(out), n_snapshots=len(sample.snapshots),
                degenerate=sample.degenerate, entered_ball=None if diss is None else diss.entered_ball)


def cmd_certify(config: RunConfig | None, store) -> dict:
    sample, config = load_store(store, config)
    sys = config.build_system()
    result = certify_sample(sys, sample, config.certify_params(), config.seed)
    doc = result.to_dict()
    doc["system"] = dict(name=sys.name, m=sys.m, d=sys.D.d.tolist(), form=sys.form)
    write_json(Path(store) / "certification.json", doc, config)
    return dict(status=result.verdict.status, route=result.verdict.route,
                failing_stage=result.verdict.failing_stage, result=result)


def cmd_probe(config: RunConfig | None, store) -> dict:
    sample, config = load_store(store, config)
    sys = config.build_system()
    pp = config.probe_params()
    icfg = config.integrator_config()
    fl = probe_Fl(sys, sample, pp.t_max, icfg.dt, icfg.alpha, pp.max_pairs, scheme=icfg.scheme)
    grf = probe_GrF(sample, pp.n_keep, icfg.alpha, sys.D)
    dec = probe_decomposition(sys, sample, pp.decomposition_pairs, config.seed)
    doc = dict(Fl=fl.to_dict(), GrF=grf.to_dict(), decomposition=dec.to_dict(),
               Fl_series=[dict(pair=list(p), t=t.tolist(), log_d=y.tolist()) for p, t, y in fl.series])
    write_json(Path(store) / "probes.json", doc, config)
    verdicts = {fl.verdict, grf.verdict, dec.verdict}
    return dict(status="inconclusive" if "inconclusive" in verdicts else "ok", Fl=fl, GrF=grf, decomposition=dec)


def _header(config_hash: str, version: str, columns: str) -> str:
    return f"# config_hash={config_hash} version={version}\n# {columns}\n"


def cmd_report(store) -> dict:
    """Human-readable summary plus plot-data files for whatever reports exist."""
    store = Path(store)
    if not (store / "store.json").exists():
        raise ConfigError(f"no snapshot store at {store}")
    config = RunConfig.load(store / "config.json")
    h, v = config.hash(), __version__
    lines = [f"rdcflow report  version={v}  config_hash={h}", f"system: {canonical_json(config.system)}"]
    written = []
    index = read_json(store / "store.json")
    lines.append(f"snapshots: {index['n_snapshots']}  degenerate: {index['degenerate']}")
    if (store / "dissipativity.json").exists():
        diss = read_json(store / "dissipativity.json")
        lines.append(f"dissipativity: entered_ball={diss['entered_ball']} absorbing_radius={diss['absorbing_radius']:.6g}")
    cert_path = store / "certification.json"
    if cert_path.exists():
        cert = read_json(cert_path)
        verdict = cert["verdict"]
        lines.append(f"verdict: {verdict['status']}  route={verdict['route']}  failing_stage={verdict['failing_stage']}")
        lines.append(f"  {verdict['message']}")
        for cid, rep in cert["conditions"].items():
            lines.append(f"  condition {cid:28s} {rep['verdict']:12s} violation={rep['violation']:.3e}")
        reg = cert.get("regularity")
        if reg:
            lines.append(f"  pair-Lipschitz estimates (samples only): B {reg['lipschitz_B']:.3e}  "
                         f"B0 {reg['lipschitz_B0']:.3e}")
        spectrum = cert.get("spectrum")
        if spectrum is not None:
            K, omega = spectrum["K"], spectrum["omega"]
            d = np.asarray(cert["system"]["d"])
            ks = np.arange(-K, K + 1)
            rows = []
            for p, c in enumerate(cert["certificates"]):
                ln_mu = np.log([mu[0] for mu in c["mu"]])
                for j in range(len(ln_mu)):
                    lam = omega + d[j] * (2 * np.pi * ks - 1j * ln_mu[j]) ** 2
                    rows.extend(f"{p} {j} {k} {z.real:.17g} {z.imag:.17g}" for k, z in zip(ks, lam))
            _write(store / "spectra.dat", _header(h, v, "pair j k re_lambda im_lambda"), rows)
            _write(store / "strips.dat", _header(h, v, "n a_n xi_n"),
                   [f"{s['n']} {s['a']:.17g} {s['xi']:.17g}" for s in spectrum["strips"]])
            written += ["spectra.dat", "strips.dat"]
            lines.append(f"spectrum: omega={omega:g} K={K} beta={spectrum['beta']} gap={spectrum['gap_verdict']} "
                         f"strips={len(spectrum['strips'])}")
    probe_path = store / "probes.json"
    if probe_path.exists():
        pr = read_json(probe_path)
        _write(store / "grf.dat", _header(h, v, "n_keep min_ratio"),
               [f"{n} {r:.17g}" for n, r in pr["GrF"]["sweep"]])
        fl_rows = [f"{i} {t:.17g} {y:.17g}" for i, s in enumerate(pr["Fl_series"]) for t, y in zip(s["t"], s["log_d"])]
        _write(store / "fl.dat", _header(h, v, "pair t log_distance_ratio"), fl_rows)
        written += ["grf.dat", "fl.dat"]
        fl = pr["Fl"]
        lines.append(f"Fl: verdict={fl['verdict']} M={fl['M_est']} kappa={fl['kappa_est']}")
        lines.append(f"GrF: verdict={pr['GrF']['verdict']} n_keep={pr['GrF']['n_keep']} min_ratio={pr['GrF']['min_ratio']}")
        dec = pr["decomposition"]
        lines.append(f"decomposition: max_residual={dec['max_residual']} omega_spread={dec['omega_spread']}")
    text = "\n".join(lines) + "\n"
    (store / "summary.txt").write_text(text)
    return dict(status="ok", summary=text, files=written)


def _write(path, header: str, rows) -> None:
    Path(path).write_text(header + "".join(r + "\n" for r in rows))
