"""Stiff time stepping, dissipativity probes and attractor sampling."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DivergenceFault, EvaluationFault
from .grid import DEFAULT_ALPHA, Grid, SpectralField, sobolev_norm, symbol_A, to_nodal, to_spectral
from .model import RDCSystem, nonlinear_coeffs

log = logging.getLogger(__name__)

SCHEMES = ("ETDRK4", "IMEX-CNAB2")
BLOW_UP = 1e6


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 2e-3
    scheme: str = "ETDRK4"
    t_transient: float = 10.0
    t_sample: float = 5.0
    n_snapshots: int = 32
    seed: int = 0
    n_trajectories: int = 4
    decorrelation_steps: int = 50
    init_radius: float = 1.0
    n_hull: int = 64
    alpha: float = DEFAULT_ALPHA
    blow_up_threshold: float = BLOW_UP

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.t_transient < 0 or self.t_sample < 0:
            raise ConfigError("t_transient and t_sample must be nonnegative")
        if self.n_snapshots < 1 or self.n_trajectories < 1:
            raise ConfigError("n_snapshots and n_trajectories must be >= 1")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")


class Stepper:
    """Fixed-step integrator for ``u_t = -A u + F(u)`` in Fourier space.

    ETDRK4 uses the Kassam-Trefethen contour-mean coefficients; IMEX-CNAB2
    treats ``-A`` with Crank-Nicolson and ``F`` with second-order
    Adams-Bashforth (forward Euler on the first step).
    """

    n_contour = 32

    def __init__(self, sys: RDCSystem, grid: Grid, dt: float, scheme: str = "ETDRK4",
                 blow_up_threshold: float = BLOW_UP):
        self.sys, self.grid, self.dt, self.scheme = sys, grid, dt, scheme
        self.blow_up_threshold = blow_up_threshold
        L = -symbol_A(grid, sys.D)
        if scheme == "ETDRK4":
            self._etd_coefficients(L, dt)
        elif scheme == "IMEX-CNAB2":
            self.cn_num = 1 + 0.5 * dt * L
            self.cn_den = 1 - 0.5 * dt * L
        else:
            raise ConfigError(f"unknown scheme {scheme!r}")
        self._prev_N = None

    def _etd_coefficients(self, L, h):
        self.E = np.exp(h * L)
        self.E2 = np.exp(h * L / 2)
        r = np.exp(1j * np.pi * (np.arange(1, self.n_contour + 1) - 0.5) / self.n_contour)
        LR = h * L[..., None] + r
        self.Qc = h * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=-1))
        self.f1 = h * np.real(np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR**2)) / LR**3, axis=-1))
        self.f2 = h * np.real(np.mean((2 + LR + np.exp(LR) * (LR - 2)) / LR**3, axis=-1))
        self.f3 = h * np.real(np.mean((-4 - 3 * LR - LR**2 + np.exp(LR) * (4 - LR)) / LR**3, axis=-1))

    def nonlinear(self, c):
        return nonlinear_coeffs(self.sys, c, self.grid)

    def reset(self):
        self._prev_N = None

    def step(self, c: np.ndarray) -> np.ndarray:
        if self.scheme == "ETDRK4":
            Nu = self.nonlinear(c)
            a = self.E2 * c + self.Qc * Nu
            Na = self.nonlinear(a)
            b = self.E2 * c + self.Qc * Na
            Nb = self.nonlinear(b)
            cc = self.E2 * a + self.Qc * (2 * Nb - Nu)
            Nc = self.nonlinear(cc)
            out = self.E * c + self.f1 * Nu + 2 * self.f2 * (Na + Nb) + self.f3 * Nc
        else:
            Nu = self.nonlinear(c)
            expl = Nu if self._prev_N is None else 1.5 * Nu - 0.5 * self._prev_N
            self._prev_N = Nu
            out = (self.cn_num * c + self.dt * expl) / self.cn_den
        self._check(out)
        return out

    def _check(self, c):
        bound = np.sum(np.abs(c), axis=-1).max()
        if not np.isfinite(bound):
            raise DivergenceFault("non-finite state", sup_norm=float("inf"))
        if bound > self.blow_up_threshold:
            sup = float(np.abs(to_nodal(SpectralField(c, self.grid))).max())
            if sup > self.blow_up_threshold:
                raise DivergenceFault(f"max norm {sup:.3g} exceeds blow-up threshold", sup_norm=sup)

    def run(self, c: np.ndarray, n_steps: int) -> np.ndarray:
        for _ in range(n_steps):
            c = self.step(c)
        return c


@lru_cache(maxsize=64)
def _stepper(sys, grid, dt, scheme):
    return Stepper(sys, grid, dt, scheme)


def step(sys: RDCSystem, u: SpectralField, dt: float, scheme: str = "ETDRK4") -> SpectralField:
    """Advance ``u`` by one step of length ``dt``."""
    if not np.all(np.isfinite(u.coeffs)):
        raise DivergenceFault("initial state is not finite")
    st = _stepper(sys, u.grid, float(dt), scheme)
    st.reset()
    return SpectralField(st.step(u.coeffs), u.grid)


def integrate(sys: RDCSystem, u: SpectralField, t: float, dt: float, scheme: str = "ETDRK4") -> SpectralField:
    n = int(round(t / dt))
    st = Stepper(sys, u.grid, dt, scheme)
    return SpectralField(st.run(u.coeffs, n), u.grid)


def random_field(grid: Grid, m: int, rng: np.random.Generator, decay: float = 3.0) -> SpectralField:
    """Smooth random real field with Fourier amplitudes ~ (1 + |k|)^-decay."""
    half_k = np.arange(grid.N // 2 + 1)
    amp = (1.0 + half_k) ** -decay
    half = (rng.standard_normal((m, half_k.size)) + 1j * rng.standard_normal((m, half_k.size))) * amp
    half[:, 0] = half[:, 0].real
    half[:, -1] = 0.0
    nodal = np.fft.irfft(half * grid.N, n=grid.N, axis=-1)
    return to_spectral(nodal, grid)


# -- dissipativity ------------------------------------------------------------


@dataclass
class DissipativityReport:
    radii: list
    times: np.ndarray
    radius_history: list
    entered_ball: bool
    absorbing_radius: float
    t_entry: list
    diverged: list
    faults: list = field(default_factory=list)
    box_widened_to: float | None = None

    def to_dict(self):
        return dict(
            radii=list(self.radii),
            entered_ball=self.entered_ball,
            absorbing_radius=self.absorbing_radius,
            t_entry=self.t_entry,
            diverged=self.diverged,
            faults=self.faults,
            box_widened_to=self.box_widened_to,
            final_norms=[float(h[-1]) if len(h) else None for h in self.radius_history],
        )


def probe_dissipativity(sys: RDCSystem, initial_radii, config: IntegratorConfig,
                        grid: Grid | None = None, n_per_radius: int = 3,
                        hold_fraction: float = 0.25, n_records: int = 200) -> DissipativityReport:
    """Integrate random fields of prescribed alpha-norm and look for an absorbing ball.

    Each trajectory runs for ``t_transient``; the absorbing radius ``a`` is 1.1
    times the largest norm over the final quarter.  The verdict holds only if
    every trajectory then stays inside ``a`` over a further hold window of
    ``hold_fraction * t_transient`` (catches slow growth), and none diverges.

    A prescribed alpha-norm can put the initial sup-norm outside the model's
    evaluation box ``|u_i| <= r_max``; the box is then widened to twice the
    largest initial sup-norm for this probe and the new bound is reported.
    """
    grid = grid or Grid()
    if any(r <= 0 for r in initial_radii):
        raise ConfigError("initial radii must be positive")
    rng = np.random.default_rng(config.seed)
    T = config.t_transient
    n_main = max(1, int(round(T / config.dt)))
    n_hold = max(1, int(round(hold_fraction * n_main)))
    stride = max(1, (n_main + n_hold) // n_records)
    starts = []
    for r in initial_radii:
        for _ in range(n_per_radius):
            u0 = random_field(grid, sys.m, rng)
            starts.append((r, u0 * (r / sobolev_norm(u0, config.alpha, sys.D))))
    sup0 = max(float(np.abs(to_nodal(u0)).max()) for _, u0 in starts)
    widened = None
    if sup0 > sys.r_max:
        widened = 2.0 * sup0
        sys = replace(sys, r_max=widened)
    histories, probes_radii, diverged, faults = [], [], [], []
    times = None
    for r, u0 in starts:
        st = Stepper(sys, grid, config.dt, config.scheme, config.blow_up_threshold)
        c, hist, ts = u0.coeffs, [sobolev_norm(u0, config.alpha, sys.D)], [0.0]
        try:
            for n in range(1, n_main + n_hold + 1):
                c = st.step(c)
                if n % stride == 0 or n == n_main + n_hold:
                    hist.append(sobolev_norm(SpectralField(c, grid), config.alpha, sys.D))
                    ts.append(n * config.dt)
            diverged.append(False)
        except (DivergenceFault, EvaluationFault) as exc:
            diverged.append(True)
            faults.append(dict(radius=r, error=type(exc).__name__, message=str(exc)))
        histories.append(np.asarray(hist))
        probes_radii.append(r)
        if times is None and not diverged[-1]:
            times = np.asarray(ts)
    T_main = n_main * config.dt
    a = 0.0
    for h, bad in zip(histories, diverged):
        if not bad:
            t = times[: h.size]
            window = h[(t >= 0.75 * T_main) & (t <= T_main)]
            a = max(a, float(window.max()) if window.size else float(h[-1]))
    a = 1.1 * a + 1e-12
    t_entry, ok = [], not any(diverged)
    for h, bad in zip(histories, diverged):
        if bad:
            t_entry.append(None)
            continue
        t = times[: h.size]
        outside = np.nonzero(h > a)[0]
        t_entry.append(0.0 if outside.size == 0 else float(t[min(outside[-1] + 1, t.size - 1)]))
        if outside.size and t[outside[-1]] > T_main:
            ok = False
    return DissipativityReport(
        radii=probes_radii, times=times if times is not None else np.zeros(0),
        radius_history=histories, entered_ball=bool(ok), absorbing_radius=a,
        t_entry=t_entry, diverged=diverged, faults=faults, box_widened_to=widened,
    )


# -- attractor sampling ---------------------------------------------------------


@dataclass
class AttractorSample:
    snapshots: list
    times: list
    trajectory: list
    pair_index: list
    hull_points: list
    hull_weights: list
    norm_alpha_max: float
    degenerate: bool
    seeds: list

    @property
    def grid(self) -> Grid:
        return self.snapshots[0].grid

    @property
    def m(self) -> int:
        return self.snapshots[0].m


def all_pairs(n: int) -> list:
    if n == 1:
        return [(0, 0)]
    return list(itertools.combinations(range(n), 2))


def sample_attractor(sys: RDCSystem, config: IntegratorConfig, grid: Grid | None = None) -> AttractorSample:
    """Snapshots of several long trajectories after the spin-up time.

    Snapshots are spread over ``n_trajectories`` independent trajectories and
    separated by at least ``decorrelation_steps * dt``.  Hull points are random
    convex combinations (Dirichlet weights) of snapshot pairs and triples.
    """
    grid = grid or Grid()
    ss = np.random.SeedSequence(config.seed)
    traj_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(config.n_trajectories)]
    n_traj = min(config.n_trajectories, config.n_snapshots)
    per_traj = [config.n_snapshots // n_traj + (i < config.n_snapshots % n_traj) for i in range(n_traj)]
    n_transient = int(round(config.t_transient / config.dt))
    snapshots, times, trajectory = [], [], []
    for i in range(n_traj):
        rng = np.random.default_rng(traj_seeds[i])
        u0 = random_field(grid, sys.m, rng)
        u0 = u0 * (config.init_radius / sobolev_norm(u0, config.alpha, sys.D))
        st = Stepper(sys, grid, config.dt, config.scheme, config.blow_up_threshold)
        c = st.run(u0.coeffs, n_transient)
        gap = max(config.decorrelation_steps,
                  int(round(config.t_sample / max(per_traj[i], 1) / config.dt)))
        t = n_transient * config.dt
        for j in range(per_traj[i]):
            if j:
                c = st.run(c, gap)
                t += gap * config.dt
            snapshots.append(SpectralField(c.copy(), grid))
            times.append(t)
            trajectory.append(i)
    rng = np.random.default_rng(ss.spawn(1)[0])
    hull_points, hull_weights = [], []
    n = len(snapshots)
    for _ in range(config.n_hull if n > 1 else 0):
        size = 2 if n == 2 or rng.random() < 0.5 else 3
        idx = rng.choice(n, size=size, replace=False)
        w = rng.dirichlet(np.ones(size))
        coeffs = sum(wi * snapshots[j].coeffs for wi, j in zip(w, idx))
        hull_points.append(SpectralField(coeffs, grid))
        hull_weights.append((idx.tolist(), w.tolist()))
    norms = [sobolev_norm(s, config.alpha, sys.D) for s in snapshots]
    spread = max((sobolev_norm(snapshots[a] - snapshots[b], config.alpha, sys.D)
                  for a, b in all_pairs(n)), default=0.0)
    degenerate = spread <= 1e-8 * max(1.0, max(norms))
    if degenerate:
        log.warning("attractor sample is degenerate (all snapshots coincide)")
    return AttractorSample(
        snapshots=snapshots, times=times, trajectory=trajectory, pair_index=all_pairs(n),
        hull_points=hull_points, hull_weights=hull_weights, norm_alpha_max=float(max(norms)),
        degenerate=bool(degenerate), seeds=traj_seeds[:n_traj],
    )


def flow_pair(sys: RDCSystem, u: SpectralField, v: SpectralField, t_max: float, dt: float,
              scheme: str = "ETDRK4", n_records: int = 100):
    """Synchronised forward trajectories of ``u`` and ``v``.

    Returns ``(times, us, vs)`` sampled at about ``n_records`` instants.
    """
    n = int(round(t_max / dt))
    times, us, vs = [0.0], [u], [v]
    if n == 0:
        return np.asarray(times), us, vs
    stride = max(1, n // n_records)
    su = Stepper(sys, u.grid, dt, scheme)
    sv = Stepper(sys, v.grid, dt, scheme)
    cu, cv = u.coeffs, v.coeffs
    for i in range(1, n + 1):
        cu, cv = su.step(cu), sv.step(cv)
        if i % stride == 0 or i == n:
            times.append(i * dt)
            us.append(SpectralField(cu, u.grid))
            vs.append(SpectralField(cv, v.grid))
    return np.asarray(times), us, vs
