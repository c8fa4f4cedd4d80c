"""Reaction-diffusion-convection systems and the built-in example registry.

A system is ``u_t = D u_xx - u + f(x, u) u_x + g(x, u)`` on the unit circle.
Model callables are vectorised over sample points: ``x`` has shape ``(P,)``
and ``u`` has shape ``(m, P)``.  They return

* ``f``   -> ``(P, m, m)``
* ``g``   -> ``(P, m)``
* ``f_u`` -> ``(P, m, m, m)`` with ``[p, i, l, j] = d f_il / d u_j``
* ``g_u`` -> ``(P, m, m)`` with ``[p, i, j] = d g_i / d u_j``
* ``f_x`` -> ``(P, m, m)``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, EvaluationFault
from .grid import (
    DiffusionMatrix,
    SpectralField,
    apply_A,
    fourier_interp,
    from_padded,
)

FD_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class RDCSystem:
    m: int
    D: DiffusionMatrix
    f: Callable
    g: Callable
    f_u: Optional[Callable] = None
    g_u: Optional[Callable] = None
    f_x: Optional[Callable] = None
    name: str = "custom"
    form: dict = field(default_factory=dict)
    r_max: float = 10.0

    def __post_init__(self):
        if self.D.m != self.m:
            raise ConfigError(f"D has {self.D.m} entries but m = {self.m}")

    @property
    def derivative_mode(self) -> str:
        return "analytic" if self.f_u is not None and self.g_u is not None else "finite-difference"

    # -- guarded evaluation -------------------------------------------------

    def _guard(self, x, u):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = np.asarray(u, dtype=float).reshape(self.m, -1)
        peak = np.max(np.abs(u)) if u.size else 0.0
        if not peak <= self.r_max:
            finite = np.all(np.isfinite(u), axis=0)
            if np.all(finite):
                p = int(np.argmax(np.any(np.abs(u) > self.r_max, axis=0)))
                msg = f"state outside the box |u_i| <= {self.r_max}"
            else:
                p = int(np.argmax(~finite))
                msg = "non-finite state"
            raise EvaluationFault(msg, x=float(x[p % x.size]), u=u[:, p].tolist())
        if x.size != u.shape[1]:
            x = np.broadcast_to(x, (u.shape[1],))
        return x, u

    def _checked(self, fn, x, u, shape, what):
        out = np.asarray(fn(x, u), dtype=float)
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        if not np.isfinite(out.sum()):
            flat = out.reshape(shape[0], -1)
            p = int(np.argmax(~np.all(np.isfinite(flat), axis=1)))
            raise EvaluationFault(f"{what} is not finite", x=float(x[p]), u=u[:, p].tolist())
        return out

    def conv(self, x, u) -> np.ndarray:
        x, u = self._guard(x, u)
        return self._checked(self.f, x, u, (x.size, self.m, self.m), "f")

    def react(self, x, u) -> np.ndarray:
        x, u = self._guard(x, u)
        return self._checked(self.g, x, u, (x.size, self.m), "g")

    def conv_u(self, x, u) -> np.ndarray:
        x, u = self._guard(x, u)
        P, m = x.size, self.m
        if self.f_u is not None:
            return self._checked(self.f_u, x, u, (P, m, m, m), "f_u")
        return _fd_jacobian(lambda uu: self._checked(self.f, x, uu, (P, m, m), "f"), u)

    def react_u(self, x, u) -> np.ndarray:
        x, u = self._guard(x, u)
        P, m = x.size, self.m
        if self.g_u is not None:
            return self._checked(self.g_u, x, u, (P, m, m), "g_u")
        return _fd_jacobian(lambda uu: self._checked(self.g, x, uu, (P, m), "g"), u)

    def conv_x(self, x, u) -> np.ndarray:
        x, u = self._guard(x, u)
        P, m = x.size, self.m
        if self.f_x is not None:
            return self._checked(self.f_x, x, u, (P, m, m), "f_x")
        h = FD_STEP
        fp = self._checked(self.f, x + h, u, (P, m, m), "f")
        fm = self._checked(self.f, x - h, u, (P, m, m), "f")
        return (fp - fm) / (2 * h)


def _fd_jacobian(fn, u):
    """Central differences with step ``1e-5 (1 + |u_j|)``; derivative index goes last."""
    m = u.shape[0]
    cols = []
    for j in range(m):
        h = FD_STEP * (1.0 + np.abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        diff = fn(up) - fn(um)
        cols.append(diff / (2 * h).reshape((-1,) + (1,) * (diff.ndim - 1)))
    return np.stack(cols, axis=-1)


def nonlinear_coeffs(sys: RDCSystem, c: np.ndarray, grid) -> np.ndarray:
    """Array-level core of :func:`eval_F` (full-spectrum coefficients in and out)."""
    N, M = grid.N, grid.padded_size
    half = c[:, : N // 2 + 1]
    both = fourier_interp(np.concatenate([half, half * grid.ik[: N // 2 + 1]]), N, M)
    U, Ux = both[: sys.m], both[sys.m:]
    xs = grid.x_padded
    fv = sys.conv(xs, U)
    gv = sys.react(xs, U)
    out = np.einsum("pij,jp->ip", fv, Ux) + gv.T
    return from_padded(out, grid).coeffs


def eval_F(sys: RDCSystem, u: SpectralField) -> SpectralField:
    """Nonlinearity ``f(x, u) u_x + g(x, u)`` formed on the anti-aliasing grid."""
    if u.m != sys.m:
        raise ConfigError("field has the wrong number of components")
    return SpectralField(nonlinear_coeffs(sys, u.coeffs, u.grid), u.grid)


def eval_G(sys: RDCSystem, u: SpectralField) -> SpectralField:
    return eval_F(sys, u) - apply_A(u, sys.D)


def check_derivatives(sys: RDCSystem, n_points: int = 50, seed: int = 0, scale: float | None = None):
    """Largest relative mismatch between analytic ``f_u, g_u`` and central differences.

    Returns ``(err_f, err_g)``.  Sample states are drawn uniformly from the box
    ``|u_i| <= scale`` (default: half of ``r_max``, capped at 2).
    """
    rng = np.random.default_rng(seed)
    scale = scale if scale is not None else min(2.0, 0.5 * sys.r_max)
    x = rng.uniform(0, 1, n_points)
    u = rng.uniform(-scale, scale, (sys.m, n_points))
    errs = []
    for analytic, plain, shape in (
        (sys.f_u, sys.f, (n_points, sys.m, sys.m)),
        (sys.g_u, sys.g, (n_points, sys.m)),
    ):
        if analytic is None:
            errs.append(0.0)
            continue
        a = np.broadcast_to(np.asarray(analytic(x, u), dtype=float), shape + (sys.m,))
        fd = _fd_jacobian(lambda uu: np.broadcast_to(np.asarray(plain(x, uu), float), shape), u)
        errs.append(float(np.max(np.abs(a - fd)) / max(1.0, np.max(np.abs(a)))))
    return tuple(errs)


# -- registry ---------------------------------------------------------------

_TWO_PI = 2 * np.pi


def _zeros(shape_tail):
    def fn(x, u):
        return np.zeros((np.shape(u)[1],) + shape_tail)

    return fn


def _cubic_reaction(m, gain, forcing, coupling=None):
    """``g = (1 + gain) u - |u|^2 u + C u + forcing * (cos 2pi x, sin 2pi x, ...)``."""
    C = np.zeros((m, m)) if coupling is None else np.asarray(coupling, dtype=float)
    phases = np.arange(m) * np.pi / 2

    def g(x, u):
        r2 = np.sum(u * u, axis=0)
        forcing_term = forcing * np.cos(_TWO_PI * x[None, :] - phases[:, None])
        return ((1 + gain) * u - r2 * u + C @ u + forcing_term).T

    def g_u(x, u):
        P = u.shape[1]
        r2 = np.sum(u * u, axis=0)
        jac = np.empty((P, m, m))
        jac[:] = (1 + gain) * np.eye(m) + C
        jac -= r2[:, None, None] * np.eye(m)
        jac -= 2 * np.einsum("ip,jp->pij", u, u)
        return jac

    return g, g_u


def _scalar_burgers(d=0.05, gain=1.5, forcing=0.5):
    def f(x, u):
        return u.T[:, :, None]

    def f_u(x, u):
        return np.ones((u.shape[1], 1, 1, 1))

    g, g_u = _cubic_reaction(1, gain, forcing)
    return dict(m=1, D=DiffusionMatrix([d]), f=f, g=g, f_u=f_u, g_u=g_u, f_x=_zeros((1, 1)),
                form=dict(kind="scalar", d=d, gain=gain, forcing=forcing))


def _diag_theorem43(d=(0.1, 0.4), scale=(1.0, 0.5), gain=1.0, forcing=0.4):
    s = np.asarray(scale, dtype=float)
    m = len(d)

    def f(x, u):
        out = np.zeros((u.shape[1], m, m))
        idx = np.arange(m)
        out[:, idx, idx] = (s[:, None] * np.tanh(u)).T
        return out

    def f_u(x, u):
        out = np.zeros((u.shape[1], m, m, m))
        idx = np.arange(m)
        out[:, idx, idx, idx] = (s[:, None] / np.cosh(u) ** 2).T
        return out

    coupling = 0.3 * (np.eye(m, k=1) - np.eye(m, k=-1))
    g, g_u = _cubic_reaction(m, gain, forcing, coupling)
    return dict(m=m, D=DiffusionMatrix(d), f=f, g=g, f_u=f_u, g_u=g_u, f_x=_zeros((m, m)),
                form=dict(kind="diagonal", scale=s.tolist()))


def _f1_default(amp=0.3):
    """Scalar factor ``amp (1 + 0.5 tanh u_1)``, bounded away from zero."""

    def f1(x, u):
        return amp * (1 + 0.5 * np.tanh(u[0]))

    def f1_u(x, u):
        grad = np.zeros_like(u.T)
        grad[:, 0] = amp * 0.5 / np.cosh(u[0]) ** 2
        return grad

    return f1, f1_u


def _prop51(Q, d=0.25, amp=0.3, gain=1.0, forcing=0.4, kind="prop51"):
    Q = np.asarray(Q, dtype=float)
    m = Q.shape[0]
    f1, f1_u = _f1_default(amp)

    def f(x, u):
        return f1(x, u)[:, None, None] * Q

    def f_u(x, u):
        return np.einsum("il,pj->pilj", Q, f1_u(x, u))

    g, g_u = _cubic_reaction(m, gain, forcing)
    return dict(m=m, D=DiffusionMatrix.scalar(d, m), f=f, g=g, f_u=f_u, g_u=g_u,
                f_x=_zeros((m, m)), form=dict(kind=kind, Q=Q.tolist(), f1_amplitude=amp))


def _prop51_distinct(Q=((1.0, 2.0), (0.0, 3.0)), **kw):
    return _prop51(Q, kind="prop51_distinct", **kw)


def _prop51_symmetric(Q=((1.0, 0.5), (0.5, -1.0)), **kw):
    return _prop51(Q, kind="prop51_symmetric", **kw)


def _example53(d=0.25, a_scale=0.5, b=0.5, gain=1.0, forcing=0.4):
    """``f = [[a, b], [b, a]]`` with ``a = a_scale * u_1`` and constant ``b``."""

    def f(x, u):
        P = u.shape[1]
        out = np.empty((P, 2, 2))
        out[:, 0, 0] = out[:, 1, 1] = a_scale * u[0]
        out[:, 0, 1] = out[:, 1, 0] = b
        return out

    def f_u(x, u):
        out = np.zeros((u.shape[1], 2, 2, 2))
        out[:, 0, 0, 0] = out[:, 1, 1, 0] = a_scale
        return out

    g, g_u = _cubic_reaction(2, gain, forcing)
    return dict(m=2, D=DiffusionMatrix.scalar(d, 2), f=f, g=g, f_u=f_u, g_u=g_u,
                f_x=_zeros((2, 2)), form=dict(kind="example53", a_scale=a_scale, b=b))


def _example54(Q=((0.0, 1.0), (1.0, 0.5)), d=0.25, gain=1.0, forcing=0.4):
    """``f = a_0 E + a_1 Q + a_2 Q^2`` with smooth scalar coefficients."""
    Q = np.asarray(Q, dtype=float)
    m = Q.shape[0]
    powers = np.stack([np.linalg.matrix_power(Q, n) for n in range(3)])

    def coeffs(x, u):
        return np.stack([0.3 * u[0], 0.4 * (1 + 0.3 * np.sin(_TWO_PI * x)), 0.1 * u[-1] ** 2])

    def coeffs_u(x, u):
        P = u.shape[1]
        out = np.zeros((3, P, m))
        out[0, :, 0] = 0.3
        out[2, :, m - 1] += 0.2 * u[-1]
        return out

    def coeffs_x(x, u):
        P = u.shape[1]
        return np.stack([np.zeros(P), 0.4 * 0.3 * _TWO_PI * np.cos(_TWO_PI * x), np.zeros(P)])

    def f(x, u):
        return np.einsum("np,nil->pil", coeffs(x, u), powers)

    def f_u(x, u):
        return np.einsum("npj,nil->pilj", coeffs_u(x, u), powers)

    def f_x(x, u):
        return np.einsum("np,nil->pil", coeffs_x(x, u), powers)

    g, g_u = _cubic_reaction(m, gain, forcing)
    return dict(m=m, D=DiffusionMatrix.scalar(d, m), f=f, g=g, f_u=f_u, g_u=g_u, f_x=f_x,
                form=dict(kind="example54", Q=Q.tolist(), degree=2))


def prop55_matrix(x, eps=0.5):
    """``Q(x) = eps [[cos 2pi x, 1 + sin 2pi x], [1 - sin 2pi x, cos 2pi x]]``.

    Satisfies ``Q(x)^T = Q(1 - x)`` while the family is neither symmetric nor
    commuting.
    """
    c, s = np.cos(_TWO_PI * x), np.sin(_TWO_PI * x)
    out = np.empty(np.shape(x) + (2, 2))
    out[..., 0, 0] = out[..., 1, 1] = c
    out[..., 0, 1] = 1 + s
    out[..., 1, 0] = 1 - s
    return eps * out


def _prop55(d=0.25, eps=0.5, gain=1.0, forcing=0.4):
    def f(x, u):
        return prop55_matrix(x, eps)

    def f_x(x, u):
        c, s = np.cos(_TWO_PI * x), np.sin(_TWO_PI * x)
        out = np.empty(np.shape(x) + (2, 2))
        out[..., 0, 0] = out[..., 1, 1] = -_TWO_PI * s
        out[..., 0, 1] = _TWO_PI * c
        out[..., 1, 0] = -_TWO_PI * c
        return eps * out

    g, g_u = _cubic_reaction(2, gain, forcing)
    return dict(m=2, D=DiffusionMatrix.scalar(d, 2), f=f, g=g, f_u=_zeros((2, 2, 2)), g_u=g_u,
                f_x=f_x, form=dict(kind="prop55", eps=eps, x_only=True))


def _noncommuting(d=0.25, rot=0.5, shear=0.5, gain=1.0, forcing=0.4):
    """``f = rot (1 + 0.5 cos 2pi x) J + shear u_1 diag(1, -1)`` with ``J`` skew."""
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    S = np.diag([1.0, -1.0])

    def f(x, u):
        return (rot * (1 + 0.5 * np.cos(_TWO_PI * x)))[:, None, None] * J + (shear * u[0])[:, None, None] * S

    def f_u(x, u):
        out = np.zeros((u.shape[1], 2, 2, 2))
        out[:, :, :, 0] = shear * S
        return out

    def f_x(x, u):
        return (-rot * 0.5 * _TWO_PI * np.sin(_TWO_PI * x))[:, None, None] * J + np.zeros((u.shape[1], 1, 1))

    g, g_u = _cubic_reaction(2, gain, forcing)
    return dict(m=2, D=DiffusionMatrix.scalar(d, 2), f=f, g=g, f_u=f_u, g_u=g_u, f_x=f_x,
                form=dict(kind="noncommuting", rot=rot, shear=shear))


REGISTRY = {
    "scalar_burgers": _scalar_burgers,
    "diag_theorem43": _diag_theorem43,
    "prop51_distinct": _prop51_distinct,
    "prop51_symmetric": _prop51_symmetric,
    "example53": _example53,
    "example54": _example54,
    "prop55": _prop55,
    "counterexample_style_noncommuting": _noncommuting,
}


def builtin(name: str, params: dict | None = None, r_max: float = 10.0) -> RDCSystem:
    """Construct a registry system; ``params`` override the factory defaults."""
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown registry system {name!r}; known: {sorted(REGISTRY)}") from None
    kw = factory(**(params or {}))
    return RDCSystem(name=name, r_max=r_max, **kw)


def linear_system(d, m: int = 1, reaction: float = 0.0) -> RDCSystem:
    """``f = 0`` and ``g = reaction * u``; handy for exact-solution checks."""
    D = DiffusionMatrix(np.broadcast_to(np.asarray(d, dtype=float), (m,)))

    def g(x, u):
        return reaction * u.T

    def g_u(x, u):
        return np.broadcast_to(reaction * np.eye(m), (u.shape[1], m, m))

    return RDCSystem(m=m, D=D, f=_zeros((m, m)), g=g, f_u=_zeros((m, m, m)), g_u=g_u,
                     f_x=_zeros((m, m)), name="linear", form=dict(kind="linear", reaction=reaction))


def from_definition(defn: dict) -> RDCSystem:
    """Build a system from a JSON-style definition.

    Either ``{"registry": name, "params": {...}}`` or an external matrix-polynomial
    system ``{"external": {"m": .., "d": [..], "Q": [[..]], "coeffs": [[..]], ...}}``
    where ``f = sum_n a_n(u) Q^n`` with affine coefficients
    ``a_n(u) = coeffs[n][0] + sum_j coeffs[n][j+1] u_j`` and ``g`` is the cubic
    reaction ``(1 + gain) u - |u|^2 u + forcing * cos(2 pi x - phase_j)``.
    """
    r_max = float(defn.get("r_max", 10.0))
    if "registry" in defn:
        return builtin(defn["registry"], defn.get("params"), r_max=r_max)
    if "external" not in defn:
        raise ConfigError("system definition needs a 'registry' or 'external' entry")
    ext = defn["external"]
    m = int(ext["m"])
    Q = np.asarray(ext["Q"], dtype=float)
    coeffs = np.asarray(ext["coeffs"], dtype=float)
    if Q.shape != (m, m) or coeffs.ndim != 2 or coeffs.shape[1] != m + 1:
        raise ConfigError("external system: Q must be m x m and coeffs rows of length m + 1")
    powers = np.stack([np.linalg.matrix_power(Q, n) for n in range(coeffs.shape[0])])

    def f(x, u):
        a = coeffs[:, :1] + coeffs[:, 1:] @ u
        return np.einsum("np,nil->pil", a, powers)

    def f_u(x, u):
        return np.broadcast_to(np.einsum("nj,nil->ilj", coeffs[:, 1:], powers), (u.shape[1], m, m, m))

    g, g_u = _cubic_reaction(m, float(ext.get("gain", 1.0)), float(ext.get("forcing", 0.4)))
    d = np.broadcast_to(np.asarray(ext["d"], dtype=float), (m,))
    return RDCSystem(m=m, D=DiffusionMatrix(d), f=f, g=g, f_u=f_u, g_u=g_u, f_x=_zeros((m, m)),
                     name=defn.get("name", "external"), r_max=r_max,
                     form=dict(kind="polynomial", Q=Q.tolist(), coeffs=coeffs.tolist()))
