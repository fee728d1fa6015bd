"""Infinitesimal Lorentz boosts in both pictures and the covariance checks.

Exact covariance holds only in the continuum, so the test is a scaling one:
the residual in excess of the unboosted (native) residual must vanish like
|u|^2.  A transformation that is wrong at first order leaves an O(|u|)
excess instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientHistory, RootNotBracketed
from .lattice import (Lattice, PhysicalConstants, SimConfig, fd_gradient, interpolate_cubic,
                      lagrange4)
from .material import KGCongruenceState, deformation, determinant, kg_acceleration
from .spatial import SpatialFields

MAX_BOOST = 0.05
FIXED_POINT_ITERS = 20


@dataclass(frozen=True)
class BoostParams:
    u: tuple[float, ...]
    c: float = 1.0

    def __post_init__(self):
        u = tuple(float(x) for x in np.atleast_1d(self.u))
        object.__setattr__(self, "u", u)
        if np.linalg.norm(u) > MAX_BOOST * self.c * (1 + 1e-12):
            raise ConfigError(f"boost |u| = {np.linalg.norm(u):.3g} exceeds {MAX_BOOST} c")

    @property
    def vec(self) -> np.ndarray:
        return np.array(self.u)


def _dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.tensordot(u, v, axes=1)


def _col(u: np.ndarray, ndim: int) -> np.ndarray:
    return u.reshape((-1,) + (1,) * ndim)


# ---------------------------------------------------------------------------
# histories: anything with ``at(t) -> (q, qdot, tau, taudot)`` for per-label t


class OracleHistory:
    """Closed-form congruence (e.g. a plane wave) viewed as a run history."""

    def __init__(self, oracle, labels: Lattice):
        self.oracle = oracle
        self.labels = labels
        self.a = labels.coords()
        self.rhobar0 = oracle.psidot(0.0, *self.a) / oracle.constants.c**2
        self.t_range = (-np.inf, np.inf)

    def at(self, t):
        return self.oracle.state_at(self.a, t)


class SampledHistory:
    """Stored snapshots with per-label cubic Hermite interpolation in time."""

    def __init__(self, snapshots: Sequence[KGCongruenceState], labels: Lattice):
        if len(snapshots) < 2:
            raise InsufficientHistory("a history needs at least two snapshots")
        self.labels = labels
        self.times = np.array([s.t for s in snapshots])
        self.q = np.stack([s.q for s in snapshots])
        self.qdot = np.stack([s.qdot for s in snapshots])
        self.tau = np.stack([s.tau for s in snapshots])
        self.taudot = np.stack([s.taudot for s in snapshots])
        self.rhobar0 = snapshots[0].rhobar0
        self.t_range = (self.times[0], self.times[-1])

    def at(self, t):
        t = np.broadcast_to(np.asarray(t, dtype=float), self.labels.shape)
        lo, hi = self.t_range
        if np.any(t < lo - 1e-12 * max(1.0, abs(lo))) or np.any(t > hi + 1e-12 * max(1.0, abs(hi))):
            raise InsufficientHistory(f"requested times [{t.min():.4g}, {t.max():.4g}] "
                                      f"outside stored window [{lo:.4g}, {hi:.4g}]")
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        t0 = self.times[i]
        h = self.times[i + 1] - t0
        s = (t - t0) / h
        h00, h10 = 2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s
        h01, h11 = -2 * s**3 + 3 * s**2, s**3 - s**2
        d00, d10 = (6 * s**2 - 6 * s) / h, 3 * s**2 - 4 * s + 1
        d01, d11 = (-6 * s**2 + 6 * s) / h, 3 * s**2 - 2 * s
        idx = np.indices(self.labels.shape)

        def pick(arr, k):
            if arr.ndim == self.labels.n + 1:
                return arr[(k,) + tuple(idx)]
            return np.stack([arr[(k, c) + tuple(idx)] for c in range(arr.shape[1])])

        def herm(x, xd):
            x0, x1, v0, v1 = pick(x, i), pick(x, i + 1), pick(xd, i), pick(xd, i + 1)
            val = h00 * x0 + h10 * h * v0 + h01 * x1 + h11 * h * v1
            der = d00 * x0 + d10 * v0 + d01 * x1 + d11 * v1
            return val, der

        q, qdot = herm(self.q, self.qdot)
        tau, taudot = herm(self.tau, self.taudot)
        return q, qdot, tau, taudot


class LinearExtension:
    """A single snapshot extended linearly in time with its rates."""

    def __init__(self, state: KGCongruenceState, labels: Lattice):
        if state.qdot is None or state.taudot is None:
            raise InsufficientHistory("linear extension needs the rates qdot and tau_dot")
        self.state = state
        self.labels = labels
        self.rhobar0 = state.rhobar0
        self.t_range = (-np.inf, np.inf)

    def at(self, t):
        s = self.state
        dt = np.broadcast_to(np.asarray(t, dtype=float), self.labels.shape) - s.t
        return s.q + s.qdot * dt, s.qdot.copy(), s.tau + s.taudot * dt, s.taudot.copy()


def solve_label_times(history, u: np.ndarray, t_prime, c: float, sign: float = 1.0,
                      tol: float | None = None) -> np.ndarray:
    """Per-label t solving t' = t - sign * u.q(a, t) / c^2 by fixed-point iteration."""
    labels = history.labels
    tol = 1e-12 * max(labels.box) / c if tol is None else tol
    t = np.full(labels.shape, float(t_prime))
    for _ in range(FIXED_POINT_ITERS):
        q = history.at(t)[0]
        new = t_prime + sign * _dot(u, q) / c**2
        done = float(np.abs(new - t).max()) <= tol
        t = new
        if done:
            break
    return t


def boost_material(history, u: BoostParams | Sequence[float], t_prime: float,
                   constants: PhysicalConstants, sign: float = 1.0) -> KGCongruenceState:
    """Primed congruence at primed time ``t_prime``; labels are unchanged.

    t' = t - u.q / c^2, q' = q - u t, tau' = tau, rhobar0' = rhobar0, with
    first-order rates qdot' = qdot - u + (u.qdot) qdot / c^2 and
    tau_dot' = tau_dot (1 + u.qdot / c^2).  ``sign=-1`` flips the time
    relation (used for error injection only).
    """
    u = BoostParams(u, constants.c).vec if not isinstance(u, BoostParams) else u.vec
    c2 = constants.c**2
    t = solve_label_times(history, u, t_prime, constants.c, sign)
    q, qdot, tau, taudot = history.at(t)
    nd = history.labels.n
    uq = _dot(u, qdot)
    q_p = q - _col(u, nd) * t
    qdot_p = qdot - _col(u, nd) + uq * qdot / c2
    taudot_p = taudot * (1 + uq / c2)
    return KGCongruenceState(float(t_prime), q_p, qdot_p, tau, taudot_p, history.rhobar0)


def _jacobian_at_times(history, t: np.ndarray) -> np.ndarray:
    """det dq/da at fixed (per-label) time t(a), neighbours sampled at the same time."""
    labels = history.labels
    n = labels.n
    D = np.empty((n, n) + labels.shape)
    for j in range(n):
        h = labels.spacing[j]
        fwd = np.roll(history.at(np.roll(t, 1, axis=j))[0], -1, axis=1 + j)
        bwd = np.roll(history.at(np.roll(t, -1, axis=j))[0], 1, axis=1 + j)
        diff = fwd - bwd
        # unwrap the periodic image across the seam
        L = labels.box[j]
        diff[j] = diff[j] - L * np.round((diff[j] - 2 * h) / L)
        D[:, j] = diff / (2 * h)
    return determinant(D)


def seam_mask(labels: Lattice, margin: int = 3) -> np.ndarray:
    """False within ``margin`` sites of the periodic seam on any axis."""
    mask = np.ones(labels.shape, dtype=bool)
    for ax in range(labels.n):
        idx = [slice(None)] * labels.n
        idx[ax] = slice(0, margin)
        mask[tuple(idx)] = False
        idx[ax] = slice(labels.counts[ax] - margin, None)
        mask[tuple(idx)] = False
    return mask


def material_residual_fields(history, u, t_prime: float, config: SimConfig, delta: float,
                             sign: float = 1.0):
    """(eq34, eq21) residual fields of boosted data at ``t_prime``.

    eq34 stacks q'' - a_q and tau'' - a_tau with accelerations from finite
    differences in t' (step ``delta``) against the force law evaluated on the
    primed state; eq21 is J'^{-1} rhobar0 e^{-tau'/alpha} minus the boosted
    spatial density (1 - u.v / c^2) J^{-1} rhobar0 e^{-tau/alpha} at the
    same event.
    """
    k = config.constants
    u = np.atleast_1d(np.asarray(u, dtype=float))
    states = [boost_material(history, u, t_prime + j * delta, k, sign) for j in (-1, 0, 1)]
    mid = states[1]
    qdd = (states[2].q - 2 * mid.q + states[0].q) / delta**2
    tdd = (states[2].tau - 2 * mid.tau + states[0].tau) / delta**2
    # t(a) is not periodic, so the seam sites are garbage; they are masked, not checked
    with np.errstate(divide="ignore", invalid="ignore"):
        aq, at = kg_acceleration(mid.q, mid.qdot, mid.tau, mid.taudot, mid.rhobar0, config,
                                 check=False)
    eq34 = np.concatenate([qdd - aq, (tdd - at)[None]])

    labels = history.labels
    t = solve_label_times(history, u, t_prime, k.c, sign)
    _, qdot, tau, _ = history.at(t)
    J = _jacobian_at_times(history, t)
    Jp = deformation(mid.q, labels).J
    decay = history.rhobar0 * np.exp(-tau / k.alpha)
    eq21 = decay / Jp - (1 - _dot(u, qdot) / k.c**2) * decay / J
    return eq34, eq21


@dataclass
class CovarianceReport:
    u: tuple[float, ...]
    residual_eq34: tuple[float, float]
    residual_eq21: tuple[float, float]
    native: tuple[float, float]
    exponent_eq34: float
    exponent_eq21: float
    threshold: float = 1.7
    extra: dict = field(default_factory=dict)

    @property
    def exponent(self) -> float:
        return min(self.exponent_eq34, self.exponent_eq21)

    @property
    def verdict(self) -> str:
        return "PASS" if self.exponent >= self.threshold else "FAIL"

    def to_text(self) -> str:
        lines = ["u, residual_eq34, residual_eq21, exponent, verdict"]
        ub = np.linalg.norm(self.u)
        lines.append(f"{ub / 10!r}, {self.residual_eq34[1]!r}, {self.residual_eq21[1]!r}, , ")
        lines.append(f"{ub!r}, {self.residual_eq34[0]!r}, {self.residual_eq21[0]!r}, "
                     f"{self.exponent!r}, {self.verdict}")
        return "\n".join(lines) + "\n"


def scaling_exponent(big: float, small: float, ratio: float = 10.0) -> float:
    if small <= 0 or big <= 0:
        return float("inf") if small == 0 and big >= 0 else float("nan")
    return float(np.log(big / small) / np.log(ratio))


def covariance_residual(history, u, t_prime: float, config: SimConfig, delta: float = 1e-3,
                        mask: np.ndarray | None = None, sign: float = 1.0) -> CovarianceReport:
    """Two-magnitude scaling test of the boosted eq. of motion and density relation.

    The residual at each boost is measured in excess of the unboosted one,
    site by site, over ``mask`` (default: away from the seam).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    BoostParams(u, config.constants.c)
    labels = history.labels
    mask = seam_mask(labels) if mask is None else mask & seam_mask(labels)
    base34, base21 = material_residual_fields(history, np.zeros_like(u), t_prime, config, delta)
    r34, r21 = [], []
    for scale in (1.0, 0.1):
        e34, e21 = material_residual_fields(history, scale * u, t_prime, config, delta, sign)
        r34.append(float(np.abs((e34 - base34)[:, mask]).max()))
        r21.append(float(np.abs((e21 - base21)[mask]).max()))
    native = (float(np.abs(base34[:, mask]).max()), float(np.abs(base21[mask]).max()))
    return CovarianceReport(tuple(u), tuple(r34), tuple(r21), native,
                            scaling_exponent(*r34), scaling_exponent(*r21))


# ---------------------------------------------------------------------------
# spatial picture


def boost_spatial(source, grid: Lattice, u, t_prime: float, constants: PhysicalConstants):
    """Primed spatial fields and psi' on the grid at primed time ``t_prime``.

    ``source.fields(x, t)`` returns (psi, rhobar, mom, mom4) at events
    (x, t).  Each primed node (x', t') is mapped back through the exact
    inverse of x' = x - u t, t' = t - u.x / c^2, and the fields are
    transformed to first order: rho' = rho - u.(rho v) / c^2,
    rho' v' = rho v - u rho, rho' v'^4 = rho v^4, psi' = psi.
    """
    u = BoostParams(u, constants.c).vec
    c2 = constants.c**2
    xp = grid.coords()
    nd = grid.n
    t = (t_prime + _dot(u, xp) / c2) / (1.0 - float(u @ u) / c2)
    x = xp + _col(u, nd) * t
    psi, rho, mom, mom4 = source.fields(x, t)
    rho_p = rho - _dot(u, mom) / constants.c**2
    mom_p = mom - _col(u, nd) * rho
    valid = np.ones(grid.shape, dtype=bool)
    safe = np.where(rho_p != 0, rho_p, 1.0)
    fields = SpatialFields(float(t_prime), rho_p, mom_p, mom_p / safe, valid, mom4.copy(), mom4 / safe)
    return fields, psi


class AmplitudeFields:
    """Spatial Klein-Gordon fields implied by an analytic amplitude via the five relations."""

    def __init__(self, source, constants: PhysicalConstants):
        self.source = source
        self.constants = constants

    def fields(self, x, t):
        psi, grad, psidot, _, _ = self.source.evaluate(x, t)
        k = self.constants
        return psi, psidot / k.c**2, -grad, k.inverse_compton * psi


class GriddedFields:
    """Snapshots of (psi, SpatialFields) resampled with cubic interpolation in space and time.

    Nodes that coincide with a stored snapshot are returned as stored, so an
    unboosted evaluation is exact.
    """

    def __init__(self, times, psi, history: Sequence[SpatialFields], grid: Lattice):
        self.times = np.asarray(times, dtype=float)
        if len(self.times) < 4:
            raise InsufficientHistory("cubic resampling in time needs at least 4 snapshots")
        self.grid = grid
        self.arrays = [np.asarray(psi), np.stack([f.rho for f in history])]
        self.arrays += [np.stack([f.mom[i] for f in history]) for i in range(grid.n)]
        self.arrays.append(np.stack([f.mom4 for f in history]))

    def _stored(self, x, t):
        if not np.array_equal(x, self.grid.coords()):
            return None
        hit = np.flatnonzero(self.times == t.flat[0])
        if hit.size == 0 or np.any(t != t.flat[0]):
            return None
        return [arr[hit[0]].copy() for arr in self.arrays]

    def fields(self, x, t):
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[1:])
        vals = self._stored(x, t)
        if vals is None:
            dt = self.times[1] - self.times[0]
            s = (t - self.times[0]) / dt
            base = np.floor(s).astype(int)
            if base.min() < 1 or base.max() + 2 >= len(self.times):
                raise InsufficientHistory("boosted times fall outside the stored snapshots")
            w = lagrange4(s - base)
            vals = [np.zeros(t.shape) for _ in self.arrays]
            for b in np.unique(base):
                sel = base == b
                pts = x[:, sel]
                for kk in range(4):
                    for out, arr in zip(vals, self.arrays):
                        out[sel] += w[kk][sel] * interpolate_cubic(arr[b + kk - 1], self.grid, pts)
        n = self.grid.n
        return vals[0], vals[1], np.stack(vals[2:2 + n]), vals[2 + n]


def label_remap(history, u, constants: PhysicalConstants):
    """Label-dependent Lorentz transformation restoring q'(a', t' = 0) = a'.

    Returns a dict with the solved times t(u, a), new labels a' = q(a, t),
    the shift of the fourth label c tau(a, t), and rhobar0 transformed as a
    scalar density, rhobar0 / det(da'/da).
    """
    u = BoostParams(u, constants.c).vec
    lo, hi = getattr(history, "t_range", (-np.inf, np.inf))
    try:
        t = solve_label_times(history, u, 0.0, constants.c)
        q, _, tau, _ = history.at(t)
    except InsufficientHistory as exc:
        raise RootNotBracketed(str(exc)) from exc
    if np.any(t < lo) or np.any(t > hi):
        raise RootNotBracketed("t(u, a) falls outside the stored window")
    labels = history.labels
    n = labels.n
    jac = np.empty((n, n) + labels.shape)
    disp = q - labels.coords()
    for i in range(n):
        for j in range(n):
            jac[i, j] = fd_gradient(disp[i], labels, j) + (1.0 if i == j else 0.0)
    det = determinant(jac)
    return {"t": t, "labels": q, "a4_shift": constants.c * tau,
            "rhobar0": history.rhobar0 / det, "det": det}
