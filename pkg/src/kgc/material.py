"""The trajectory engine: deformation data, initial data and the force laws.

Positions ``q`` are stored unwrapped (``q = a + displacement``); only the
displacement is periodic, so every label derivative is taken on it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDensity, JacobianCollapse, KGCError, RegularWindowExceeded
from .lattice import Lattice, SimConfig, gradient, sample


@dataclass(frozen=True)
class CauchyData:
    """Sampled initial amplitude and its time derivative on the label lattice.

    ``grad_psi0`` may be supplied when ``psi0`` is not periodic (for example a
    monotone profile); otherwise it is obtained by central differences.
    """

    lattice: Lattice
    psi0: np.ndarray
    psidot0: np.ndarray
    grad_psi0: np.ndarray | None = None

    @classmethod
    def from_functions(cls, lattice: Lattice, psi0: Callable, psidot0: Callable,
                       grad_psi0: Sequence[Callable] | None = None) -> "CauchyData":
        grad = None
        if grad_psi0 is not None:
            grad = np.stack([sample(g, lattice) for g in grad_psi0])
        return cls(lattice, sample(psi0, lattice), sample(psidot0, lattice), grad)

    def gradient(self) -> np.ndarray:
        if self.grad_psi0 is not None:
            return np.asarray(self.grad_psi0, dtype=float)
        return gradient(self.psi0, self.lattice)


@dataclass(frozen=True)
class CongruenceState:
    t: float
    q: np.ndarray  # (n, *shape), upper index
    qdot: np.ndarray
    rho0: np.ndarray

    def displacement(self, lattice: Lattice) -> np.ndarray:
        return self.q - lattice.coords()


@dataclass(frozen=True)
class KGCongruenceState:
    t: float
    q: np.ndarray  # (d, *shape)
    qdot: np.ndarray
    tau: np.ndarray
    taudot: np.ndarray
    rhobar0: np.ndarray

    def displacement(self, lattice: Lattice) -> np.ndarray:
        return self.q - lattice.coords()


@dataclass(frozen=True)
class DeformationData:
    D: np.ndarray  # (n, n, *shape): D[i, j] = dq^i / da^j
    J: np.ndarray
    adj: np.ndarray  # D @ adj = J * I


def determinant(D: np.ndarray) -> np.ndarray:
    n = D.shape[0]
    if n == 1:
        return D[0, 0].copy()
    if n == 2:
        return D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]
    if n == 3:
        return (D[0, 0] * (D[1, 1] * D[2, 2] - D[1, 2] * D[2, 1])
                - D[0, 1] * (D[1, 0] * D[2, 2] - D[1, 2] * D[2, 0])
                + D[0, 2] * (D[1, 0] * D[2, 1] - D[1, 1] * D[2, 0]))
    # Laplace expansion along the first row
    return sum((-1) ** j * D[0, j] * determinant(_minor(D, 0, j)) for j in range(n))


def _minor(D: np.ndarray, i: int, j: int) -> np.ndarray:
    rows = [r for r in range(D.shape[0]) if r != i]
    cols = [c for c in range(D.shape[1]) if c != j]
    return D[np.ix_(rows, cols)]


def adjugate(D: np.ndarray) -> np.ndarray:
    """Transpose of the cofactor matrix, batched over trailing axes."""
    n = D.shape[0]
    if n == 1:
        return np.ones_like(D)
    adj = np.empty_like(D)
    for i in range(n):
        for j in range(n):
            adj[j, i] = (-1) ** (i + j) * determinant(_minor(D, i, j))
    return adj


def deformation(q: np.ndarray, lattice: Lattice, jacobian_floor: float | None = None,
                t: float = 0.0) -> DeformationData:
    disp = q - lattice.coords()
    grads = np.stack([gradient(disp[i], lattice) for i in range(lattice.n)])
    D = grads + np.eye(lattice.n).reshape((lattice.n, lattice.n) + (1,) * lattice.n)
    J = determinant(D)
    if jacobian_floor is not None:
        check_jacobian(J, jacobian_floor, t)
    return DeformationData(D, J, adjugate(D))


def check_jacobian(J: np.ndarray, floor: float, t: float) -> None:
    bad = ~(J > floor)
    if bad.any():
        # report the earliest site in canonical order
        flat = np.flatnonzero(bad.ravel(order="F"))[0]
        site = np.unravel_index(flat, J.shape, order="F")
        raise JacobianCollapse(site, t, J[site])


def material_spatial_derivative(f: np.ndarray, deform: DeformationData, lattice: Lattice) -> np.ndarray:
    """d f / d q^i = J^{-1} J_i^j d f / d a^j, returned with shape (n, *shape)."""
    g = gradient(f, lattice)
    return np.einsum("ji...,j...->i...", deform.adj, g) / deform.J


def _density_check(rho: np.ndarray, floor: float) -> None:
    threshold = floor * float(np.abs(rho).max())
    bad = ~(np.abs(rho) >= threshold) | (threshold == 0)
    if bad.any():
        sites = np.argwhere(bad)
        raise DegenerateDensity(sites, threshold)


def init_wave(cauchy: CauchyData, config: SimConfig) -> CongruenceState:
    c = config.constants.c
    rho0 = np.asarray(cauchy.psidot0, dtype=float) / c**2
    _density_check(rho0, config.rho_floor)
    qdot_lower = cauchy.gradient() / rho0
    qdot = config.signature.raise_index(qdot_lower)
    return CongruenceState(0.0, cauchy.lattice.coords(), qdot, rho0)


def init_kg(psi0: np.ndarray, psidot0: np.ndarray, config: SimConfig,
            grad_psi0: np.ndarray | None = None) -> KGCongruenceState:
    lattice = config.lattice
    k = config.constants
    rhobar0 = np.asarray(psidot0, dtype=float) / k.c**2
    _density_check(rhobar0, config.rho_floor)
    if grad_psi0 is None:
        grad_psi0 = gradient(np.asarray(psi0, dtype=float), lattice)
    qdot = -grad_psi0 / rhobar0
    taudot = (k.m / k.hbar) * np.asarray(psi0, dtype=float) / rhobar0
    return KGCongruenceState(0.0, lattice.coords(), qdot, np.zeros(lattice.shape), taudot, rhobar0)


def _contract_divergence(W: np.ndarray, deform: DeformationData, lattice: Lattice) -> np.ndarray:
    """J d/dq^j W^{ij}, for W of shape (m, n, *shape)."""
    out = np.zeros((W.shape[0],) + lattice.shape)
    for i in range(W.shape[0]):
        for j in range(lattice.n):
            g = gradient(W[i, j], lattice)
            out[i] += np.einsum("k...,k...->...", deform.adj[:, j], g)
    return out


def wave_acceleration(q: np.ndarray, qdot: np.ndarray, rho0: np.ndarray, config: SimConfig,
                      t: float = 0.0) -> np.ndarray:
    """q''^i = (J / rho0) d/dq^j [rho0 J^{-1} (c^2 g^{ij} + q'^i q'^j)]."""
    lattice = config.lattice
    deform = deformation(q, lattice, config.jacobian_floor, t)
    c2 = config.constants.c**2
    g = config.signature.matrix().reshape((lattice.n, lattice.n) + (1,) * lattice.n)
    M = c2 * g + qdot[:, None] * qdot[None, :]
    W = (rho0 / deform.J) * M
    return _contract_divergence(W, deform, lattice) / rho0


def kg_acceleration(q: np.ndarray, qdot: np.ndarray, tau: np.ndarray, taudot: np.ndarray,
                    rhobar0: np.ndarray, config: SimConfig, t: float = 0.0,
                    check: bool = True):
    """Accelerations (q'', tau'') of the Klein-Gordon congruence.

    ``check=False`` skips the Jacobian floor (for callers that mask sites).

    The x^4 derivative acts analytically on exp(m c a^4 / hbar): it yields the
    explicit (m c^2 / hbar) source terms and, through the adjugate entries
    J_r^4 = -J c d tau / d q^r, the ``-grad_tau`` corrections below.
    """
    lattice = config.lattice
    k = config.constants
    inv_alpha = k.rest_frequency
    deform = deformation(q, lattice, config.jacobian_floor if check else None, t)
    d = lattice.n
    c2 = k.c**2
    eye = np.eye(d).reshape((d, d) + (1,) * d)
    M = -c2 * eye + qdot[:, None] * qdot[None, :]
    scale = rhobar0 / deform.J
    grad_tau = material_spatial_derivative(tau, deform, lattice)
    qdot_grad_tau = np.einsum("s...,s...->...", qdot, grad_tau)

    qdd = _contract_divergence(scale * M, deform, lattice) / rhobar0
    qdd -= inv_alpha * (-c2 * grad_tau + qdot * qdot_grad_tau)
    qdd += inv_alpha * qdot * taudot

    Z = (scale * taudot * qdot)[None]
    tdd = _contract_divergence(Z, deform, lattice)[0] / rhobar0
    tdd -= inv_alpha * taudot * qdot_grad_tau
    tdd += inv_alpha * (1.0 + taudot**2)
    return qdd, tdd


def rk4_step(t: float, pos: tuple, vel: tuple, accel: Callable, dt: float):
    """One classical RK4 step of the second-order system x'' = accel(t, x, x').

    ``pos`` and ``vel`` are tuples of arrays; ``accel`` returns a matching
    tuple.  Errors raised by ``accel`` are tagged with the failing stage.
    """

    def call(stage, tt, x, v):
        try:
            return accel(tt, x, v)
        except KGCError as exc:
            if hasattr(exc, "stage"):
                exc.stage = stage
            raise

    def axpy(base, incr, h):
        return tuple(b + h * i for b, i in zip(base, incr))

    a1 = call(1, t, pos, vel)
    x2, v2 = axpy(pos, vel, dt / 2), axpy(vel, a1, dt / 2)
    a2 = call(2, t + dt / 2, x2, v2)
    x3, v3 = axpy(pos, v2, dt / 2), axpy(vel, a2, dt / 2)
    a3 = call(3, t + dt / 2, x3, v3)
    x4, v4 = axpy(pos, v3, dt), axpy(vel, a3, dt)
    a4 = call(4, t + dt, x4, v4)
    new_pos = tuple(p + dt / 6 * (v + 2 * b + 2 * c + e)
                    for p, v, b, c, e in zip(pos, vel, v2, v3, v4))
    new_vel = tuple(v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                    for v, k1, k2, k3, k4 in zip(vel, a1, a2, a3, a4))
    return new_pos, new_vel


def step_wave(state: CongruenceState, config: SimConfig, dt: float | None = None) -> CongruenceState:
    dt = config.dt if dt is None else dt

    def accel(t, x, v):
        return (wave_acceleration(x[0], v[0], state.rho0, config, t),)

    (q,), (qdot,) = rk4_step(state.t, (state.q,), (state.qdot,), accel, dt)
    return dataclasses.replace(state, t=state.t + dt, q=q, qdot=qdot)


def step_kg(state: KGCongruenceState, config: SimConfig, dt: float | None = None) -> KGCongruenceState:
    dt = config.dt if dt is None else dt

    def accel(t, x, v):
        # leave before the force law sees a clock that has already hit zero
        _window_violation(t, x[1], v[1], (*x[0], *v[0]), config, dt)
        return kg_acceleration(x[0], v[0], x[1], v[1], state.rhobar0, config, t)

    (q, tau), (qdot, taudot) = rk4_step(state.t, (state.q, state.tau),
                                        (state.qdot, state.taudot), accel, dt)
    new = dataclasses.replace(state, t=state.t + dt, q=q, qdot=qdot, tau=tau, taudot=taudot)
    check_window(new, config, dt)
    return new


def _window_violation(t, tau, taudot, others, config: SimConfig, dt: float | None) -> None:
    bad = ~np.isfinite(tau) | (np.abs(tau) > config.tau_max) | ~np.isfinite(taudot)
    for arr in others:
        bad |= ~np.isfinite(arr)
    if dt is not None:
        # T = alpha exp(-tau / alpha) extrapolated linearly reaches zero within one step
        bad |= taudot * dt >= config.constants.alpha
    if bad.any():
        flat = np.flatnonzero(bad.ravel(order="F"))[0]
        site = np.unravel_index(flat, bad.shape, order="F")
        raise RegularWindowExceeded(site, t, tau[site])


def check_window(state: KGCongruenceState, config: SimConfig, dt: float | None = None) -> None:
    """Raise RegularWindowExceeded when tau has diverged (|tau| > tau_max or non-finite).

    With ``dt`` given, also when the clock would reach zero within one step,
    tau_dot dt >= alpha; a single step can otherwise jump across the pole.
    """
    _window_violation(state.t, state.tau, state.taudot, (*state.q, *state.qdot), config, dt)


def run(state, config: SimConfig, n_steps: int | None = None, observer: Callable | None = None,
        every: int | None = None):
    """Advance ``n_steps`` RK4 steps, returning the list of snapshots taken.

    Snapshot 0 is the initial state; further snapshots every ``every`` steps.
    ``observer(state)`` is called on each snapshot.
    """
    n_steps = config.n_steps if n_steps is None else n_steps
    every = config.snapshot_every if every is None else every
    step = step_kg if isinstance(state, KGCongruenceState) else step_wave
    snaps = [state]
    if observer:
        observer(state)
    for i in range(1, n_steps + 1):
        state = step(state, config)
        if i % every == 0 or i == n_steps:
            snaps.append(state)
            if observer:
                observer(state)
    # final deformation check so a collapse in the last step is reported
    deformation(state.q, config.lattice, config.jacobian_floor, state.t)
    return snaps


def irrotationality_residual_wave(state: CongruenceState, phi: np.ndarray, config: SimConfig,
                                  phi_jumps: Sequence[float] | None = None):
    """Residual of rho0 J^{-1} g_jk q'^j dq^k/da^i = dPhi/da^i.

    ``phi`` is Phi(a, t) = Psi(q(a, t), t) on the label lattice.
    Returns ``(max_norm, field)`` with field shape (n, *shape).
    """
    lattice = config.lattice
    deform = deformation(state.q, lattice)
    qdot_lower = config.signature.lower_index(state.qdot)
    lhs = (state.rho0 / deform.J) * np.einsum("k...,ki...->i...", qdot_lower, deform.D)
    res = lhs - gradient(phi, lattice, phi_jumps)
    return float(np.abs(res).max()), res


def irrotationality_residual_kg(state: KGCongruenceState, phi: np.ndarray, config: SimConfig):
    """Residuals of the four material relations with phi = psi(q, t) exp(tau / alpha).

    Returns ``(max_norm, field)``; field rows 0..d-1 are the gradient
    relations, the last row is rhobar0 J^{-1} tau' - (m / hbar) phi.
    """
    lattice = config.lattice
    k = config.constants
    deform = deformation(state.q, lattice)
    scale = state.rhobar0 / deform.J
    dtau = gradient(state.tau, lattice)
    lhs = scale * (k.c**2 * state.taudot * dtau - np.einsum("s...,sr...->r...", state.qdot, deform.D))
    grad_rel = lhs - gradient(phi, lattice)
    clock_rel = scale * state.taudot - (k.m / k.hbar) * phi
    res = np.concatenate([grad_rel, clock_rel[None]])
    return float(np.abs(res).max()), res


def phi_from_psi(psi: Callable, state: KGCongruenceState, constants) -> np.ndarray:
    """phi(a, t) = psi(q(a, t), t) exp(tau / alpha) for an analytic psi(t, *x)."""
    return psi(state.t, *state.q) * np.exp(state.tau / constants.alpha)
