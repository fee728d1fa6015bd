"""Klein-Gordon amplitude from the congruence, the internal clock and the inverse path."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientHistory, KGCError, RegularWindowExceeded, VelocitySingularity
from .lattice import Lattice, PhysicalConstants, fd_gradient, fd_second, interpolate_cubic
from .material import KGCongruenceState, deformation
from .spatial import SpatialFields, deposit_charges, inverse_map


@dataclass(frozen=True)
class KGAmplitude:
    psi: np.ndarray
    t: float
    constants: PhysicalConstants


@dataclass(frozen=True)
class InternalClock:
    T: np.ndarray
    Tdot: np.ndarray
    alpha: float


def internal_clock(state: KGCongruenceState, constants: PhysicalConstants) -> InternalClock:
    """T = alpha exp(-tau / alpha) and its rate -tau' T / alpha."""
    alpha = constants.alpha
    T = alpha * np.exp(-state.tau / alpha)
    return InternalClock(T, -state.taudot * T / alpha, alpha)


def _check_window(state: KGCongruenceState, tau_max: float) -> None:
    bad = ~np.isfinite(state.tau) | (np.abs(state.tau) > tau_max)
    if bad.any():
        site = tuple(np.argwhere(bad)[0])
        raise RegularWindowExceeded(site, state.t, state.tau[site])


def kg_reconstruct(state: KGCongruenceState, labels: Lattice, grid: Lattice,
                   constants: PhysicalConstants, kernel: str = "multilinear",
                   tau_max: float | None = None) -> KGAmplitude:
    """Real amplitude generated by the congruence.

    ``kernel`` selects the propagator (deposition) form,
    psi = -alpha sum_a Tdot W(x - q) psidot0 da^d, with a ``nearest`` or
    ``multilinear`` kernel, or ``"direct"`` for
    (hbar / m) J^{-1} rhobar0 exp(-tau / alpha) tau' evaluated through the
    inverse map a(x, t).
    """
    tau_max = 20 * constants.alpha if tau_max is None else tau_max
    _check_window(state, tau_max)
    alpha = constants.alpha
    decay = np.exp(-state.tau / alpha)
    if kernel == "direct":
        deform = deformation(state.q, labels)
        integrand = (constants.hbar / constants.m) * state.rhobar0 / deform.J * decay * state.taudot
        a = inverse_map(state.q, labels, grid)
        return KGAmplitude(interpolate_cubic(integrand, labels, a), state.t, constants)
    tdot = -state.taudot * decay
    psidot0 = constants.c**2 * state.rhobar0
    charge = -alpha * tdot * psidot0 * labels.cell_volume
    (psi,) = deposit_charges(state.q, [charge], grid, kernel)
    return KGAmplitude(psi, state.t, constants)


def complex_amplitude(state1: KGCongruenceState, state2: KGCongruenceState, labels: Lattice,
                      grid: Lattice, constants: PhysicalConstants, kernel: str = "multilinear",
                      tau_max: float | None = None):
    """(psi_1, psi_2): real and imaginary parts generated by two independent congruences."""
    parts = []
    for index, st in enumerate((state1, state2), start=1):
        try:
            parts.append(kg_reconstruct(st, labels, grid, constants, kernel, tau_max).psi)
        except KGCError as exc:
            exc.congruence = index
            raise
    return parts[0], parts[1]


def five_relations_fields(fields: SpatialFields, psi: np.ndarray, psidot: np.ndarray,
                          grid: Lattice, constants: PhysicalConstants) -> np.ndarray:
    """Residual fields of rhobar c = d_0 psi, rhobar v_r = d_r psi, rhobar v_4 = (m c / hbar) psi.

    Rows: temporal, d spatial, fourth-coordinate relation.  Lower spatial
    indices use g_rs = -delta_rs.
    """
    c = constants.c
    rows = [c * fields.rho - psidot / c]
    rows += [-fields.mom[r] - fd_gradient(psi, grid, r) for r in range(grid.n)]
    rows.append(fields.mom4 - constants.inverse_compton * psi)
    return np.stack(rows)


def five_relations_residual(fields: SpatialFields, psi: np.ndarray, psidot: np.ndarray,
                            grid: Lattice, constants: PhysicalConstants) -> float:
    if fields.mom4 is None:
        raise InsufficientHistory("five relations need Klein-Gordon fields (rhobar v^4)")
    res = five_relations_fields(fields, psi, psidot, grid, constants)
    mask = fields.valid
    return float(np.abs(res[:, mask]).max()) if mask.any() else 0.0


def kg_residual(psi: np.ndarray, dt: float, grid: Lattice, constants: PhysicalConstants) -> float:
    """max |c^-2 psi_tt - d_rr psi + (m c / hbar)^2 psi| over interior snapshots."""
    if psi.shape[0] < 3:
        raise InsufficientHistory("Klein-Gordon residual needs at least 3 snapshots")
    c = constants.c
    mu2 = constants.inverse_compton**2
    worst = 0.0
    for n in range(1, psi.shape[0] - 1):
        res = (psi[n + 1] - 2 * psi[n] + psi[n - 1]) / (c * dt) ** 2 + mu2 * psi[n]
        for r in range(grid.n):
            res = res - fd_second(psi[n], grid, r)
        worst = max(worst, float(np.abs(res).max()))
    return worst


def central_time_derivative(hist: np.ndarray, dt: float) -> np.ndarray:
    """d/dt at interior snapshots; shape (n - 2, ...)."""
    if hist.shape[0] < 3:
        raise InsufficientHistory("need at least 3 snapshots")
    return (hist[2:] - hist[:-2]) / (2 * dt)


# ---------------------------------------------------------------------------
# amplitude-first path


@dataclass(frozen=True)
class AmplitudePaths:
    """Trajectories integrated from a given amplitude.

    ``clock`` is the signed clock alpha J psidot(q, t) / psidot0(a); its
    magnitude equals alpha exp(-tau / alpha) wherever tau is finite, and it
    passes smoothly through zero where tau diverges.  ``tau`` is held at its
    last regular value once the path leaves its regular window.
    """

    times: np.ndarray
    q: np.ndarray  # (nt, d, *shape)
    tau: np.ndarray  # (nt, *shape)
    tau_valid: np.ndarray
    log_j: np.ndarray
    clock: np.ndarray
    psidot0: np.ndarray

    def state(self, n: int, source, constants: PhysicalConstants) -> KGCongruenceState:
        """Congruence state at snapshot ``n`` with rates read off the amplitude."""
        t = float(self.times[n])
        qdot, taudot, _ = _path_rates(source, self.q[n], t, constants)
        return KGCongruenceState(t, self.q[n], qdot, self.tau[n], taudot,
                                 self.psidot0 / constants.c**2)


def _path_rates(source, q, t, constants):
    psi, grad, psidot, lap, grad_dot = source.evaluate(q, t)
    c2 = constants.c**2
    v = -c2 * grad / psidot
    taudot = psi / (constants.alpha * psidot)
    div_v = -c2 * (lap * psidot - np.sum(grad * grad_dot, axis=0)) / psidot**2
    return v, taudot, (div_v, psidot)


def trajectories_from_amplitude(source, labels: Lattice, dt: float, n_steps: int,
                                constants: PhysicalConstants, velocity_floor: float = 1e-12,
                                tau_max: float | None = None, every: int = 1) -> AmplitudePaths:
    """RK4 integration of dq^r/dt = v^r(q, t), dtau/dt = v^4 / c, d log J / dt = d_r v^r.

    ``source.evaluate(x, t)`` must return (psi, grad psi, psidot, lap psi,
    grad psidot).  Raises VelocitySingularity where |psidot| drops below
    ``velocity_floor * max|psidot0|`` at any stage.
    """
    tau_max = 20 * constants.alpha if tau_max is None else tau_max
    q = labels.coords()
    shape = labels.shape
    psidot0 = source.evaluate(q, 0.0)[2]
    floor = velocity_floor * float(np.abs(psidot0).max())

    def rhs(t, q_, tau_, lj_):
        v, taudot, (div_v, psidot) = _path_rates(source, q_, t, constants)
        bad = ~(np.abs(psidot) >= floor)
        if bad.any():
            raise VelocitySingularity(tuple(np.argwhere(bad)[0]), t)
        return v, taudot, div_v

    tau = np.zeros(shape)
    lj = np.zeros(shape)
    valid = np.ones(shape, dtype=bool)
    t = 0.0
    out_t, out_q, out_tau, out_valid, out_lj = [0.0], [q], [tau], [valid], [lj]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for step in range(1, n_steps + 1):
            k1 = rhs(t, q, tau, lj)
            k2 = rhs(t + dt / 2, *(y + dt / 2 * k for y, k in zip((q, tau, lj), k1)))
            k3 = rhs(t + dt / 2, *(y + dt / 2 * k for y, k in zip((q, tau, lj), k2)))
            k4 = rhs(t + dt, *(y + dt * k for y, k in zip((q, tau, lj), k3)))
            new = [y + dt / 6 * (a + 2 * b + 2 * c + d)
                   for y, a, b, c, d in zip((q, tau, lj), k1, k2, k3, k4)]
            t = step * dt
            q, new_tau, lj = new
            psidot_now = source.evaluate(q, t)[2]
            valid = valid & (np.sign(psidot_now) == np.sign(psidot0)) & np.isfinite(new_tau) \
                & (np.abs(new_tau) <= tau_max)
            tau = np.where(valid, new_tau, tau)
            if step % every == 0 or step == n_steps:
                out_t.append(t)
                out_q.append(q)
                out_tau.append(tau)
                out_valid.append(valid)
                out_lj.append(lj)
    times = np.array(out_t)
    qs = np.stack(out_q)
    ljs = np.stack(out_lj)
    clock = np.stack([constants.alpha * np.exp(l) * source.evaluate(qq, tt)[2] / psidot0
                      for tt, qq, l in zip(times, qs, ljs)])
    return AmplitudePaths(times, qs, np.stack(out_tau), np.stack(out_valid), ljs, clock, psidot0)


def clock_period(times: np.ndarray, clock: np.ndarray) -> np.ndarray:
    """Oscillation period of the signed clock along each trajectory.

    The signed clock vanishes twice per period, so the period is the spacing
    of every other zero crossing (linearly interpolated) averaged along the
    path.  Paths with fewer than three crossings give NaN.
    """
    flat = clock.reshape(clock.shape[0], -1)
    periods = np.full(flat.shape[1], np.nan)
    for j in range(flat.shape[1]):
        s = flat[:, j]
        idx = np.flatnonzero(np.signbit(s[1:]) != np.signbit(s[:-1]))
        if idx.size < 3:
            continue
        zeros = times[idx] - s[idx] * (times[idx + 1] - times[idx]) / (s[idx + 1] - s[idx])
        periods[j] = float(np.mean(zeros[2:] - zeros[:-2]))
    return periods.reshape(clock.shape[1:])


def trajectory_csv(paths: AmplitudePaths, labels: Lattice) -> str:
    """Rows ``label_index, t, q_1..q_d, tau, T`` in canonical label order."""
    d = labels.n
    head = "label_index,t," + ",".join(f"q_{i + 1}" for i in range(d)) + ",tau,T"
    lines = [head]
    for li in range(labels.size):
        site = np.unravel_index(li, labels.shape, order="F")
        for n, t in enumerate(paths.times):
            qs = ",".join(repr(float(paths.q[n][(i,) + site])) for i in range(d))
            lines.append(f"{li},{float(t)!r},{qs},{float(paths.tau[n][site])!r},"
                         f"{float(abs(paths.clock[n][site]))!r}")
    return "\n".join(lines) + "\n"
