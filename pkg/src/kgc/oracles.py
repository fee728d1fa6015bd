"""Independent ground truth: Eulerian leapfrog solvers and closed forms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CFLViolation, ConfigError, SingularLabel
from .lattice import Lattice, MetricSignature, PhysicalConstants, fd_gradient, fd_second


@dataclass(frozen=True)
class PlaneWaveParams:
    """psi = cos(omega t - k.x - phase) on the mass shell."""

    omega: float
    k: tuple[float, ...]
    constants: PhysicalConstants = PhysicalConstants()
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(float(x) for x in np.atleast_1d(self.k)))
        c = self.constants
        lhs = self.omega**2 / c.c**2 - float(np.dot(self.k, self.k))
        rhs = c.inverse_compton**2
        if abs(lhs - rhs) > 1e-12 * max(abs(rhs), self.omega**2 / c.c**2):
            raise ConfigError(f"off mass shell: omega^2/c^2 - k^2 = {lhs!r}, expected {rhs!r}")

    @classmethod
    def on_shell(cls, k, constants: PhysicalConstants = PhysicalConstants(), phase: float = 0.0):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        omega = constants.c * np.sqrt(float(k @ k) + constants.inverse_compton**2)
        return cls(float(omega), tuple(k), constants, phase)

    @property
    def kvec(self) -> np.ndarray:
        return np.array(self.k)

    @property
    def velocity(self) -> np.ndarray:
        """Trajectory velocity k c^2 / omega."""
        return self.kvec * self.constants.c**2 / self.omega

    @property
    def clock_frequency(self) -> float:
        """1 / (alpha^2 omega)."""
        return 1.0 / (self.constants.alpha**2 * self.omega)

    def label_phase(self, a: np.ndarray) -> np.ndarray:
        """theta0 = k.a + phase for labels of shape (d, ...)."""
        return np.tensordot(self.kvec, a, axes=1) + self.phase

    def singular_time(self, a: np.ndarray) -> float:
        """Conservative blow-up time: alpha^2 omega * min distance of theta0 to pi Z."""
        th = np.mod(self.label_phase(a), np.pi)
        dist = np.minimum(th, np.pi - th)
        return float(dist.min()) / self.clock_frequency


@dataclass(frozen=True)
class PlaneWaveOracle:
    params: PlaneWaveParams
    eps: float = 1e-10

    @property
    def constants(self) -> PhysicalConstants:
        return self.params.constants

    def psi(self, t, *x):
        p = self.params
        return np.cos(p.omega * t - np.tensordot(p.kvec, np.stack(x), axes=1) - p.phase)

    def psidot(self, t, *x):
        p = self.params
        return -p.omega * np.sin(p.omega * t - np.tensordot(p.kvec, np.stack(x), axes=1) - p.phase)

    def _theta0(self, a):
        th = self.params.label_phase(np.asarray(a, dtype=float))
        if np.any(np.abs(np.sin(th)) < self.eps):
            raise SingularLabel("label on a node of sin(k.a): the clock formula is singular there")
        return th

    def trajectory(self, a, t):
        a = np.asarray(a, dtype=float)
        v = self.params.velocity.reshape((-1,) + (1,) * (a.ndim - 1))
        return a + v * t

    def signed_clock(self, a, t):
        th = self._theta0(a)
        alpha = self.constants.alpha
        return alpha * np.sin(th - t * self.params.clock_frequency) / np.sin(th)

    def clock(self, a, t):
        return np.abs(self.signed_clock(a, t))

    def tau(self, a, t):
        return -self.constants.alpha * np.log(self.clock(a, t) / self.constants.alpha)

    def taudot(self, a, t):
        th = self._theta0(a)
        p = self.params
        return 1.0 / (np.tan(th - t * p.clock_frequency) * self.constants.alpha * p.omega)

    def state_at(self, a, t):
        """(q, qdot, tau, taudot) at per-label times ``t`` (broadcast against a[0])."""
        a = np.asarray(a, dtype=float)
        t = np.broadcast_to(t, a.shape[1:])
        v = self.params.velocity.reshape((-1,) + (1,) * (a.ndim - 1))
        return a + v * t, np.broadcast_to(v, a.shape).copy(), self.tau(a, t), self.taudot(a, t)


def plane_wave_oracle(params: PlaneWaveParams, constants: PhysicalConstants | None = None):
    """Closed-form (psi, trajectory, clock) evaluators for a plane wave."""
    if constants is not None and constants != params.constants:
        params = PlaneWaveParams(params.omega, params.k, constants, params.phase)
    o = PlaneWaveOracle(params)
    return o.psi, o.trajectory, o.clock


@dataclass(frozen=True)
class ModeSum:
    """Real superposition sum_m A_m cos(omega_m t - k_m.x - phi_m) of on-shell modes.

    Provides everything the amplitude-first path needs: psi, its gradient,
    time derivative, Laplacian and gradient of the time derivative.
    """

    amplitudes: tuple[float, ...]
    wavevectors: tuple[tuple[float, ...], ...]
    phases: tuple[float, ...]
    constants: PhysicalConstants = PhysicalConstants()

    @property
    def omegas(self) -> np.ndarray:
        c = self.constants
        k2 = np.array([np.dot(k, k) for k in self.wavevectors])
        return c.c * np.sqrt(k2 + c.inverse_compton**2)

    @property
    def d(self) -> int:
        return len(self.wavevectors[0])

    def _args(self, t, x):
        x = np.asarray(x, dtype=float)
        for A, k, ph, w in zip(self.amplitudes, self.wavevectors, self.phases, self.omegas):
            kk = np.asarray(k).reshape((-1,) + (1,) * (x.ndim - 1))
            yield A, kk, w, w * t - np.sum(kk * x, axis=0) - ph

    def psi(self, t, *x):
        return sum(A * np.cos(arg) for A, _, _, arg in self._args(t, np.stack(x)))

    def psidot(self, t, *x):
        return sum(-A * w * np.sin(arg) for A, _, w, arg in self._args(t, np.stack(x)))

    def evaluate(self, x, t):
        """(psi, grad_psi, psidot, lap_psi, grad_psidot) at points x of shape (d, ...)."""
        x = np.asarray(x, dtype=float)
        psi = np.zeros(x.shape[1:])
        psidot = np.zeros_like(psi)
        lap = np.zeros_like(psi)
        grad = np.zeros_like(x)
        grad_dot = np.zeros_like(x)
        for A, kk, w, arg in self._args(t, x):
            cs, sn = np.cos(arg), np.sin(arg)
            psi += A * cs
            psidot -= A * w * sn
            grad += A * kk * sn
            lap -= A * np.sum(kk * kk) * cs
            grad_dot += A * w * kk * cs
        return psi, grad, psidot, lap, grad_dot


def plane_wave_source(params: PlaneWaveParams) -> ModeSum:
    return ModeSum((1.0,), (params.k,), (params.phase,), params.constants)


def dalembert(F: Callable, G: Callable, x, t, c: float = 1.0):
    """Psi = F(x - c t) + G(x + c t)."""
    return F(x - c * t) + G(x + c * t)


def _laplacian(psi, lattice, zeta, jumps):
    return sum(-z * fd_second(psi, lattice, i, jumps[i]) for i, z in enumerate(zeta))


def _leapfrog(psi0, psidot0, lattice: Lattice, zeta, c, mass_frequency, dt, steps, jumps=None):
    if c * dt / float(lattice.spacing.min()) > 0.5 * (1 + 1e-12):
        raise CFLViolation(f"leapfrog needs c dt / dx <= 0.5, got {c * dt / lattice.spacing.min():.4g}")
    jumps = tuple(jumps) if jumps is not None else (0.0,) * lattice.n
    mu2 = mass_frequency**2

    def accel(p):
        return c**2 * _laplacian(p, lattice, zeta, jumps) - mu2 * p

    hist = np.empty((steps + 1,) + lattice.shape)
    hist[0] = psi0
    if steps == 0:
        return hist
    hist[1] = psi0 + dt * psidot0 + 0.5 * dt**2 * accel(psi0)
    for n in range(1, steps):
        hist[n + 1] = 2 * hist[n] - hist[n - 1] + dt**2 * accel(hist[n])
    return hist


def leapfrog_wave(psi0, psidot0, lattice: Lattice, signature: MetricSignature, dt: float, steps: int,
                  c: float = 1.0, jumps: Sequence[float] | None = None) -> np.ndarray:
    """Three-level leapfrog for g^{mu nu} d_mu d_nu Psi = 0; returns (steps + 1, *shape).

    ``jumps`` gives the per-axis increment of a quasi-periodic Psi.
    """
    return _leapfrog(psi0, psidot0, lattice, signature.zeta, c, 0.0, dt, steps, jumps)


def leapfrog_kg(psi0, psidot0, lattice: Lattice, constants: PhysicalConstants, dt: float,
                steps: int, mass_frequency: float | None = None) -> np.ndarray:
    """Leapfrog for the Klein-Gordon equation; ``mass_frequency`` overrides m c^2 / hbar."""
    mu = constants.rest_frequency if mass_frequency is None else mass_frequency
    zeta = (-1,) * lattice.n
    return _leapfrog(psi0, psidot0, lattice, zeta, constants.c, mu, dt, steps)


def wave_energy(prev: np.ndarray, cur: np.ndarray, lattice: Lattice, signature: MetricSignature,
                dt: float, c: float = 1.0) -> float:
    """Discrete energy conserved exactly by the leapfrog scheme (half-step form)."""
    e = ((cur - prev) / dt) ** 2
    for i, z in enumerate(signature.zeta):
        h = lattice.spacing[i]
        dp = (np.roll(prev, -1, axis=i) - prev) / h
        dc = (np.roll(cur, -1, axis=i) - cur) / h
        e = e - z * c**2 * dp * dc
    return float(e.sum() * lattice.cell_volume)


def kg_mode_zero(psi0: float, psidot0: float, t, constants: PhysicalConstants):
    mu = constants.rest_frequency
    return psi0 * np.cos(mu * t) + psidot0 / mu * np.sin(mu * t)
