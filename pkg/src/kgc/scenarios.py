"""Desk-scale runs shared by the command line, the verification suites and the tests.

Each builder returns an :class:`Outcome` holding scalar metrics, explicit
pass/fail checks, tidy time-series rows and named field dumps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .covariance import OracleHistory, covariance_residual
from .kg import (central_time_derivative, clock_period, complex_amplitude, five_relations_residual,
                 internal_clock, kg_reconstruct, kg_residual, trajectories_from_amplitude)
from .lattice import Lattice, MetricSignature, PhysicalConstants, SimConfig
from .material import (CauchyData, deformation, init_kg, init_wave, irrotationality_residual_kg,
                       irrotationality_residual_wave, phi_from_psi, run)
from .oracles import ModeSum, PlaneWaveOracle, PlaneWaveParams, plane_wave_source
from .spatial import (deposit, gradient_condition_residual, pullback, pullback_kg,
                      reconstruct_amplitude)


@dataclass
class Outcome:
    name: str
    metrics: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    series: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def convergence_order(errors, ratio: float = 2.0) -> list[float]:
    e = np.asarray(errors, dtype=float)
    return list(np.log(e[:-1] / e[1:]) / np.log(ratio))


# ---------------------------------------------------------------------------
# wave equation


def monotone_profile(eps: float = 0.5, length: float = 1.0):
    """F(s) = -s + eps L / (2 pi) sin(2 pi s / L); Psi = F(x - c t) has Psi_t = -F' > 0."""
    kk = 2 * np.pi / length

    def F(s):
        return -s + eps / kk * np.sin(kk * s)

    def Fp(s):
        return -1.0 + eps * np.cos(kk * s)

    return F, Fp


def wave_dalembert(N: int = 256, cfl: float = 0.25, t_end: float = 1.0, eps: float = 0.5,
                   length: float = 1.0, kernel: str = "multilinear", tol: float = 1e-2,
                   constants: PhysicalConstants = PhysicalConstants()) -> Outcome:
    """1+1 right-moving monotone profile; Psi reconstructed from the congruence."""
    c = constants.c
    lat = Lattice.cube(1, N, length)
    dt = cfl * lat.spacing[0] / c
    steps = int(round(t_end / dt))
    cfg = SimConfig(constants, MetricSignature((-1,)), lat, dt=dt, n_steps=steps, kernel=kernel)
    F, Fp = monotone_profile(eps, length)
    cauchy = CauchyData.from_functions(lat, F, lambda x: -c * Fp(x), [Fp])
    hist, minj = [], []

    def observe(s):
        hist.append(deposit(s, lat, lat, kernel, cfg.rho_floor))
        minj.append((s.t, float(deformation(s.q, lat).J.min())))

    start = time.perf_counter()
    snaps = run(init_wave(cauchy, cfg), cfg, observer=observe)
    times, psi = reconstruct_amplitude(hist, cauchy.psi0, c)
    runtime = time.perf_counter() - start
    x = lat.coords()[0]
    errs = [float(np.abs(p - F(x - c * t)).max()) for t, p in zip(times, psi)]
    out = Outcome("wave-dalembert")
    out.metrics.update(N=N, dt=dt, linf=max(errs), runtime=runtime, min_J=min(j for _, j in minj))
    out.checks["linf"] = max(errs) < tol
    out.series = [(t, "linf_error", e) for t, e in zip(times, errs)]
    out.series += [(t, "min_J", j) for t, j in minj]
    out.fields = {"psi": (psi[-1], lat), "q": (snaps[-1].q, lat)}
    return out


def wave_focusing(N: int = 128, B: float = 0.7, phase: float = 0.4 * np.pi,
                  t_end: float = 1.0, constants: PhysicalConstants = PhysicalConstants(),
                  cfl: float = 0.25):
    """Counter-propagating data whose density later changes sign, folding the congruence.

    rho = 1 - B cos(2 pi (x - t) - phase) - B cos(2 pi (x + t) + phase) is
    positive initially (2 B cos(phase) < 1) but not for all t (2 B > 1).
    Returns the config and the initial state; running it raises
    JacobianCollapse.
    """
    lat = Lattice.cube(1, N, 1.0)
    s = np.sin(phase)
    cauchy = CauchyData.from_functions(
        lat,
        lambda x: -(B / np.pi) * np.cos(2 * np.pi * x) * s,
        lambda x: 1 - 2 * B * np.cos(phase) * np.cos(2 * np.pi * x),
        [lambda x: 2 * B * np.sin(2 * np.pi * x) * s],
    )
    dt = cfl * lat.spacing[0] / constants.c
    cfg = SimConfig(constants, MetricSignature((-1,)), lat, dt=dt, n_steps=int(round(t_end / dt)))
    return cfg, init_wave(cauchy, cfg)


@dataclass(frozen=True)
class DriftingWave:
    """Psi = A t + eps sum_m sin(k_m.x - c|k_m| t), an exact solution of the wave equation.

    Psi_t > 0 everywhere when A > eps sum_m c|k_m|.
    """

    A: float
    eps: float
    ks: tuple[tuple[float, ...], ...]
    c: float = 1.0

    def _modes(self, t, x):
        x = np.stack(x)
        for k in self.ks:
            kk = np.asarray(k, dtype=float).reshape((-1,) + (1,) * (x.ndim - 1))
            w = self.c * float(np.linalg.norm(k))
            yield kk, w, np.sum(kk * x, axis=0) - w * t

    def psi(self, t, *x):
        return self.A * t + self.eps * sum(np.sin(arg) for _, _, arg in self._modes(t, x))

    def psidot(self, t, *x):
        return self.A - self.eps * sum(w * np.cos(arg) for _, w, arg in self._modes(t, x))

    def grad(self, t, *x):
        return self.eps * sum(kk * np.cos(arg) for kk, _, arg in self._modes(t, x))


def _drifting_modes(d: int):
    # unequal components so the discrete curl is a real test in d > 1
    return {1: ((2 * np.pi,),), 2: ((2 * np.pi, 4 * np.pi),),
            3: ((2 * np.pi, 4 * np.pi, 0.0), (0.0, 2 * np.pi, 4 * np.pi))}[d]


def wave_drifting(d: int = 2, N: int = 64, t_end: float = 0.25, cfl: float = 0.25,
                  A: float = 1.0, eps: float = 0.02, kernel: str = "multilinear",
                  tol: float = 1e-2, constants: PhysicalConstants = PhysicalConstants()) -> Outcome:
    """Drifting wave in d dimensions; Psi reconstructed from deposited densities."""
    c = constants.c
    lat = Lattice.cube(d, N, 1.0)
    wave = DriftingWave(A, eps, _drifting_modes(d), c)
    dt = cfl * lat.spacing[0] / c
    cfg = SimConfig(constants, MetricSignature.spatial(d), lat, dt=dt,
                    n_steps=max(1, int(round(t_end / dt))), kernel=kernel)
    x = lat.coords()
    cauchy = CauchyData(lat, wave.psi(0.0, *x), wave.psidot(0.0, *x), wave.grad(0.0, *x))
    hist, minj = [], []

    def observe(s):
        hist.append(deposit(s, lat, lat, kernel, cfg.rho_floor))
        minj.append((s.t, float(deformation(s.q, lat).J.min())))

    start = time.perf_counter()
    snaps = run(init_wave(cauchy, cfg), cfg, observer=observe)
    times, psi = reconstruct_amplitude(hist, cauchy.psi0, c)
    errs = [float(np.abs(p - wave.psi(t, *x)).max()) for t, p in zip(times, psi)]
    out = Outcome(f"wave-drifting-{d}d")
    out.metrics.update(N=N, d=d, dt=dt, linf=max(errs), min_J=min(j for _, j in minj),
                       runtime=time.perf_counter() - start)
    out.checks["linf"] = max(errs) < tol
    out.series = [(t, "linf_error", e) for t, e in zip(times, errs)]
    out.series += [(t, "min_J", j) for t, j in minj]
    out.fields = {"psi": (psi[-1], lat), "q": (snaps[-1].q, lat)}
    return out


def wave_irrotational(d: int = 2, N: int = 64, t_end: float = 0.25, cfl: float = 0.25,
                      A: float = 1.0, eps: float = 0.02,
                      constants: PhysicalConstants = PhysicalConstants()) -> Outcome:
    """Material (2.12) and spatial curl residuals on a smooth drifting wave in d dimensions."""
    c = constants.c
    lat = Lattice.cube(d, N, 1.0)
    wave = DriftingWave(A, eps, _drifting_modes(d), c)
    dt = cfl * lat.spacing[0] / c
    steps = max(1, int(round(t_end / dt)))
    cfg = SimConfig(constants, MetricSignature.spatial(d), lat, dt=dt, n_steps=steps)
    cauchy = CauchyData(lat, wave.psi(0.0, *lat.coords()), wave.psidot(0.0, *lat.coords()),
                        wave.grad(0.0, *lat.coords()))
    start = time.perf_counter()
    snaps = run(init_wave(cauchy, cfg), cfg)
    worst_mat, worst_curl = 0.0, 0.0
    out = Outcome(f"wave-irrotational-{d}d")
    # Phi = Psi(q, t) grows by A t only; the spatial part is periodic in a
    for s in snaps[:: max(1, steps // 4)] + [snaps[-1]]:
        phi = wave.psi(s.t, *s.q)
        r, _ = irrotationality_residual_wave(s, phi, cfg)
        worst_mat = max(worst_mat, r)
        out.series.append((s.t, "irrotationality_material", r))
        if d > 1:
            rc = gradient_condition_residual(pullback(s, lat, lat), lat, cfg.signature)
            worst_curl = max(worst_curl, rc)
            out.series.append((s.t, "curl", rc))
    out.metrics.update(N=N, d=d, material=worst_mat, curl=worst_curl if d > 1 else "skipped",
                       runtime=time.perf_counter() - start)
    return out


# ---------------------------------------------------------------------------
# Klein-Gordon


def plane_wave_setup(k=0.6, N: int = 256, window: float = 0.4, n_steps: int = 100,
                     constants: PhysicalConstants = PhysicalConstants(), phase: float = 0.0):
    """Plane-wave labels and a config whose run ends at ``window`` times the earliest
    singular time.

    Each axis spans one wavelength of its wavevector component (or 2 pi / |k|
    when that component vanishes).  Label phases are then multiples of
    2 pi / N plus the summed offsets, so offsets of half a cell in total keep
    every label off the nodes of sin(k.a).
    """
    pw = PlaneWaveParams.on_shell(k, constants, phase)
    kv = pw.kvec
    kmag = float(np.linalg.norm(kv))
    box = [2 * np.pi / abs(x) if x != 0 else 2 * np.pi / kmag for x in kv]
    lat = Lattice((N,) * kv.size, box, tuple(0.5 / kv.size * b / N for b in box))
    t_sing = pw.singular_time(lat.coords())
    dt = window * t_sing / n_steps
    cfg = SimConfig(constants, MetricSignature.spatial(lat.n), lat, dt=dt, n_steps=n_steps,
                    window=window)
    return pw, lat, cfg, t_sing


def _plane_wave_gradient(pw: PlaneWaveParams, a: np.ndarray) -> np.ndarray:
    return -pw.kvec.reshape((-1,) + (1,) * (a.ndim - 1)) * np.sin(pw.label_phase(a))


def kg_planewave_material(k: float = 0.6, N: int = 256, window: float = 0.4, n_steps: int = 100,
                          kernel: str = "multilinear",
                          constants: PhysicalConstants = PhysicalConstants()) -> Outcome:
    """Material-path run of a plane wave: amplitude, trajectory and clock against closed forms."""
    pw, lat, cfg, t_sing = plane_wave_setup(k, N, window, n_steps, constants)
    oracle = PlaneWaveOracle(pw)
    a = lat.coords()
    psi0, psidot0 = oracle.psi(0.0, *a), oracle.psidot(0.0, *a)
    grad0 = _plane_wave_gradient(pw, a)
    state = init_kg(psi0, psidot0, cfg, grad_psi0=grad0)
    out = Outcome("kg-planewave-material")
    rec0 = kg_reconstruct(state, lat, lat, constants, kernel).psi
    out.metrics["t0_error"] = float(np.abs(rec0 - psi0).max())
    out.metrics["T0_error"] = float(np.abs(internal_clock(state, constants).T - constants.alpha).max())
    start = time.perf_counter()
    snaps = run(state, cfg)
    out.metrics["runtime"] = time.perf_counter() - start
    rec_err = clock_err = q_err = 0.0
    for s in snaps:
        x = lat.coords()
        r = float(np.abs(kg_reconstruct(s, lat, lat, constants, kernel).psi
                         - oracle.psi(s.t, *x)).max())
        ce = float(np.abs(internal_clock(s, constants).T - oracle.clock(a, s.t)).max())
        qe = float(np.abs(s.q - oracle.trajectory(a, s.t)).max())
        rec_err, clock_err, q_err = max(rec_err, r), max(clock_err, ce), max(q_err, qe)
        out.series += [(s.t, "reconstruction_error", r), (s.t, "clock_error", ce),
                       (s.t, "trajectory_error", qe)]
    out.metrics.update(N=N, window=window, t_sing=t_sing, t_end=snaps[-1].t,
                       reconstruction=rec_err, clock=clock_err, trajectory=q_err)
    out.checks["t0_exact"] = out.metrics["t0_error"] < 1e-10
    out.checks["reconstruction"] = rec_err < 5e-2
    out.checks["T0"] = out.metrics["T0_error"] == 0.0
    out.checks["clock_pointwise"] = clock_err < 1e-3
    last = snaps[-1]
    out.fields = {"psi": (kg_reconstruct(last, lat, lat, constants, kernel).psi, lat),
                  "q": (last.q, lat), "tau": (last.tau, lat)}
    return out


def kg_planewave_amplitude(k: float = 0.6, N: int = 32, periods: float = 1.0,
                           steps_per_period: int = 500,
                           constants: PhysicalConstants = PhysicalConstants(),
                           tol: float = 1e-6) -> Outcome:
    """Amplitude-first trajectories of a plane wave over ``periods`` wave periods 2 pi / omega."""
    pw, lat, _, _ = plane_wave_setup(k, N, 0.4, 1, constants)
    source = plane_wave_source(pw)
    t_end = periods * 2 * np.pi / pw.omega
    n = int(round(periods * steps_per_period))
    start = time.perf_counter()
    paths = trajectories_from_amplitude(source, lat, t_end / n, n, constants)
    runtime = time.perf_counter() - start
    a = lat.coords()
    v = pw.velocity.reshape((-1,) + (1,) * lat.n)
    dev = [float(np.abs(q - (a + v * t)).max())
           for t, q in zip(paths.times, paths.q)]
    out = Outcome("kg-planewave-amplitude")
    out.metrics.update(N=N, t_end=t_end, max_deviation=max(dev), runtime=runtime)
    out.checks["trajectories"] = max(dev) < tol
    out.series = [(t, "trajectory_deviation", e) for t, e in zip(paths.times, dev)]
    out.fields = {"q": (paths.q[-1], lat)}
    return out


def kg_clock(k: float = 0.6, N: int = 16, periods: float = 3.2, steps_per_period: int = 2003,
             constants: PhysicalConstants = PhysicalConstants()) -> Outcome:
    """Signed clock along amplitude-first paths over several clock periods 2 pi alpha^2 omega."""
    pw, lat, _, _ = plane_wave_setup(k, N, 0.4, 1, constants)
    oracle = PlaneWaveOracle(pw)
    expected = 2 * np.pi / pw.clock_frequency
    t_end = periods * expected
    n = int(round(periods * steps_per_period))
    paths = trajectories_from_amplitude(plane_wave_source(pw), lat, t_end / n, n, constants)
    a = lat.coords()
    period = clock_period(paths.times, paths.clock)
    rel = np.abs(period / expected - 1)
    closed = np.stack([oracle.signed_clock(a, t) for t in paths.times])
    pointwise = float(np.abs(paths.clock - closed).max())
    out = Outcome("kg-clock")
    out.metrics.update(expected_period=expected, worst_relative=float(np.nanmax(rel)),
                       pointwise=pointwise, T0=float(np.abs(paths.clock[0] - constants.alpha).max()))
    out.checks["period"] = bool(np.all(np.isfinite(rel)) and np.nanmax(rel) < 1e-2)
    out.checks["T0"] = out.metrics["T0"] == 0.0
    out.checks["pointwise"] = pointwise < 1e-3
    return out


def smooth_superposition(constants: PhysicalConstants = PhysicalConstants(), amplitude: float = 0.3):
    """psi = sin(mu t) + amplitude cos(omega t - x): psidot0 = mu + amplitude omega sin x > 0."""
    return ModeSum((1.0, amplitude), ((0.0,), (1.0,)), (np.pi / 2, 0.0), constants)


def kg_smooth(N: int, t_end: float = 0.5, cfl: float = 0.25,
              constants: PhysicalConstants = PhysicalConstants()) -> Outcome:
    """Residuals on fields reconstructed from a material run of smooth superposition data."""
    src = smooth_superposition(constants)
    lat = Lattice.cube(1, N, 2 * np.pi)
    dt = cfl * lat.spacing[0] / constants.c
    cfg = SimConfig(constants, MetricSignature.spatial(1), lat, dt=dt, n_steps=int(round(t_end / dt)))
    psi0, grad0, psidot0, _, _ = src.evaluate(lat.coords(), 0.0)
    start = time.perf_counter()
    snaps = run(init_kg(psi0, psidot0, cfg, grad_psi0=grad0), cfg)
    fields = [pullback_kg(s, lat, lat, constants) for s in snaps]
    psi = np.stack([kg_reconstruct(s, lat, lat, constants, "direct").psi for s in snaps])
    psidot = central_time_derivative(psi, dt)
    out = Outcome(f"kg-smooth-{N}")
    five = [five_relations_residual(f, p, pd, lat, constants)
            for f, p, pd in zip(fields[1:-1], psi[1:-1], psidot)]
    irr = [irrotationality_residual_kg(s, phi_from_psi(src.psi, s, constants), cfg)[0] for s in snaps]
    x = lat.coords()
    err = max(float(np.abs(p - src.psi(s.t, *x)).max()) for p, s in zip(psi, snaps))
    out.metrics.update(N=N, dt=dt, five_relations=max(five), kg_residual=kg_residual(psi, dt, lat, constants),
                       irrotationality=max(irr), reconstruction=err,
                       runtime=time.perf_counter() - start)
    out.series = [(s.t, "five_relations", r) for s, r in zip(snaps[1:-1], five)]
    out.series += [(s.t, "irrotationality", r) for s, r in zip(snaps, irr)]
    out.fields = {"psi": (psi[-1], lat)}
    return out


def kg_quadrature(k: float = 0.6, N: int = 256, window: float = 0.4, n_steps: int = 100,
                  constants: PhysicalConstants = PhysicalConstants(), tol: float = 5e-2) -> Outcome:
    """Two congruences in quadrature: cos and sin parts of exp(i(omega t - k x))."""
    pw1, lat, _, t1 = plane_wave_setup(k, N, window, n_steps, constants)
    pw2 = PlaneWaveParams.on_shell(k, constants, phase=np.pi / 2)
    t2 = pw2.singular_time(lat.coords())
    t_end = window * min(t1, t2)
    cfg = SimConfig(constants, MetricSignature.spatial(lat.n), lat, dt=t_end / n_steps,
                    n_steps=n_steps, window=window)
    a = lat.coords()
    runs = []
    for pw in (pw1, pw2):
        o = PlaneWaveOracle(pw)
        grad0 = _plane_wave_gradient(pw, a)
        runs.append(run(init_kg(o.psi(0.0, *a), o.psidot(0.0, *a), cfg, grad_psi0=grad0), cfg))
    worst = 0.0
    out = Outcome("kg-quadrature")
    for s1, s2 in zip(*runs):
        p1, p2 = complex_amplitude(s1, s2, lat, lat, constants)
        dev = float(np.abs(np.hypot(p1, p2) - 1).max())
        worst = max(worst, dev)
        out.series.append((s1.t, "modulus_deviation", dev))
    out.metrics.update(N=N, t_end=t_end, modulus=worst)
    out.checks["modulus"] = worst < tol
    return out


def covariance_planewave(k: float = 0.6, N: int = 2048, u: float = 1e-2, t_prime: float = 3e-3,
                         delta: float = 1e-3, sign: float = 1.0, mask_level: float = 0.4,
                         constants: PhysicalConstants = PhysicalConstants()):
    """Boost scaling report on exact plane-wave data (labels with |sin theta0| > mask_level)."""
    pw = PlaneWaveParams.on_shell((k,), constants)
    lat = Lattice.cube(1, N, 2 * np.pi / k, offset=0.5)
    history = OracleHistory(PlaneWaveOracle(pw), lat)
    cfg = SimConfig(constants, MetricSignature.spatial(1), lat, dt=delta, n_steps=1)
    mask = np.abs(np.sin(pw.label_phase(lat.coords()))) > mask_level
    return covariance_residual(history, (u,), t_prime, cfg, delta=delta, mask=mask, sign=sign)
