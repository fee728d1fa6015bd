"""Named invariant suites run by ``kgc verify``.

Every check returns ``(ok, detail)``; a suite result lists each check by
module and invariant name.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .covariance import (AmplitudeFields, OracleHistory, boost_material, boost_spatial,
                         label_remap, seam_mask)
from .errors import JacobianCollapse, RegularWindowExceeded
from .io import field_from_bytes, field_to_bytes
from .kg import five_relations_fields
from .lattice import (Lattice, MetricSignature, PhysicalConstants, fd_gradient, fd_second,
                      interpolate, interpolate_cubic, sample)
from .material import adjugate, deformation, determinant, rk4_step, run
from .oracles import (PlaneWaveOracle, PlaneWaveParams, kg_mode_zero, leapfrog_kg, leapfrog_wave,
                      plane_wave_source, wave_energy)
from . import scenarios

SUITES = ("core", "wave", "kg", "covariance", "all")


@dataclass
class CheckResult:
    module: str
    name: str
    ok: bool
    detail: str
    seconds: float


# ---------------------------------------------------------------------------
# core


def _fd_order():
    errs = []
    for n in (32, 64):
        lat = Lattice.cube(1, n, 2 * np.pi)
        f = sample(np.sin, lat)
        errs.append(np.abs(fd_gradient(f, lat, 0) - np.cos(lat.coords()[0])).max())
    ratio = errs[0] / errs[1]
    return 3.0 <= ratio <= 5.0, f"error ratio {ratio:.3f}"


def _interp_exact():
    lat = Lattice((8, 6), (1.0, 2.0))
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (2, 50)) * np.array([1.0, 2.0])[:, None]
    f = sample(lambda x, y: 2 + 3 * x - y, lat)
    # affine data away from the periodic seam is reproduced exactly
    inside = (pts[0] < 1 - 1 / 8) & (pts[1] < 2 - 2 / 6)
    err = np.abs(interpolate(f, lat, pts[:, inside]) - (2 + 3 * pts[0, inside] - pts[1, inside])).max()
    g = sample(lambda x, y: np.cos(2 * np.pi * x) * np.sin(np.pi * y), lat)
    node = interpolate_cubic(g, lat, lat.coords())
    return err < 1e-12 and np.array_equal(node, g), f"affine error {err:.2e}"


def _roundtrip():
    lat = Lattice((3, 4), (1.0, 2.0))
    v = np.random.default_rng(1).normal(size=(2, 3, 4))
    lat2, back = field_from_bytes(field_to_bytes(v, lat))
    return lat2.counts == lat.counts and np.array_equal(back, v), "binary dump round trip"


def _adjugate():
    rng = np.random.default_rng(2)
    worst = 0.0
    for n in (1, 2, 3, 4):
        D = rng.normal(size=(n, n, 5))
        J = determinant(D)
        prod = np.einsum("ij...,jk...->ik...", D, adjugate(D))
        worst = max(worst, float(np.abs(prod - J * np.eye(n)[:, :, None]).max()))
    return worst < 1e-10, f"max |D adj - J I| = {worst:.2e}"


def _rk4():
    def accel(t, x, v):
        return (-x[0],)

    x, v = (np.array(1.0),), (np.array(0.0),)
    for _ in range(10):
        x, v = rk4_step(0.0, x, v, accel, 0.01)
    err = abs(float(x[0]) - 0.99500417)
    return err < 1e-8, f"|x(0.1) - cos 0.1| = {err:.2e}"


def _leapfrog_energy():
    lat = Lattice.cube(1, 64, 1.0)
    sig = MetricSignature((-1,))
    psi0 = sample(lambda x: np.sin(2 * np.pi * x), lat)
    dt = 0.25 / 64
    hist = leapfrog_wave(psi0, np.zeros_like(psi0), lat, sig, dt, 400)
    e = [wave_energy(hist[n - 1], hist[n], lat, sig, dt) for n in range(1, 401)]
    drift = (max(e) - min(e)) / e[0]
    return drift < 1e-8, f"relative energy drift {drift:.2e}"


def _leapfrog_mass():
    k = PhysicalConstants()
    lat = Lattice.cube(1, 16, 1.0)
    dt = 0.01
    hist = leapfrog_kg(np.ones(lat.shape), np.zeros(lat.shape), lat, k, dt, 100)
    err = float(np.abs(hist[-1] - kg_mode_zero(1.0, 0.0, 1.0, k)).max())
    return err < 1e-4, f"k = 0 mode error {err:.2e}"


def _collapse():
    cfg, state = scenarios.wave_focusing(64)
    try:
        run(state, cfg)
    except JacobianCollapse as exc:
        return True, f"collapse at site {exc.site}, t = {exc.t:.4g}"
    return False, "trajectories crossed without detection"


# ---------------------------------------------------------------------------
# wave


def _dalembert():
    errs = [scenarios.wave_dalembert(n).metrics["linf"] for n in (64, 128)]
    ratio = errs[0] / errs[1]
    return errs[1] < 1e-2 and 3.0 <= ratio <= 5.0, f"L_inf {errs[1]:.2e}, ratio {ratio:.3f}"


def _wave_irrotational():
    errs = [scenarios.wave_irrotational(2, n, t_end=0.0625).metrics for n in (32, 64)]
    ratio = errs[0]["material"] / errs[1]["material"]
    return ratio > 3.0 and errs[1]["curl"] < errs[0]["curl"] / 3, \
        f"material ratio {ratio:.2f}, curl {errs[1]['curl']:.2e}"


def _plane_wave_leapfrog():
    k = PhysicalConstants()
    pw = PlaneWaveParams.on_shell((1.0,), k)
    o = PlaneWaveOracle(pw)
    lat = Lattice.cube(1, 128, 2 * np.pi)
    x = lat.coords()
    dt = 0.2 * lat.spacing[0]
    hist = leapfrog_kg(o.psi(0, *x), o.psidot(0, *x), lat, k, dt, 100)
    err = float(np.abs(hist[-1] - o.psi(100 * dt, *x)).max())
    return err < 1e-2, f"leapfrog vs closed form {err:.2e}"


# ---------------------------------------------------------------------------
# kg


def _amplitude_first():
    out = scenarios.kg_planewave_amplitude()
    return out.passed, f"max deviation {out.metrics['max_deviation']:.2e}"


def _material_plane_wave():
    out = scenarios.kg_planewave_material(N=128)
    return out.passed, (f"reconstruction {out.metrics['reconstruction']:.2e}, "
                        f"clock {out.metrics['clock']:.2e}")


def _clock_period():
    out = scenarios.kg_clock(periods=2.2, steps_per_period=1001)
    return out.passed, f"worst relative period error {out.metrics['worst_relative']:.2e}"


def _window():
    try:
        scenarios.kg_planewave_material(N=64, window=2.0)
    except RegularWindowExceeded as exc:
        return True, f"left window at site {exc.site}, t = {exc.t:.4g}"
    return False, "run past the singular time completed"


def _quadrature():
    out = scenarios.kg_quadrature(N=128)
    return out.passed, f"max ||psi| - 1| = {out.metrics['modulus']:.2e}"


# ---------------------------------------------------------------------------
# covariance


def _boost_scaling():
    rep = scenarios.covariance_planewave()
    ok = rep.verdict == "PASS" and 1.7 <= rep.exponent_eq34 <= 2.3 and 1.7 <= rep.exponent_eq21 <= 2.3
    return ok, f"exponents {rep.exponent_eq34:.3f} (3.4), {rep.exponent_eq21:.3f} (2.1)"


def _sign_flip():
    rep = scenarios.covariance_planewave(sign=-1.0)
    return rep.verdict == "FAIL" and rep.exponent < 1.5, f"exponent {rep.exponent:.3f}"


def _spatial_identity():
    k = PhysicalConstants()
    pw = PlaneWaveParams.on_shell((0.6,), k)
    lat = Lattice.cube(1, 64, 2 * np.pi / 0.6)
    src = AmplitudeFields(plane_wave_source(pw), k)
    f0, p0 = boost_spatial(src, lat, (0.0,), 0.3, k)
    psi, rho, mom, mom4 = src.fields(lat.coords(), np.full(lat.shape, 0.3))
    same = np.array_equal(p0, psi) and np.array_equal(f0.rho, rho) and np.array_equal(f0.mom, mom)
    st = boost_material(OracleHistory(PlaneWaveOracle(pw), Lattice.cube(1, 64, 2 * np.pi / 0.6, 0.5)),
                        (0.0,), 0.001, k)
    ref = PlaneWaveOracle(pw).state_at(Lattice.cube(1, 64, 2 * np.pi / 0.6, 0.5).coords(), 0.001)
    same = same and all(np.array_equal(a, b) for a, b in zip((st.q, st.qdot, st.tau, st.taudot), ref))
    return same, "u = 0 is the bitwise identity"


def _five_relations_boost():
    k = PhysicalConstants()
    pw = PlaneWaveParams.on_shell((0.6,), k)
    lat = Lattice.cube(1, 256, 2 * np.pi / 0.6)
    src = AmplitudeFields(plane_wave_source(pw), k)
    mask = seam_mask(lat)

    def res(u, t=0.3, d=1e-3):
        f, psi = boost_spatial(src, lat, (u,), t, k)
        pp = boost_spatial(src, lat, (u,), t + d, k)[1]
        pm = boost_spatial(src, lat, (u,), t - d, k)[1]
        return five_relations_fields(f, psi, (pp - pm) / (2 * d), lat, k)

    base = res(0.0)
    e = [float(np.abs((res(u) - base)[:, mask]).max()) for u in (1e-2, 1e-3)]
    ratio = e[0] / e[1]
    return 30 <= ratio <= 300, f"residual ratio {ratio:.1f}"


def _remap():
    k = PhysicalConstants()
    pw = PlaneWaveParams.on_shell((0.6,), k)
    lat = Lattice.cube(1, 512, 2 * np.pi / 0.6, 0.5)
    hist = OracleHistory(PlaneWaveOracle(pw), lat)
    mask = seam_mask(lat) & (np.abs(np.sin(pw.label_phase(lat.coords()))) > 0.4)
    errs = []
    for u in (1e-2, 1e-3):
        rm = label_remap(hist, (u,), k)
        primed = boost_material(hist, (u,), 0.0, k)
        before = hist.rhobar0 / deformation(primed.q, lat).J
        errs.append(float(np.abs((before - rm["rhobar0"])[mask]).max()))
    ratio = errs[0] / errs[1]
    return 30 <= ratio <= 300 or errs[0] < 1e-12, f"invariance error {errs[0]:.2e}, ratio {ratio:.1f}"


CHECKS: dict[str, list[tuple[str, str, Callable]]] = {
    "core": [
        ("lattice-core", "fd-second-order", _fd_order),
        ("lattice-core", "interpolation-exactness", _interp_exact),
        ("lattice-core", "serialization-round-trip", _roundtrip),
        ("material-dynamics", "adjugate-identity", _adjugate),
        ("material-dynamics", "rk4-oscillator", _rk4),
        ("material-dynamics", "jacobian-collapse-detected", _collapse),
        ("reference-oracles", "leapfrog-energy", _leapfrog_energy),
        ("reference-oracles", "leapfrog-mass-mode", _leapfrog_mass),
    ],
    "wave": [
        ("spatial-bridge", "dalembert-closure", _dalembert),
        ("spatial-bridge", "irrotationality-2d", _wave_irrotational),
        ("reference-oracles", "plane-wave-leapfrog", _plane_wave_leapfrog),
    ],
    "kg": [
        ("kg-amplitude", "amplitude-first-trajectories", _amplitude_first),
        ("kg-amplitude", "material-plane-wave", _material_plane_wave),
        ("kg-amplitude", "clock-period", _clock_period),
        ("kg-amplitude", "complex-modulus", _quadrature),
        ("material-dynamics", "regular-window-exit", _window),
    ],
    "covariance": [
        ("covariance-harness", "boost-scaling", _boost_scaling),
        ("covariance-harness", "sign-flip-detected", _sign_flip),
        ("covariance-harness", "u0-identity", _spatial_identity),
        ("covariance-harness", "five-relations-boost", _five_relations_boost),
        ("covariance-harness", "label-remap-invariance", _remap),
    ],
}


def run_suite(name: str) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(name)
    names = [s for s in SUITES if s != "all"] if name == "all" else [name]
    results = []
    for suite in names:
        for module, check, fn in CHECKS[suite]:
            start = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(module, check, bool(ok), detail, time.perf_counter() - start))
    return results


def summary_table(results: list[CheckResult]) -> str:
    w = max(len(f"{r.module}/{r.name}") for r in results)
    lines = [f"{'check':<{w}}  verdict  detail"]
    for r in results:
        lines.append(f"{r.module + '/' + r.name:<{w}}  {'PASS' if r.ok else 'FAIL':<7}  {r.detail}")
    return "\n".join(lines) + "\n"
