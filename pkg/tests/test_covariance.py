import numpy as np
import pytest

from kgc import scenarios
from kgc.covariance import (AmplitudeFields, BoostParams, CovarianceReport, GriddedFields,
                            LinearExtension, OracleHistory, SampledHistory, boost_material,
                            boost_spatial, label_remap, scaling_exponent, seam_mask,
                            solve_label_times)
from kgc.errors import ConfigError, InsufficientHistory, RootNotBracketed
from kgc.kg import five_relations_fields
from kgc.lattice import Lattice, MetricSignature, PhysicalConstants, SimConfig
from kgc.material import KGCongruenceState, deformation, init_kg, run
from kgc.oracles import PlaneWaveOracle, PlaneWaveParams, plane_wave_source

K = PhysicalConstants()
PW = PlaneWaveParams.on_shell((0.6,), K)
LENGTH = 2 * np.pi / 0.6


def _history(n=256):
    lat = Lattice.cube(1, n, LENGTH, offset=0.5)
    return lat, OracleHistory(PlaneWaveOracle(PW), lat)


def _regular(lat):
    return seam_mask(lat) & (np.abs(np.sin(PW.label_phase(lat.coords()))) > 0.4)


def test_boost_bound():
    BoostParams((0.05,))
    BoostParams((0.1,), c=2.0)
    with pytest.raises(ConfigError):
        BoostParams((0.04, 0.04))
    with pytest.raises(ConfigError):
        boost_material(_history(16)[1], (0.06,), 0.0, K)


def test_zero_boost_is_identity():
    lat, hist = _history(64)
    st = boost_material(hist, (0.0,), 0.002, K)
    ref = PlaneWaveOracle(PW).state_at(lat.coords(), 0.002)
    for a, b in zip((st.q, st.qdot, st.tau, st.taudot), ref):
        assert np.array_equal(a, b)
    assert st.rhobar0 is hist.rhobar0
    grid = Lattice.cube(1, 64, LENGTH)
    src = AmplitudeFields(plane_wave_source(PW), K)
    f, psi = boost_spatial(src, grid, (0.0,), 0.3, K)
    psi0, rho, mom, mom4 = src.fields(grid.coords(), np.full(grid.shape, 0.3))
    assert np.array_equal(psi, psi0) and np.array_equal(f.rho, rho) and np.array_equal(f.mom, mom)


def test_boosted_plane_wave_is_plane_wave():
    grid = Lattice.cube(1, 128, LENGTH)
    src = AmplitudeFields(plane_wave_source(PW), K)
    x = grid.coords()[0]
    errs = []
    for u in (1e-2, 1e-3):
        _, psi = boost_spatial(src, grid, (u,), 0.4, K)
        w, k = PW.omega - 0.6 * u, 0.6 - PW.omega * u / K.c**2
        errs.append(np.abs(psi - np.cos(w * 0.4 - k * x)).max())
    assert 30 <= errs[0] / errs[1] <= 300


def test_boosted_fields_keep_five_relations():
    grid = Lattice.cube(1, 256, LENGTH)
    src = AmplitudeFields(plane_wave_source(PW), K)
    mask = seam_mask(grid)

    def residual(u, t=0.3, d=1e-3):
        f, psi = boost_spatial(src, grid, (u,), t, K)
        rate = (boost_spatial(src, grid, (u,), t + d, K)[1]
                - boost_spatial(src, grid, (u,), t - d, K)[1]) / (2 * d)
        return five_relations_fields(f, psi, rate, grid, K)

    base = residual(0.0)
    e = [np.abs((residual(u) - base)[:, mask]).max() for u in (1e-2, 1e-3)]
    assert 30 <= e[0] / e[1] <= 300


def test_covariance_plane_wave_passes():
    rep = scenarios.covariance_planewave()
    assert rep.verdict == "PASS"
    assert 1.7 <= rep.exponent_eq34 <= 2.3 and 1.7 <= rep.exponent_eq21 <= 2.3
    lines = rep.to_text().splitlines()
    assert lines[0] == "u, residual_eq34, residual_eq21, exponent, verdict"
    assert lines[-1].endswith("PASS")


def test_sign_flip_is_detected():
    rep = scenarios.covariance_planewave(sign=-1.0)
    assert rep.verdict == "FAIL"
    assert 0.8 < rep.exponent < 1.2


def test_jacobian_and_velocity_transformation():
    lat, hist = _history(256)
    mask = _regular(lat)
    jac_err, vel_err = [], []
    for u in (1e-2, 1e-3):
        st = boost_material(hist, (u,), 0.003, K)
        t = solve_label_times(hist, np.array([u]), 0.003, K.c)
        qdot = hist.at(t)[1]
        Jp = deformation(st.q, lat).J
        jac_err.append(np.abs(Jp - (1 + u * qdot[0] / K.c**2))[mask].max())
        d = 1e-4
        fd = (boost_material(hist, (u,), 0.003 + d, K).q - boost_material(hist, (u,), 0.003 - d, K).q) / (2 * d)
        vel_err.append(np.abs(fd - st.qdot)[:, mask].max())
    for e in (jac_err, vel_err):
        assert 30 <= e[0] / e[1] <= 300


def test_labels_are_fixed_points():
    lat, hist = _history(64)
    st = boost_material(hist, (1e-2,), 0.0, K)
    q0 = lat.coords()
    # each label stays next to its own unboosted position: no permutation
    assert np.abs(st.q - q0).max() < 0.5 * lat.spacing[0]
    assert np.all(np.diff(st.q[0]) > 0)


def test_boost_composition_returns_fields():
    grid = Lattice.cube(1, 256, LENGTH)
    src = AmplitudeFields(plane_wave_source(PW), K)
    times = 0.3 + 0.01 * np.arange(-15, 16)
    errs = []
    for u in (1e-2, 1e-3):
        snaps = [boost_spatial(src, grid, (u,), t, K) for t in times]
        gridded = GriddedFields(times, np.stack([p for _, p in snaps]), [f for f, _ in snaps], grid)
        back, psi = boost_spatial(gridded, grid, (-u,), 0.3, K)
        psi0, rho0, _, _ = src.fields(grid.coords(), np.full(grid.shape, 0.3))
        mask = seam_mask(grid, margin=6)
        errs.append(max(np.abs(psi - psi0)[mask].max(), np.abs(back.rho - rho0)[mask].max()))
    assert errs[0] < 1e-3 and errs[0] / errs[1] > 10


def _run_history(n=128, steps=40):
    pw, lat, cfg, _ = scenarios.plane_wave_setup(0.6, n, n_steps=steps)
    o = PlaneWaveOracle(pw)
    a = lat.coords()
    snaps = run(init_kg(o.psi(0, *a), o.psidot(0, *a), cfg,
                        grad_psi0=scenarios._plane_wave_gradient(pw, a)), cfg)
    return lat, snaps


def test_sampled_history_reproduces_snapshots():
    lat, snaps = _run_history()
    hist = SampledHistory(snaps, lat)
    for k in (0, 17, len(snaps) - 1):
        q, qdot, tau, taudot = hist.at(snaps[k].t)
        assert np.array_equal(q, snaps[k].q) and np.array_equal(tau, snaps[k].tau)
        st = boost_material(hist, (0.0,), snaps[k].t, K)
        assert np.array_equal(st.q, snaps[k].q) and np.array_equal(st.taudot, snaps[k].taudot)
    with pytest.raises(InsufficientHistory):
        hist.at(-1.0)
    with pytest.raises(InsufficientHistory):
        SampledHistory(snaps[:1], lat)


def test_hermite_interpolation_is_fourth_order():
    o = PlaneWaveOracle(PW)
    lat = Lattice.cube(1, 16, LENGTH, offset=0.5)
    a = lat.coords()
    errs = []
    for dt in (0.02, 0.01):
        snaps = [KGCongruenceState(t, *o.state_at(a, t), o.psidot(0, *a) / K.c**2)
                 for t in np.arange(0, 0.2 + dt / 2, dt)]
        hist = SampledHistory(snaps, lat)
        t = 0.04 + dt / 2  # cell midpoint in both runs
        errs.append(float(np.abs(hist.at(t)[2] - o.tau(a, t)).max()))
    assert errs[0] / errs[1] > 12


def test_linear_extension():
    o = PlaneWaveOracle(PW)
    lat = Lattice.cube(1, 16, LENGTH, offset=0.5)
    a = lat.coords()
    st = KGCongruenceState(0.1, *o.state_at(a, 0.1), o.psidot(0, *a))
    q, qdot, _, _ = LinearExtension(st, lat).at(0.25)
    assert np.allclose(q, o.trajectory(a, 0.25), atol=1e-14)
    with pytest.raises(InsufficientHistory):
        LinearExtension(KGCongruenceState(0.0, a, None, np.zeros(16), None, np.ones(16)), lat)


def test_label_remap():
    lat, hist = _history(512)
    rm0 = label_remap(hist, (0.0,), K)
    assert np.array_equal(rm0["labels"], lat.coords()) and not rm0["t"].any()
    a = lat.coords()[0]
    mask = _regular(lat)
    t_err, inv_err = [], []
    for u in (1e-2, 1e-3):
        rm = label_remap(hist, (u,), K)
        t_err.append(np.abs(rm["t"] - u * a / K.c**2).max())
        primed = boost_material(hist, (u,), 0.0, K)
        before = hist.rhobar0 / deformation(primed.q, lat).J
        inv_err.append(np.abs(before - rm["rhobar0"])[mask].max())
        # remapped labels are the primed positions at t' = 0
        assert np.allclose(rm["labels"], primed.q + u * rm["t"], atol=1e-12)
    assert 30 <= t_err[0] / t_err[1] <= 300
    assert 30 <= inv_err[0] / inv_err[1] <= 300


def test_label_remap_outside_window():
    lat, snaps = _run_history()
    with pytest.raises(RootNotBracketed):
        label_remap(SampledHistory(snaps, lat), (-1e-2,), K)


def test_scaling_exponent_and_report():
    assert scaling_exponent(1e-4, 1e-6) == pytest.approx(2.0)
    rep = CovarianceReport((1e-2,), (1e-4, 1e-5), (1e-4, 1e-6), (0.0, 0.0), 1.0, 2.0)
    assert rep.exponent == 1.0 and rep.verdict == "FAIL"
