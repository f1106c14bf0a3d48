import math
import warnings

import numpy as np
import pytest

from reebmag._jit import call_batched
from reebmag.errors import ConfigError, IntegrationError
from reebmag.geometry import ChartPoint
from reebmag.integrate import (
    IntegratorConfig,
    endpoint_distance,
    integrate_magnetic,
    integrate_magnetic_batch,
    integrate_reeb,
)
from reebmag.magnetic import MagneticSystem, energies
from reebmag.trajectory import TangentState, read_csv, write_csv

from conftest import hopf_point, torus_point


def test_config_validation():
    for bad in ({"dt": 0.0}, {"tol": -1.0}, {"max_time": 0.0}, {"scheme": "euler"}, {"record_every": 0}, {"min_dt": 1.0}):
        with pytest.raises(ConfigError):
            IntegratorConfig(**bad)


def test_config_grid_hits_horizon():
    n, dt = IntegratorConfig(dt=0.3, max_time=1.0).grid()
    assert n == 4 and n * dt == pytest.approx(1.0, abs=1e-15)
    n, dt = IntegratorConfig(dt=1e-3, max_time=1.0, record_every=7).grid()
    assert n % 7 == 0 and n * dt == pytest.approx(1.0, abs=1e-12) and dt <= 1e-3


@pytest.mark.parametrize("speed, T", [(1.0, 1.0), (2.0, 0.5)])
def test_magnetic_reeb_orbit_closes(t3_identity, speed, T):
    s0 = TangentState(torus_point(0.0), [speed, 0.0, 0.0])
    traj = integrate_magnetic(t3_identity, s0, IntegratorConfig(dt=1e-3, max_time=T))
    assert len(traj) == round(T / 1e-3) + 1
    assert endpoint_distance(t3_identity.manifold, traj) < 1e-8


def test_flat_straight_line(t3_flat_free):
    v = np.array([0.3, -0.7, 0.2])
    s0 = TangentState(ChartPoint([0.1, 0.2, 0.3]), v)
    traj = integrate_magnetic(t3_flat_free, s0, IntegratorConfig(dt=1e-3, max_time=1.0))
    exact = np.array([0.1, 0.2, 0.3]) + traj.times[:, None] * v
    assert np.max(np.abs(traj.coords - exact)) < 1e-10
    assert np.max(np.abs(traj.vels - v)) < 1e-10


def test_reeb_flow_torus(t3):
    traj = integrate_reeb(t3, torus_point(0.0), IntegratorConfig(dt=1e-3, max_time=1.0))
    assert endpoint_distance(t3, traj) < 1e-8
    diag = integrate_reeb(t3, torus_point(0.125), IntegratorConfig(dt=1e-3, max_time=math.sqrt(2.0)))
    assert endpoint_distance(t3, diag) < 1e-6


def test_reeb_flow_hopf_matches_analytic(s3):
    traj = integrate_reeb(s3, hopf_point(s3), IntegratorConfig(dt=1e-3, max_time=2 * np.pi))
    X, _ = traj.embedded(s3)
    t = traj.times
    exact = np.stack([np.cos(t), np.sin(t), 0 * t, 0 * t], axis=-1)
    assert np.max(np.abs(X - exact)) < 1e-8
    assert endpoint_distance(s3, traj) < 1e-6


def test_chart_transitions_are_logged(s3):
    q0 = hopf_point(s3, (0.6, 0.0, 0.0, 0.8))
    traj = integrate_reeb(s3, q0, IntegratorConfig(dt=1e-3, max_time=2 * np.pi))
    log = traj.meta["transitions"]
    assert log, "orbit through both hemispheres must switch charts"
    for index, time, src, dst in log:
        assert traj.charts[index - 1] == src and traj.charts[index] == dst and src != dst
        assert time == traj.times[index]
    assert np.max(np.linalg.norm(traj.coords, axis=-1)) <= 2.0 + 1e-2
    assert endpoint_distance(s3, traj) < 1e-6


def test_reeb_speed_is_unit_under_class_g(t3_fourier, s3_skewed):
    for sys, q0 in ((t3_fourier, ChartPoint([0.1, 0.2, 0.3])), (s3_skewed, hopf_point(s3_skewed.manifold, (0.6, 0.0, 0.0, 0.8)))):
        traj = integrate_reeb(sys.manifold, q0, IntegratorConfig(dt=1e-2, max_time=3.0))
        speed = np.sqrt(2.0 * energies(sys, traj))
        assert np.max(np.abs(speed - 1.0)) < 1e-8


def test_time_reversal_without_field(t3_fourier):
    sys = MagneticSystem(t3_fourier.manifold, t3_fourier.metric, strength=0.0)
    s0 = TangentState(ChartPoint([0.1, 0.2, 0.3]), [0.5, -0.4, 0.8])
    cfg = IntegratorConfig(dt=1e-3, max_time=2.0, record_every=100)
    fwd = integrate_magnetic(sys, s0, cfg)
    back = integrate_magnetic(sys, TangentState(fwd.state(-1).q, -fwd.vels[-1]), cfg)
    np.testing.assert_allclose(back.coords[-1], s0.q.coords, atol=1e-7)
    np.testing.assert_allclose(back.vels[-1], -s0.v, atol=1e-7)


def test_rk4_global_order(s3):
    # generic Hopf fibre crossing both charts; closure error drops by 2^4
    q0 = hopf_point(s3, (0.5, 0.1, 0.3, 0.8))
    errs = [
        endpoint_distance(s3, integrate_reeb(s3, q0, IntegratorConfig(dt=2 * np.pi / n, max_time=2 * np.pi)))
        for n in (60, 120)
    ]
    assert 8.0 <= errs[0] / errs[1] <= 32.0


def test_record_every_subsamples(t3_fourier):
    s0 = TangentState(ChartPoint([0.1, 0.2, 0.3]), [0.5, -0.4, 0.8])
    full = integrate_magnetic(t3_fourier, s0, IntegratorConfig(dt=1e-3, max_time=0.5))
    sub = integrate_magnetic(t3_fourier, s0, IntegratorConfig(dt=1e-3, max_time=0.5, record_every=10))
    assert len(sub) == 51
    np.testing.assert_allclose(sub.coords, full.coords[::10], atol=1e-14)


def test_batch_matches_single(t3_fourier):
    states = [TangentState(ChartPoint([0.1, 0.2, z]), [0.5, -0.4, 0.8]) for z in (0.1, 0.4, 0.7)]
    cfg = IntegratorConfig(dt=1e-3, max_time=0.3)
    batch = integrate_magnetic_batch(t3_fourier, states, cfg)
    for s, traj in zip(states, batch):
        np.testing.assert_allclose(traj.coords, integrate_magnetic(t3_fourier, s, cfg).coords, atol=1e-14)


def test_drift_is_flagged(t3_fourier):
    s0 = TangentState(ChartPoint([0.1, 0.2, 0.3]), [3.0, -2.0, 4.0])
    with pytest.warns(UserWarning, match="drift"):
        traj = integrate_magnetic(t3_fourier, s0, IntegratorConfig(dt=0.05, max_time=5.0, drift_bound=1e-9))
    assert traj.meta["drift_exceeded"]
    assert traj.meta["relative_drift"] > 1e-9


def test_rkf45(t3_identity, t3_fourier):
    cfg = IntegratorConfig(scheme="rkf45", dt=1e-2, tol=1e-12, max_time=1.0)
    traj = integrate_magnetic(t3_identity, TangentState(torus_point(0.0), [1.0, 0.0, 0.0]), cfg)
    assert traj.times[-1] == pytest.approx(1.0, abs=1e-14)
    assert endpoint_distance(t3_identity.manifold, traj) < 1e-8
    s0 = TangentState(ChartPoint([0.1, 0.2, 0.3]), [0.5, -0.4, 0.8])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gen = integrate_magnetic(t3_fourier, s0, cfg.with_(max_time=5.0))
    assert gen.meta["relative_drift"] < 1e-8
    assert gen.uniform_step() is None


def test_rkf45_step_underflow(t3_fourier):
    s0 = TangentState(ChartPoint([0.1, 0.2, 0.3]), [0.5, -0.4, 0.8])
    with pytest.raises(IntegrationError):
        integrate_magnetic(t3_fourier, s0, IntegratorConfig(scheme="rkf45", tol=1e-30, min_dt=1e-6, max_time=1.0))


def test_csv_round_trip(tmp_path, t3_identity):
    traj = integrate_reeb(t3_identity.manifold, torus_point(0.0), IntegratorConfig(dt=1e-3, max_time=1.0))
    e = call_batched(t3_identity, lambda s, x, v, c: 0.5 * (v * v).sum(-1), traj.coords, traj.vels, traj.charts)
    path = tmp_path / "flow.csv"
    write_csv(traj, path, manifold=t3_identity.manifold, energies=e)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "time,chart_id,q0,q1,q2,v0,v1,v2,energy"
    assert len(lines) == 2 + 1001
    back = read_csv(path)
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.coords, np.mod(traj.coords, 1.0))
    np.testing.assert_array_equal(back.vels, traj.vels)
