import jax
import jax.numpy as jnp
import numpy as np
import pytest

from reebmag.errors import InputError
from reebmag.geometry import ChartPoint, reeb_field, reeb_vector
from reebmag.integrate import IntegratorConfig, integrate_magnetic, integrate_reeb
from reebmag.magnetic import (
    MagneticSystem,
    action,
    hamiltonian,
    kinetic_energy,
    lagrangian,
    lorentz_operator,
    magnetic_residual,
    magnetic_rhs,
)
from reebmag.mane import constant_loop
from reebmag.trajectory import TangentState, Trajectory

from conftest import hopf_point, torus_point

TWO_PI = 2.0 * np.pi

# Frozen oracle: accelerations from the Euler-Lagrange equations of
# L = 1/2 g(v, v) - alpha(v), differentiated with jax autodiff (no
# Christoffel symbols, no Lorentz operator involved).
EL_T3_FOURIER = ([0.1, 0.2, 0.3], [0.4, -0.5, 0.6], [-0.06621720820500009, -0.7717023194775811, 0.32978948469910474])
EL_S3_SKEWED = ([0.3, -0.2, 0.5], [0.1, 0.7, -0.4], [-0.6458570026855817, -0.49774758653419415, -0.23813078108028982])


def test_lorentz_operator_torus_z0(t3_identity):
    # g(Y u, w) = d alpha(u, w) with d alpha(e_z, e_y) = 2 pi forces Y e_z = 2 pi e_y
    Y = lorentz_operator(t3_identity, torus_point(0.0, 0.4, 0.9))
    expected = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, TWO_PI], [0.0, -TWO_PI, 0.0]])
    np.testing.assert_allclose(Y, expected, atol=1e-13)


def test_lorentz_defining_identity_explicit(t3_fourier):
    q = torus_point(0.3, 0.1, 0.2)
    Y = lorentz_operator(t3_fourier, q)
    g = np.asarray(t3_fourier.metric.g(q.coords))
    D = np.asarray(t3_fourier.manifold.dalpha(q.coords))
    u, w = np.array([0.3, -1.0, 0.7]), np.array([1.1, 0.2, -0.5])
    assert (Y @ u) @ g @ w == pytest.approx(u @ D @ w, abs=1e-12)


def test_lorentz_kills_reeb(t3_fourier, s3_skewed):
    for sys, q in ((t3_fourier, torus_point(0.17, 0.5)), (s3_skewed, ChartPoint([0.3, -0.2, 0.5], 1))):
        Y = lorentz_operator(sys, q)
        assert np.max(np.abs(Y @ reeb_vector(sys.manifold, q))) < 1e-10


def test_zero_strength_has_no_lorentz_force(t3_identity):
    sys = MagneticSystem(t3_identity.manifold, t3_identity.metric, strength=0.0)
    np.testing.assert_array_equal(lorentz_operator(sys, torus_point(0.2)), 0.0)


@pytest.mark.parametrize("v", [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
def test_rhs_along_reeb_direction_at_z0(t3_identity, v):
    vel, acc = magnetic_rhs(t3_identity, TangentState(torus_point(0.0), v))
    np.testing.assert_array_equal(vel, v)
    np.testing.assert_allclose(acc, 0.0, atol=1e-12)


@pytest.mark.parametrize("fixture, oracle", [("t3_fourier", EL_T3_FOURIER), ("s3_skewed", EL_S3_SKEWED)])
def test_rhs_matches_euler_lagrange_oracle(request, fixture, oracle):
    sys = request.getfixturevalue(fixture)
    x, v, a = oracle
    _, acc = magnetic_rhs(sys, TangentState(ChartPoint(x, 0), v))
    np.testing.assert_allclose(acc, a, atol=1e-8)


def test_rhs_along_reeb_multiples(t3_fourier, s3_skewed):
    # Reeb orbits are geodesics, so the coordinate acceleration of t -> flow(s t)
    # is s^2 (DR) R, with DR from autodiff of the Reeb field
    for sys, q in ((t3_fourier, torus_point(0.3, 0.1)), (s3_skewed, ChartPoint([0.3, -0.2, 0.5], 0))):
        m = sys.manifold
        x = jnp.asarray(q.coords)
        R = reeb_field(m, x, q.chart_id)
        DR = jax.jacfwd(lambda y: reeb_field(m, y, q.chart_id))(x)
        for s in (0.5, 1.0, 3.0):
            _, acc = magnetic_rhs(sys, TangentState(q, s * np.asarray(R)))
            np.testing.assert_allclose(acc, s * s * np.asarray(DR @ R), atol=1e-8 * max(1.0, s * s))


def test_kinetic_energy_of_reeb_multiples(t3_fourier, s3_skewed):
    for sys, q in ((t3_fourier, torus_point(0.3, 0.1)), (s3_skewed, ChartPoint([0.3, -0.2, 0.5], 0))):
        R = reeb_vector(sys.manifold, q)
        assert kinetic_energy(sys, TangentState(q, R)) == pytest.approx(0.5, abs=1e-12)
        assert kinetic_energy(sys, TangentState(q, 2.0 * R)) == pytest.approx(2.0, abs=1e-12)
        assert kinetic_energy(sys, TangentState(q, np.zeros(3))) == 0.0


def test_lagrangian_on_reeb_vector(t3_fourier):
    q = torus_point(0.3)
    R = reeb_vector(t3_fourier.manifold, q)
    assert lagrangian(t3_fourier, TangentState(q, R)) == pytest.approx(-0.5, abs=1e-12)
    assert lagrangian(t3_fourier, TangentState(q, 3.0 * R)) == pytest.approx(4.5 - 3.0, abs=1e-12)


def test_hamiltonian_examples(t3_identity, t3_fourier, s3_skewed):
    for sys, q in ((t3_fourier, torus_point(0.3, 0.1)), (s3_skewed, ChartPoint([0.3, -0.2, 0.5], 0))):
        a = np.asarray(sys.manifold.alpha(q.coords, q.chart_id))
        assert hamiltonian(sys, q, np.zeros(3)) == pytest.approx(0.5, abs=1e-12)
        assert hamiltonian(sys, q, -a) == pytest.approx(0.0, abs=1e-15)
    assert hamiltonian(t3_identity, torus_point(0.0), [1.0, 0.0, 0.0]) == pytest.approx(2.0, abs=1e-14)


def test_tangent_state_rejects_non_finite():
    with pytest.raises(InputError):
        TangentState(ChartPoint([0.0, 0.0, 0.0]), [np.nan, 0.0, 0.0])


def test_residual_unit_speed_reeb_orbit(t3_identity):
    traj = integrate_reeb(t3_identity.manifold, torus_point(0.0), IntegratorConfig(dt=1e-3, max_time=1.0))
    assert magnetic_residual(t3_identity, traj) < 1e-6


def test_residual_speed_four(t3_identity):
    traj = integrate_reeb(
        t3_identity.manifold, torus_point(0.0), IntegratorConfig(dt=1e-3, max_time=0.25), speed=4.0
    )
    assert magnetic_residual(t3_identity, traj) < 1e-5


def test_residual_straight_line(t3_flat_free):
    # coarse sampling: differencing roundoff grows like eps / dt^2
    t = np.linspace(0.0, 1.0, 101)
    v = np.array([0.3, -0.2, 0.1])
    x = 0.1 + t[:, None] * v
    traj = Trajectory(t, x, np.repeat(v[None], len(t), axis=0), np.zeros(len(t), dtype=int))
    assert magnetic_residual(t3_flat_free, traj) < 1e-10


def test_residual_detects_wrong_curve(t3_identity):
    # a coordinate circle in the y direction at z = 0 is not a magnetic geodesic
    t = np.linspace(0.0, 1.0, 1001)
    x = np.stack([0 * t, t, 0 * t], axis=-1)
    traj = Trajectory(t, x, np.gradient(x, t, axis=0), np.zeros(len(t), dtype=int))
    assert magnetic_residual(t3_identity, traj) == pytest.approx(TWO_PI, rel=1e-6)


def test_residual_input_errors(t3_identity):
    t = np.linspace(0.0, 1.0, 4)
    x = np.zeros((4, 3))
    with pytest.raises(InputError):
        magnetic_residual(t3_identity, Trajectory(t, x, x, np.zeros(4, dtype=int)))
    t = np.r_[0.0, 0.1, 0.3, 0.4, 0.5, 0.6]
    x = np.zeros((6, 3))
    with pytest.raises(InputError):
        magnetic_residual(t3_identity, Trajectory(t, x, x, np.zeros(6, dtype=int)))


def test_action_unit_speed_reeb_loops(t3_fourier, s3_identity):
    loop = integrate_reeb(t3_fourier.manifold, torus_point(0.0), IntegratorConfig(max_time=1.0))
    S, err = action(t3_fourier, loop)
    assert S == pytest.approx(-0.5, abs=1e-8)
    assert err < 1e-8
    hopf = integrate_reeb(s3_identity.manifold, hopf_point(s3_identity.manifold), IntegratorConfig(max_time=TWO_PI))
    S, _ = action(s3_identity, hopf, closure_tol=1e-6)
    assert S == pytest.approx(-np.pi, abs=1e-8)


@pytest.mark.parametrize("s", [0.5, 2.0, 4.0])
def test_action_speed_s_loop(t3_fourier, s):
    loop = integrate_reeb(t3_fourier.manifold, torus_point(0.0), IntegratorConfig(max_time=1.0 / s), speed=s)
    S, _ = action(t3_fourier, loop)
    assert S == pytest.approx((s * s / 2.0 - s) / s, abs=1e-8)


def test_action_constant_loop(t3_fourier):
    assert action(t3_fourier, constant_loop([0.2, 0.3, 0.4]))[0] == 0.0


def test_action_rejects_open_curve(t3_fourier):
    open_curve = integrate_reeb(t3_fourier.manifold, torus_point(0.0), IntegratorConfig(max_time=0.5))
    with pytest.raises(InputError):
        action(t3_fourier, open_curve)


def test_magnetic_trajectory_residual_generic_state(s3_skewed):
    s0 = TangentState(ChartPoint([1.5, 0.3, -0.2], 0), [0.9, 0.4, -0.3])
    traj = integrate_magnetic(s3_skewed, s0, IntegratorConfig(dt=1e-3, max_time=2.0))
    assert traj.meta["transitions"]
    assert magnetic_residual(s3_skewed, traj) < 1e-5
