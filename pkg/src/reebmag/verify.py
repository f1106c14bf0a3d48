"""The invariant suite behind ``reebmag verify``.

Each check returns a record with the measured value, its bound and whether it
passed.  Checks marked ``expected_failure`` are negative controls: they pass
when the measured value violates the bound.
"""

from __future__ import annotations

import math

import jax.numpy as jnp
import numpy as np

from . import _linalg as la
from ._jit import call_batched
from .errors import VerificationError
from .geometry import ChartPoint, StandardSphere, reeb_field, reeb_residual, sample_points, sphere_points
from .integrate import IntegratorConfig, integrate_magnetic_batch, integrate_reeb_batch
from .magnetic import lorentz_field, magnetic_residual
from .metric import class_g_defects, metric_values
from .orbits import find_reeb_orbits, reparametrize_to_energy
from .trajectory import TangentState

REEB_BOUND = 1e-10
CLASS_G_BOUND = 1e-12
LORENTZ_BOUND = 1e-10
RESIDUAL_BOUND = 1e-5
CLOSURE_BOUND = 1e-6
DRIFT_BOUND = 1e-6
NEGATIVE_CONTROL_BOUND = 1e-3


def check(name, value, bound, expected_failure=False, **detail):
    ok = bool(value < bound)
    return {
        "name": name,
        "value": float(value),
        "bound": float(bound),
        "expected_failure": expected_failure,
        "passed": (not ok) if expected_failure else ok,
        **detail,
    }


def _points(manifold, n_grid, n_sphere, seed):
    if isinstance(manifold, StandardSphere):
        return sample_points(manifold, n_sphere, seed)
    return sample_points(manifold, n_grid, seed)


def random_points(manifold, n, rng):
    if isinstance(manifold, StandardSphere):
        return manifold.from_ambient(sphere_points(n, int(rng.integers(2**31))))
    return rng.random((n, 3)), np.zeros(n, dtype=int)


def default_seeds(manifold, seed=0):
    if isinstance(manifold, StandardSphere):
        u, charts = manifold.from_ambient(sphere_points(3, seed))
        return [ChartPoint(x, int(c)) for x, c in zip(u, charts)]
    return [ChartPoint(np.array([0.0, 0.0, z])) for z in (0.0, 0.125, 0.25)]


def check_reeb(manifold, coords, charts):
    res = call_batched(manifold, reeb_residual, coords, charts)
    return check("reeb_residual", np.max(res), REEB_BOUND, points=len(coords))


def check_class_g(metric, coords, charts, expected_failure=False):
    unit, orth = call_batched(metric, class_g_defects, coords, charts)
    value = max(float(np.max(unit)), float(np.max(orth)))
    return check(
        "class_g_certificate",
        value,
        CLASS_G_BOUND,
        expected_failure=expected_failure,
        unit_defect=float(np.max(unit)),
        orthogonality_defect=float(np.max(orth)),
        points=len(coords),
    )


def _lorentz_kernel(sys, x, u, w, chart):
    g = sys.metric.g(x, chart)
    Y = lorentz_field(sys, x, chart)
    sigma = sys.strength * sys.manifold.dalpha(x, chart)
    reeb = reeb_field(sys.manifold, x, chart)
    Yu, Yw, YR = la.matvec(Y, u), la.matvec(Y, w), la.matvec(Y, reeb)
    form = la.quad(g, Yu, w) - la.quad(sigma, u, w)
    skew = la.quad(g, Yu, w) + la.quad(g, u, Yw)
    kills = jnp.sqrt(jnp.maximum(la.quad(g, YR), 0.0))
    return form, skew, kills


def lorentz_errors(sys, coords, charts, rng):
    n = len(coords)
    u, w = rng.normal(size=(2, n, sys.dim))
    form, skew, kills = call_batched(sys, _lorentz_kernel, coords, u, w, charts)
    return float(np.max(np.abs(form))), float(np.max(np.abs(skew))), float(np.max(kills))


def check_lorentz(sys, coords, charts, rng):
    form, skew, kills = lorentz_errors(sys, coords, charts, rng)
    return [
        check("lorentz_defines_sigma", form, LORENTZ_BOUND, samples=len(coords)),
        check("lorentz_skew_adjoint", skew, LORENTZ_BOUND, samples=len(coords)),
        check("lorentz_kills_reeb", kills, LORENTZ_BOUND, samples=len(coords)),
    ]


def check_reparametrized(sys, seeds, t_max, kappas, dt=1e-3):
    """Reparametrized Reeb orbits re-verified as magnetic geodesics at each
    energy."""
    m = sys.manifold
    orbits, misses = find_reeb_orbits(m, seeds, t_max, dt, CLOSURE_BOUND)
    if not orbits:
        return [check("reparametrized_orbits", math.inf, RESIDUAL_BOUND, detail="no closed Reeb orbit detected")]
    worst_res, worst_closure, failure = 0.0, 0.0, None
    per_kappa = {}
    for kappa in kappas:
        try:
            mapped = reparametrize_to_energy(sys, orbits, kappa, dt, CLOSURE_BOUND, RESIDUAL_BOUND)
        except VerificationError as exc:
            failure = f"kappa={kappa:g}: {exc}"
            worst_res = max(worst_res, exc.residual if exc.residual is not None else math.inf)
            continue
        res = max(o.magnetic_residual for o in mapped)
        closure = max(o.closure_residual for o in mapped)
        per_kappa[f"{kappa:g}"] = {"magnetic_residual": res, "closure_residual": closure, "orbits": len(mapped)}
        worst_res, worst_closure = max(worst_res, res), max(worst_closure, closure)
    out = [
        check("reparametrized_magnetic_residual", worst_res, RESIDUAL_BOUND, per_kappa=per_kappa),
        check("reparametrized_closure", worst_closure if failure is None else math.inf, CLOSURE_BOUND),
    ]
    if failure:
        out[0]["failure"] = failure
    out[0]["reeb_orbits"] = len(orbits)
    out[0]["seeds_without_orbit"] = misses
    return out


def check_negative_control(sys, seeds, horizon=1.0, dt=1e-3):
    """Magnetic residual of unit-speed Reeb curves: large for metrics outside
    class G."""
    trajs = integrate_reeb_batch(sys.manifold, seeds, IntegratorConfig(dt=dt, max_time=horizon))
    worst = max(magnetic_residual(sys, t) for t in trajs)
    return check("negative_control_reeb_residual", worst, NEGATIVE_CONTROL_BOUND, expected_failure=True)


def energy_states(sys, kappas, per_kappa, rng):
    states = []
    for kappa in kappas:
        coords, charts = random_points(sys.manifold, per_kappa, rng)
        g = metric_values(sys.metric, coords, charts)
        v = rng.normal(size=coords.shape)
        v *= np.sqrt(2.0 * kappa / np.einsum("ni,nij,nj->n", v, g, v))[:, None]
        states += [TangentState(ChartPoint(x, int(c)), vi) for x, c, vi in zip(coords, charts, v)]
    return states


def check_energy(sys, kappas, per_kappa, horizon, dt, rng):
    states = energy_states(sys, kappas, per_kappa, rng)
    record_every = max(1, int(round(0.1 / dt)))
    cfg = IntegratorConfig(dt=dt, max_time=horizon, record_every=record_every, drift_bound=DRIFT_BOUND)
    trajs = integrate_magnetic_batch(sys, states, cfg)
    drift = max(t.meta["relative_drift"] for t in trajs)
    return check("energy_drift", drift, DRIFT_BOUND, states=len(states), horizon=float(horizon), dt=float(dt))


def run_suite(cfg):
    """All checks for an experiment config; returns ``(passed, payload)``."""
    sys = cfg.system
    m = sys.manifold
    v = cfg.raw["verify"]
    rng = np.random.default_rng(cfg.seed)
    coords, charts = _points(m, int(v["grid"]), int(v["sphere_points"]), cfg.seed)
    seeds = cfg.seed_points() or default_seeds(m, cfg.seed)
    checks = [check_reeb(m, coords, charts), check_class_g(sys.metric, coords, charts, cfg.perturbed)]
    lc, lch = random_points(m, int(v["samples"]), rng)
    checks += check_lorentz(sys, lc, lch, rng)
    if cfg.perturbed:
        checks.append(check_negative_control(sys, seeds))
    else:
        checks += check_reparametrized(sys, seeds, float(cfg.raw["t_max"]), [float(k) for k in cfg.raw["kappas"]])
    checks.append(
        check_energy(
            sys,
            [float(k) for k in cfg.raw["kappas"]],
            int(v["energy_states"]),
            float(v["energy_horizon"]),
            float(v["energy_dt"]),
            rng,
        )
    )
    passed = all(c["passed"] for c in checks)
    failing = [c["name"] for c in checks if not c["passed"]]
    return passed, {"system": sys.describe(), "checks": checks, "failing": failing}
