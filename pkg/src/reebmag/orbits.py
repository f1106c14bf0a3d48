"""Closed-orbit detection, geometric dedup, and the orbit census."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.optimize import minimize_scalar

from .errors import InputError, VerificationError
from .geometry import ChartPoint, reeb_vector
from .integrate import IntegratorConfig, integrate_magnetic_batch, integrate_reeb_batch
from .magnetic import energies, magnetic_residual
from .trajectory import TangentState

DEFAULT_CLOSURE_TOL = 1e-6
DEFAULT_MATCH_TOL = 1e-4
DEFAULT_RESIDUAL_BOUND = 1e-5
LENGTH_RTOL = 1e-6


@dataclass
class ClosedOrbit:
    init: TangentState
    period: float
    energy: float
    closure_residual: float
    kind: str
    prime: bool
    speed: float = 1.0
    length: float | None = None
    magnetic_residual: float | None = None
    samples: object = field(default=None, repr=False)

    def record(self):
        return {
            "kind": self.kind,
            "period": self.period,
            "energy": self.energy,
            "length": self.length,
            "closure_residual": self.closure_residual,
            "magnetic_residual": self.magnetic_residual,
            "prime": self.prime,
            "init": {
                "chart_id": int(self.init.q.chart_id),
                "q": [float(a) for a in self.init.q.coords],
                "v": [float(a) for a in self.init.v],
            },
        }


@dataclass
class OrbitCensus:
    orbits: list
    classes: list  # lists of indices into ``orbits``; first index is the representative
    t_max: float | None = None
    kappa: float | None = None

    @property
    def representatives(self):
        return [self.orbits[c[0]] for c in self.classes]

    def count_below(self, t):
        """Classes whose representative has g-length (else period) below t.

        Lengths within ``LENGTH_RTOL`` of t count as not below it, so that
        equal lengths computed along different flows land on the same side.
        """
        return sum(1 for o in self.representatives if _size(o) < t * (1.0 - LENGTH_RTOL))


def _size(orbit):
    return orbit.length if orbit.length is not None else orbit.period


class _Interpolant:
    """C^1 interpolation of embedded samples: Hermite for positions (using
    the sampled velocities as derivatives), cubic spline for velocities."""

    def __init__(self, manifold, traj, start=0, stop=None):
        times = traj.times[start:stop]
        Q, V = manifold.embed(traj.coords[start:stop], traj.vels[start:stop], traj.charts[start:stop])
        self.q = CubicHermiteSpline(times, Q, V, axis=0)
        self.v = CubicSpline(times, V, axis=0)

    def __call__(self, t):
        return self.q(t), self.v(t)


def _refine(manifold, interp, target, lo, hi):
    q0, v0 = target

    def dist(t):
        q, v = interp(t)
        return float(manifold.tm_distance(q0, v0, q, v))

    res = minimize_scalar(dist, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    # the bounded search never evaluates the end points
    best = min([(res.fun, res.x), (dist(lo), lo), (dist(hi), hi)])
    return best[1], best[0]


def return_distance(manifold, traj):
    Q, V = traj.embedded(manifold)
    return manifold.tm_distance(Q[0], V[0], Q, V)


def detect_period(manifold, traj, tol=DEFAULT_CLOSURE_TOL):
    """Smallest ``(period, residual)`` at which the trajectory returns to its
    initial state within ``tol`` in TM, or None.

    Sampled local minima of the return distance are screened against
    ``10 tol`` plus the local TM step length (a sampled minimum can miss the
    true one by half a step) and refined on a local interpolant.
    """
    n = len(traj)
    if n < 4:
        raise InputError("trajectory too short for period detection")
    Q, V = traj.embedded(manifold)
    d = manifold.tm_distance(Q[0], V[0], Q, V)
    step = np.sqrt(np.sum(np.diff(Q, axis=0) ** 2, axis=-1) + np.sum(np.diff(V, axis=0) ** 2, axis=-1))
    slack = np.maximum(np.r_[step, step[-1]], np.r_[step[0], step])
    screen = 10.0 * tol + slack
    left = np.flatnonzero(d > 10.0 * screen)
    if left.size == 0:
        return None
    k = np.arange(left[0] + 1, n)
    prev = d[k - 1]
    nxt = np.r_[d[k[:-1] + 1], np.inf]
    candidates = k[(d[k] <= prev) & (d[k] <= nxt) & (d[k] < screen[k])]
    target = (Q[0], V[0])
    for i in candidates:
        lo, hi = max(i - 4, 0), min(i + 5, n)
        interp = _Interpolant(manifold, traj, lo, hi)
        t, r = _refine(manifold, interp, target, traj.times[i - 1], traj.times[min(i + 1, n - 1)])
        if r < tol:
            return float(t), float(r)
    return None


def _distance_at(manifold, traj, t, tol_window=None):
    """Min return distance in a one-step window around time t."""
    i = int(np.clip(np.searchsorted(traj.times, t), 1, len(traj) - 1))
    lo, hi = max(i - 4, 0), min(i + 5, len(traj))
    interp = _Interpolant(manifold, traj, lo, hi)
    Q, V = manifold.embed(traj.coords[0], traj.vels[0], traj.charts[0])
    a, b = traj.times[i - 1], traj.times[min(i + 1, len(traj) - 1)]
    return _refine(manifold, interp, (Q, V), a, b)


def is_prime(manifold, traj, period, tol=DEFAULT_CLOSURE_TOL, max_cover=8):
    """False if some T/k, k >= 2, is itself a closing time."""
    dt = float(np.median(np.diff(traj.times)))
    for k in range(2, max_cover + 1):
        t = period / k
        if t < 4.0 * dt:
            break
        _, r = _distance_at(manifold, traj, t)
        if r < tol:
            return False
    return True


def closed_orbit(manifold, traj, period, kind, energy, tol=DEFAULT_CLOSURE_TOL, speed=1.0, sys=None):
    """Wrap a trajectory already known to close at ``period``."""
    if period > traj.times[-1] * (1 + 1e-12):
        raise InputError("trajectory shorter than the claimed period")
    _, residual = _distance_at(manifold, traj, period)
    if residual >= tol:
        raise VerificationError(f"trajectory does not close at T = {period:.9g}", residual=residual)
    keep = min(len(traj), int(np.searchsorted(traj.times, period)) + 4)
    samples = traj.slice(0, keep)
    orbit = ClosedOrbit(
        init=traj.state(0),
        period=float(period),
        energy=float(energy),
        closure_residual=float(residual),
        kind=kind,
        prime=is_prime(manifold, traj, period, tol),
        speed=float(speed),
        samples=samples,
    )
    if sys is not None:
        orbit.length = g_length(sys, samples, period)
    return orbit


def g_length(sys, traj, period):
    """g-length of the sampled curve over [0, period] (trapezoid in |v|_g)."""
    speed = np.sqrt(2.0 * np.maximum(energies(sys, traj), 0.0))
    t = traj.times
    inside = t <= period
    ts = np.r_[t[inside], period]
    ss = np.r_[speed[inside], np.interp(period, t, speed)]
    return float(trapezoid(ss, ts))


def find_reeb_orbits(manifold, seeds, t_max, dt=1e-3, tol=DEFAULT_CLOSURE_TOL, sys=None):
    """Integrate the unit-speed Reeb flow from each seed up to ``1.1 t_max``
    and keep the orbits closing by ``t_max``.  Returns ``(orbits, misses)``."""
    if not seeds:
        return [], 0
    cfg = IntegratorConfig(dt=dt, max_time=1.1 * t_max)
    trajs = integrate_reeb_batch(manifold, seeds, cfg)
    found, misses = [], 0
    for traj in trajs:
        hit = detect_period(manifold, traj, tol)
        if hit is None or hit[0] >= t_max:
            misses += 1
            continue
        found.append(closed_orbit(manifold, traj, hit[0], "reeb", 0.5, tol, speed=1.0, sys=sys))
    return found, misses


def reparametrize_to_energy(
    sys,
    orbits,
    kappa,
    dt=1e-3,
    tol=DEFAULT_CLOSURE_TOL,
    residual_bound=DEFAULT_RESIDUAL_BOUND,
):
    """Magnetic orbits at energy ``kappa`` from Reeb orbits.

    Each start point gets velocity ``sqrt(2 kappa) R``; the expected period is
    ``T speed_reeb / s``.  The magnetic flow is integrated independently,
    the period is re-detected and the magnetic residual measured; any failure
    raises :class:`VerificationError`.  Accepts one orbit or a list.
    """
    single = isinstance(orbits, ClosedOrbit)
    orbits = [orbits] if single else list(orbits)
    if not kappa > 0:
        raise InputError("kappa must be positive")
    if not orbits:
        return []
    m = sys.manifold
    s = math.sqrt(2.0 * kappa)
    for o in orbits:
        if o.kind != "reeb":
            raise InputError("only Reeb orbits can be reparametrized")
        if not o.closure_residual < tol:
            raise InputError("source orbit does not close within tolerance")
    expected = [o.period * o.speed / s for o in orbits]
    starts = [TangentState(o.init.q, s * reeb_vector(m, o.init.q)) for o in orbits]
    cfg = IntegratorConfig(dt=dt, max_time=1.25 * max(expected), drift_bound=1e-8)
    trajs = integrate_magnetic_batch(sys, starts, cfg)
    out = []
    for o, T, traj in zip(orbits, expected, trajs):
        e0 = traj.meta["energy_start"]
        if abs(e0 - kappa) > 1e-8 * kappa:
            raise VerificationError(f"initial energy {e0:.12g} differs from kappa = {kappa:g}", residual=abs(e0 - kappa))
        stop = min(len(traj), int(np.searchsorted(traj.times, 1.1 * T)) + 1)
        head = traj.slice(0, stop)
        hit = detect_period(m, head, tol)
        if hit is None or abs(hit[0] - T) > 1e-5 * max(T, 1.0):
            got = "none" if hit is None else f"{hit[0]:.9g}"
            raise VerificationError(f"magnetic orbit does not close at T = {T:.9g} (detected {got})")
        res = magnetic_residual(sys, head)
        if res > residual_bound:
            raise VerificationError(f"magnetic residual {res:.3g} exceeds {residual_bound:.3g}", residual=res)
        orbit = closed_orbit(m, head, hit[0], "magnetic", kappa, tol, speed=s, sys=sys)
        orbit.closure_residual = hit[1]
        orbit.magnetic_residual = res
        out.append(orbit)
    return out[0] if single else out


def orbit_distance(manifold, o1, o2, n=64, period_rtol=1e-4):
    """Shift-minimised sampled TM distance between two closed orbits.

    Orbits with different periods are never equivalent (infinite distance).
    """
    if abs(o1.period - o2.period) > period_rtol * max(o1.period, o2.period):
        return math.inf
    i1 = _Interpolant(manifold, o1.samples)
    i2 = _Interpolant(manifold, o2.samples)
    T1 = o1.period
    grid = np.linspace(0.0, T1, 257)
    Q1, V1 = i1(grid)
    start = i2(0.0)
    d0 = manifold.tm_distance(start[0], start[1], Q1, V1)
    k = int(np.argmin(d0))
    tau, _ = _refine(manifold, i1, start, grid[max(k - 1, 0)], grid[min(k + 1, 256)])
    ts = np.linspace(0.0, o2.period, n, endpoint=False)
    Qa, Va = i2(ts)
    Qb, Vb = i1(np.mod(ts + tau, T1))
    return float(np.max(manifold.tm_distance(Qa, Va, Qb, Vb)))


def dedup_geometric(manifold, orbits, tol=DEFAULT_MATCH_TOL, t_max=None, kappa=None):
    """Greedy clustering of prime orbits under :func:`orbit_distance`.

    Non-prime orbits are dropped from the census (their prime orbit is what
    gets counted)."""
    classes = []
    for i, o in enumerate(orbits):
        if not o.prime:
            continue
        for c in classes:
            if orbit_distance(manifold, orbits[c[0]], o) < tol:
                c.append(i)
                break
        else:
            classes.append([i])
    return OrbitCensus(list(orbits), classes, t_max=t_max, kappa=kappa)


def _default_t_values(t_max):
    return [float(t) for t in np.linspace(t_max / 4.0, t_max, 4)]


def growth_report(
    sys,
    seeds,
    t_max,
    kappas,
    t_values=None,
    dt=1e-3,
    tol=DEFAULT_CLOSURE_TOL,
    match_tol=DEFAULT_MATCH_TOL,
    residual_bound=DEFAULT_RESIDUAL_BOUND,
):
    """Seeded census of Reeb orbits and their magnetic reparametrizations.

    Returns a JSON-ready dict with per-class records, the counts table
    ``R_t`` / ``P_t^kappa`` over ``t_values`` and the inequality verdict.
    A mapped orbit failing re-verification raises VerificationError.
    """
    m = sys.manifold
    if sys.metric.provenance != "class-G":
        raise InputError("growth report needs a class-G metric")
    seeds = [s if isinstance(s, ChartPoint) else ChartPoint(np.asarray(s, dtype=float)) for s in seeds]
    t_values = sorted(t_values) if t_values is not None else _default_t_values(t_max)
    reeb, misses = find_reeb_orbits(m, seeds, t_max, dt, tol, sys=sys)
    reeb_census = dedup_geometric(m, reeb, match_tol, t_max=t_max)
    reps = reeb_census.representatives
    magnetic = {}
    for kappa in kappas:
        mapped = reparametrize_to_energy(sys, reps, kappa, dt, tol, residual_bound)
        magnetic[kappa] = dedup_geometric(m, mapped, match_tol, t_max=t_max, kappa=kappa)
    counts = []
    holds = True
    for t in t_values:
        r = reeb_census.count_below(t)
        p = {k: magnetic[k].count_below(t) for k in kappas}
        holds &= all(v >= r for v in p.values())
        counts.append({"t": float(t), "R": r, "P": {f"{k:g}": v for k, v in p.items()}})
    return {
        "system": sys.describe(),
        "t_max": float(t_max),
        "kappas": [float(k) for k in kappas],
        "seeds": len(seeds),
        "seeds_without_orbit": misses,
        "reeb_classes": [o.record() for o in reps],
        "magnetic_classes": {f"{k:g}": [o.record() for o in magnetic[k].representatives] for k in kappas},
        "counts": counts,
        "verdict": "holds" if holds else "violated",
        "degenerate_family_note": m.orbit_family_note,
    }
