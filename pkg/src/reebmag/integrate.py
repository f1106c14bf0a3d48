"""Fixed-step RK4 and adaptive RKF45 for the Reeb and magnetic flows.

The RK4 path runs whole chunks of steps inside one jitted ``lax.scan`` and
handles a batch of initial conditions at once.  Chart transitions are applied
after every step, per batch member.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from ._jit import _bucket, call_batched, compiled
from .errors import ConfigError, IntegrationError
from .geometry import ChartPoint, reeb_field
from .magnetic import acceleration, energies
from .trajectory import TangentState, Trajectory

SCHEMES = ("rk4", "rkf45")
CHUNK_RECORDS = 256


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "rk4"
    dt: float = 1e-3
    tol: float = 1e-10
    max_time: float = 1.0
    drift_bound: float = 1e-6
    record_every: int = 1
    min_dt: float = 1e-12  # adaptive steps below this raise IntegrationError

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if not self.max_time > 0:
            raise ConfigError("max_time must be positive")
        if not self.drift_bound > 0:
            raise ConfigError("drift_bound must be positive")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigError("record_every must be a positive integer")
        if not 0 < self.min_dt <= self.dt:
            raise ConfigError("min_dt must be positive and at most dt")

    def with_(self, **changes):
        fields = {**self.__dict__, **changes}
        return IntegratorConfig(**fields)

    def grid(self):
        """``(n_steps, dt)`` with dt shrunk so the horizon is hit exactly and
        the step count is a multiple of ``record_every``."""
        block = self.dt * self.record_every
        n_blocks = max(1, math.ceil(self.max_time / block - 1e-9))
        n_steps = n_blocks * self.record_every
        return n_steps, self.max_time / n_steps


# vector fields on flat state arrays: magnetic s = (x, v), Reeb s = x


def _magnetic_field(sys, s, chart, scale):
    d = sys.dim
    x, v = s[..., :d], s[..., d:]
    return jnp.concatenate([v, acceleration(sys, x, v, chart)], axis=-1)


def _magnetic_switch(sys, s, chart):
    m = sys.manifold
    if m.n_charts == 1:
        return s, chart
    d = m.dim
    x, v = s[..., :d], s[..., d:]
    flag = m.needs_switch(x, chart)
    x2, v2, c2 = m.switch_chart(x, v, chart)
    s2 = jnp.concatenate([x2, v2], axis=-1)
    return jnp.where(flag[..., None], s2, s), jnp.where(flag, c2, chart)


def _reeb_vf(manifold, s, chart, scale):
    return scale * reeb_field(manifold, s, chart)


def _reeb_switch(manifold, s, chart):
    if manifold.n_charts == 1:
        return s, chart
    flag = manifold.needs_switch(s, chart)
    x2, _, c2 = manifold.switch_chart(s, jnp.zeros_like(s), chart)
    return jnp.where(flag[..., None], x2, s), jnp.where(flag, c2, chart)


def _rk4_chunk(owner, s, chart, dt, scale, *, field, switch, n_records, record_every):
    def one_step(_, carry):
        y, c = carry
        k1 = field(owner, y, c, scale)
        k2 = field(owner, y + 0.5 * dt * k1, c, scale)
        k3 = field(owner, y + 0.5 * dt * k2, c, scale)
        k4 = field(owner, y + dt * k3, c, scale)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return switch(owner, y, c)

    def record(carry, _):
        carry = jax.lax.fori_loop(0, record_every, one_step, carry)
        return carry, carry

    _, (ys, cs) = jax.lax.scan(record, (s, chart), None, length=n_records)
    return ys, cs


def _run_rk4(owner, field, switch, s0, chart0, cfg, scale=1.0):
    """Returns times (n+1,), states (n+1, B, k), charts (n+1, B), dt.

    The batch and the chunk length are padded to powers of two so repeated
    runs of different sizes share compiled kernels.
    """
    n_steps, dt = cfg.grid()
    n_records = n_steps // cfg.record_every
    batch = s0.shape[0]
    width = _bucket(batch, floor=1)
    s = np.concatenate([s0, np.repeat(s0[-1:], width - batch, axis=0)])
    chart = np.concatenate([chart0, np.repeat(chart0[-1:], width - batch)])
    states, charts = [s0[None]], [chart0[None]]
    chunk = min(CHUNK_RECORDS, _bucket(n_records, floor=1))
    kernel = compiled(
        owner, _rk4_chunk, field=field, switch=switch, n_records=chunk, record_every=cfg.record_every
    )
    done = 0
    while done < n_records:
        ys, cs = kernel(s, chart, dt, scale)
        ys, cs = np.asarray(ys), np.asarray(cs)
        take = min(chunk, n_records - done)
        states.append(ys[:take, :batch])
        charts.append(cs[:take, :batch])
        s, chart = ys[take - 1], cs[take - 1]
        done += take
    states = np.concatenate(states)
    charts = np.concatenate(charts)
    if not np.all(np.isfinite(states)):
        raise IntegrationError("non-finite state encountered during integration")
    times = dt * cfg.record_every * np.arange(n_records + 1)
    return times, states, charts, dt


# adaptive Runge-Kutta-Fehlberg 4(5)

_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8, 3680 / 513, -845 / 4104],
    [-8 / 27, 2, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_B4 = np.array([25 / 216, 0, 1408 / 2565, 2197 / 4104, -1 / 5, 0])
_B5 = np.array([16 / 135, 0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])


def _rkf45_step(owner, s, chart, dt, scale, *, field, switch):
    ks = []
    for row in _A:
        y = s
        for a, k in zip(row, ks):
            y = y + dt * a * k
        ks.append(field(owner, y, chart, scale))
    y4 = s + dt * sum(b * k for b, k in zip(_B4, ks))
    y5 = s + dt * sum(b * k for b, k in zip(_B5, ks))
    err = jnp.max(jnp.abs(y5 - y4))
    y5, chart = switch(owner, y5, chart)
    return y5, chart, err


def _run_rkf45(owner, field, switch, s0, chart0, cfg, scale=1.0):
    """Single state; returns non-uniform times."""
    step = compiled(owner, _rkf45_step, field=field, switch=switch)
    t, dt = 0.0, cfg.dt
    s, chart = np.asarray(s0), np.asarray(chart0)
    times, states, charts = [0.0], [s], [chart]
    while t < cfg.max_time * (1 - 1e-14):
        dt = min(dt, cfg.max_time - t)
        y, c, err = step(s, chart, dt, scale)
        err = float(err)
        if not np.isfinite(err):
            err = np.inf
        if err <= cfg.tol:
            t += dt
            s, chart = np.asarray(y), np.asarray(c)
            times.append(t)
            states.append(s)
            charts.append(chart)
        factor = 0.9 * (cfg.tol / err) ** 0.2 if err > 0 else 4.0
        dt *= min(4.0, max(0.1, factor))
        if dt < cfg.min_dt:
            raise IntegrationError(f"adaptive step underflow at t = {t:.6g}")
    return np.array(times), np.stack(states), np.stack(charts), None


def _transitions(times, charts):
    idx = np.flatnonzero(np.diff(charts) != 0) + 1
    return [(int(i), float(times[i]), int(charts[i - 1]), int(charts[i])) for i in idx]


def _batch(states):
    coords = np.stack([np.asarray(s.q.coords, dtype=float) for s in states])
    vels = np.stack([np.asarray(s.v, dtype=float) for s in states])
    charts = np.array([s.q.chart_id for s in states], dtype=np.int64)
    return coords, vels, charts


def integrate_magnetic_batch(sys, states, cfg):
    """Integrate several initial states together; returns one Trajectory each."""
    coords, vels, charts = _batch(states)
    for x, c in zip(coords, charts):
        sys.manifold.check_domain(x, c)
    s0 = np.concatenate([coords, vels], axis=-1)
    d = sys.dim
    if cfg.scheme == "rk4":
        times, ys, cs, dt = _run_rk4(sys, _magnetic_field, _magnetic_switch, s0, charts, cfg)
        runs = [(times, ys[:, b], cs[:, b]) for b in range(len(states))]
    else:
        runs = []
        for b in range(len(states)):
            times, ys, cs, dt = _run_rkf45(sys, _magnetic_field, _magnetic_switch, s0[b], charts[b], cfg)
            runs.append((times, ys, cs))
    out = []
    for times, ys, cs in runs:
        traj = Trajectory(times, ys[:, :d].copy(), ys[:, d:].copy(), cs.astype(int).copy())
        e = energies(sys, traj)
        drift = float(np.max(np.abs(e - e[0])) / e[0]) if e[0] > 0 else float(np.max(np.abs(e)))
        traj.meta = {
            "kind": "magnetic",
            "scheme": cfg.scheme,
            "dt": dt,
            "energies": e,
            "energy_start": float(e[0]),
            "energy_end": float(e[-1]),
            "relative_drift": drift,
            "drift_exceeded": drift > cfg.drift_bound,
            "transitions": _transitions(times, cs),
        }
        out.append(traj)
    flagged = [t.meta["relative_drift"] for t in out if t.meta["drift_exceeded"]]
    if flagged:
        warnings.warn(
            f"{len(flagged)} of {len(out)} trajectories exceed the energy drift bound "
            f"{cfg.drift_bound:.3g} (worst {max(flagged):.3g})",
            stacklevel=2,
        )
    return out


def integrate_magnetic(sys, s0, cfg):
    return integrate_magnetic_batch(sys, [s0], cfg)[0]


def _reeb_velocity_kernel(manifold, x, chart, scale):
    return scale * reeb_field(manifold, x, chart)


def integrate_reeb_batch(manifold, points, cfg, speed=1.0):
    coords = np.stack([np.asarray(p.coords, dtype=float) for p in points])
    charts = np.array([p.chart_id for p in points], dtype=np.int64)
    for x, c in zip(coords, charts):
        manifold.check_domain(x, c)
    if cfg.scheme == "rk4":
        times, ys, cs, dt = _run_rk4(manifold, _reeb_vf, _reeb_switch, coords, charts, cfg, speed)
        runs = [(times, ys[:, b], cs[:, b]) for b in range(len(points))]
    else:
        runs = []
        for b in range(len(points)):
            times, ys, cs, dt = _run_rkf45(manifold, _reeb_vf, _reeb_switch, coords[b], charts[b], cfg, speed)
            runs.append((times, ys, cs))
    out = []
    for times, ys, cs in runs:
        vels = call_batched(manifold, _reeb_velocity_kernel, ys, cs, float(speed))
        traj = Trajectory(times, ys.copy(), vels, cs.astype(int).copy())
        traj.meta = {
            "kind": "reeb",
            "scheme": cfg.scheme,
            "dt": dt,
            "speed": float(speed),
            "transitions": _transitions(times, cs),
        }
        out.append(traj)
    return out


def integrate_reeb(manifold, q0, cfg, speed=1.0):
    """Reeb flow line from ``q0``; the stored velocity is ``speed * R``."""
    return integrate_reeb_batch(manifold, [q0], cfg, speed)[0]


def endpoint_distance(manifold, traj, target=None):
    """TM distance between the last sample and ``target`` (default: the first)."""
    Q, V = traj.embedded(manifold)
    if target is None:
        q0, v0 = Q[0], V[0]
    else:
        q0, v0 = manifold.embed(target.q.coords, target.v, target.q.chart_id)
    return float(manifold.tm_distance(q0, v0, Q[-1], V[-1]))


__all__ = [
    "IntegratorConfig",
    "TangentState",
    "ChartPoint",
    "Trajectory",
    "integrate_magnetic",
    "integrate_magnetic_batch",
    "integrate_reeb",
    "integrate_reeb_batch",
    "endpoint_distance",
]
