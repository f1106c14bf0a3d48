"""The exact magnetic system (M, g, d alpha) and its diagnostics."""

from __future__ import annotations

import numpy as np
import jax.numpy as jnp
from scipy.integrate import simpson

from . import _linalg as la
from ._jit import call, call_batched
from .errors import InputError
from .metric import DEFAULT_CHRISTOFFEL_STEP, christoffel_field

# five-point central stencils on a uniform grid
_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


class MagneticSystem:
    """``(M, g, strength * d alpha)``; immutable once built.

    ``strength`` scales the magnetic form and, with it, the primitive
    ``strength * alpha`` entering the Lagrangian and Hamiltonian.
    """

    def __init__(self, manifold, metric, strength=1.0, fd_step=DEFAULT_CHRISTOFFEL_STEP):
        if metric.manifold is not manifold:
            raise ValueError("metric was built on a different manifold")
        self.manifold = manifold
        self.metric = metric
        self.strength = float(strength)
        self.fd_step = fd_step

    @property
    def dim(self):
        return self.manifold.dim

    def describe(self):
        return {
            "manifold": self.manifold.key,
            "metric": self.metric.label,
            "provenance": self.metric.provenance,
            "strength": self.strength,
        }


# kernels (traceable, batched)


def lorentz_field(sys, x, chart=0, g_inv=None):
    """``Y`` with ``g(Y u, w) = strength * d alpha(u, w)``.

    ``dalpha[i, j] = d alpha(e_i, e_j)``, so ``g Y = strength * dalpha^T``;
    this is also the sign produced by the Euler-Lagrange equations of
    ``1/2 |v|^2 - alpha(v)``.
    """
    if g_inv is None:
        g_inv = sys.metric.g_inv(x, chart)
    return g_inv @ (sys.strength * la.T(sys.manifold.dalpha(x, chart)))


def acceleration(sys, x, v, chart=0):
    """``a^k = -Gamma^k_ij v^i v^j + (Y v)^k``."""
    g_inv = sys.metric.g_inv(x, chart)
    gamma = christoffel_field(sys.metric, x, chart, sys.fd_step, g_inv=g_inv)
    geo = jnp.einsum("...kij,...i,...j->...k", gamma, v, v)
    return -geo + la.matvec(lorentz_field(sys, x, chart, g_inv), v)


def energy_field(sys, x, v, chart=0):
    return 0.5 * la.quad(sys.metric.g(x, chart), v)


def lagrangian_field(sys, x, v, chart=0):
    a = sys.manifold.alpha(x, chart)
    return 0.5 * la.quad(sys.metric.g(x, chart), v) - sys.strength * jnp.sum(a * v, axis=-1)


def hamiltonian_field(sys, x, p, chart=0):
    shifted = p + sys.strength * sys.manifold.alpha(x, chart)
    return 0.5 * la.quad(sys.metric.g_inv(x, chart), shifted)


def geodesic_defect(sys, x, vel, acc, chart=0):
    """``(acc + Gamma(vel, vel) - Y vel, g)`` at each sample."""
    g = sys.metric.g(x, chart)
    g_inv = la.sym(la.inv(g))
    gamma = christoffel_field(sys.metric, x, chart, sys.fd_step, g_inv=g_inv)
    geo = jnp.einsum("...kij,...i,...j->...k", gamma, vel, vel)
    defect = acc + geo - la.matvec(lorentz_field(sys, x, chart, g_inv), vel)
    return defect, g


# public single-state operations


def lorentz_operator(sys, q):
    return call(sys, lorentz_field, q.coords, q.chart_id)


def magnetic_rhs(sys, s):
    return s.v.copy(), call(sys, acceleration, s.q.coords, s.v, s.q.chart_id)


def kinetic_energy(sys, s):
    return float(call(sys, energy_field, s.q.coords, s.v, s.q.chart_id))


def lagrangian(sys, s):
    return float(call(sys, lagrangian_field, s.q.coords, s.v, s.q.chart_id))


def hamiltonian(sys, q, p):
    return float(call(sys, hamiltonian_field, q.coords, np.asarray(p, dtype=float), q.chart_id))


def energies(sys, traj):
    return call_batched(sys, energy_field, traj.coords, traj.vels, traj.charts)


def _merged_segments(sys, traj, min_len=5):
    """Single-chart runs of positions; runs shorter than ``min_len`` are
    re-expressed in the chart of their predecessor and merged into it."""
    runs = []
    for start, stop in traj.segments():
        x = traj.coords[start:stop]
        chart = int(traj.charts[start])
        if runs and stop - start < min_len:
            prev_x, prev_chart = runs[-1]
            moved, _, _ = sys.manifold.switch_chart(x, np.zeros_like(x), chart)
            runs[-1] = (np.concatenate([prev_x, np.asarray(moved)]), prev_chart)
            continue
        runs.append((x, chart))
    return runs


def magnetic_residual(sys, traj):
    """Max g-norm of ``nabla_t gamma' - Y gamma'`` over interior samples.

    Velocity and acceleration come from five-point differences of the sampled
    positions only, so the check does not reuse the integrator's RHS.
    """
    dt = traj.uniform_step()
    if dt is None:
        raise InputError("magnetic residual needs uniformly sampled trajectories")
    worst = 0.0
    for x, chart in _merged_segments(sys, traj):
        n = len(x)
        if n < 5:
            raise InputError(f"segment has {n} samples; need at least 5")
        window = np.stack([x[k : n - 4 + k] for k in range(5)])
        vel = np.tensordot(_D1, window, axes=1) / dt
        acc = np.tensordot(_D2, window, axes=1) / dt**2
        mid = x[2 : n - 2]
        defect, g = call_batched(sys, geodesic_defect, mid, vel, acc, np.full(len(mid), chart))
        norms = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", defect, g, defect), 0.0))
        worst = max(worst, float(np.max(norms)))
    return worst


def action(sys, loop, closure_tol=1e-6):
    """Action of a closed loop by Simpson quadrature of the Lagrangian.

    Returns ``(value, error_estimate)``; the estimate compares the full
    sampling with every second sample.
    """
    q_emb, v_emb = loop.embedded(sys.manifold)
    gap = float(sys.manifold.tm_distance(q_emb[0], v_emb[0], q_emb[-1], v_emb[-1]))
    if gap > closure_tol:
        raise InputError(f"loop does not close: endpoint distance {gap:.3g} > {closure_tol:.3g}")
    lag = call_batched(sys, lagrangian_field, loop.coords, loop.vels, loop.charts)
    value = float(simpson(lag, x=loop.times))
    if len(loop) >= 5:
        coarse = float(simpson(lag[::2], x=loop.times[::2]))
        err = abs(value - coarse) / 15.0
    else:
        err = float("nan")
    return value, err
