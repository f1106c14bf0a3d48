"""Two-sided bounds on the Mane critical value of an exact magnetic system.

Lower bound: every closed loop gives ``-S_L(gamma) / T <= c(L)``.
Upper bound: every exact form df gives ``c(L) <= sup_q H(q, df_q)``; the sup
is smoothed by a log-sum-exp during optimisation and certified by a hard max
on a refined point set.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from ._jit import call_batched
from .errors import InputError, OptimizationError, VerificationError
from .geometry import FourierTorus, StandardSphere, TWO_PI, sample_points, sphere_points, torus_grid
from .integrate import IntegratorConfig, integrate_reeb
from .magnetic import action
from .trajectory import Trajectory

BRACKET_SLACK = 1e-9
GRID_DISCLAIMER = (
    "upper bound is the exact maximum over a finite point set; between points "
    "H(q, df) is controlled only by its smoothness, no Lipschitz certificate is applied"
)


class FunctionBasis:
    """Finite family of global functions f_m; ``gradient(q, chart)`` returns
    d f_m in chart coordinates with shape (n, m, dim).

    ``fourier-t3``: cos/sin(2 pi k.q) for integer k != 0 in a half-space,
    |k_i| <= degree.  ``chart-poly-s3``: ambient monomials of total degree
    1..degree restricted to S^3, pulled back to either chart.
    """

    def __init__(self, kind, degree):
        if degree < 0:
            raise InputError("degree must be non-negative")
        self.kind = kind
        self.degree = int(degree)
        if kind == "fourier-t3":
            ks = [k for k in itertools.product(range(-degree, degree + 1), repeat=3) if k > (0, 0, 0)]
            self.modes = np.array(ks, dtype=float).reshape(-1, 3)
            self.size = 2 * len(self.modes)
        elif kind == "chart-poly-s3":
            exps = [
                e for e in itertools.product(range(degree + 1), repeat=4) if 1 <= sum(e) <= degree
            ]
            self.exponents = np.array(exps, dtype=int).reshape(-1, 4)
            self.size = len(self.exponents)
        else:
            raise InputError(f"unknown basis kind {kind!r}")
        self.coeffs = np.zeros(self.size)

    @classmethod
    def for_manifold(cls, manifold, degree=2):
        if isinstance(manifold, FourierTorus):
            return cls("fourier-t3", degree)
        if isinstance(manifold, StandardSphere):
            return cls("chart-poly-s3", degree)
        raise InputError(f"no function basis for {manifold.key}")

    def values(self, q, chart=0, manifold=None):
        q = np.asarray(q, dtype=float)
        if self.kind == "fourier-t3":
            phase = TWO_PI * q @ self.modes.T
            return np.concatenate([np.cos(phase), np.sin(phase)], axis=-1)
        X = manifold.to_ambient(q, chart, np)
        return np.prod(X[..., None, :] ** self.exponents, axis=-1)

    def gradient(self, q, chart=0, manifold=None):
        q = np.asarray(q, dtype=float)
        if self.kind == "fourier-t3":
            phase = TWO_PI * q @ self.modes.T
            k = TWO_PI * self.modes
            dcos = -np.sin(phase)[..., None] * k
            dsin = np.cos(phase)[..., None] * k
            return np.concatenate([dcos, dsin], axis=-2)
        X = manifold.to_ambient(q, chart, np)
        J = manifold.jacobian(q, chart, np)
        e = self.exponents
        # d/dX_a of prod_b X_b^e_b
        grads = []
        for a in range(4):
            lowered = e.copy()
            lowered[:, a] = np.maximum(e[:, a] - 1, 0)
            grads.append(e[:, a] * np.prod(X[..., None, :] ** lowered, axis=-1))
        amb = np.stack(grads, axis=-1)  # (n, m, 4)
        return np.einsum("...ma,...ai->...mi", amb, J)

    def differential(self, coeffs, q, chart=0, manifold=None):
        return np.einsum("...mi,m->...i", self.gradient(q, chart, manifold), coeffs)

    def _labels(self):
        if self.kind == "fourier-t3":
            modes = [tuple(k) for k in self.modes.astype(int)]
            return [("cos", k) for k in modes] + [("sin", k) for k in modes]
        return [tuple(e) for e in self.exponents]

    def lift(self, other, coeffs):
        """Coefficients in this basis of the function ``other`` represents
        with ``coeffs``; ``other`` must be a sub-family (same kind, lower or
        equal degree)."""
        if other.kind != self.kind:
            raise InputError("cannot lift between different basis kinds")
        index = {label: i for i, label in enumerate(self._labels())}
        out = np.zeros(self.size)
        for label, c in zip(other._labels(), np.asarray(coeffs, dtype=float)):
            if label not in index:
                raise InputError(f"basis function {label} missing from the target basis")
            out[index[label]] = c
        return out


@dataclass(frozen=True)
class OptimizerConfig:
    betas: tuple = (10.0, 100.0, 1000.0)
    max_iter: int = 200
    step: float = 1.0
    tol: float = 1e-12
    line_search: bool = True
    divergence_window: int = 5


@dataclass
class ManeBracket:
    lower: float
    upper: float
    lower_witness: dict | None
    upper_witness: list
    grid_resolution: int
    meta: dict = field(default_factory=dict)

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, value):
        return self.lower <= value <= self.upper

    def record(self):
        return {
            "lower": self.lower,
            "upper": self.upper,
            "width": self.width,
            "lower_witness": self.lower_witness,
            "upper_witness": list(self.upper_witness),
            "grid_resolution": self.grid_resolution,
            **self.meta,
        }


# loops for the lower bound


def constant_loop(q, chart=0, duration=1.0, n=5):
    x = np.repeat(np.asarray(q, dtype=float)[None], n, axis=0)
    return Trajectory(
        np.linspace(0.0, duration, n), x, np.zeros_like(x), np.full(n, chart), {"label": "constant"}
    )


def torus_circle(q0, axis, speed, n=2001):
    """Coordinate circle t -> q0 + speed t e_axis over one period 1/speed."""
    T = 1.0 / speed
    t = np.linspace(0.0, T, n)
    e = np.eye(3)[axis]
    x = np.asarray(q0, dtype=float) + speed * t[:, None] * e
    v = np.repeat(speed * e[None], n, axis=0)
    label = f"circle axis={axis} z={q0[2]:g} speed={speed:g}"
    return Trajectory(t, x, v, np.zeros(n, dtype=int), {"label": label})


def great_circle(manifold, A, B, speed, n=2001):
    """t -> cos(w t) A + sin(w t) B on S^3 (A, B orthonormal), w = speed."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    T = TWO_PI / speed
    t = np.linspace(0.0, T, n)
    X = np.cos(speed * t)[:, None] * A + np.sin(speed * t)[:, None] * B
    V = speed * (-np.sin(speed * t)[:, None] * A + np.cos(speed * t)[:, None] * B)
    u, v, chart = manifold.from_ambient(X, V)
    label = f"great circle A={A.tolist()} B={B.tolist()} speed={speed:g}"
    return Trajectory(t, u, v, chart.astype(int), {"label": label})


def reeb_loop(manifold, q0, period, speed=1.0, dt=1e-3):
    """One period of the speed-``speed`` Reeb flow, integrated to land
    exactly on T / speed."""
    traj = integrate_reeb(manifold, q0, IntegratorConfig(dt=dt, max_time=period / speed), speed=speed)
    traj.meta["label"] = f"reeb q0={np.asarray(q0.coords).tolist()} chart={q0.chart_id} speed={speed:g}"
    return traj


def default_loops(manifold, reeb_orbits=(), speeds=(0.25, 0.5, 1.0, 2.0), z_values=(0.0, 0.125, 0.25, 0.375)):
    """Closed Reeb orbits at every speed, coordinate/great circles at every
    speed, and a constant loop."""
    loops = []
    for o in reeb_orbits:
        for s in speeds:
            loops.append(reeb_loop(manifold, o.init.q, o.period * o.speed, s))
    if isinstance(manifold, FourierTorus):
        for z in z_values:
            for axis in (0, 1):
                for s in speeds:
                    loops.append(torus_circle([0.0, 0.0, z], axis, s))
        loops.append(constant_loop([0.0, 0.0, 0.0]))
    else:
        e = np.eye(4)
        for A, B in [(e[0], e[1]), (e[0], e[2]), (e[1], e[3]), (e[2], e[3])]:
            for s in speeds:
                loops.append(great_circle(manifold, A, B, s))
        loops.append(constant_loop([0.0, 0.0, 0.0]))
    return loops


def mane_lower(sys, loops, closure_tol=1e-6):
    """``max -S_L(gamma) / T`` over the loops, with the maximising loop."""
    if not loops:
        warnings.warn("no loops supplied; lower bound is -inf", stacklevel=2)
        return -math.inf, None
    best, witness = -math.inf, None
    for loop in loops:
        S, err = action(sys, loop, closure_tol)
        value = -S / loop.duration
        if value > best:
            best = value
            witness = {
                "label": loop.meta.get("label", "loop"),
                "period": loop.duration,
                "action": S,
                "quadrature_error": err,
                "samples": len(loop),
            }
    return float(best), witness


# upper bound


def default_grid(manifold, refine=1, n_torus=32, n_sphere_per_chart=4000, seed=0):
    """``(coords, charts)``: n^3 torus grid, or quasi-random sphere points
    (about ``n_sphere_per_chart`` land in each chart).  ``refine`` multiplies
    the density per axis on tori and the point count on spheres."""
    if isinstance(manifold, FourierTorus):
        x = torus_grid(n_torus * refine)
        return x, np.zeros(len(x), dtype=int)
    return manifold.from_ambient(sphere_points(2 * n_sphere_per_chart * refine, seed))


def _alpha_ginv(sys, x, chart):
    return sys.strength * sys.manifold.alpha(x, chart), sys.metric.g_inv(x, chart)


class _GridProblem:
    def __init__(self, sys, basis, coords, charts):
        self.alpha, self.g_inv = call_batched(sys, _alpha_ginv, coords, charts)
        n, dim = self.alpha.shape
        # rows (point, component), columns basis functions
        self.G = np.ascontiguousarray(
            np.swapaxes(basis.gradient(coords, charts, sys.manifold), -1, -2).reshape(n * dim, -1)
        )

    def hamiltonian(self, c):
        p = self.alpha + (self.G @ c).reshape(self.alpha.shape)
        w = np.einsum("nij,nj->ni", self.g_inv, p)
        return 0.5 * np.sum(p * w, axis=-1), w

    def smooth(self, c, beta):
        H, w = self.hamiltonian(c)
        value = logsumexp(beta * H) / beta
        weights = softmax(beta * H)
        grad = (weights[:, None] * w).reshape(-1) @ self.G
        return value, grad, float(np.max(H))


def hard_max(sys, basis, coeffs, coords, charts, block=8192):
    """Exact ``max_q H(q, df_q)`` over the given points, evaluated in blocks."""
    best = -math.inf
    for start in range(0, len(coords), block):
        x, c = coords[start : start + block], charts[start : start + block]
        a, g_inv = call_batched(sys, _alpha_ginv, x, c)
        p = a + basis.differential(coeffs, x, c, sys.manifold)
        H = 0.5 * np.einsum("ni,nij,nj->n", p, g_inv, p)
        best = max(best, float(np.max(H)))
    return best


def _descend(problem, c, beta, opt):
    value, grad, _ = problem.smooth(c, beta)
    step = opt.step
    rises = 0
    for _ in range(opt.max_iter):
        gnorm2 = float(grad @ grad)
        if gnorm2 < opt.tol**2:
            break
        if opt.line_search:
            while step > 1e-14:
                trial = c - step * grad
                tv, tg, _ = problem.smooth(trial, beta)
                if tv <= value - 1e-4 * step * gnorm2:
                    break
                step *= 0.5
            else:
                break
        else:
            trial = c - step * grad
            tv, tg, _ = problem.smooth(trial, beta)
        if not np.isfinite(tv):
            raise OptimizationError("objective became non-finite")
        rises = rises + 1 if tv > value else 0
        if rises >= opt.divergence_window:
            raise OptimizationError(f"objective increased for {rises} consecutive steps")
        converged = abs(value - tv) < opt.tol
        c, value, grad = trial, tv, tg
        step *= 2.0
        if converged:
            break
    return c


def mane_upper(sys, basis=None, grid=None, opt=None, refine_factor=2, init=None):
    """Minimise the smoothed grid max of H(q, df_q) over the basis
    coefficients, then certify with a hard max on a refined point set.

    Every candidate (f = 0, the optional warm start ``init`` and the iterate
    after each beta stage) is certified on the refined set and the smallest
    certified value is reported, so a warm start from a nested smaller basis
    can never make the bound worse.  Returns ``(upper, witness)``.
    """
    m = sys.manifold
    basis = basis or FunctionBasis.for_manifold(m)
    opt = opt or OptimizerConfig()
    coords, charts = grid if grid is not None else default_grid(m)
    problem = _GridProblem(sys, basis, coords, charts)
    starts = [("f = 0", np.zeros(basis.size))]
    if init is not None:
        starts.append(("warm start", np.asarray(init, dtype=float)))
    c = min(starts, key=lambda item: problem.hamiltonian(item[1])[0].max())[1].copy()
    candidates = [(label, x.copy()) for label, x in starts]
    for beta in opt.betas:
        c = _descend(problem, c, beta, opt)
        candidates.append((f"beta = {beta:g}", c.copy()))
    coarse = [float(problem.hamiltonian(x)[0].max()) for _, x in candidates]
    fine_coords, fine_charts = (
        default_grid(m, refine=refine_factor) if grid is None else _refine_points(m, coords, charts, refine_factor)
    )
    certified = [hard_max(sys, basis, x, fine_coords, fine_charts) for _, x in candidates]
    k = int(np.argmin(certified))
    source, best = candidates[k]
    basis.coeffs = best
    witness = {
        "coefficients": best.tolist(),
        "basis": basis.kind,
        "degree": basis.degree,
        "selected": source,
        "coarse_max": coarse[k],
        "zero_form_max": coarse[0],
        "candidates": {label: value for (label, _), value in zip(candidates, certified)},
        "coarse_points": int(len(coords)),
        "fine_points": int(len(fine_coords)),
        "disclaimer": GRID_DISCLAIMER,
    }
    return certified[k], witness


def _refine_points(manifold, coords, charts, factor):
    """A denser point set containing ``coords``: the finer lattice for an
    n^3 torus grid, else ``coords`` plus fresh sample points."""
    if isinstance(manifold, FourierTorus):
        n = round(len(coords) ** (1.0 / 3.0))
        if n**3 == len(coords):
            x = torus_grid(n * factor)
            return x, np.zeros(len(x), dtype=int)
        extra = torus_grid(max(2, n * factor))
        extra_charts = np.zeros(len(extra), dtype=int)
    else:
        extra, extra_charts = sample_points(manifold, len(coords) * (factor - 1) + 1, seed=1)
    return np.concatenate([coords, extra]), np.concatenate([charts, extra_charts])


def mane_bracket(sys, basis=None, loops=None, grid=None, opt=None, reeb_orbits=()):
    """Both bounds, with the ordering enforced."""
    if loops is None:
        loops = default_loops(sys.manifold, reeb_orbits)
    lower, lw = mane_lower(sys, loops)
    upper, uw = mane_upper(sys, basis, grid, opt)
    if lower > upper + BRACKET_SLACK:
        raise VerificationError(
            f"crossed bracket: lower {lower:.12g} > upper {upper:.12g} (witness {lw and lw['label']})",
            residual=lower - upper,
        )
    resolution = uw["fine_points"]
    return ManeBracket(
        lower=lower,
        upper=upper,
        lower_witness=lw,
        upper_witness=uw["coefficients"],
        grid_resolution=resolution,
        meta={
            "loops": len(loops),
            "upper_detail": {k: v for k, v in uw.items() if k != "coefficients"},
        },
    )
