"""Contact manifolds in chart coordinates.

Evaluators are batched and traceable: ``x`` has shape ``(..., dim)`` and
``chart`` is an int or an integer array broadcastable to ``x.shape[:-1]``.
The scalar operations (:func:`reeb_vector`, :func:`contact_frame`, ...) take
a :class:`ChartPoint`, validate, and return numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np
from scipy.stats import qmc

from . import _linalg as la
from ._jit import call
from .errors import DegeneracyError, DomainError

DEFAULT_FD_STEP = 1e-5
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ChartPoint:
    coords: np.ndarray
    chart_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


@dataclass(frozen=True)
class ContactFrame:
    reeb: np.ndarray
    xi_basis: np.ndarray  # shape (dim - 1, dim), one basis vector per row

    @property
    def matrix(self):
        """Frame as columns ``[R, xi_1, ..., xi_2n]``."""
        return np.column_stack([self.reeb, *self.xi_basis])


def _chart_array(chart, shape):
    return jnp.broadcast_to(jnp.asarray(chart), shape)


class ContactManifold:
    """Base class: a contact form given in chart coordinates.

    Subclasses provide :meth:`alpha` and may override :meth:`dalpha` with an
    analytic exterior derivative; otherwise central differences are used.
    Methods named like kernels must stay traceable (jnp only, no raising).
    """

    key = "custom"
    dim = 3
    n_charts = 1
    orbit_family_note = ""
    # the default seeds carry no orientation, so fix a sign convention
    orient_first_vector = True

    def alpha(self, x, chart=0):
        raise NotImplementedError

    def dalpha(self, x, chart=0):
        return dalpha_fd(self, x, chart, DEFAULT_FD_STEP)

    def frame_seeds(self, x, chart=0):
        """Ordered vectors whose projections onto ker(alpha) span it.

        The default drops the standard basis vector best aligned with alpha.
        It is deterministic but jumps where the dominant component changes;
        catalog manifolds override it with smooth seeds.
        """
        a = self.alpha(x, chart)
        drop = jnp.argmax(jnp.abs(a), axis=-1)
        eye = np.eye(self.dim)
        keep = np.array([[j for j in range(self.dim) if j != d] for d in range(self.dim)])
        return jnp.asarray(eye[keep])[drop]

    def reference_inner(self, x, chart=0):
        x = jnp.asarray(x)
        return jnp.broadcast_to(jnp.eye(self.dim), x.shape[:-1] + (self.dim, self.dim))

    def needs_switch(self, x, chart=0):
        x = jnp.asarray(x)
        return jnp.zeros(x.shape[:-1], dtype=bool)

    def switch_chart(self, x, v, chart):
        return x, v, chart

    # host-side helpers below (numpy, may raise)

    def domain_margin(self, x, chart=0):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], np.inf)

    def check_domain(self, x, chart=0, margin=0.0):
        m = self.domain_margin(x, chart)
        if np.any(m < margin):
            raise DomainError(
                f"point within {float(np.min(m)):.3g} of the chart boundary; need {margin:.3g}"
            )

    def normalize(self, x, chart=0):
        return np.asarray(x, dtype=float), chart

    def embed(self, x, v, chart=0):
        """Smooth global representation of tangent vectors, used for
        orbit comparison and interpolation across chart changes."""
        return np.asarray(x, dtype=float), np.asarray(v, dtype=float)

    def tm_distance(self, q1, v1, q2, v2):
        return np.sqrt(np.sum((q1 - q2) ** 2, axis=-1) + np.sum((v1 - v2) ** 2, axis=-1))


class FourierTorus(ContactManifold):
    """T^3 = (R/Z)^3 with alpha = a(z) dx + b(z) dy.

    ``a`` and ``b`` are truncated Fourier series in z, each given as a dict
    ``{"const": c0, "cos": [c1, c2, ...], "sin": [s1, s2, ...]}`` where entry
    k-1 multiplies cos(2 pi k z) (resp. sin).  The defaults give the standard
    form cos(2 pi z) dx + sin(2 pi z) dy.  The form is contact iff
    a b' - b a' never vanishes; this is checked on construction.
    """

    orient_first_vector = False

    def __init__(self, a=None, b=None, key="t3-standard", check_points=256):
        self.key = key
        self.a = _fourier_coeffs(a if a is not None else {"cos": [1.0]})
        self.b = _fourier_coeffs(b if b is not None else {"sin": [1.0]})
        z = np.arange(check_points) / check_points
        a0, a1 = self._series(self.a, z, np)
        b0, b1 = self._series(self.b, z, np)
        vol = a0 * b1 - b0 * a1
        if np.min(np.abs(vol)) < 1e-8 or np.min(vol) * np.max(vol) < 0:
            raise DegeneracyError("a b' - b a' vanishes somewhere: not a contact form")
        self.orbit_family_note = (
            "Reeb orbits fill invariant 2-tori; rational-slope tori carry continuous "
            "families of closed orbits, counted by detected representatives only"
        )

    @staticmethod
    def _series(c, z, xp=jnp):
        const, cos_c, sin_c = c
        val = const + 0.0 * z
        der = 0.0 * z
        for k, (ck, sk) in enumerate(zip(cos_c, sin_c), start=1):
            w = TWO_PI * k
            cz, sz = xp.cos(w * z), xp.sin(w * z)
            val = val + ck * cz + sk * sz
            der = der + w * (sk * cz - ck * sz)
        return val, der

    def alpha(self, x, chart=0):
        z = jnp.asarray(x)[..., 2]
        a, _ = self._series(self.a, z)
        b, _ = self._series(self.b, z)
        return jnp.stack([a, b, jnp.zeros_like(z)], axis=-1)

    def dalpha(self, x, chart=0):
        z = jnp.asarray(x)[..., 2]
        _, da = self._series(self.a, z)
        _, db = self._series(self.b, z)
        o = jnp.zeros_like(z)
        rows = [
            jnp.stack([o, o, -da], axis=-1),
            jnp.stack([o, o, -db], axis=-1),
            jnp.stack([da, db, o], axis=-1),
        ]
        return jnp.stack(rows, axis=-2)

    def frame_seeds(self, x, chart=0):
        a = self.alpha(x)
        o = jnp.zeros_like(a[..., 0])
        e_z = jnp.stack([o, o, o + 1.0], axis=-1)
        rot = jnp.stack([-a[..., 1], a[..., 0], o], axis=-1)
        return jnp.stack([e_z, rot], axis=-2)

    def normalize(self, x, chart=0):
        return np.mod(np.asarray(x, dtype=float), 1.0), chart

    def tm_distance(self, q1, v1, q2, v2):
        dq = q1 - q2
        dq = dq - np.round(dq)
        return np.sqrt(np.sum(dq**2, axis=-1) + np.sum((v1 - v2) ** 2, axis=-1))


def _fourier_coeffs(spec):
    const = float(spec.get("const", 0.0))
    cos_c = [float(c) for c in spec.get("cos", [])]
    sin_c = [float(c) for c in spec.get("sin", [])]
    n = max(len(cos_c), len(sin_c))
    cos_c += [0.0] * (n - len(cos_c))
    sin_c += [0.0] * (n - len(sin_c))
    return const, cos_c, sin_c


class StandardSphere(ContactManifold):
    """Unit S^3 in R^4 = (x1, y1, x2, y2) with alpha = x1 dy1 - y1 dx1 + x2 dy2 - y2 dx2.

    Two stereographic charts: chart 0 projects from (0,0,0,-1), chart 1 from
    (0,0,0,1); u' = u / |u|^2 on the overlap.  Trajectories switch charts when
    |u| exceeds ``switch_radius``.
    """

    key = "s3-standard"
    n_charts = 2
    orbit_family_note = (
        "every Reeb orbit is a closed Hopf fibre of period 2 pi; the census counts "
        "detected representatives of this continuous family"
    )
    orient_first_vector = False
    switch_radius = 2.0
    domain_radius = 4.0
    # ambient d(alpha) = 2 (dx1^dy1 + dx2^dy2)
    _omega = 2.0 * np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float)

    @staticmethod
    def _sign(chart, shape, xp=jnp):
        return xp.where(xp.broadcast_to(xp.asarray(chart), shape) == 0, 1.0, -1.0)

    def to_ambient(self, x, chart=0, xp=jnp):
        u = xp.asarray(x)
        r2 = xp.sum(u**2, axis=-1)
        s = self._sign(chart, r2.shape, xp)
        den = 1.0 + r2
        return xp.concatenate([2.0 * u / den[..., None], (s * (1.0 - r2) / den)[..., None]], axis=-1)

    def jacobian(self, x, chart=0, xp=jnp):
        """d(ambient)/d(chart), shape (..., 4, 3)."""
        u = xp.asarray(x)
        r2 = xp.sum(u**2, axis=-1)
        s = self._sign(chart, r2.shape, xp)
        den = (1.0 + r2)[..., None, None]
        top = 2.0 * xp.eye(3) / den - 4.0 * u[..., :, None] * u[..., None, :] / den**2
        bottom = -4.0 * s[..., None, None] * u[..., None, :] / den**2
        return xp.concatenate([top, bottom], axis=-2)

    def _project(self, X, V, chart, xp=jnp):
        s = self._sign(chart, X.shape[:-1], xp)
        den = 1.0 + s * X[..., 3]
        u = X[..., :3] / den[..., None]
        if V is None:
            return u, None
        v = V[..., :3] / den[..., None] - X[..., :3] * (s * V[..., 3] / den**2)[..., None]
        return u, v

    @staticmethod
    def _ambient_alpha(X, xp=jnp):
        return xp.stack([-X[..., 1], X[..., 0], -X[..., 3], X[..., 2]], axis=-1)

    def alpha(self, x, chart=0):
        X = self.to_ambient(x, chart)
        return la.matvec(la.T(self.jacobian(x, chart)), self._ambient_alpha(X))

    def dalpha(self, x, chart=0):
        return la.congruence(self.jacobian(x, chart), jnp.asarray(self._omega))

    def frame_seeds(self, x, chart=0):
        # ambient frame (-x2, y2, x1, -y1), (-y2, -x2, y1, x1) of ker(alpha); chart-independent
        X = self.to_ambient(x, chart)
        x1, y1, x2, y2 = (X[..., i] for i in range(4))
        V1 = jnp.stack([-x2, y2, x1, -y1], axis=-1)
        V2 = jnp.stack([-y2, -x2, y1, x1], axis=-1)
        _, w1 = self._project(X, V1, chart)
        _, w2 = self._project(X, V2, chart)
        return jnp.stack([w1, w2], axis=-2)

    def reference_inner(self, x, chart=0):
        J = self.jacobian(x, chart)
        return la.T(J) @ J

    def needs_switch(self, x, chart=0):
        return jnp.sum(jnp.asarray(x) ** 2, axis=-1) > self.switch_radius**2

    def switch_chart(self, x, v, chart):
        r2 = jnp.sum(x**2, axis=-1)[..., None]
        xv = jnp.sum(x * v, axis=-1)[..., None]
        return x / r2, (v * r2 - 2.0 * x * xv) / r2**2, 1 - chart

    # host-side helpers

    def from_ambient(self, X, V=None):
        """Chart coordinates of ambient points (and tangent vectors), using
        the chart in which |u| <= 1."""
        X = np.asarray(X, dtype=float)
        chart = np.where(X[..., 3] >= 0.0, 0, 1)
        u, v = self._project(X, None if V is None else np.asarray(V, dtype=float), chart, np)
        if V is None:
            return u, chart
        return u, v, chart

    def domain_margin(self, x, chart=0):
        return self.domain_radius - np.linalg.norm(np.asarray(x, dtype=float), axis=-1)

    def normalize(self, x, chart=0):
        x = np.asarray(x, dtype=float)
        flip = np.linalg.norm(x, axis=-1) > 1.0
        x_new = np.where(flip[..., None], x / np.sum(x**2, axis=-1, keepdims=True), x)
        chart_new = np.where(flip, 1 - np.asarray(chart), chart)
        if x.ndim == 1:
            return x_new, int(chart_new)
        return x_new, chart_new

    def embed(self, x, v, chart=0):
        X = self.to_ambient(x, chart, np)
        V = np.einsum("...ai,...i->...a", self.jacobian(x, chart, np), np.asarray(v, dtype=float))
        return X, V


def dalpha_fd(manifold, x, chart=0, h=DEFAULT_FD_STEP, richardson=False):
    """Central-difference exterior derivative ``D[i, j] = d_i a_j - d_j a_i``.

    The gradient ``G[i, j] = d_i a_j`` is differenced and ``G - G^T`` returned,
    so the result is exactly antisymmetric.
    """
    if richardson:
        coarse = dalpha_fd(manifold, x, chart, h)
        fine = dalpha_fd(manifold, x, chart, h / 2.0)
        return (4.0 * fine - coarse) / 3.0
    x = jnp.asarray(x)
    dim = x.shape[-1]
    rows = []
    for k in range(dim):
        step = h * jnp.eye(dim)[k]
        rows.append((manifold.alpha(x + step, chart) - manifold.alpha(x - step, chart)) / (2 * h))
    grad = jnp.stack(rows, axis=-2)
    return grad - la.T(grad)


def eval_dalpha_fd(manifold, q, h=DEFAULT_FD_STEP, richardson=False):
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    manifold.check_domain(q.coords, q.chart_id, margin=2.0 * h)
    return call(manifold, dalpha_fd, q.coords, q.chart_id, h=h, richardson=richardson)


def stacked_system(manifold, x, chart=0, a=None):
    """The ``(dim + 1) x dim`` matrix with first row alpha and then d alpha."""
    if a is None:
        a = manifold.alpha(x, chart)
    return jnp.concatenate([a[..., None, :], manifold.dalpha(x, chart)], axis=-2)


def reeb_field(manifold, x, chart=0, a=None):
    """Solve ``[alpha; d alpha] R = (1, 0, ..., 0)`` at every point of ``x``.

    The stacked system is overdetermined but consistent; it is solved through
    its normal equations, whose matrix is SPD exactly when the contact
    condition holds.
    """
    stacked = stacked_system(manifold, x, chart, a)
    normal = la.T(stacked) @ stacked
    return la.matvec(la.inv(normal), stacked[..., 0, :])


def reeb_residual(manifold, x, chart=0):
    """Max-norm residual of the stacked Reeb system at each point."""
    stacked = stacked_system(manifold, x, chart)
    reeb = la.matvec(la.inv(la.T(stacked) @ stacked), stacked[..., 0, :])
    lhs = la.matvec(stacked, reeb)
    return jnp.max(jnp.abs(lhs - jnp.eye(stacked.shape[-2])[0]), axis=-1)


def contact_condition(manifold, q, tol=1e-10):
    """True if the stacked ``[alpha; d alpha]`` matrix has full rank at q."""
    stacked = call(manifold, stacked_system, q.coords, q.chart_id)
    sv = np.linalg.svd(stacked, compute_uv=False)
    return bool(sv[-1] > tol * sv[0])


def reeb_vector(manifold, q):
    if not contact_condition(manifold, q):
        raise DegeneracyError(f"contact condition fails at {q.coords}")
    reeb = call(manifold, reeb_field, q.coords, q.chart_id)
    res = call(manifold, reeb_residual, q.coords, q.chart_id)
    if res > 1e-10:
        raise DegeneracyError(f"Reeb system residual {res:.3g} exceeds 1e-10")
    return reeb


def frame_matrix(manifold, x, chart=0):
    """Columns ``[R, xi_1, ..., xi_2n]`` at every point of ``x``.

    The xi vectors come from the manifold's seed vectors: each seed w is
    projected into ker(alpha) along R (w - alpha(w) R) and the results are
    Gram-Schmidt orthonormalised in the manifold's reference inner product.
    """
    a = manifold.alpha(x, chart)
    reeb = reeb_field(manifold, x, chart, a=a)
    seeds = manifold.frame_seeds(x, chart)
    inner = manifold.reference_inner(x, chart)
    proj = seeds - la.matvec(seeds, a)[..., None] * reeb[..., None, :]
    basis = []
    for k in range(proj.shape[-2]):
        w = proj[..., k, :]
        for e in basis:
            w = w - la.quad(inner, w, e)[..., None] * e
        basis.append(w / jnp.sqrt(la.quad(inner, w))[..., None])
    if manifold.orient_first_vector:
        first = basis[0]
        idx = jnp.argmax(jnp.abs(first) > 1e-12, axis=-1)
        lead = jnp.take_along_axis(first, idx[..., None], axis=-1)
        basis[0] = jnp.where(lead < 0, -first, first)
    return jnp.stack([reeb, *basis], axis=-1)


def contact_frame(manifold, q):
    reeb = reeb_vector(manifold, q)
    F = call(manifold, frame_matrix, q.coords, q.chart_id)
    if not np.all(np.isfinite(F)) or abs(np.linalg.det(F)) < 1e-12:
        raise DegeneracyError("frame seeds do not span ker(alpha)")
    return ContactFrame(reeb=reeb, xi_basis=F[:, 1:].T.copy())


def torus_grid(n):
    """Uniform n^3 grid on the unit cube."""
    t = np.arange(n) / n
    return np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)


def sphere_points(n, seed=0):
    """Quasi-random points uniformly distributed on S^3 (ambient coordinates).

    Halton points in [0,1)^3 are mapped through Hopf coordinates, where
    sin^2(eta) uniform gives the uniform measure.
    """
    u = qmc.Halton(d=3, scramble=True, seed=seed).random(n)
    eta = np.arcsin(np.sqrt(u[:, 0]))
    t1, t2 = TWO_PI * u[:, 1], TWO_PI * u[:, 2]
    return np.stack(
        [np.cos(eta) * np.cos(t1), np.cos(eta) * np.sin(t1), np.sin(eta) * np.cos(t2), np.sin(eta) * np.sin(t2)],
        axis=-1,
    )


def sample_points(manifold, n, seed=0):
    """Chart points for invariant sweeps: an n^3 grid on tori, n quasi-random
    points on the sphere.  Returns ``(coords, charts)``."""
    if isinstance(manifold, StandardSphere):
        return manifold.from_ambient(sphere_points(n, seed))
    x = torus_grid(n)
    return x, np.zeros(len(x), dtype=int)


CATALOG = {
    "t3-standard": FourierTorus,
    "t3-fourier": FourierTorus,
    "s3-standard": StandardSphere,
}


def get_manifold(key, **params):
    if key not in CATALOG:
        raise KeyError(f"unknown manifold {key!r}; choose from {sorted(CATALOG)}")
    if key == "t3-fourier":
        return FourierTorus(a=params.get("a"), b=params.get("b"), key=key)
    if params:
        raise ValueError(f"{key} takes no parameters")
    return CATALOG[key]()
