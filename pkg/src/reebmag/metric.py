"""Class-G Riemannian metrics built from bundle metrics on ker(alpha).

A bundle metric is a field of SPD matrices expressed in the contact frame's
xi-basis.  :func:`extend_metric` declares the Reeb vector unit length and
orthogonal to ker(alpha), which determines the metric on all of TM.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from . import _linalg as la
from ._jit import call
from .geometry import TWO_PI, FourierTorus, frame_matrix

DEFAULT_CHRISTOFFEL_STEP = 1e-5


class BundleMetric:
    """SPD matrix field on ker(alpha), in frame coordinates.

    ``coeff(x, chart)`` must be traceable and broadcast over leading axes.
    ``spec`` keeps the serialisable description used in reports.
    """

    def __init__(self, coeff, size=2, label="custom", spec=None):
        self._coeff = coeff
        self.size = size
        self.label = label
        self.spec = spec if spec is not None else {"kind": label}

    def __call__(self, x, chart=0):
        x = jnp.asarray(x)
        return jnp.broadcast_to(self._coeff(x, chart), x.shape[:-1] + (self.size, self.size))

    @classmethod
    def identity(cls, size=2):
        m = cls.constant(np.eye(size))
        m.label, m.spec = "identity", {"kind": "identity"}
        return m

    @classmethod
    def constant(cls, matrix, label=None):
        m = np.asarray(matrix, dtype=float)
        _require_spd(m)
        diagonal = np.allclose(m, np.diag(np.diag(m)))
        if label is None:
            label = "diag(" + ", ".join(f"{d:g}" for d in np.diag(m)) + ")" if diagonal else "constant"
        spec = {"kind": "constant", "matrix": m.tolist()}
        return cls(lambda x, chart: jnp.asarray(m), size=m.shape[0], label=label, spec=spec)

    @classmethod
    def fourier_z(cls, base, cos=(), sin=(), label="fourier-z", check_points=256):
        """``base + sum_k cos[k-1] cos(2 pi k z) + sin[k-1] sin(2 pi k z)``.

        Only meaningful on tori, where z is a global periodic coordinate.
        """
        base = np.asarray(base, dtype=float)
        cos = [np.asarray(c, dtype=float) for c in cos]
        sin = [np.asarray(s, dtype=float) for s in sin]
        for m in [base, *cos, *sin]:
            if np.max(np.abs(m - m.T)) > 0:
                raise ValueError("Fourier coefficient matrices must be symmetric")

        def coeff(x, chart, xp=jnp):
            z = x[..., 2][..., None, None]
            out = base + 0.0 * z
            for k, c in enumerate(cos, start=1):
                out = out + c * xp.cos(TWO_PI * k * z)
            for k, s in enumerate(sin, start=1):
                out = out + s * xp.sin(TWO_PI * k * z)
            return out

        z = np.zeros((check_points, 3))
        z[:, 2] = np.arange(check_points) / check_points
        _require_spd(coeff(z, 0, np))
        spec = {
            "kind": "fourier-z",
            "base": base.tolist(),
            "cos": [c.tolist() for c in cos],
            "sin": [s.tolist() for s in sin],
        }
        return cls(coeff, size=base.shape[0], label=label, spec=spec)


def _require_spd(m):
    m = np.asarray(m)
    if np.max(np.abs(m - np.swapaxes(m, -1, -2))) > 1e-12:
        raise ValueError("bundle metric is not symmetric")
    if np.min(np.linalg.eigvalsh(m)) <= 0.0:
        raise ValueError("bundle metric is not positive definite")


def example_fourier_bundle_metric():
    """The z-dependent example used in tests and the sample config."""
    return BundleMetric.fourier_z(
        base=[[2.0, 0.0], [0.0, 3.0]],
        cos=[[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.5]]],
        sin=[[[0.0, 0.3], [0.3, 0.0]]],
    )


class MetricField:
    """Riemannian metric in chart coordinates; ``g_fn`` must be traceable."""

    def __init__(self, manifold, g_fn, provenance="custom", label=""):
        self.manifold = manifold
        self._g = g_fn
        self.provenance = provenance
        self.label = label

    def g(self, x, chart=0):
        return self._g(jnp.asarray(x), chart)

    def g_inv(self, x, chart=0):
        return la.sym(la.inv(self.g(x, chart)))

    @classmethod
    def constant(cls, manifold, matrix, label="constant"):
        m = np.asarray(matrix, dtype=float)
        m = 0.5 * (m + m.T)
        dim = m.shape[0]

        def g_fn(x, chart):
            return jnp.broadcast_to(jnp.asarray(m), x.shape[:-1] + (dim, dim))

        return cls(manifold, g_fn, provenance="custom", label=label)


def _frame_block(manifold, bm, x, chart, cross=None):
    F = frame_matrix(manifold, x, chart)
    dim = F.shape[-1]
    top = jnp.zeros(x.shape[:-1] + (1, dim)).at[..., 0, 0].set(1.0)
    if cross is not None:
        top = top.at[..., 0, dim - 1].set(cross(x, chart))
    lower = jnp.concatenate([la.T(top[..., :, 1:]), bm(x, chart)], axis=-1)
    block = jnp.concatenate([top, lower], axis=-2)
    return la.sym(la.congruence(la.inv(F), block))


def extend_metric(manifold, bm):
    """The unique metric with g(R, R) = 1, R orthogonal to ker(alpha), and
    restriction ``bm`` on ker(alpha)."""

    def g_fn(x, chart):
        return _frame_block(manifold, bm, x, chart)

    return MetricField(manifold, g_fn, provenance="class-G", label=bm.label)


def perturbed_metric(manifold, bm, amplitude=0.3):
    """Negative control: class-G metric plus the cross term
    g(R, e_last) = amplitude * sin(2 pi z).  Tori only."""
    if not isinstance(manifold, FourierTorus):
        raise ValueError("the cross-term perturbation is defined on tori only")

    def cross(x, chart):
        return amplitude * jnp.sin(TWO_PI * x[..., 2])

    def g_fn(x, chart):
        return _frame_block(manifold, bm, x, chart, cross=cross)

    metric = MetricField(manifold, g_fn, provenance="custom", label=f"{bm.label}+cross({amplitude:g})")
    z = np.zeros((256, 3))
    z[:, 2] = np.arange(256) / 256
    if np.min(np.linalg.eigvalsh(metric_values(metric, z, 0))) <= 0.0:
        raise ValueError("perturbation amplitude too large to keep the metric positive definite")
    return metric


def _g_kernel(metric, x, chart):
    return metric.g(x, chart)


def metric_values(metric, x, chart=0):
    """Host-side ``g`` at a batch of points (numpy)."""
    return call(metric, _g_kernel, np.asarray(x, dtype=float), chart)


@dataclass(frozen=True)
class ChristoffelTensor:
    gamma: np.ndarray  # gamma[k, i, j] = Gamma^k_ij


def metric_derivative(metric, x, chart=0, h=DEFAULT_CHRISTOFFEL_STEP):
    """Central differences ``dg[..., k, i, j] = d_k g_ij``."""
    x = jnp.asarray(x)
    dim = x.shape[-1]
    steps = h * jnp.eye(dim).reshape((dim,) + (1,) * (x.ndim - 1) + (dim,))
    shifted = jnp.concatenate([x[None] + steps, x[None] - steps])
    g = metric.g(shifted, chart)
    dg = (g[:dim] - g[dim:]) / (2.0 * h)
    return jnp.moveaxis(dg, 0, -3)


def christoffel_field(metric, x, chart=0, h=DEFAULT_CHRISTOFFEL_STEP, g_inv=None):
    """Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij), batched."""
    dg = metric_derivative(metric, x, chart, h)
    if g_inv is None:
        g_inv = metric.g_inv(x, chart)
    # lowered[l, i, j] = d_i g_jl + d_j g_il - d_l g_ij
    d_first = jnp.moveaxis(dg, -1, -3)
    lowered = d_first + la.T(d_first) - dg
    dim = dg.shape[-1]
    flat = lowered.reshape(lowered.shape[:-2] + (dim * dim,))
    gamma = 0.5 * (g_inv @ flat).reshape(lowered.shape)
    return 0.5 * (gamma + la.T(gamma))


def christoffel(metric, q, h=DEFAULT_CHRISTOFFEL_STEP):
    metric.manifold.check_domain(q.coords, q.chart_id, margin=2.0 * h)
    return ChristoffelTensor(call(metric, christoffel_field, q.coords, q.chart_id, h=h))


def _g_inv_kernel(metric, x, chart):
    return metric.g_inv(x, chart)


def covector_norm(metric, q, p):
    p = np.asarray(p, dtype=float)
    g_inv = call(metric, _g_inv_kernel, q.coords, q.chart_id)
    return float(np.sqrt(p @ g_inv @ p))


def restrict_to_xi(metric, x, chart=0):
    """Restriction of ``metric`` to the contact frame's xi-basis (inverse of
    :func:`extend_metric` on class-G metrics)."""
    F = frame_matrix(metric.manifold, x, chart)
    xi = F[..., :, 1:]
    return la.congruence(xi, metric.g(x, chart))


def class_g_defects(metric, x, chart=0):
    """``(|g(R,R) - 1|, max_e |g(R, e)|)`` at each point, e over the xi-basis."""
    F = frame_matrix(metric.manifold, x, chart)
    gF = la.congruence(F, metric.g(x, chart))
    return jnp.abs(gF[..., 0, 0] - 1.0), jnp.max(jnp.abs(gF[..., 0, 1:]), axis=-1)
