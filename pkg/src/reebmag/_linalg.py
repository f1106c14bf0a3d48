"""Batched small-matrix helpers usable inside jitted kernels.

XLA's batched LU is slow on CPU for stacks of 3x3 matrices, so the 3x3
inverse is done in closed form.
"""

import jax.numpy as jnp


def inv(m):
    """Inverse over the last two axes (no singularity check)."""
    if m.shape[-1] != 3:
        return jnp.linalg.inv(m)
    c0 = jnp.cross(m[..., 1, :], m[..., 2, :])
    c1 = jnp.cross(m[..., 2, :], m[..., 0, :])
    c2 = jnp.cross(m[..., 0, :], m[..., 1, :])
    det = jnp.sum(m[..., 0, :] * c0, axis=-1)
    return jnp.stack([c0, c1, c2], axis=-1) / det[..., None, None]


def T(m):
    return jnp.swapaxes(m, -1, -2)


def sym(m):
    return 0.5 * (m + T(m))


def congruence(c, b):
    """``c^T b c`` over the last two axes."""
    return T(c) @ b @ c


def matvec(m, v):
    return (m @ v[..., None])[..., 0]


def quad(m, u, v=None):
    """``u^T m v`` over the last axes."""
    if v is None:
        v = u
    return jnp.sum(u * matvec(m, v), axis=-1)
