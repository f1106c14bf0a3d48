"""Per-object cache of jitted kernels.

Kernels are plain functions ``kernel(owner, *arrays, **static)``; the owner
(manifold, metric, system) is closed over so it never has to be hashable.
"""

import functools

import jax
import numpy as np


def compiled(owner, kernel, **static):
    cache = owner.__dict__.setdefault("_compiled", {})
    key = (kernel, tuple(sorted(static.items())))
    fn = cache.get(key)
    if fn is None:
        fn = cache[key] = jax.jit(functools.partial(kernel, owner, **static))
    return fn


def call(owner, kernel, *args, **static):
    """Run a kernel through its jitted wrapper and return numpy arrays."""
    out = compiled(owner, kernel, **static)(*args)
    return jax.tree_util.tree_map(np.asarray, out)


def _bucket(n, floor=16):
    return max(floor, 1 << max(n - 1, 0).bit_length())


def call_batched(owner, kernel, *args, block=1024, **static):
    """Like :func:`call` for kernels mapping over a shared leading axis.

    Rows are processed in blocks of at most ``block``; a short final block is
    padded (repeating its last row) to a power of two of at least 128, so
    varying lengths reuse a handful of compiled shapes.  Scalar arguments
    are passed through unchanged.
    """
    arrays = [np.asarray(a) for a in args]
    n = next(a.shape[0] for a in arrays if a.ndim > 0)
    pieces = []
    for start in range(0, n, block):
        stop = min(start + block, n)
        size = min(block, _bucket(stop - start, floor=128))
        part = []
        for a in arrays:
            if a.ndim == 0:
                part.append(a)
                continue
            rows = a[start:stop]
            part.append(np.concatenate([rows, np.repeat(rows[-1:], size - len(rows), axis=0)]))
        out = call(owner, kernel, *part, **static)
        pieces.append(jax.tree_util.tree_map(lambda x, m=stop - start: x[:m], out))
    return jax.tree_util.tree_map(lambda *xs: np.concatenate(xs), *pieces)
