"""Numerical laboratory for magnetic geodesic flows of contact forms."""

import jax

# chart-level tolerances down to 1e-12 need double precision in every kernel
jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
