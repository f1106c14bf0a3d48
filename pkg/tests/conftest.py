"""Shared systems.  Jitted kernels are cached per object, so tests reuse
session-scoped manifolds and systems instead of rebuilding them."""

import numpy as np
import pytest

from reebmag.geometry import ChartPoint, get_manifold
from reebmag.magnetic import MagneticSystem
from reebmag.metric import BundleMetric, MetricField, example_fourier_bundle_metric, extend_metric, perturbed_metric


@pytest.fixture(scope="session")
def t3():
    return get_manifold("t3-standard")


@pytest.fixture(scope="session")
def s3():
    return get_manifold("s3-standard")


@pytest.fixture(scope="session")
def t3_identity(t3):
    return MagneticSystem(t3, extend_metric(t3, BundleMetric.identity()))


@pytest.fixture(scope="session")
def t3_fourier(t3):
    return MagneticSystem(t3, extend_metric(t3, example_fourier_bundle_metric()))


@pytest.fixture(scope="session")
def t3_perturbed(t3):
    return MagneticSystem(t3, perturbed_metric(t3, BundleMetric.identity(), 0.3))


@pytest.fixture(scope="session")
def t3_flat_free(t3):
    """Constant non-identity metric with the magnetic field switched off."""
    metric = MetricField.constant(t3, [[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 1.5]])
    return MagneticSystem(t3, metric, strength=0.0)


@pytest.fixture(scope="session")
def s3_identity(s3):
    return MagneticSystem(s3, extend_metric(s3, BundleMetric.identity()))


@pytest.fixture(scope="session")
def s3_skewed(s3):
    return MagneticSystem(s3, extend_metric(s3, BundleMetric.constant([[2.0, 0.5], [0.5, 1.0]])))


def torus_point(z, x=0.0, y=0.0):
    return ChartPoint(np.array([x, y, z]))


def hopf_point(s3, ambient=(1.0, 0.0, 0.0, 0.0)):
    X = np.asarray(ambient, dtype=float)
    u, chart = s3.from_ambient(X / np.linalg.norm(X))
    return ChartPoint(u, int(chart))
