import numpy as np
import pytest

from spgadmm.blockspace import LinearMap
from spgadmm.functions import ConvexFunctionOracle, ZeroPart
from spgadmm.problem import InstanceDims, ProblemInstance, generate_with_known_kkt

SMALL = InstanceDims((6, 9), (5, 7), 12)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(params=["lasso", "box-qp", "random-plq"])
def small_instance(request):
    return generate_with_known_kkt(3, SMALL, request.param)


@pytest.fixture
def small_lasso():
    return generate_with_known_kkt(11, SMALL, "lasso")


def quadratic(Q, q=None, r=0.0, dims=None, nonsmooth=None):
    """Oracle for ``1/2 <y,Qy> - <q,y> + r`` plus an optional nonsmooth part."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    return ConvexFunctionOracle(nonsmooth or ZeroPart(), LinearMap(Q, dims, psd=True), q, r)


def scalar_instance(A=1.0, B=1.0, c=0.0, qf=0.0, qg=0.0, Qf=0.0, Qg=0.0):
    """All spaces one-dimensional."""
    f = quadratic([[Qf]], [qf])
    g = quadratic([[Qg]], [qg])
    return ProblemInstance(f, g, LinearMap([[A]]), LinearMap([[B]]), [c])
