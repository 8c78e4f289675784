import numpy as np
import pytest

from spinwork import SpinChainSpec, build_hopping, build_zz, eigendecompose


@pytest.fixture(scope="session")
def chain4():
    spec = SpinChainSpec(4, 2.0)
    h0 = build_hopping(spec)
    h1 = build_zz(spec)
    return spec, h0, h1, eigendecompose(h0)


def two_site_operators(J=2.0):
    """Independent 4x4 construction of the two-site chain, by explicit kron."""
    sp = np.array([[0, 1], [0, 0]], dtype=complex)
    sm = sp.conj().T
    sz = np.diag([1.0, -1.0]).astype(complex)
    eye = np.eye(2, dtype=complex)
    hop = np.kron(sp, sm) + np.kron(sm, sp)
    h0 = J * hop
    h1 = J * np.kron(sz, sz)
    return h0, h1, eye
