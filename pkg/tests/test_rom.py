import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from msrom.fem import FineDiscretization
from msrom.field import generate_channelized
from msrom.grid import build_fine_mesh
from msrom.rom import RankDeficiencyError, ReducedOperator, project, reconstruct, reduced_l2_projection


@pytest.fixture(scope="module")
def disc():
    m = build_fine_mesh(12, 12)
    return FineDiscretization(m, generate_channelized(m, 50.0, 2))


@given(st.integers(1, 15), st.integers(0, 10_000))
def test_projection_matches_dense(disc, r, seed):
    V = np.random.default_rng(seed).normal(size=(disc.n_free, r))
    ops = project(V, disc.A_in, disc.M_in)
    A, M = disc.A_in.toarray(), disc.M_in.toarray()
    assert np.allclose(ops.A_r, V.T @ A @ V)
    assert np.allclose(ops.M_r, V.T @ M @ V)


def test_extend_equals_fresh_projection(disc):
    rng = np.random.default_rng(0)
    V, W = rng.normal(size=(disc.n_free, 5)), rng.normal(size=(disc.n_free, 3))
    a = project(V, disc.A_in, disc.M_in).extend(W)
    b = project(np.hstack([V, W]), disc.A_in, disc.M_in)
    assert np.allclose(a.A_r, b.A_r) and np.allclose(a.M_r, b.M_r)
    t = a.truncate(5)
    assert t.rank == 5 and np.allclose(t.A_r, project(V, disc.A_in, disc.M_in).A_r)


def test_l2_projection_exact_on_span(disc):
    rng = np.random.default_rng(1)
    V = sp.csc_matrix(rng.normal(size=(disc.n_free, 6)))
    c = rng.normal(size=6)
    w = reconstruct(V, c)
    assert np.allclose(reduced_l2_projection(V, disc.M_in, w).coefficients, c)
    assert np.allclose(ReducedOperator(V, disc.A_in, disc.M_in).l2_projection(w).coefficients, c)


def test_l2_projection_is_m_orthogonal(disc):
    rng = np.random.default_rng(2)
    V = rng.normal(size=(disc.n_free, 4))
    w = rng.normal(size=disc.n_free)
    c = reduced_l2_projection(V, disc.M_in, w).coefficients
    assert np.allclose(V.T @ (disc.M_in @ (w - V @ c)), 0, atol=1e-10)


def test_rank_deficiency_detected(disc):
    V = np.ones((disc.n_free, 2))
    with pytest.raises(RankDeficiencyError):
        ReducedOperator(V, disc.A_in, disc.M_in)
    with pytest.raises(ValueError):
        reconstruct(sp.csc_matrix(np.eye(4)), np.zeros(3))
