import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deeepc.errors import DepthExceedsLength, LengthMismatch
from deeepc.hankel import (
    build_hankel,
    is_persistently_exciting,
    partition,
    reduce_svd,
)


class TestBuildHankel:
    def test_column_structure(self):
        x = np.arange(6.0)[:, None]
        H = build_hankel(x, 3)
        assert H.data.shape == (3, 4)
        # column j holds samples j..j+L-1
        for j in range(4):
            assert np.array_equal(H.data[:, j], [j, j + 1, j + 2])

    def test_multichannel_block_layout(self):
        x = np.arange(8.0).reshape(4, 2)
        H = build_hankel(x, 2)
        assert H.data.shape == (4, 3)
        assert np.array_equal(H.block(0, 0), x[0])
        assert np.array_equal(H.block(1, 0), x[1])
        assert np.array_equal(H.block(1, 2), x[3])

    def test_depth_one(self):
        x = np.arange(5.0)[:, None]
        H = build_hankel(x, 1)
        assert np.array_equal(H.data, x.T)

    def test_depth_equals_length(self):
        x = np.arange(5.0)[:, None]
        H = build_hankel(x, 5)
        assert H.data.shape == (5, 1)

    def test_depth_exceeds_length(self):
        with pytest.raises(DepthExceedsLength):
            build_hankel(np.zeros((3, 1)), 4)

    @given(st.integers(2, 30), st.integers(1, 3), st.integers(1, 5))
    @settings(max_examples=50, deadline=None)
    def test_every_window_appears_as_column(self, T, m, L):
        if L > T:
            return
        rng = np.random.default_rng(T * 100 + m * 10 + L)
        x = rng.standard_normal((T, m))
        H = build_hankel(x, L)
        assert H.data.shape == (m * L, T - L + 1)
        for j in range(T - L + 1):
            assert np.array_equal(H.data[:, j], x[j : j + L].ravel())


class TestPersistentExcitation:
    def test_random_input_is_exciting(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(-1, 1, (100, 1))
        ok, rank = is_persistently_exciting(u, 5)
        assert ok and rank == 5

    def test_constant_input_is_not(self):
        u = np.ones((50, 1))
        ok, rank = is_persistently_exciting(u, 3)
        assert not ok and rank == 1

    def test_zero_input(self):
        ok, rank = is_persistently_exciting(np.zeros((20, 1)), 2)
        assert not ok and rank == 0

    @given(st.integers(1, 6))
    @settings(max_examples=20, deadline=None)
    def test_rank_monotone_in_order(self, order):
        rng = np.random.default_rng(order)
        u = rng.uniform(-1, 1, (60, 1))
        _, r1 = is_persistently_exciting(u, order)
        _, r2 = is_persistently_exciting(u, order + 1)
        assert r2 >= r1


class TestPartition:
    def test_past_future_rows(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal((30, 1))
        v = rng.standard_normal((30, 2))
        z = rng.standard_normal((30, 3))
        b = partition(u, v, z, t_ini=2, n_p=3)
        Hu = build_hankel(u, 5).data
        assert np.array_equal(b.Up, Hu[:2])
        assert np.array_equal(b.Uf, Hu[2:])
        Hz = build_hankel(z, 5).data
        assert np.array_equal(b.Zp, Hz[: 3 * 2])
        assert np.array_equal(b.Zf, Hz[3 * 2 :])
        assert b.n_g == 26
        assert b.dims == (1, 2, 3)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            partition(np.zeros((10, 1)), np.zeros((9, 1)), np.zeros((10, 1)), 2, 2)

    def test_bad_horizons(self):
        with pytest.raises(DepthExceedsLength):
            partition(np.zeros((10, 1)), np.zeros((10, 1)), np.zeros((10, 1)), 0, 2)


class TestReduceSvd:
    def test_column_space_preserved(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal((40, 1))
        v = rng.standard_normal((40, 1))
        z = rng.standard_normal((40, 2))
        b = partition(u, v, z, 2, 2)
        r = reduce_svd(b, tol=0.0)
        M, Mr = b.stacked(), r.stacked()
        # reduced @ basis.T reconstructs the original stack
        assert np.allclose(Mr @ r.basis.T, M, atol=1e-10)
        assert r.n_g <= min(M.shape)
        assert r.t_ini == b.t_ini and r.n_p == b.n_p and r.dims == b.dims

    def test_rank_deficient_stack_shrinks(self):
        # an LTI trajectory stack has rank n_u*L + n_x << columns
        rng = np.random.default_rng(1)
        from deeepc.lti import random_stable_system, simulate

        sys = random_stable_system(3, 1, 2, rng)
        u = rng.uniform(-1, 1, (200, 1))
        _, y = simulate(sys, np.zeros(3), u)
        b = partition(u, u, y, 2, 2)
        r = reduce_svd(b, tol=1e-10)
        assert r.n_g <= 2 * 4 + 3  # u rows duplicated + state dim

    def test_representation_error_bounded(self):
        rng = np.random.default_rng(2)
        u = rng.standard_normal((60, 2))
        z = rng.standard_normal((60, 3))
        b = partition(u, u, z, 2, 3)
        r = reduce_svd(b, tol=1e-8)
        M = b.stacked()
        err = np.linalg.norm(M - r.stacked() @ r.basis.T, 2)
        s_max = np.linalg.svd(M, compute_uv=False)[0]
        assert err <= 1e-7 * s_max
