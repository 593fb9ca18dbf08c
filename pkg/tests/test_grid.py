import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advectant.errors import DimensionError, InputError
from advectant.grid import GridField, GridSpec, g2p, p2g, p2g_raw, stencil
from advectant.tensor import Tensor, no_grad, precision, reduce_sum

from oracles import (
    finite_diff_grad,
    gather_oracle,
    max_rel_err,
    p2g_normalized_oracle,
    scatter_oracle,
)


def _spec(n=4):
    return GridSpec(n=n, half_extent=1.0)


def _random_positions(rng, count, spec, margin=0.01):
    """In-domain positions at least margin*h away from every cell face."""
    h = spec.h
    cells = rng.integers(0, spec.n - 1, size=(count, 3))
    frac = rng.uniform(margin, 1.0 - margin, size=(count, 3))
    return (spec.lo + (cells + frac) * h).astype(np.float64)


class TestStencil:
    def test_particle_on_node(self):
        spec = _spec(4)
        pos = np.array([[spec.lo + spec.h, spec.lo, spec.lo + 3 * spec.h]])
        idx, w = stencil(pos, spec)
        assert np.isclose(w.max(), 1.0)
        assert np.isclose(w.sum(), 1.0)
        assert np.count_nonzero(np.abs(w) > 1e-12) == 1

    def test_cell_center_even_weights(self):
        spec = _spec(4)
        pos = np.array([[spec.lo + 0.5 * spec.h] * 3])
        _, w = stencil(pos, spec)
        assert np.allclose(w, 0.125)

    def test_edge_midpoint(self):
        spec = _spec(4)
        pos = np.array([[spec.lo + 0.5 * spec.h, spec.lo, spec.lo]])
        _, w = stencil(pos, spec)
        w = np.sort(w[0])
        assert np.allclose(w[-2:], 0.5) and np.allclose(w[:-2], 0.0)

    def test_nan_positions_rejected(self):
        with pytest.raises(InputError):
            stencil(np.array([[np.nan, 0.0, 0.0]]), _spec())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4, 8]))
    def test_partition_of_unity(self, seed, n):
        rng = np.random.default_rng(seed)
        spec = _spec(n)
        pos = rng.uniform(-1.0, 1.0, size=(16, 3))
        _, w = stencil(pos, spec)
        assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-6


class TestP2G:
    def test_single_particle_on_node_normalization_cancels(self):
        spec = _spec(4)
        pos = Tensor(np.array([[spec.lo, spec.lo, spec.lo]]))
        feat = Tensor(np.array([[5.0]]))
        mass = Tensor(np.array([1.0]))
        field = p2g(feat, pos, mass, spec)
        assert np.isclose(field.values.data[0, 0, 0, 0], 5.0)
        assert np.isclose(np.abs(field.values.data).sum(), 5.0)

    def test_single_particle_cell_center_fills_corners(self):
        spec = _spec(4)
        pos = Tensor(np.array([[spec.lo + 0.5 * spec.h] * 3]))
        field = p2g(Tensor([[2.5]]), pos, Tensor([1.0]), spec)
        corner = field.values.data[0, :2, :2, :2]
        assert np.allclose(corner, 2.5, atol=1e-6)

    def test_two_particles_one_cell_match_oracle(self):
        spec = _spec(4)
        center = spec.lo + 0.5 * spec.h
        pos = np.array(
            [[center - 0.2 * spec.h, center, center],
             [center + 0.2 * spec.h, center, center]]
        )
        feat = np.array([[2.0], [4.0]])
        mass = np.ones(2)
        field = p2g(Tensor(feat), Tensor(pos), Tensor(mass), spec)
        ref = p2g_normalized_oracle(feat, pos, mass, spec.lo, spec.h, spec.n)
        assert np.abs(field.values.data - ref).max() < 1e-5

    def test_symmetric_pair_averages_at_shared_node(self):
        # equidistant particles straddling a node see equal weights there,
        # so the normalized value is the plain mean of their features
        spec = _spec(4)
        node_x = spec.lo + 2 * spec.h
        pos = np.array(
            [[node_x - 0.2 * spec.h, spec.lo, spec.lo],
             [node_x + 0.2 * spec.h, spec.lo, spec.lo]]
        )
        field = p2g(
            Tensor(np.array([[2.0], [4.0]])), Tensor(pos), Tensor(np.ones(2)),
            spec,
        )
        assert np.isclose(field.values.data[0, 2, 0, 0], 3.0, atol=1e-5)

    def test_matches_oracle_random(self, rng):
        with precision("float64"):
            spec = _spec(5)
            pos = rng.uniform(-1, 1, size=(20, 3))
            feat = rng.standard_normal((20, 3))
            mass = rng.uniform(0.5, 2.0, 20)
            field = p2g(Tensor(feat), Tensor(pos), Tensor(mass), spec)
            ref = p2g_normalized_oracle(feat, pos, mass, spec.lo, spec.h, spec.n)
            assert np.abs(field.values.data - ref).max() < 1e-10

    def test_empty_nodes_are_exact_zero(self):
        spec = _spec(8)
        pos = Tensor(np.array([[0.0, 0.0, 0.0]]))
        field = p2g(Tensor([[3.0]]), pos, Tensor([1.0]), spec)
        vals = field.values.data
        assert np.count_nonzero(vals) <= 8
        assert vals[0, 0, 0, 0] == 0.0

    def test_nonpositive_mass_rejected(self):
        spec = _spec()
        with pytest.raises(InputError):
            p2g(Tensor([[1.0]]), Tensor([[0.0, 0.0, 0.0]]), Tensor([0.0]), spec)


class TestP2GRaw:
    def test_single_on_node(self):
        spec = _spec(4)
        pos = Tensor(np.array([[spec.lo, spec.lo, spec.lo]]))
        field = p2g_raw(Tensor([[1.0]]), pos, spec)
        assert np.isclose(field.values.data.sum(), 1.0)
        assert np.isclose(field.values.data[0, 0, 0, 0], 1.0)

    def test_grid_sum_counts_unit_quantities(self, rng):
        spec = _spec(6)
        P = 100
        pos = Tensor(rng.uniform(-1, 1, size=(P, 3)).astype(np.float32))
        q = Tensor(np.ones((P, 1), dtype=np.float32))
        field = p2g_raw(q, pos, spec)
        assert abs(field.values.data.sum() - P) / P < 1e-4

    def test_matches_oracle_random(self, rng):
        with precision("float64"):
            spec = _spec(4)
            pos = rng.uniform(-1.2, 1.2, size=(15, 3))
            q = rng.standard_normal((15, 4))
            field = p2g_raw(Tensor(q), Tensor(pos), spec)
            ref = scatter_oracle(q, pos, spec.lo, spec.h, spec.n)
            assert np.abs(field.values.data - ref).max() < 1e-10

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            p2g_raw(Tensor(np.ones((3, 2))), Tensor(np.zeros((4, 3))), _spec())


class TestG2P:
    def test_constant_field_reproduced(self, rng):
        spec = _spec(5)
        vals = np.tile(
            np.array([2.0, -1.0])[:, None, None, None], (1, 5, 5, 5)
        )
        field = GridField(spec, Tensor(vals))
        pos = Tensor(rng.uniform(-1, 1, size=(30, 3)))
        out = g2p(field, pos)
        assert np.allclose(out.data, [2.0, -1.0], atol=1e-6)

    def test_midpoint_between_nodes(self):
        spec = _spec(2)  # nodes at -1 and 1
        vals = np.zeros((1, 2, 2, 2))
        vals[0, 1, 0, 0] = 1.0
        field = GridField(spec, Tensor(vals))
        out = g2p(field, Tensor(np.array([[0.0, -1.0, -1.0]])))
        assert np.isclose(out.data[0, 0], 0.5)

    def test_matches_oracle_random(self, rng):
        with precision("float64"):
            spec = _spec(4)
            vals = rng.standard_normal((3, 4, 4, 4))
            pos = rng.uniform(-1.3, 1.3, size=(25, 3))
            out = g2p(GridField(spec, Tensor(vals)), Tensor(pos))
            ref = gather_oracle(vals, pos, spec.lo, spec.h, spec.n)
            assert np.abs(out.data - ref).max() < 1e-10


class TestInvariants:
    def test_mass_conservation(self, rng):
        spec = _spec(6)
        for _ in range(20):
            P = int(rng.integers(1, 80))
            pos = Tensor(rng.uniform(-1, 1, size=(P, 3)))
            m = rng.uniform(0.5, 2.0, size=(P, 1))
            field = p2g_raw(Tensor(m), pos, spec)
            assert abs(field.values.data.sum() - m.sum()) / m.sum() < 1e-4

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([4, 8]),
           st.integers(1, 64))
    def test_adjointness(self, seed, n, P):
        rng = np.random.default_rng(seed)
        with precision("float64"):
            spec = _spec(n)
            pos = Tensor(rng.uniform(-1.1, 1.1, size=(P, 3)))
            q = rng.standard_normal((P, 3))
            g = rng.standard_normal((3, n, n, n))
            lhs = (p2g_raw(Tensor(q), pos, spec).values.data * g).sum()
            rhs = (q * g2p(GridField(spec, Tensor(g)), pos).data).sum()
            scale = max(abs(lhs), abs(rhs), 1e-12)
            assert abs(lhs - rhs) / scale < 1e-5

    def test_position_gradients_match_fd(self, rng):
        with precision("float64"):
            spec = _spec(4)
            P = 12
            posd = _random_positions(rng, P, spec, margin=0.02)
            field_vals = rng.standard_normal((3, 4, 4, 4))
            proj_g = Tensor(rng.standard_normal((P, 3)))
            proj_f = Tensor(rng.standard_normal((3, 4, 4, 4)))
            q = Tensor(rng.standard_normal((P, 3)))
            feat = Tensor(rng.standard_normal((P, 2)))
            proj_n = Tensor(rng.standard_normal((2, 4, 4, 4)))
            mass = Tensor(np.ones(P))

            pos = Tensor(posd, requires_grad=True)
            field = GridField(spec, Tensor(field_vals))

            def gather_loss():
                return reduce_sum(g2p(field, pos) * proj_g)

            def scatter_loss():
                return reduce_sum(p2g_raw(q, pos, spec).values * proj_f)

            def p2g_loss():
                return reduce_sum(p2g(feat, pos, mass, spec).values * proj_n)

            for build in (gather_loss, scatter_loss, p2g_loss):
                pos.zero_grad()
                build().backward()

                def value():
                    with no_grad():
                        return build().item()

                fd = finite_diff_grad(value, pos.data, h=1e-6)
                assert max_rel_err(pos.grad, fd) < 1e-4, build.__name__

    def test_out_of_domain_targets_boundary_and_freezes_gradient(self):
        spec = _spec(4)
        with precision("float64"):
            pos = Tensor(np.array([[1.7, 0.1, 0.1]]), requires_grad=True)
            field = GridField(spec, Tensor(np.ones((1, 4, 4, 4))))
            out = g2p(field, pos)
            reduce_sum(out).backward()
            assert np.isclose(out.data[0, 0], 1.0)
            assert pos.grad[0, 0] == 0.0
