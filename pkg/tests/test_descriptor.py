import numpy as np
import pytest

from advectant.descriptor import (
    RAW_DESCRIPTOR_DIM,
    SCALES,
    cell_index,
    multiscale_descriptor,
)


def test_descriptor_length():
    out = multiscale_descriptor(np.zeros((3, 3)))
    assert out.shape == (3, RAW_DESCRIPTOR_DIM) == (3, 36)


def test_singleton_center_is_self_direction_zero():
    pos = np.array([[0.31, -0.44, 0.05]])
    out = multiscale_descriptor(pos)
    for s in range(len(SCALES)):
        block = out[0, 6 * s : 6 * s + 6]
        assert np.allclose(block[:3], pos[0])
        assert np.allclose(block[3:], 0.0)


def test_two_particles_separate_cells_coarsest_scale():
    pos = np.array([[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]])
    out = multiscale_descriptor(pos)
    # scale 2 block: each particle is alone in its cell
    assert np.allclose(out[0, :3], pos[0])
    assert np.allclose(out[1, :3], pos[1])
    assert np.allclose(out[:, 3:6], 0.0)


def test_two_particles_shared_cell_hand_computed():
    pos = np.array([[0.1, 0.0, 0.0], [0.3, 0.0, 0.0]])
    out = multiscale_descriptor(pos)
    assert np.allclose(out[0, :3], [0.2, 0.0, 0.0], atol=1e-7)
    assert np.allclose(out[1, :3], [0.2, 0.0, 0.0], atol=1e-7)
    assert np.allclose(out[0, 3:6], [1.0, 0.0, 0.0], atol=1e-6)
    assert np.allclose(out[1, 3:6], [-1.0, 0.0, 0.0], atol=1e-6)


def test_boundary_point_belongs_to_last_cell():
    idx = cell_index(np.array([[1.0, 1.0, 1.0]]), 4)
    assert idx[0] == 4 * 4 * 4 - 1


def test_permutation_equivariance(rng):
    pos = rng.uniform(-1, 1, size=(40, 3))
    perm = rng.permutation(40)
    a = multiscale_descriptor(pos)[perm]
    b = multiscale_descriptor(pos[perm])
    assert np.allclose(a, b, atol=1e-12)


def test_translation_shifts_centers_only(rng):
    # jitter within cell interiors so the shift preserves cell assignments
    base = (np.array([-0.8, -0.3, 0.2]) +
            rng.uniform(0.01, 0.02, size=(20, 3)))
    delta = np.array([0.004, -0.003, 0.002])
    a = multiscale_descriptor(base)
    b = multiscale_descriptor(base + delta)
    for s in range(len(SCALES)):
        assert np.allclose(
            b[:, 6 * s : 6 * s + 3] - a[:, 6 * s : 6 * s + 3], delta, atol=1e-6
        )
        assert np.allclose(
            b[:, 6 * s + 3 : 6 * s + 6], a[:, 6 * s + 3 : 6 * s + 6], atol=1e-5
        )


def test_direction_norms_zero_or_one(rng):
    pos = rng.uniform(-1, 1, size=(100, 3))
    out = multiscale_descriptor(pos)
    for s in range(len(SCALES)):
        norms = np.linalg.norm(out[:, 6 * s + 3 : 6 * s + 6], axis=1)
        close_to_unit = np.abs(norms - 1.0) < 1e-5
        close_to_zero = norms < 1e-5
        assert np.all(close_to_unit | close_to_zero)
