import numpy as np
import pytest

from advectant.errors import InputError
from advectant.model import (
    ModelConfig,
    ModelParams,
    boundary_penalty,
    diffusion_penalty,
    forward_classify,
    forward_segment,
    gather_penalty,
    loss,
)
from advectant.tensor import Tensor, no_grad, precision

from oracles import (
    boundary_penalty_oracle,
    diffusion_penalty_oracle,
    gather_penalty_oracle,
    smoothed_ce_oracle,
)


def _toy_config(task="classification", **kw):
    base = dict(task=task, num_classes=3, grid_n=4, steps=1)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def cls_setup(rng):
    config = _toy_config()
    params = ModelParams.create(config, seed=3)
    cloud = rng.uniform(-0.9, 0.9, size=(20, 3)).astype(np.float32)
    return config, params, cloud


class TestForwardClassify:
    def test_logit_shape_and_finite(self, cls_setup):
        config, params, cloud = cls_setup
        with no_grad():
            logits, pos = forward_classify(cloud, params, config, False)
        assert logits.shape == (3,)
        assert np.all(np.isfinite(logits.data))
        assert pos.shape == cloud.shape

    def test_duplicating_particles_keeps_logits(self, cls_setup):
        config, params, cloud = cls_setup
        with no_grad():
            a, _ = forward_classify(cloud, params, config, False)
            b, _ = forward_classify(np.concatenate([cloud, cloud]), params,
                                    config, False)
        assert np.allclose(a.data, b.data, atol=1e-5)

    def test_permutation_invariance(self, rng, cls_setup):
        config, params, cloud = cls_setup
        perm = rng.permutation(cloud.shape[0])
        with precision("float64"), no_grad():
            a, _ = forward_classify(cloud, params, config, False)
            b, _ = forward_classify(cloud[perm], params, config, False)
        assert np.allclose(a.data, b.data, rtol=1e-10, atol=1e-12)

    def test_empty_cloud_rejected(self, cls_setup):
        config, params, _ = cls_setup
        with pytest.raises(InputError):
            forward_classify(np.zeros((0, 3)), params, config, False)

    def test_training_without_rng_rejected(self, cls_setup):
        config, params, cloud = cls_setup
        with pytest.raises(InputError):
            forward_classify(cloud, params, config, True)


class TestForwardSegment:
    def test_shape(self, rng):
        config = _toy_config("segmentation", num_classes=4)
        params = ModelParams.create(config, seed=1)
        cloud = rng.uniform(-0.9, 0.9, size=(15, 3))
        with no_grad():
            logits, _ = forward_segment(cloud, params, config, False)
        assert logits.shape == (15, 4)

    def test_permutation_equivariance(self, rng):
        config = _toy_config("segmentation")
        params = ModelParams.create(config, seed=1)
        cloud = rng.uniform(-0.9, 0.9, size=(12, 3))
        perm = rng.permutation(12)
        with precision("float64"), no_grad():
            a, _ = forward_segment(cloud, params, config, False)
            b, _ = forward_segment(cloud[perm], params, config, False)
        assert np.allclose(a.data[perm], b.data, rtol=1e-10, atol=1e-12)

    def test_identical_points_identical_logits(self, rng):
        config = _toy_config("segmentation")
        params = ModelParams.create(config, seed=1)
        cloud = rng.uniform(-0.9, 0.9, size=(10, 3))
        cloud[7] = cloud[2]
        with no_grad():
            logits, _ = forward_segment(cloud, params, config, False)
        assert np.allclose(logits.data[7], logits.data[2], atol=1e-6)


class TestBoundaryPenalty:
    def test_inside_unit_ball_zero(self, rng):
        pos = rng.uniform(-0.5, 0.5, size=(30, 3))
        assert boundary_penalty(Tensor(pos)).item() == 0.0

    def test_arithmetic(self):
        pos = Tensor(np.array([[1.5, 0.0, 0.0], [0.5, 0.0, 0.0]]))
        assert np.isclose(boundary_penalty(pos).item(), 0.25)

    def test_gradient_points_inward(self):
        with precision("float64"):
            pos = Tensor(np.array([[0.0, 2.0, 0.0], [0.1, 0.1, 0.1]]),
                         requires_grad=True)
            boundary_penalty(pos).backward()
            assert np.allclose(pos.grad[0], [0.0, 0.5, 0.0], atol=1e-9)
            assert np.allclose(pos.grad[1], 0.0)

    def test_matches_oracle(self, rng):
        with precision("float64"):
            for _ in range(5):
                pos = rng.uniform(-1.6, 1.6, size=(25, 3))
                got = boundary_penalty(Tensor(pos)).item()
                assert abs(got - boundary_penalty_oracle(pos)) < 1e-5


class TestGatherPenalty:
    def test_single_label_zero(self, rng):
        pos = rng.uniform(-1, 1, size=(10, 3))
        assert gather_penalty(Tensor(pos), np.zeros(10, np.int32)).item() == 0.0

    def test_two_centers_arithmetic(self):
        pos = np.zeros((4, 3))
        pos[2:, 0] = 0.4
        labels = np.array([0, 0, 1, 1])
        got = gather_penalty(Tensor(pos), labels).item()
        assert np.isclose(got, 0.6, atol=1e-6)

    def test_distant_centers_no_penalty(self):
        pos = np.zeros((2, 3))
        pos[1, 0] = 1.5
        assert gather_penalty(Tensor(pos), np.array([0, 1])).item() == 0.0

    def test_matches_oracle(self, rng):
        with precision("float64"):
            for _ in range(5):
                pos = rng.uniform(-1, 1, size=(30, 3))
                labels = rng.integers(0, 4, size=30)
                got = gather_penalty(Tensor(pos), labels).item()
                assert abs(got - gather_penalty_oracle(pos, labels)) < 1e-5


class TestDiffusionPenalty:
    def test_coincident_particles_zero(self):
        pos = np.tile([[0.3, -0.2, 0.5]], (6, 1))
        got = diffusion_penalty(Tensor(pos), np.zeros(6, np.int32)).item()
        assert got < 1e-7

    def test_arithmetic(self):
        # one label, two particles symmetric about the center
        pos = np.zeros((2, 3))
        pos[0, 0] = -0.3
        pos[1, 0] = 0.3
        got = diffusion_penalty(Tensor(pos), np.zeros(2, np.int32)).item()
        assert np.isclose(got, 0.3, atol=1e-6)

    def test_translation_invariant(self, rng):
        pos = rng.uniform(-0.5, 0.5, size=(20, 3))
        labels = rng.integers(0, 3, size=20)
        a = diffusion_penalty(Tensor(pos), labels).item()
        b = diffusion_penalty(Tensor(pos + 0.17), labels).item()
        assert np.isclose(a, b, atol=1e-5)

    def test_matches_oracle(self, rng):
        with precision("float64"):
            for _ in range(5):
                pos = rng.uniform(-1, 1, size=(30, 3))
                labels = rng.integers(0, 3, size=30)
                got = diffusion_penalty(Tensor(pos), labels).item()
                assert abs(got - diffusion_penalty_oracle(pos, labels)) < 1e-5


class TestLoss:
    def test_confidence_one_is_plain_ce(self, rng):
        config = _toy_config(num_classes=4, label_confidence=1.0,
                             lambda_boundary=0.0)
        logits = rng.standard_normal(4)
        got = loss(Tensor(logits), 2, Tensor(np.zeros((1, 3))), config, False)
        z = logits - logits.max()
        expected = -(z[2] - np.log(np.exp(z).sum()))
        assert np.isclose(got.item(), expected, atol=1e-6)

    def test_uniform_logits_give_log_c(self):
        config = _toy_config(num_classes=3, lambda_boundary=0.0)
        logits = Tensor(np.zeros(3))
        got = loss(logits, 1, Tensor(np.zeros((1, 3))), config, False)
        assert np.isclose(got.item(), np.log(3.0), atol=1e-6)

    def test_zero_lambdas_decompose(self, rng):
        config = _toy_config(num_classes=3, lambda_boundary=0.0)
        logits = rng.standard_normal(3)
        pos = rng.uniform(1.2, 1.5, size=(5, 3))  # outside: penalty nonzero
        pure = loss(Tensor(logits), 0, Tensor(pos), config, False).item()
        expected = smoothed_ce_oracle(logits, 0, 3, 0.8)
        assert np.isclose(pure, expected, atol=1e-6)

    def test_matches_smoothed_oracle(self, rng):
        config = _toy_config(num_classes=5, lambda_boundary=0.0)
        for target in range(5):
            logits = rng.standard_normal(5)
            got = loss(Tensor(logits), target, Tensor(np.zeros((1, 3))),
                       config, False).item()
            assert np.isclose(got, smoothed_ce_oracle(logits, target, 5, 0.8),
                              atol=1e-6)

    def test_non_negative(self, rng):
        config = _toy_config(num_classes=3)
        for _ in range(10):
            logits = Tensor(rng.standard_normal(3) * 3)
            pos = Tensor(rng.uniform(-1.5, 1.5, size=(8, 3)))
            assert loss(logits, 1, pos, config, False).item() >= 0.0

    def test_target_out_of_range_rejected(self, rng):
        config = _toy_config(num_classes=3)
        with pytest.raises(InputError):
            loss(Tensor(np.zeros(3)), 3, Tensor(np.zeros((1, 3))), config,
                 False)

    def test_segmentation_penalties_training_only(self, rng):
        config = _toy_config("segmentation", num_classes=3,
                             lambda_boundary=0.0, lambda_gather=1.0,
                             lambda_diffusion=1.0)
        logits = Tensor(rng.standard_normal((12, 3)))
        pos = Tensor(rng.uniform(-0.9, 0.9, size=(12, 3)))
        labels = rng.integers(0, 3, size=12)
        train_loss = loss(logits, labels, pos, config, True).item()
        eval_loss = loss(logits, labels, pos, config, False).item()
        penalties = (gather_penalty(pos, labels).item()
                     + diffusion_penalty(pos, labels).item())
        assert np.isclose(train_loss - eval_loss, penalties, atol=1e-5)


def test_default_classification_parameter_budget():
    config = ModelConfig()  # N=16, S=2, 40 classes
    params = ModelParams.create(config, seed=0)
    count = params.parameter_count()
    assert 0.8e6 <= count <= 1.3e6, count


def test_named_parameters_stable_and_complete():
    config = _toy_config()
    params = ModelParams.create(config, seed=0)
    names = list(params.named_parameters())
    assert names == list(ModelParams.create(config, seed=1).named_parameters())
    assert "steps.0.conv1.k" in names and "head.lift.w" in names
