"""Full model assembly: init embedding, advection steps, task heads, losses.

The classification head lifts per-particle features to 1024 channels before
the global max-pool (the pooled vector feeds an MLP (512, 256) with dropout);
the segmentation head concatenates per-particle features with the pooled
global vector and applies a per-point MLP (256, 128).  With the default
classification configuration the learnable parameter count lands just under
one million.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .advect import AdvectionParams, ParticleSystem, StepParams, advect_step
from .descriptor import RAW_DESCRIPTOR_DIM, multiscale_descriptor
from .errors import DimensionError, InputError
from .grid import GridSpec
from .nn import Dense, dropout
from .tensor import (
    Tensor,
    concat,
    log_softmax,
    norm_rows,
    reduce_mean,
    reduce_max,
    reduce_sum,
    relu,
    reshape,
    scale,
    take_rows,
    tile_rows,
)

INIT_EMBED_WIDTH = 64
FEATURE_GROWTH = 64  # appended per advection step (32 reduced + 32 from grid)
LIFT_WIDTH = 1024
CLS_HIDDEN = (512, 256)
SEG_HIDDEN = (256, 128)


@dataclass(frozen=True)
class ModelConfig:
    task: str = "classification"
    num_classes: int = 40
    grid_n: int = 16
    steps: int = 2
    alpha: float = 0.5
    total_time: float = 1.0
    half_extent: float = 1.0
    lambda_boundary: float = 1.0
    lambda_gather: float = 0.01
    lambda_diffusion: float = 0.01
    label_confidence: float = 0.8
    dropout: float = 0.3
    category: int = -1  # >= 0 selects one category for per-category training

    def __post_init__(self):
        if self.task not in ("classification", "segmentation"):
            raise InputError(f"unknown task {self.task!r}")
        if self.num_classes < 2:
            raise InputError("need at least two classes")
        if min(self.lambda_boundary, self.lambda_gather, self.lambda_diffusion) < 0:
            raise InputError("penalty weights must be nonnegative")
        if not 0.0 < self.label_confidence <= 1.0:
            raise InputError("label confidence must lie in (0, 1]")

    def grid_spec(self) -> GridSpec:
        return GridSpec(self.grid_n, self.half_extent)

    def advection_params(self) -> AdvectionParams:
        return AdvectionParams(
            alpha=self.alpha, total_time=self.total_time, steps=self.steps
        )

    def feature_width(self) -> int:
        return INIT_EMBED_WIDTH + FEATURE_GROWTH * self.steps


@dataclass
class ClassifyHead:
    lift: Dense
    fc1: Dense
    fc2: Dense
    out: Dense

    @classmethod
    def create(cls, feature_width, num_classes, rng):
        return cls(
            lift=Dense.create(feature_width, LIFT_WIDTH, rng),
            fc1=Dense.create(LIFT_WIDTH, CLS_HIDDEN[0], rng),
            fc2=Dense.create(CLS_HIDDEN[0], CLS_HIDDEN[1], rng),
            out=Dense.create(CLS_HIDDEN[1], num_classes, rng, gain=1.0),
        )

    def children(self):
        return {"lift": self.lift, "fc1": self.fc1, "fc2": self.fc2, "out": self.out}


@dataclass
class SegmentHead:
    fc1: Dense
    fc2: Dense
    out: Dense

    @classmethod
    def create(cls, feature_width, num_parts, rng):
        return cls(
            fc1=Dense.create(2 * feature_width, SEG_HIDDEN[0], rng),
            fc2=Dense.create(SEG_HIDDEN[0], SEG_HIDDEN[1], rng),
            out=Dense.create(SEG_HIDDEN[1], num_parts, rng, gain=1.0),
        )

    def children(self):
        return {"fc1": self.fc1, "fc2": self.fc2, "out": self.out}


@dataclass
class ModelParams:
    init1: Dense
    init2: Dense
    steps: list
    head: object
    config: ModelConfig = field(repr=False, default=None)

    @classmethod
    def create(cls, config, seed=0):
        rng = np.random.default_rng(seed)
        ap = config.advection_params()
        steps = []
        width = INIT_EMBED_WIDTH
        for _ in range(config.steps):
            steps.append(StepParams.create(width, ap, rng))
            width += FEATURE_GROWTH
        head_cls = ClassifyHead if config.task == "classification" else SegmentHead
        return cls(
            init1=Dense.create(RAW_DESCRIPTOR_DIM, INIT_EMBED_WIDTH, rng),
            init2=Dense.create(INIT_EMBED_WIDTH, INIT_EMBED_WIDTH, rng),
            steps=steps,
            head=head_cls.create(width, config.num_classes, rng),
            config=config,
        )

    def named_parameters(self):
        out = {}
        for name in ("init1", "init2"):
            for k, p in getattr(self, name).params().items():
                out[f"{name}.{k}"] = p
        for j, sp in enumerate(self.steps):
            for k, p in sp.params().items():
                out[f"steps.{j}.{k}"] = p
        for cname, layer in self.head.children().items():
            for k, p in layer.params().items():
                out[f"head.{cname}.{k}"] = p
        return out

    def named_buffers(self):
        out = {}
        for j, sp in enumerate(self.steps):
            for bi, bn in enumerate(sp.batchnorms(), start=1):
                for k, buf in bn.buffers().items():
                    out[f"steps.{j}.bn{bi}.{k}"] = buf
        return out

    def batchnorms(self):
        return [bn for sp in self.steps for bn in sp.batchnorms()]

    def parameter_count(self) -> int:
        return sum(int(p.size) for p in self.named_parameters().values())

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()


def embed_features(cloud, params, half_extent=1.0):
    """Raw multiscale descriptor -> two-layer MLP -> initial 64-wide features."""
    desc = multiscale_descriptor(np.asarray(cloud, dtype=np.float64), half_extent)
    d = Tensor(desc)
    return relu(params.init2(relu(params.init1(d))))


def run_advection(cloud, params, config, training, on_step=None):
    """Embed the cloud and run all advection steps.

    ``on_step(j, system)`` fires with the fresh system (j=0) and after every
    step; used for trajectory export.
    """
    points = np.asarray(cloud if not isinstance(cloud, Tensor) else cloud.data)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
        raise InputError(f"cloud must be a nonempty [P,3] array, got {points.shape}")
    f0 = embed_features(points, params, config.half_extent)
    sys = ParticleSystem.from_cloud(
        cloud if isinstance(cloud, Tensor) else Tensor(points), f0
    )
    spec = config.grid_spec()
    ap = config.advection_params()
    if on_step is not None:
        on_step(0, sys)
    for j in range(config.steps):
        sys = advect_step(sys, params.steps[j], spec, ap, training)
        if on_step is not None:
            on_step(j + 1, sys)
    return sys


def forward_classify(cloud, params, config, training, rng=None, on_step=None):
    """Class logits for one cloud; also returns the advected positions."""
    if training and config.dropout > 0 and rng is None:
        raise InputError("training forward with dropout needs an rng")
    sys = run_advection(cloud, params, config, training, on_step)
    head = params.head
    lifted = relu(head.lift(sys.f))
    pooled = reduce_max(lifted, axis=0)
    h = reshape(pooled, (1, LIFT_WIDTH))
    h = relu(head.fc1(h))
    h = relu(head.fc2(h))
    h = dropout(h, config.dropout, rng, training)
    logits = reshape(head.out(h), (config.num_classes,))
    return logits, sys.x


def forward_segment(cloud, params, config, training, rng=None, on_step=None):
    """Per-point part logits; also returns the advected positions."""
    if training and config.dropout > 0 and rng is None:
        raise InputError("training forward with dropout needs an rng")
    sys = run_advection(cloud, params, config, training, on_step)
    head = params.head
    pooled = reduce_max(sys.f, axis=0)
    z = concat([sys.f, tile_rows(pooled, sys.count)], axis=1)
    h = relu(head.fc1(z))
    h = relu(head.fc2(h))
    h = dropout(h, config.dropout, rng, training)
    logits = head.out(h)
    return logits, sys.x


def boundary_penalty(positions):
    """Mean hinge on the distance outside the unit ball."""
    overflow = relu(norm_rows(positions) - 1.0)
    return reduce_mean(overflow)


def _label_groups(labels):
    labels = np.asarray(labels)
    return [(int(l), np.nonzero(labels == l)[0]) for l in np.unique(labels)]


def gather_penalty(positions, labels):
    """Hinge pulling distinct label centers at least unit distance apart.

    Ordered pairs l != m, halved: 0.5 * sum max(0, 1 - |c_l - c_m|).
    """
    groups = _label_groups(labels)
    if len(groups) < 2:
        return Tensor(np.zeros(()))
    centers = [
        reshape(reduce_mean(take_rows(positions, idx), axis=0), (1, 3))
        for _, idx in groups
    ]
    diffs = []
    for i in range(len(centers)):
        for j in range(len(centers)):
            if i != j:
                diffs.append(centers[i] - centers[j])
    dists = norm_rows(concat(diffs, axis=0))
    hinge = relu(scale(dists, -1.0) + 1.0)
    return scale(reduce_sum(hinge), 0.5)


def diffusion_penalty(positions, labels):
    """Mean distance of each particle to its own label's center."""
    groups = _label_groups(labels)
    total = None
    for _, idx in groups:
        rows = take_rows(positions, idx)
        center = reduce_mean(rows, axis=0)
        d = norm_rows(rows - tile_rows(center, len(idx)))
        part = reduce_sum(d)
        total = part if total is None else total + part
    return scale(total, 1.0 / positions.shape[0])


def smoothed_targets(labels, num_classes, confidence, dtype):
    """Rows of smoothed class probabilities: confidence on the true class."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InputError(
            f"label outside [0, {num_classes}): {labels.min()}..{labels.max()}"
        )
    off = (1.0 - confidence) / (num_classes - 1)
    q = np.full((labels.shape[0], num_classes), off, dtype=dtype)
    q[np.arange(labels.shape[0]), labels] = confidence
    return q


def loss(logits, targets, positions, config, training, labels=None):
    """Smoothed cross-entropy plus the configured position penalties.

    Classification: CE + lambda_b * boundary.  Segmentation adds the gather
    and diffusion penalties while training (centers from ground-truth labels).
    """
    if config.task == "classification":
        logits2 = reshape(logits, (1, config.num_classes))
    else:
        logits2 = logits
        if labels is None:
            labels = targets
    q = smoothed_targets(
        targets, config.num_classes, config.label_confidence, logits2.dtype
    )
    if q.shape != logits2.shape:
        raise DimensionError(f"targets {q.shape} vs logits {logits2.shape}")
    ce = scale(
        reduce_mean(reduce_sum(log_softmax(logits2) * Tensor(q), axis=1)), -1.0
    )
    total = ce
    if config.lambda_boundary > 0:
        total = total + scale(boundary_penalty(positions), config.lambda_boundary)
    if config.task == "segmentation" and training:
        if config.lambda_gather > 0:
            total = total + scale(gather_penalty(positions, labels),
                                  config.lambda_gather)
        if config.lambda_diffusion > 0:
            total = total + scale(diffusion_penalty(positions, labels),
                                  config.lambda_diffusion)
    return total


def config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**d)
