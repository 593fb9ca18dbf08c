"""Optimization loop: AdamW with decoupled decay, step-decay learning rate,
annealed batch-norm momentum, augmentation, and metric evaluation.

All randomness inside an epoch derives from ``(seed, epoch)``, so a resumed
run replays the exact same batches and augmentations.
"""

from dataclasses import dataclass

import numpy as np

from .data import normalize
from .errors import TrainingAbort
from .model import forward_classify, forward_segment, loss
from .tensor import no_grad, scale

ADAM_EPS = 1e-8
_NO_DECAY_LEAVES = ("b", "gamma", "beta")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.001
    weight_decay: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 200
    lr_decay: float = 0.8
    lr_decay_every: int = 20
    bn_momentum_start: float = 0.5
    bn_momentum_end: float = 0.01
    clip_norm: float = 10.0  # 0 disables clipping
    augment: bool = True
    eval_train: bool = True

    def __post_init__(self):
        if min(self.lr, self.beta1, self.beta2, self.batch_size, self.epochs) <= 0:
            raise ValueError("optimizer settings must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")


def lr_at(epoch, cfg):
    """Step decay: lr * decay^(epoch // every)."""
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


def bn_momentum_at(epoch, total_epochs, cfg):
    """Linear anneal from the start momentum to the end momentum."""
    if total_epochs <= 1:
        return cfg.bn_momentum_end
    frac = min(epoch / (total_epochs - 1), 1.0)
    return cfg.bn_momentum_start + frac * (
        cfg.bn_momentum_end - cfg.bn_momentum_start
    )


def init_adamw_state(named_params):
    return {
        name: {
            "m": np.zeros_like(p.data, dtype=np.float64),
            "v": np.zeros_like(p.data, dtype=np.float64),
        }
        for name, p in named_params.items()
    }


def _decays(name):
    return name.rsplit(".", 1)[-1] not in _NO_DECAY_LEAVES


def adamw_step(named_params, state, cfg, t, lr=None):
    """One AdamW update (bias-corrected moments, decoupled weight decay).

    Decay is skipped for biases and batch-norm affine parameters.  Raises
    TrainingAbort on non-finite gradients.
    """
    if t < 1:
        raise ValueError("step index starts at 1")
    lr = cfg.lr if lr is None else lr
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in named_params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingAbort(f"non-finite gradient in {name}")
        st = state[name]
        if cfg.weight_decay > 0 and _decays(name):
            p.data -= p.data.dtype.type(lr * cfg.weight_decay) * p.data
        st["m"] += (1.0 - cfg.beta1) * (g - st["m"])
        st["v"] += (1.0 - cfg.beta2) * (g * g - st["v"])
        mhat = st["m"] / bc1
        vhat = st["v"] / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + ADAM_EPS)).astype(p.data.dtype)


def clip_gradients(named_params, max_norm):
    """Scale all gradients so their global norm is at most ``max_norm``."""
    total = 0.0
    grads = [p.grad for p in named_params.values() if p.grad is not None]
    for g in grads:
        total += float((g.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for g in grads:
            g *= g.dtype.type(factor)
    return norm


def augment(points, rng, rotate=True, scale_range=(0.8, 1.2), sigma=0.01,
            clip=0.05):
    """Rotation about the vertical (z) axis, anisotropic scale, clipped
    Gaussian jitter, then renormalization to [-1,1]^3."""
    pts = np.asarray(points, dtype=np.float64)
    if rotate:
        theta = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts = pts @ R.T
    factors = rng.uniform(scale_range[0], scale_range[1], size=3)
    pts = pts * factors
    if sigma > 0:
        jitter = np.clip(rng.normal(0.0, sigma, size=pts.shape), -clip, clip)
        pts = pts + jitter
    return normalize(pts)


def _forward(sample_points, params, config, training, rng):
    if config.task == "classification":
        return forward_classify(sample_points, params, config, training, rng)
    return forward_segment(sample_points, params, config, training, rng)


def shape_iou(pred, gt, num_parts):
    """Mean IoU over a shape's part classes; parts absent from both the
    prediction and the ground truth count as IoU 1."""
    ious = []
    for part in range(num_parts):
        p = pred == part
        g = gt == part
        union = np.logical_or(p, g).sum()
        if union == 0:
            ious.append(1.0)
        else:
            ious.append(np.logical_and(p, g).sum() / union)
    return float(np.mean(ious))


def evaluate(params, config, dataset):
    """Eval-mode metrics: mean loss plus accuracy (classification) or
    per-shape mIoU and pointwise accuracy (segmentation)."""
    losses = []
    hits = 0.0
    total = 0
    ious = []
    with no_grad():
        for sample in dataset:
            logits, pos = _forward(sample.points, params, config, False, None)
            if config.task == "classification":
                target = sample.label
                losses.append(
                    loss(logits, target, pos, config, training=False).item()
                )
                hits += float(np.argmax(logits.data) == target)
                total += 1
            else:
                losses.append(
                    loss(logits, sample.labels, pos, config, training=False).item()
                )
                pred = np.argmax(logits.data, axis=1)
                hits += float((pred == sample.labels).mean())
                total += 1
                ious.append(shape_iou(pred, sample.labels, config.num_classes))
    out = {"loss": float(np.mean(losses)), "accuracy": hits / total}
    if config.task == "segmentation":
        out["miou"] = float(np.mean(ious))
    return out


def fit(params, config, ocfg, train_set, test_set=None, seed=0, on_epoch=None,
        stop_when=None, start_epoch=0, state=None, step_count=0):
    """Train in place; returns (history, optimizer state, step count).

    ``on_epoch(epoch, rows, step_count)`` receives the metric rows appended
    that epoch; ``stop_when(metrics)`` may end training early (metrics holds
    the epoch's train/test summaries).
    """
    named = params.named_parameters()
    if state is None:
        state = init_adamw_state(named)
    history = []
    t = step_count
    for epoch in range(start_epoch, ocfg.epochs):
        lr = lr_at(epoch, ocfg)
        momentum = bn_momentum_at(epoch, ocfg.epochs, ocfg)
        for bn in params.batchnorms():
            bn.momentum = momentum
        rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
        order = rng.permutation(len(train_set))
        running_loss = 0.0
        for start in range(0, len(order), ocfg.batch_size):
            batch = order[start : start + ocfg.batch_size]
            params.zero_grad()
            total = None
            for i in batch:
                sample = train_set[int(i)]
                pts = sample.points
                if ocfg.augment:
                    pts = augment(pts, rng)
                logits, pos = _forward(pts, params, config, True, rng)
                targets = (
                    sample.label
                    if config.task == "classification"
                    else sample.labels
                )
                l = loss(logits, targets, pos, config, training=True)
                total = l if total is None else total + l
            batch_loss = scale(total, 1.0 / len(batch))
            value = batch_loss.item()
            if not np.isfinite(value):
                raise TrainingAbort(f"non-finite loss at epoch {epoch}")
            batch_loss.backward()
            if ocfg.clip_norm > 0:
                clip_gradients(named, ocfg.clip_norm)
            t += 1
            adamw_step(named, state, ocfg, t, lr)
            running_loss += value * len(batch)
        rows = [
            {
                "epoch": epoch,
                "split": "train",
                "loss": running_loss / len(order),
                "metric": float("nan"),
                "lr": lr,
            }
        ]
        metrics = {"train_loss": running_loss / len(order)}
        if ocfg.eval_train:
            m = evaluate(params, config, train_set)
            key = "miou" if config.task == "segmentation" else "accuracy"
            rows[0]["loss"] = m["loss"]
            rows[0]["metric"] = m[key]
            metrics["train_metric"] = m[key]
        if test_set is not None:
            m = evaluate(params, config, test_set)
            key = "miou" if config.task == "segmentation" else "accuracy"
            rows.append(
                {
                    "epoch": epoch,
                    "split": "test",
                    "loss": m["loss"],
                    "metric": m[key],
                    "lr": lr,
                }
            )
            metrics["test_metric"] = m[key]
            metrics["test_loss"] = m["loss"]
        history.extend(rows)
        if on_epoch is not None:
            on_epoch(epoch, rows, t)
        if stop_when is not None and stop_when(metrics):
            break
    return history, state, t
