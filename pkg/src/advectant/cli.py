"""Command-line front end.

Subcommands: ``train``, ``eval``, ``export``, ``synth``, ``inspect``.  A run
is driven by a TOML or JSON config file; flags override single fields.  The
resolved config is persisted into the output directory together with the
metrics CSV and checkpoints, which is enough to reproduce the run bit for bit
(with ``--f64``) given the same seed.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import backend
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    CloudSample,
    load_dataset,
    make_toy_classification,
    make_toy_segmentation,
    read_ply,
    save_advp,
    synth,
    write_ply,
    Dataset,
)
from .errors import AdvectantError, FormatError, InputError, TrainingAbort
from .model import (
    ModelConfig,
    ModelParams,
    forward_classify,
    forward_segment,
)
from .tensor import no_grad, set_default_dtype
from .train import OptimConfig, evaluate, fit, init_adamw_state

DEFAULT_CONFIG = {
    "seed": 0,
    "f64": False,
    "model": {},
    "optim": {},
    "data": {},
    "stop": {},
}


def _load_config_file(path):
    path = Path(path)
    if path.suffix == ".json":
        with open(path) as fh:
            return json.load(fh)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    raise InputError(f"config must be .toml or .json, got {path.suffix!r}")


def _merge(base, override):
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args):
    cfg = dict(DEFAULT_CONFIG)
    if args.config:
        cfg = _merge(cfg, _load_config_file(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.f64:
        cfg["f64"] = True
    for flag, section, key in (
        ("steps", "model", "steps"),
        ("grid", "model", "grid_n"),
        ("alpha", "model", "alpha"),
        ("epochs", "optim", "epochs"),
    ):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[section] = dict(cfg.get(section, {}))
            cfg[section][key] = val
    return cfg


def _build_datasets(data_cfg, seed):
    synthetic = data_cfg.get("synthetic")
    if synthetic == "toy-classification":
        return make_toy_classification(
            n_train=data_cfg.get("train_count", 200),
            n_test=data_cfg.get("test_count", 60),
            points=data_cfg.get("points", 64),
            seed=data_cfg.get("seed", seed),
        )
    if synthetic == "toy-segmentation":
        return make_toy_segmentation(
            n_train=data_cfg.get("train_count", 100),
            n_test=data_cfg.get("test_count", 30),
            points=data_cfg.get("points", 256),
            seed=data_cfg.get("seed", seed),
        )
    if synthetic:
        raise InputError(f"unknown synthetic dataset {synthetic!r}")
    train = load_dataset(data_cfg["train"]) if "train" in data_cfg else None
    test = load_dataset(data_cfg["test"]) if "test" in data_cfg else None
    if train is None:
        raise InputError("config needs data.train or data.synthetic")
    return train, test


def _model_config(cfg, train_set):
    model_cfg = dict(cfg.get("model", {}))
    model_cfg.setdefault("task", train_set.task)
    model_cfg.setdefault("num_classes", train_set.num_classes)
    if model_cfg["task"] == "segmentation":
        model_cfg.setdefault("grid_n", 32)
    category = model_cfg.get("category", -1)
    return ModelConfig(**model_cfg), category


def _filter_category(dataset, category):
    if category < 0 or dataset is None:
        return dataset
    picked = [s for s in dataset.samples if s.category == category]
    return Dataset(picked, dataset.task, dataset.num_classes,
                   dataset.points_per_sample, dataset.meta)


def _write_metrics_header(path):
    if not path.exists():
        path.write_text("epoch,split,loss,metric,lr\n")


def _append_metrics(path, rows):
    with open(path, "a") as fh:
        for r in rows:
            fh.write(
                f"{r['epoch']},{r['split']},{r['loss']!r},{r['metric']!r},"
                f"{r['lr']!r}\n"
            )


def cmd_train(args):
    cfg = resolve_config(args)
    if cfg["f64"]:
        set_default_dtype("float64")
    out = Path(args.out)
    resuming = args.resume is not None
    if out.exists() and any(out.iterdir()) and not (args.force or resuming):
        print(f"error: {out} exists; pass --force to reuse it", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)

    seed = int(cfg["seed"])
    train_set, test_set = _build_datasets(cfg.get("data", {}), seed)
    config, category = _model_config(cfg, train_set)
    train_set = _filter_category(train_set, category)
    test_set = _filter_category(test_set, category)
    ocfg = OptimConfig(**cfg.get("optim", {}))

    start_epoch, step_count, optim_state = 0, 0, None
    if resuming:
        params, meta, optim_state = load_checkpoint(Path(args.resume))
        config = params.config
        if meta:
            start_epoch = int(meta.get("epoch", -1)) + 1
            step_count = int(meta.get("step_count", 0))
    else:
        params = ModelParams.create(config, seed=seed)
    state = optim_state or init_adamw_state(params.named_parameters())

    with open(out / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)
    metrics_path = out / "metrics.csv"
    _write_metrics_header(metrics_path)

    best = {"metric": -np.inf}
    stop_cfg = cfg.get("stop", {})

    def stop_when(metrics):
        want_train = stop_cfg.get("train_metric")
        want_test = stop_cfg.get("test_metric")
        if want_train is None and want_test is None:
            return False
        ok = True
        if want_train is not None:
            ok = ok and metrics.get("train_metric", -np.inf) >= want_train
        if want_test is not None:
            ok = ok and metrics.get("test_metric", -np.inf) >= want_test
        return ok

    def on_epoch(epoch, rows, t):
        _append_metrics(metrics_path, rows)
        meta = {"epoch": epoch, "step_count": t}
        save_checkpoint(out / "ckpt_last", params, state, meta)
        test_rows = [r for r in rows if r["split"] == "test"]
        if test_rows and test_rows[0]["metric"] > best["metric"]:
            best["metric"] = test_rows[0]["metric"]
            save_checkpoint(out / "ckpt_best", params, None,
                            {**meta, "metric": best["metric"]})

    try:
        history, _, _ = fit(
            params,
            config,
            ocfg,
            train_set,
            test_set,
            seed=seed,
            on_epoch=on_epoch,
            stop_when=stop_when,
            start_epoch=start_epoch,
            state=state,
            step_count=step_count,
        )
    except TrainingAbort as exc:
        print(f"training aborted: {exc}; last checkpoint kept", file=sys.stderr)
        return 3
    print(f"trained {len(history)} metric rows -> {out} "
          f"(backend={backend.backend_name()})")
    return 0


def _load_eval_dataset(args, config):
    data = args.data
    if data in ("toy-classification", "toy-segmentation"):
        maker = (
            make_toy_classification
            if data == "toy-classification"
            else make_toy_segmentation
        )
        _, test = maker(seed=args.seed if args.seed is not None else 0)
        return test
    return load_dataset(data)


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        print(f"error: checkpoint {ckpt} not found", file=sys.stderr)
        return 2
    params, _, _ = load_checkpoint(ckpt)
    dataset = _load_eval_dataset(args, params.config)
    metrics = evaluate(params, params.config, dataset)
    if args.format == "csv":
        keys = sorted(metrics)
        print(",".join(keys))
        print(",".join(repr(metrics[k]) for k in keys))
    else:
        for k in sorted(metrics):
            print(f"{k}: {metrics[k]:.6f}")
    if args.out:
        with open(args.out, "w") as fh:
            keys = sorted(metrics)
            fh.write(",".join(keys) + "\n")
            fh.write(",".join(repr(metrics[k]) for k in keys) + "\n")
    return 0


def _load_sample(spec_str, seed):
    if ":" in spec_str and not Path(spec_str).exists():
        path, idx = spec_str.rsplit(":", 1)
        ds = load_dataset(path)
        return ds[int(idx)]
    p = Path(spec_str)
    if p.exists():
        if p.suffix == ".ply":
            pts, labels = read_ply(p)
            return CloudSample(points=pts, labels=labels)
        return load_dataset(p)[0]
    try:
        return synth(spec_str, 256, seed)
    except InputError:
        raise InputError(
            f"sample {spec_str!r} is neither a file, file:index, nor a kind"
        )


def cmd_export(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        print(f"error: checkpoint {ckpt} not found", file=sys.stderr)
        return 2
    params, _, _ = load_checkpoint(ckpt)
    config = params.config
    sample = _load_sample(args.sample, args.seed if args.seed is not None else 0)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} exists; pass --force to reuse it", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)

    trajectory = []

    def on_step(j, system):
        trajectory.append((j, system.x.data.copy(), system.v.data.copy()))

    with no_grad():
        if config.task == "classification":
            logits, _ = forward_classify(
                sample.points, params, config, False, on_step=on_step
            )
            labels = None
            pred = int(np.argmax(logits.data))
        else:
            logits, _ = forward_segment(
                sample.points, params, config, False, on_step=on_step
            )
            labels = np.argmax(logits.data, axis=1).astype(np.int32)
            pred = None
    for j, pos, vel in trajectory:
        write_ply(out / f"step_{j:03d}.ply", pos, velocities=vel, labels=labels)
    manifest = {
        "steps": config.steps,
        "files": [f"step_{j:03d}.ply" for j, _, _ in trajectory],
    }
    if pred is not None:
        manifest["predicted_class"] = pred
    with open(out / "trajectory.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    print(f"wrote {len(trajectory)} PLY files -> {out}")
    return 0


def cmd_synth(args):
    out = Path(args.out)
    seed = args.seed if args.seed is not None else 0
    if args.kind in ("toy-classification", "toy-segmentation"):
        maker = (
            make_toy_classification
            if args.kind == "toy-classification"
            else make_toy_segmentation
        )
        kwargs = {"seed": seed}
        if args.points:
            kwargs["points"] = args.points
        train, test = maker(**kwargs)
        out.mkdir(parents=True, exist_ok=True)
        mode = 0 if train.task == "classification" else 1
        save_advp(out / "train.advp", train.samples, mode)
        save_advp(out / "test.advp", test.samples, mode)
        print(f"wrote {len(train)}+{len(test)} samples -> {out}")
        return 0
    samples = [
        synth(args.kind, args.points or 256, np.random.SeedSequence([seed, i]))
        for i in range(args.count)
    ]
    mode = 1 if args.kind == "striped-cylinder" else 0
    out.parent.mkdir(parents=True, exist_ok=True)
    save_advp(out, samples, mode)
    print(f"wrote {len(samples)} samples -> {out}")
    return 0


def cmd_inspect(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        print(f"error: checkpoint {ckpt} not found", file=sys.stderr)
        return 2
    params, meta, _ = load_checkpoint(ckpt)
    print(json.dumps(
        {"config": json.loads(json.dumps(params.config.__dict__)), "meta": meta},
        indent=1, sort_keys=True,
    ))
    total = 0
    for name, p in params.named_parameters().items():
        print(f"{name:40s} {str(tuple(p.shape)):20s} {p.size}")
        total += p.size
    print(f"total learnable parameters: {total}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="advectant",
        description="Train and run advective point-cloud models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="TOML or JSON config file")
    t.add_argument("--out", required=True, help="run output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="advection step count override")
    t.add_argument("--grid", type=int, help="grid resolution override")
    t.add_argument("--alpha", type=float, help="PIC/FLIP blend override")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", help="checkpoint directory to resume from")
    t.add_argument("--f64", action="store_true", help="64-bit mode")
    t.add_argument("--force", action="store_true", help="reuse output dir")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True,
                   help=".advp / manifest.json / toy-classification / toy-segmentation")
    e.add_argument("--seed", type=int)
    e.add_argument("--format", choices=("text", "csv"), default="text")
    e.add_argument("--out", help="also write metrics CSV here")
    e.set_defaults(fn=cmd_eval)

    x = sub.add_parser("export", help="export an advection trajectory as PLY")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--sample", required=True,
                   help="PLY/ADVP path, path:index, or synthetic kind")
    x.add_argument("--out", required=True)
    x.add_argument("--seed", type=int)
    x.add_argument("--force", action="store_true")
    x.set_defaults(fn=cmd_export)

    s = sub.add_parser("synth", help="generate synthetic datasets")
    s.add_argument("--kind", required=True)
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--points", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    i = sub.add_parser("inspect", help="print checkpoint info")
    i.add_argument("--checkpoint", required=True)
    i.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except AdvectantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
