"""Command-line interface: train, eval, gradcheck, export-graph, params.

Configuration is a flat key=value namespace (model plus training keys),
read from an optional ``--config`` file and overridden by repeatable
``--set key=value`` flags (last wins) and ``--seed``. Every run writes the
fully resolved configuration next to its outputs so it can be replayed.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .checksuite import run_suite
from .data import DatasetSplit, bilinear_resize, load_dataset, read_ppm, synth_dataset, write_ppm
from .graph import export_record
from .metrics import evaluate
from .model import ConfigError, FViGModel, ModelConfig, count_params, parse_config_value
from .train import TrainConfig, train

_MODEL_FIELDS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}

RED = (1.0, 0.15, 0.15)
BLUE = (0.15, 0.3, 1.0)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def resolve_config(args) -> tuple[ModelConfig, TrainConfig, set[str]]:
    """Merge defaults, config file, --set overrides, and --seed; reject unknown keys."""
    values: dict[str, object] = {}

    def assign(key: str, raw: str) -> None:
        if key in _MODEL_FIELDS:
            values[key] = parse_config_value(key, raw, _MODEL_FIELDS[key])
        elif key in _TRAIN_FIELDS:
            values[key] = parse_config_value(key, raw, _TRAIN_FIELDS[key])
        else:
            raise ConfigError(f"unknown config key '{key}'")

    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file '{path}' does not exist")
        for raw_line in path.read_text(encoding="utf-8").splitlines():
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line (expected key=value): '{line}'")
            key, _, raw = line.partition("=")
            assign(key.strip(), raw.strip())
    for override in getattr(args, "set", []) or []:
        if "=" not in override:
            raise ConfigError(f"bad --set (expected key=value): '{override}'")
        key, _, raw = override.partition("=")
        assign(key.strip(), raw.strip())
    if getattr(args, "seed", None) is not None:
        values["seed"] = int(args.seed)
    if getattr(args, "epochs", None) is not None:
        values["epochs"] = int(args.epochs)

    explicit = set(values)
    model_cfg = ModelConfig(**{k: v for k, v in values.items() if k in _MODEL_FIELDS})
    train_cfg = TrainConfig(**{k: v for k, v in values.items() if k in _TRAIN_FIELDS})
    return model_cfg, train_cfg, explicit


def resolved_text(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    lines = [f"{f.name}={_fmt(getattr(model_cfg, f.name))}" for f in fields(ModelConfig)]
    lines += [f"{f.name}={_fmt(getattr(train_cfg, f.name))}" for f in fields(TrainConfig)]
    return "\n".join(lines) + "\n"


def _load_split(args, model_cfg: ModelConfig, seed: int) -> DatasetSplit:
    use_synth = getattr(args, "synth", False)
    data_dir = getattr(args, "data", None)
    if use_synth and data_dir:
        raise ConfigError("pass either --data or --synth, not both")
    if use_synth:
        return synth_dataset(
            seed=seed,
            num_classes=args.classes,
            per_class=args.per_class,
            size=model_cfg.image_size,
        )
    if not data_dir:
        raise ConfigError("a dataset is required: pass --data DIR or --synth")
    if not Path(data_dir).is_dir():
        raise ConfigError(f"dataset directory '{data_dir}' does not exist")
    return load_dataset(data_dir, model_cfg.image_size)


def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path("runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    model_cfg, train_cfg, explicit = resolve_config(args)
    split = _load_split(args, model_cfg, train_cfg.seed)
    num_classes = len(split.class_names)
    if "num_classes" in explicit and model_cfg.num_classes != num_classes:
        raise ConfigError(
            f"config asks for {model_cfg.num_classes} classes but the dataset has {num_classes}"
        )
    model_cfg.num_classes = num_classes
    model_cfg.validate()
    train_cfg.validate()

    out = _out_dir(args, "train")
    (out / "config.txt").write_text(resolved_text(model_cfg, train_cfg), encoding="utf-8")
    model = FViGModel(model_cfg, rng=np.random.default_rng(train_cfg.seed))
    logs = train(
        model,
        split,
        train_cfg,
        log_path=out / "train_log.csv",
        checkpoint_path=out / "checkpoint.fvig",
    )
    last = logs[-1]
    print(f"trained {train_cfg.epochs} epochs on {len(split)} images ({num_classes} classes)")
    print(f"final train loss {last.loss:.6f}, train accuracy {last.accuracy:.4f}")
    print(f"outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    model = FViGModel.load(args.checkpoint)
    _, train_cfg, _ = resolve_config(args)
    split = _load_split(args, model.config, train_cfg.seed)
    if len(split.class_names) != model.config.num_classes:
        raise ConfigError(
            f"checkpoint expects {model.config.num_classes} classes but the dataset has {len(split.class_names)}"
        )
    report = evaluate(model, split)
    out = _out_dir(args, "eval")
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    print(f"accuracy {report.accuracy!r}")
    print(f"metrics written to {out / 'metrics.json'}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(tol=args.tol, only=args.op, seed=args.seed if args.seed is not None else 0)
    failures = []
    for name, report in results:
        status = "PASS" if report.passed else "FAIL"
        print(
            f"{status} {name:<30} max_rel_err={report.max_rel_error:.3e} "
            f"(checked {report.num_checked}, worst at {report.worst_index})"
        )
        if not report.passed:
            failures.append(name)
    if failures:
        print(f"gradient check failed for: {', '.join(failures)}")
        return 1
    print(f"all {len(results)} gradient checks passed at tol {args.tol:g}")
    return 0


def _tint_patch(image: np.ndarray, node: int, grid: int, patch: int, color) -> None:
    gi, gj = divmod(node, grid)
    block = image[:, gi * patch : (gi + 1) * patch, gj * patch : (gj + 1) * patch]
    block[:] = 0.5 * block + 0.5 * np.asarray(color)[:, None, None]


def cmd_export_graph(args) -> int:
    model = FViGModel.load(args.checkpoint)
    cfg = model.config
    if not 0 <= args.layer < cfg.depth:
        raise ConfigError(f"layer {args.layer} out of range [0, {cfg.depth})")
    if not 0 <= args.node < cfg.num_nodes:
        raise ConfigError(f"node {args.node} out of range [0, {cfg.num_nodes})")
    image = bilinear_resize(read_ppm(args.image), cfg.image_size)
    adjacency: list[np.ndarray] = []
    model.forward(image[None], training=False, adjacency_out=adjacency)
    neighbors = adjacency[args.layer][0, args.node]
    record = export_record(
        image_id=Path(args.image).name,
        layer=args.layer,
        center_index=args.node,
        neighbors=neighbors,
        dilation=cfg.rates()[args.layer],
        k=cfg.k,
    )
    out = _out_dir(args, "export-graph")
    (out / "graph.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")

    grid = cfg.image_size // cfg.patch_size
    overlay = image.copy()
    for j in neighbors:
        _tint_patch(overlay, int(j), grid, cfg.patch_size, BLUE)
    _tint_patch(overlay, args.node, grid, cfg.patch_size, RED)
    write_ppm(out / "overlay.ppm", overlay)
    print(f"node {args.node} layer {args.layer}: neighbors {record['neighbor_indices']}")
    print(f"outputs in {out}")
    return 0


def cmd_params(args) -> int:
    model_cfg, _, _ = resolve_config(args)
    model_cfg.validate()
    census = count_params(model_cfg)
    width = max(len(name) for name in census)
    for name, count in census.items():
        print(f"{name:<{width}}  {count:>12}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fvig", description="Saliency-driven vision graph network")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help="output directory (default: runs/<command>)")
        sp.add_argument("--seed", type=int, help="random seed")

    p = sub.add_parser("train", help="train a model on a dataset directory or synthetic data")
    common(p)
    p.add_argument("--data", help="dataset root: one subdirectory of .ppm files per class")
    p.add_argument("--synth", action="store_true", help="use the deterministic synthetic dataset")
    p.add_argument("--classes", type=int, default=3, help="synthetic class count")
    p.add_argument("--per-class", dest="per_class", type=int, default=20, help="synthetic images per class")
    p.add_argument("--epochs", type=int, help="override the number of epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write the metrics report")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--synth", action="store_true")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", dest="per_class", type=int, default=20)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable operation")
    common(p)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--op", help="only run checks whose name contains this string")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-graph", help="dump one node's neighborhood as JSON plus a tinted overlay image")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input image (binary P6 PPM)")
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--layer", type=int, required=True)
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("params", help="print the parameter census for a configuration")
    common(p)
    p.set_defaults(func=cmd_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError, NotADirectoryError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # anything else is a runtime failure
        print(f"runtime failure: {err}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
