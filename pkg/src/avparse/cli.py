"""Command line: gen-data, train, eval, inspect-graph, ablate.

Every option can also come from a JSON file given with ``--config``; flags
given on the command line win over the file. Machine-readable results go to
stdout as JSON, progress logs to stderr. Exit codes: 0 ok, 1 runtime failure,
2 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import container
from .data import DatasetManifest, ManifestError, load_dataset, save_dataset, generate_splits
from .graph import build_graph
from .metrics import EvalReport, evaluate
from .model import ModelConfig, Prepared, predict
from .text import TextEncoder
from .train import (CheckpointError, TrainConfig, TrainingError, evaluate_model, load_checkpoint,
                    save_checkpoint, train)

log = logging.getLogger("avparse")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Option:
    key: str
    type: Callable[[Any], Any]
    default: Any
    help: str
    flag: str | None = None  # defaults to --key-with-dashes
    negate: bool = False  # boolean switched off by a --no-... flag

    @property
    def flag_name(self) -> str:
        return self.flag or "--" + self.key.replace("_", "-")


def _float_list(value) -> list[float]:
    if isinstance(value, str):
        value = value.split(",")
    return [float(v) for v in value]


def _str_list(value) -> list[str]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",")]
    return [str(v) for v in value]


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    raise ConfigError(f"expected true/false, got {value!r}")


_M = DatasetManifest()
MANIFEST_OPTIONS = [
    Option("class_names", _str_list, _M.class_names, "comma-separated class names", "--classes"),
    Option("T", int, _M.T, "segments per video", "--t"),
    Option("d", int, _M.d, "feature dimension"),
    Option("n_videos", int, _M.n_videos, "training videos"),
    Option("n_test", int, _M.n_test, "test videos"),
    Option("feature_sigma", float, _M.feature_sigma, "feature noise standard deviation"),
    Option("flip_rate", float, _M.flip_rate, "pseudo-label flip probability per cell"),
    Option("seed", int, _M.seed, "generator seed"),
    Option("max_events", int, _M.max_events, "most event classes per video"),
    Option("min_event_len", int, _M.min_event_len, "shortest event in segments"),
    Option("max_event_len", int, _M.max_event_len, "longest event in segments"),
    Option("pattern_probs", _float_list, _M.pattern_probs, "probabilities of audio-only,visual-only,both events"),
    Option("sync_prob", float, _M.sync_prob, "chance an audio-visual event shares one interval"),
]

_C = ModelConfig()
MODEL_OPTIONS = [
    Option("hidden", int, _C.hidden, "fusion MLP width; none means d"),
    Option("hops_audio", int, _C.hops_audio, "audio graph hop range K"),
    Option("hops_visual", int, _C.hops_visual, "visual graph hop range K"),
    Option("heads", int, _C.heads, "graph attention heads"),
    Option("layers", int, _C.layers, "graph attention layers"),
    Option("dropout", float, _C.dropout, "message dropout rate"),
    Option("threshold", float, _C.threshold, "segment decision threshold"),
]
ABLATION_OPTIONS = [
    Option("use_te", _bool, True, "disable text fusion", "--no-te", negate=True),
    Option("use_mtg", _bool, True, "disable temporal graphs", "--no-mtg", negate=True),
]

_T = TrainConfig()
TRAIN_OPTIONS = [
    Option("lr", float, _T.lr, "learning rate"),
    Option("momentum", float, _T.momentum, "SGD momentum"),
    Option("epochs", int, _T.epochs, "training epochs"),
    Option("batch_size", int, _T.batch_size, "videos per step"),
    Option("seed", int, _T.seed, "initialisation and shuffling seed"),
    Option("weight_decay", float, _T.weight_decay, "L2 penalty added to gradients"),
]

COMMANDS: dict[str, tuple[str, list[Option]]] = {
    "gen-data": ("generate a synthetic dataset directory", [
        Option("out", str, None, "output directory (required)"),
        *MANIFEST_OPTIONS,
    ]),
    "train": ("train a model on a dataset directory", [
        Option("data", str, None, "dataset directory (required)"),
        Option("out", str, None, "run directory (required)"),
        Option("resume", str, None, "checkpoint to continue from"),
        *MODEL_OPTIONS, *ABLATION_OPTIONS, *TRAIN_OPTIONS,
    ]),
    "eval": ("score prediction files against ground truth", [
        Option("pred", str, None, "prediction container with 'audio' and 'visual' (required)"),
        Option("gt", str, None, "ground-truth container with 'audio' and 'visual' (required)"),
        Option("threshold", float, _C.threshold, "probability threshold"),
        Option("jobs", int, 1, "worker processes"),
    ]),
    "inspect-graph": ("print a temporal adjacency matrix", [
        Option("T", int, 10, "segments", "--t"),
        Option("K", int, 4, "hop range", "--k"),
    ]),
    "ablate": ("train and score the full / no-te / no-mtg / neither grid", [
        Option("data", str, None, "dataset directory (required)"),
        *MODEL_OPTIONS, *TRAIN_OPTIONS,
        Option("jobs", int, 1, "worker processes for scoring"),
    ]),
}
REQUIRED = {"gen-data": ["out"], "train": ["data", "out"], "eval": ["pred", "gt"], "ablate": ["data"]}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avparse", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (help_text, options) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text,
                           epilog="JSON config keys are the option names with underscores "
                                  f"({', '.join(o.key for o in options)}).")
        p.add_argument("--config", help="JSON file of option values (flags win)")
        for opt in options:
            shown = "none" if opt.default is None else json.dumps(opt.default)
            if opt.negate:
                p.add_argument(opt.flag_name, dest=opt.key, action="store_false", default=argparse.SUPPRESS,
                               help=f"{opt.help} [key {opt.key}, default: {shown}]")
            else:
                p.add_argument(opt.flag_name, dest=opt.key, default=argparse.SUPPRESS,
                               metavar=opt.key.upper(), help=f"{opt.help} [key {opt.key}, default: {shown}]")
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the JSON config file, then command-line flags."""
    options = {o.key: o for o in COMMANDS[command][1]}
    values = {k: o.default for k, o in options.items()}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(options))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {unknown}")
        values.update(loaded)
    values.update({k: v for k, v in vars(args).items() if k in options})
    for key, value in values.items():
        if value is None:
            continue
        try:
            values[key] = options[key].type(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    missing = [k for k in REQUIRED.get(command, []) if values.get(k) is None]
    if missing:
        raise ConfigError(f"{command}: missing required option(s) {', '.join('--' + m for m in missing)}")
    return values


def _pick(cls, values: dict[str, Any], **extra):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in values.items() if k in names}, **extra)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


# ---------------------------------------------------------------- commands


def cmd_gen_data(v: dict[str, Any]) -> int:
    manifest = _pick(DatasetManifest, v)
    try:
        manifest.validate()
    except ManifestError as exc:
        raise ConfigError(str(exc)) from exc
    splits = generate_splits(manifest)
    save_dataset(v["out"], manifest, splits)
    log.info("wrote %s", v["out"])
    _emit({"out": v["out"], "manifest_hash": manifest.hash(),
           "videos": {split: len(ds) for split, ds in splits.items()}})
    return 0


def _load(directory: str):
    manifest, splits = load_dataset(directory)
    encoder = TextEncoder(manifest.class_names, manifest.d, manifest.seed)
    prepared = {split: Prepared.build(ds, encoder) for split, ds in splits.items()}
    return manifest, prepared


def _model_config(v: dict[str, Any], manifest: DatasetManifest, **overrides) -> ModelConfig:
    return _pick(ModelConfig, {**v, **overrides}, d=manifest.d, n_classes=manifest.n_classes)


def cmd_train(v: dict[str, Any]) -> int:
    manifest, data = _load(v["data"])
    model_config, train_config = _model_config(v, manifest), _pick(TrainConfig, v)
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    state = None
    if v["resume"]:
        ck = load_checkpoint(v["resume"], manifest)
        if ck.model_config != model_config:
            raise ConfigError("resume: model options differ from the checkpoint's")
        state = ck.state
    ckpt = out / "checkpoint.bin"
    log_path = out / "metrics.jsonl"
    if state is None and log_path.exists():
        log_path.unlink()

    def on_epoch(s):
        save_checkpoint(ckpt, s, model_config, train_config, manifest.hash())

    state = train(model_config, train_config, data["train"], data.get("test"), state, log_path, on_epoch)
    save_checkpoint(ckpt, state, model_config, train_config, manifest.hash())
    result = {"checkpoint": str(ckpt), "metrics": str(log_path), "epochs": state.epoch}
    if "test" in data:
        pa, pv = predict(state.params, data["test"], model_config)
        container.save(out / "predictions.bin", {"audio": pa, "visual": pv},
                       {"threshold": model_config.threshold})
        container.save(out / "ground_truth.bin",
                       {"audio": data["test"].data.gt_audio, "visual": data["test"].data.gt_visual})
        result["report"] = evaluate(pa, pv, data["test"].data.gt_audio, data["test"].data.gt_visual,
                                    model_config.threshold).to_dict()
    _emit(result)
    return 0


def cmd_eval(v: dict[str, Any]) -> int:
    pred, _ = container.load(v["pred"])
    gt, _ = container.load(v["gt"])
    for name, blob in (("pred", pred), ("gt", gt)):
        if not {"audio", "visual"} <= set(blob):
            raise container.ContainerError(f"{name} file needs 'audio' and 'visual' tensors")
    report = evaluate(pred["audio"], pred["visual"], gt["audio"], gt["visual"], v["threshold"], v["jobs"])
    _emit(report.to_dict())
    return 0


def cmd_inspect_graph(v: dict[str, Any]) -> int:
    try:
        g = build_graph(v["T"], v["K"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sys.stdout.write(g.grid() + "\n")
    return 0


ABLATION_ROWS = {"full": (True, True), "no-te": (False, True), "no-mtg": (True, False), "neither": (False, False)}


def run_ablation(data: dict[str, Prepared], manifest: DatasetManifest, v: dict[str, Any],
                 jobs: int = 1) -> dict[str, EvalReport]:
    """Train and score each ablation row on the same data and seed."""
    rows = {}
    eval_split = data.get("test", data["train"])
    for name, (te, mtg) in ABLATION_ROWS.items():
        config = _model_config(v, manifest, use_te=te, use_mtg=mtg)
        state = train(config, _pick(TrainConfig, v), data["train"])
        pa, pv = predict(state.params, eval_split, config)
        rows[name] = evaluate(pa, pv, eval_split.data.gt_audio, eval_split.data.gt_visual,
                              config.threshold, jobs)
        log.info("%s: segment Type@AV %.4f", name, rows[name].segment["Type@AV"])
    return rows


def cmd_ablate(v: dict[str, Any]) -> int:
    manifest, data = _load(v["data"])
    rows = run_ablation(data, manifest, v, v["jobs"])
    _emit({"rows": [{"config": name, **report.to_dict()} for name, report in rows.items()]})
    return 0


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "inspect-graph": cmd_inspect_graph, "ablate": cmd_ablate}


def run(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return 2
        values = resolve(args.command, args)
        return HANDLERS[args.command](values)
    except ConfigError as exc:
        print(f"avparse: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, CheckpointError, container.ContainerError, ManifestError, OSError) as exc:
        print(f"avparse: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
