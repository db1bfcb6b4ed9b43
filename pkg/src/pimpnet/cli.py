"""``pimpnet`` command line: generate, pretrain, train, evaluate, explain.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command that writes ``OUT`` also writes ``OUT.config.txt`` holding the
effective configuration and seed; training commands write ``OUT.log.tsv``.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckpt
from .config import Config, ConfigError, config_text, parse_config
from .evaluation import aggregate_text, evaluate, explain, explain_text, metrics_text, parse_metrics
from .model import PimpnetModel
from .synthdata import DatasetFormatError, generate_dataset, read_dataset, write_dataset
from .training import pretrain, train_full

log = logging.getLogger("pimpnet")


class UsageError(Exception):
    pass


class RunError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="pimpnet", description="Part-prototype classifier with age prototypes on synthetic 3D phantoms.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "generate": "write a synthetic dataset container and its split file",
        "pretrain": "stage 1: self-supervised prototype pretraining",
        "train": "stage 2 (runs stage 1 first unless --checkpoint is given)",
        "evaluate": "classification and explainability metrics on the test split",
        "explain": "scoring-sheet explanations for selected samples",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--data", help="dataset container")
        sp.add_argument("--checkpoint", help="model checkpoint")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=int, help="overrides the configured seed")
        if name == "explain":
            sp.add_argument("--samples", help="comma-separated dataset indices")
        if name == "evaluate":
            sp.add_argument("--aggregate", help="comma-separated metrics files to average instead of evaluating")
    return p


def _load_config(args, required):
    if args.config is None:
        if required:
            raise UsageError("--config is required")
        cfg = Config()
    else:
        try:
            cfg = parse_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be >= 0")
        cfg = cfg.with_seed(args.seed)
    for key in ("data", "checkpoint", "out"):
        val = getattr(args, key)
        if val is not None:
            cfg = replace(cfg, **{key: val})
    return cfg


def _need(cfg, *keys):
    for key in keys:
        if getattr(cfg, key) is None:
            raise UsageError(f"--{key} is required")


def _record(cfg, out):
    Path(str(out) + ".config.txt").write_text(config_text(cfg), encoding="utf-8")


def _dataset(cfg):
    try:
        samples, split = read_dataset(cfg.data)
    except OSError as exc:
        raise RunError(f"cannot read dataset: {exc}") from None
    if split is None:
        raise RunError(f"split file missing next to {cfg.data}")
    return samples, split


def _checkpoint(path, need_stage):
    try:
        c = ckpt.load_checkpoint(path)
    except OSError as exc:
        raise RunError(f"cannot read checkpoint: {exc}") from None
    if c.stage < need_stage:
        raise RunError("model not trained" if need_stage == ckpt.STAGE_TRAINED else "model not pretrained")
    return c


def cmd_generate(args):
    cfg = _load_config(args, True)
    _need(cfg, "out")
    samples, split = generate_dataset(cfg.phantom, cfg.n_samples, cfg.seed)
    write_dataset(samples, split, cfg.out, cfg.phantom.region_count)
    _record(cfg, cfg.out)


def _train_set(cfg):
    samples, split = _dataset(cfg)
    return [samples[i] for i in split.train_ids]


def cmd_pretrain(args):
    cfg = _load_config(args, True)
    _need(cfg, "data", "out")
    train = _train_set(cfg)
    model = PimpnetModel.init(cfg.model, cfg.seed)
    with open(str(cfg.out) + ".log.tsv", "w", encoding="utf-8") as logf:
        _, states = pretrain(train, model, cfg.schedule, cfg.pretrain_weights, cfg.augment, logfile=logf)
    ckpt.save_checkpoint(cfg.out, cfg, model, states, ckpt.STAGE_PRETRAINED)
    _record(cfg, cfg.out)


def cmd_train(args):
    cfg = _load_config(args, True)
    _need(cfg, "data", "out")
    train = _train_set(cfg)
    with open(str(cfg.out) + ".log.tsv", "w", encoding="utf-8") as logf:
        if cfg.checkpoint is not None:
            c = _checkpoint(cfg.checkpoint, ckpt.STAGE_PRETRAINED)
            if c.config.model != cfg.model:
                raise RunError("checkpoint model configuration differs from --config")
            model, states = c.model, c.states
        else:
            model = PimpnetModel.init(cfg.model, cfg.seed)
            _, states = pretrain(train, model, cfg.schedule, cfg.pretrain_weights, cfg.augment, logfile=logf)
        train_full(train, model, cfg.schedule, cfg.weights, cfg.augment, states, logfile=logf)
    ckpt.save_checkpoint(cfg.out, cfg, model, states, ckpt.STAGE_TRAINED)
    _record(cfg, cfg.out)


def cmd_evaluate(args):
    if args.aggregate:
        if args.out is None:
            raise UsageError("--out is required")
        reports = []
        for p in [x for x in args.aggregate.split(",") if x]:
            try:
                reports.append(parse_metrics(Path(p).read_text(encoding="utf-8")))
            except OSError as exc:
                raise RunError(f"cannot read metrics file: {exc}") from None
            except (KeyError, ValueError) as exc:
                raise RunError(f"{p}: malformed metrics file ({exc})") from None
        Path(args.out).write_text(aggregate_text(reports), encoding="utf-8")
        return
    cfg = _load_config(args, False)
    _need(cfg, "checkpoint", "data", "out")
    c = _checkpoint(cfg.checkpoint, ckpt.STAGE_TRAINED)
    samples, split = _dataset(cfg)
    test = [samples[i] for i in split.test_ids]
    thr = cfg.detect_threshold if args.config else c.config.detect_threshold
    report = evaluate(c.model, test, thr)
    Path(cfg.out).write_text(metrics_text(report), encoding="utf-8")
    _record(replace(c.config, data=cfg.data, checkpoint=cfg.checkpoint, out=cfg.out, detect_threshold=thr), cfg.out)


def _indices(text, n):
    try:
        idx = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--samples expects comma-separated integers, got {text!r}") from None
    if not idx:
        raise UsageError("--samples is empty")
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise RunError(f"sample index {bad[0]} out of range (dataset has {n} samples)")
    return idx


def cmd_explain(args):
    cfg = _load_config(args, False)
    _need(cfg, "checkpoint", "data", "out")
    if args.samples is None:
        raise UsageError("--samples is required")
    c = _checkpoint(cfg.checkpoint, ckpt.STAGE_TRAINED)
    samples, _ = _dataset(cfg)
    reports = [explain(c.model, samples[i], i) for i in _indices(args.samples, len(samples))]
    Path(cfg.out).write_text(explain_text(reports), encoding="utf-8")
    _record(replace(c.config, data=cfg.data, checkpoint=cfg.checkpoint, out=cfg.out), cfg.out)


COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
}


def run_command(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"pimpnet: error: {exc}", file=sys.stderr)
        return 2
    except (RunError, DatasetFormatError, ckpt.CheckpointFormatError, ValueError, OSError) as exc:
        print(f"pimpnet: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    return 0


def main():
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
