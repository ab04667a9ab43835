"""
Command-line interface: generate instances, train, evaluate, transfer and
merge learning curves.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import EVAL_RUNS, LOG_LEVEL, THREADS
from .checkpoint import read_checkpoint, write_checkpoint
from .domains import GeneratorConfig, generate_instance, parse_domain
from .errors import DomainMismatch, ManifestError, TrapsNetError, UsageError
from .evaluate import (
    evaluate_baselines,
    evaluate_checkpoint,
    learning_curve,
    merge_curves,
    reports_frame,
    write_csv,
)
from .instance import read_instance, save_instance, write_instance
from .trainer import TrainConfig, Trainer, transfer_init

logger = logging.getLogger("trapsnet")

MANIFEST_KEYS = {"domain", "train", "test", "train_config", "model", "output",
                 "resume", "eval_runs"}


class ArgumentParser(argparse.ArgumentParser):
    """Exit with status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def comma_list(value):
    return [item.strip() for item in value.split(",") if item.strip()]


def output(path):
    return sys.stdout if path in (None, "-") else path


def cmd_gen(args):
    config = GeneratorConfig(
        domain=args.domain,
        size=args.size,
        topology=args.topology,
        edge_prob=args.edge_prob,
        rows=args.rows,
        cols=args.cols,
        seed=args.seed,
        horizon=args.horizon,
    )
    instance = generate_instance(config)
    if args.out in (None, "-"):
        sys.stdout.write(write_instance(instance))
    else:
        save_instance(instance, args.out)
        logger.info("Wrote %s with %d objects", args.out, instance.size)


class Manifest:
    """Experiment description loaded from a JSON file.

    Relative paths are resolved against the manifest's directory.
    """

    def __init__(self, path):
        self.path = Path(path)
        try:
            document = json.loads(self.path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as error:
            raise ManifestError(f"{self.path}: {error}") from None
        if not isinstance(document, dict):
            raise ManifestError(f"{self.path}: expected a JSON object")
        unknown = sorted(set(document) - MANIFEST_KEYS)
        if unknown:
            raise ManifestError(
                f"{self.path}: unknown key(s): {', '.join(unknown)}"
            )
        for key in ("domain", "train", "output"):
            if key not in document:
                raise ManifestError(f"{self.path}: missing '{key}'")
        self.domain = parse_domain(document["domain"])
        self.train = self._instances(document["train"], "train")
        self.test = self._instances(document.get("test", []), "test")
        self.train_config = dict(document.get("train_config", {}))
        self.model = dict(document.get("model", {}))
        self.output = self._resolve(document["output"])
        self.eval_runs = int(document.get("eval_runs", EVAL_RUNS))
        self.resume = None
        if document.get("resume"):
            self.resume = self._existing(document["resume"])

    def _resolve(self, value):
        path = Path(value)
        return path if path.is_absolute() else self.path.parent / path

    def _existing(self, value):
        path = self._resolve(value)
        if not path.is_file():
            raise ManifestError(f"{self.path}: file not found: {path}")
        return path

    def _instances(self, entries, key):
        if not isinstance(entries, list):
            raise ManifestError(f"{self.path}: '{key}' must be a list")
        instances = []
        for entry in entries:
            if isinstance(entry, dict):
                options = dict(entry)
                options.setdefault("domain", self.domain.value)
                try:
                    instance = generate_instance(GeneratorConfig(**options))
                except TypeError as error:
                    raise ManifestError(f"{self.path}: {error}") from None
            else:
                instance = read_instance(self._existing(entry)).instance
            if instance.domain != self.domain:
                raise DomainMismatch(
                    f"{instance.name} is {instance.domain.value}, the "
                    f"manifest trains {self.domain.value}"
                )
            instances.append(instance)
        return instances


def cmd_train(args):
    manifest = Manifest(args.manifest)
    options = {"threads": args.threads, **manifest.train_config}
    try:
        config = TrainConfig(instances=manifest.train, **options)
    except TypeError as error:
        raise ManifestError(f"{manifest.path}: {error}") from None

    if manifest.resume is not None:
        trainer = Trainer.resume(config, read_checkpoint(manifest.resume))
    else:
        trainer = Trainer(config, model_options=manifest.model)

    directory = manifest.output / "checkpoints"
    directory.mkdir(parents=True, exist_ok=True)
    checkpoint = None
    for checkpoint in trainer.train():
        write_checkpoint(directory / f"step-{checkpoint.meta.steps:08d}.ckpt",
                         checkpoint)
    write_csv(trainer.log_frame(), manifest.output / "train_log.csv")
    logger.info("Finished after %d steps", trainer.steps)

    if manifest.test:
        reports = []
        for instance in manifest.test:
            greedy, sampled = evaluate_checkpoint(
                checkpoint, instance, manifest.eval_runs, config.seed,
                args.threads,
            )
            reports += [greedy, sampled]
        write_csv(reports_frame(reports), manifest.output / "eval.csv")


def cmd_eval(args):
    checkpoint = read_checkpoint(args.checkpoint)
    instance = read_instance(args.instance).instance
    transfer_init(checkpoint, instance)
    greedy, sampled = evaluate_checkpoint(
        checkpoint, instance, args.runs, args.seed, args.threads
    )
    reports = [greedy, sampled]
    reports += evaluate_baselines(instance, args.baselines, args.runs,
                                  args.seed, args.threads)
    write_csv(reports_frame(reports), output(args.out))


def cmd_transfer(args):
    checkpoint = read_checkpoint(args.checkpoint)
    instance = read_instance(args.instance).instance
    transferred = transfer_init(checkpoint, instance)
    checkpoints = list(transferred.fine_tune(
        wall_clock_budget=args.budget,
        max_steps=args.max_steps,
        checkpoint_interval=args.eval_interval,
        checkpoint_every_steps=args.eval_every_steps,
        seed=args.seed,
        threads=args.threads,
    ))
    curve = learning_curve(
        checkpoints, instance, args.runs, args.seed, args.baselines,
        threads=args.threads, label=args.label,
    )
    write_csv(curve.frame(), output(args.out))


def cmd_plotdata(args):
    write_csv(merge_curves(args.curves), output(args.out))


def build_parser():
    parser = ArgumentParser(prog="trapsnet", description=__doc__.strip())
    parser.add_argument("--threads", type=int, default=THREADS,
                        help="worker threads (1 keeps runs reproducible)")
    parser.add_argument("--log-level", default=LOG_LEVEL, type=str.upper,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR",
                                 "CRITICAL"])
    commands = parser.add_subparsers(dest="command", required=True,
                                     parser_class=ArgumentParser)

    gen = commands.add_parser("gen", help="generate a random instance")
    gen.add_argument("--domain", required=True)
    gen.add_argument("--size", type=int, required=True)
    gen.add_argument("--topology")
    gen.add_argument("--edge-prob", type=float, default=0.3)
    gen.add_argument("--rows", type=int)
    gen.add_argument("--cols", type=int)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--horizon", type=int, default=40)
    gen.add_argument("--out")
    gen.set_defaults(handler=cmd_gen)

    train = commands.add_parser("train", help="train from a manifest")
    train.add_argument("--manifest", required=True)
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--instance", required=True)
    evaluate.add_argument("--runs", type=int, default=EVAL_RUNS)
    evaluate.add_argument("--baselines", type=comma_list, default=[])
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--out")
    evaluate.set_defaults(handler=cmd_eval)

    transfer = commands.add_parser(
        "transfer", help="zero-shot evaluation followed by fine-tuning"
    )
    transfer.add_argument("--checkpoint", required=True)
    transfer.add_argument("--instance", required=True)
    transfer.add_argument("--budget", type=float, default=0.0,
                          help="fine-tuning time in seconds")
    transfer.add_argument("--max-steps", type=int)
    transfer.add_argument("--eval-interval", type=float, default=60.0)
    transfer.add_argument("--eval-every-steps", type=int)
    transfer.add_argument("--runs", type=int, default=EVAL_RUNS)
    transfer.add_argument("--baselines", type=comma_list,
                          default=["random", "noop", "greedy"])
    transfer.add_argument("--label", default="trapsnet")
    transfer.add_argument("--seed", type=int, default=0)
    transfer.add_argument("--out")
    transfer.set_defaults(handler=cmd_transfer)

    plotdata = commands.add_parser("plotdata", help="merge curve files")
    plotdata.add_argument("--curves", nargs="*", default=[])
    plotdata.add_argument("--out")
    plotdata.set_defaults(handler=cmd_plotdata)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1:
        logger.error("--threads must be at least 1")
        return UsageError.exit_code
    torch.set_num_threads(args.threads)
    try:
        args.handler(args)
    except TrapsNetError as error:
        logger.error("%s", error)
        return error.exit_code
    except OSError as error:
        logger.error("%s", error)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
