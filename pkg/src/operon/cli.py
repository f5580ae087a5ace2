"""Command-line entry point: ``operon {gen,train,compare,eval}``.

Settings come from built-in defaults, then ``--config file.json``, then
explicit flags. The resolved settings are written as ``config.json`` into
every output directory. Exit codes: 0 success, 1 runtime failure,
2 usage or validation error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields

from .dataset import PROBLEMS, Dataset, GenerationParams, generate, split
from .exceptions import OperonError, ParameterError, SpecError, UsageError
from .models import KINDS, ModelSpec, build, load_checkpoint, match_parameter_counts
from .training import (
    CompareConfig,
    TrainConfig,
    compare,
    draw_evaluation_inputs,
    evaluate_field,
    format_report,
    train,
    write_grid_text,
    write_pgm,
)

log = logging.getLogger("operon")


class ConfigError(Exception):
    """Invalid command-line or config-file settings (exit code 2)."""


@dataclass
class RunConfig:
    """Every setting a command can use; see the README for the JSON schema."""

    problem: str = "diffusion"
    functions: int = 1000
    queries: int = 100
    seed: int = 0
    model: str = "edeeponet"
    branches: int = 2
    hidden_widths: list = field(default_factory=lambda: [64, 64])
    latent_dim: int = 64
    epochs: int = 200
    lr: float = 1e-4
    batch: int = None
    eval_every: int = 1
    train_fraction: float = 0.9
    seeds: int = 5
    data: str = None
    checkpoint: str = None
    out: str = None
    jobs: int = None
    generation: dict = field(default_factory=dict)

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {', '.join(PROBLEMS)}")
        if self.model not in KINDS:
            raise ConfigError(f"model must be one of {', '.join(KINDS)}")
        for name in ("functions", "queries", "epochs", "seeds", "branches", "latent_dim", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.batch is not None and self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        try:
            self.generation_params()
        except (TypeError, OperonError) as exc:
            raise ConfigError(f"invalid generation parameters: {exc}") from exc

    def generation_params(self):
        return GenerationParams.from_dict(self.generation)

    def resolved_jobs(self):
        return self.jobs or os.cpu_count() or 1

    def train_config(self):
        return TrainConfig(lr=self.lr, batch_size=self.batch, epochs=self.epochs,
                           eval_every=self.eval_every, seed=self.seed)

    def reference_spec(self, m):
        return ModelSpec(kind="edeeponet", sensor_count=m, n_branches=self.branches,
                         branch_widths=tuple(self.hidden_widths),
                         trunk_widths=tuple(self.hidden_widths),
                         latent_dim=self.latent_dim, seed=self.seed)


FLAG_KEYS = {f.name for f in fields(RunConfig)} - {"hidden_widths", "latent_dim", "generation",
                                                    "eval_every", "train_fraction"}


def load_config(path, flags):
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(values) - {f.name for f in fields(RunConfig)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values.update({k: v for k, v in flags.items() if k in FLAG_KEYS and v is not None})
    try:
        config = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    config.validate()
    return config


def _write_config(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(asdict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_dataset(config):
    if config.data is None or not os.path.isfile(config.data):
        raise ConfigError(f"dataset not found: {config.data}")
    try:
        return Dataset.read(config.data)
    except ParameterError as exc:
        raise ConfigError(f"cannot read dataset {config.data}: {exc}") from exc


def cmd_gen(config):
    out = config.out or "dataset.bin"
    dataset = generate(config.problem, config.functions, config.queries, config.seed,
                       config.generation_params(), jobs=config.resolved_jobs())
    dataset.write(out)
    print(f"wrote {out}: {len(dataset)} records ({dataset.n_functions} functions x "
          f"{dataset.queries} queries)")
    print(f"sha256 {dataset.digest()}")


def _model_spec(config, m):
    reference = config.reference_spec(m)
    if config.model == "edeeponet":
        return reference
    if config.branches != 2:
        raise ConfigError("--branches applies to edeeponet only")
    return match_parameter_counts(reference, config.model)


def cmd_train(config):
    dataset = _read_dataset(config)
    if config.branches != 2:
        raise ConfigError(f"datasets carry 2 input functions; --branches {config.branches} does not fit")
    out = config.out or "train-out"
    _write_config(config, out)
    spec = _model_spec(config, dataset.m)
    model = build(spec)
    log.info("training %s with %d parameters", spec.kind, model.parameter_count)
    data_split = split(dataset, config.train_fraction, config.seed)
    metrics = train(model, dataset, data_split, config.train_config(), out, name="model")
    os.replace(os.path.join(out, "model_curves.csv"), os.path.join(out, "curves.csv"))
    print(f"best train MSE {metrics.best_train_mse:.6e} (epoch {metrics.best_train_epoch}), "
          f"best test MSE {metrics.best_test_mse:.6e} (epoch {metrics.best_test_epoch})")


def cmd_compare(config):
    out = config.out or "compare-out"
    dataset = _read_dataset(config) if config.data is not None else None
    if dataset is not None and dataset.problem != config.problem:
        raise ConfigError(f"dataset holds {dataset.problem}, but --problem is {config.problem}")
    if config.branches != 2:
        raise ConfigError("compare uses 2 input functions; --branches must be 2")
    _write_config(config, out)
    m = dataset.m if dataset is not None else config.generation_params().m
    cmp_config = CompareConfig(
        n_functions=config.functions, queries=config.queries,
        train_fraction=config.train_fraction, master_seed=config.seed, n_seeds=config.seeds,
        train=config.train_config(), reference=config.reference_spec(m),
        generation=config.generation_params(),
    )
    report, _ = compare(config.problem, cmp_config, dataset=dataset, out_dir=out,
                        jobs=config.resolved_jobs())
    print(format_report(report))
    print(f"report written to {os.path.join(out, 'report.json')}")
    if not report["complete"]:
        raise OperonError("one or more training runs failed; report flagged incomplete")


def cmd_eval(config):
    if config.checkpoint is None or not os.path.isfile(config.checkpoint):
        raise ConfigError(f"checkpoint not found: {config.checkpoint}")
    try:
        model = load_checkpoint(config.checkpoint)
    except (SpecError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint: {exc}") from exc
    params = _read_dataset(config).params if config.data is not None else config.generation_params()
    if model.spec.sensor_count != params.m or model.spec.n_branches != 2:
        raise ConfigError(
            f"checkpoint expects {model.spec.n_branches} functions of {model.spec.sensor_count} "
            f"sensors; evaluation draws 2 functions of {params.m}"
        )
    out = config.out or "eval-out"
    _write_config(config, out)
    u, v, a = draw_evaluation_inputs(config.problem, params, config.seed)
    result = evaluate_field(model, config.problem, u, v, a, params.grid)
    for name, values in (("truth", result.truth.values), ("prediction", result.prediction.values),
                         ("error", result.error)):
        write_grid_text(os.path.join(out, f"{name}.txt"), values)
        write_pgm(os.path.join(out, f"{name}.pgm"), values)
    print(f"max abs error {result.max_error!r}")
    print(f"mean abs error {result.mean_error!r}")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "compare": cmd_compare, "eval": cmd_eval}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config; flags override it")
    common.add_argument("--problem", choices=PROBLEMS)
    common.add_argument("--functions", type=int, metavar="N")
    common.add_argument("--queries", type=int, metavar="P")
    common.add_argument("--seed", type=int, metavar="S")
    common.add_argument("--model", choices=KINDS)
    common.add_argument("--branches", type=int, metavar="N")
    common.add_argument("--epochs", type=int, metavar="E")
    common.add_argument("--lr", type=float, metavar="F")
    common.add_argument("--batch", type=int, metavar="B")
    common.add_argument("--seeds", type=int, metavar="K")
    common.add_argument("--data", metavar="PATH", help="dataset file")
    common.add_argument("--checkpoint", metavar="PATH", help="model checkpoint (eval)")
    common.add_argument("-o", "--out", metavar="DIR", help="output directory (file for gen)")
    common.add_argument("--jobs", type=int, metavar="N", help="worker processes (default: all cores)")

    parser = argparse.ArgumentParser(prog="operon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate a dataset file")
    sub.add_parser("train", parents=[common], help="train one model on a dataset")
    sub.add_parser("compare", parents=[common], help="train and compare all three models")
    sub.add_parser("eval", parents=[common], help="export truth/prediction/error fields")
    return parser


def _setup_logging():
    level = os.environ.get("OPERON_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    flags = vars(args)
    try:
        config = load_config(flags.pop("config"), flags)
        COMMANDS[args.command](config)
    except (ConfigError, UsageError, SpecError) as exc:
        print(f"operon {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OperonError, OSError) as exc:
        print(f"operon {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
