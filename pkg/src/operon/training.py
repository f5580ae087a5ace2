"""Training loop, evaluation, field exports, and the three-way comparison."""

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import GenerationParams, draw_inputs, generate, solve, split
from .exceptions import DivergenceError, OperonError, ParameterError
from .models import KINDS, ModelSpec, build, match_parameter_counts, save_checkpoint
from .nn import Adam
from .solvers import SolutionField

log = logging.getLogger(__name__)

EVAL_CHUNK = 8192


def mse(predictions, targets):
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size:
        raise ParameterError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ParameterError("mse of an empty batch")
    d = p - t
    return float(np.dot(d, d) / d.size)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = None
    epochs: int = 200
    eval_every: int = 1
    seed: int = 0
    keep_best: bool = True

    def __post_init__(self):
        if not self.lr >= 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1 or self.eval_every < 1:
            raise ParameterError("epochs and eval_every must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")

    def resolved_batch_size(self, n_train):
        if self.batch_size is not None:
            return self.batch_size
        return max(1, min(1000, n_train // 10))


@dataclass
class RunMetrics:
    train_mse: list = field(default_factory=list)
    test_epochs: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)

    @property
    def best_train_mse(self):
        return min(self.train_mse)

    @property
    def best_train_epoch(self):
        return int(np.argmin(self.train_mse)) + 1

    @property
    def best_test_mse(self):
        return min(self.test_mse) if self.test_mse else None

    @property
    def best_test_epoch(self):
        return self.test_epochs[int(np.argmin(self.test_mse))] if self.test_mse else None

    def rows(self):
        """``(epoch, train_mse, test_mse)`` for each evaluated epoch."""
        test = dict(zip(self.test_epochs, self.test_mse))
        if not test:
            return [(e, m, None) for e, m in enumerate(self.train_mse, start=1)]
        return [(e, self.train_mse[e - 1], test[e]) for e in self.test_epochs]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_mse", "test_mse"])
            for epoch, train, test in self.rows():
                writer.writerow([epoch, repr(train), "" if test is None else repr(test)])


def read_curves(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), float(r["train_mse"]),
             float(r["test_mse"]) if r["test_mse"] else None) for r in rows]


def predict_arrays(model, functions, y, chunk=EVAL_CHUNK):
    out = np.empty(y.shape[0])
    for start in range(0, y.shape[0], chunk):
        sl = slice(start, start + chunk)
        out[sl] = model.predict([f[sl] for f in functions], y[sl])
    return out


def evaluate_mse(model, functions, y, s):
    return mse(predict_arrays(model, functions, y), s)


def fit_arrays(model, train, test=None, config=None):
    """Train ``model`` in place on ``train = (functions, y, s)``.

    Returns ``(metrics, best_state)``. ``best_state`` holds the parameters
    at the lowest test MSE (lowest train MSE without a test set), or the
    final parameters when ``config.keep_best`` is off.
    """
    config = config or TrainConfig()
    functions, y, s = train
    n = y.shape[0]
    if n == 0:
        raise ParameterError("empty training set")
    batch_size = config.resolved_batch_size(n)
    params = model.parameters()
    grads = model.gradients()
    opt = Adam(params, lr=config.lr)
    metrics = RunMetrics()
    best_state, best_value = None, np.inf
    model.zero_grad()
    for epoch in range(1, config.epochs + 1):
        tic = time.perf_counter()
        sq_err = np.empty(n)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            pred = model.forward([f[idx] for f in functions], y[idx])
            resid = pred - s[idx]
            loss = np.dot(resid, resid) / idx.size
            if not np.isfinite(loss):
                max_param = max(float(np.max(np.abs(p))) for p in params)
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {b} (max |param| = {max_param:.3e})",
                    epoch, b, max_param,
                )
            sq_err[idx] = resid * resid
            model.backward((2.0 / idx.size) * resid)
            opt.step(params, grads)
        metrics.train_mse.append(float(np.mean(sq_err)))
        watched = metrics.train_mse[-1]
        if test is not None and (epoch % config.eval_every == 0 or epoch == config.epochs):
            metrics.test_epochs.append(epoch)
            metrics.test_mse.append(evaluate_mse(model, *test))
            watched = metrics.test_mse[-1]
        if config.keep_best and (test is None or metrics.test_epochs[-1:] == [epoch]):
            if watched < best_value:
                best_value = watched
                best_state = model.get_state()
        metrics.epoch_seconds.append(time.perf_counter() - tic)
        log.debug("epoch %d train %.4e test %s", epoch, metrics.train_mse[-1],
                  metrics.test_mse[-1] if metrics.test_mse else "-")
    if best_state is None:
        best_state = model.get_state()
    return metrics, best_state


def split_arrays(dataset, record_index):
    rows = dataset.records[record_index]
    m = dataset.m
    return ([np.ascontiguousarray(rows[:, :m]), np.ascontiguousarray(rows[:, m:2 * m])],
            np.ascontiguousarray(rows[:, 2 * m:2 * m + 2]), rows[:, -1].copy())


def train(model, dataset, data_split, config=None, out_dir=None, name="run"):
    """Train on the split's train side, evaluating on its test side.

    With ``out_dir`` the curves CSV and best checkpoint are written as
    ``<name>_curves.csv`` and ``<name>.bin``.
    """
    if model.spec.n_branches != 2 or model.spec.sensor_count != dataset.m:
        raise ParameterError(
            f"model expects {model.spec.n_branches} functions of {model.spec.sensor_count} "
            f"sensors; dataset has 2 functions of {dataset.m}"
        )
    train_arrays = split_arrays(dataset, data_split.records("train"))
    test_index = data_split.records("test")
    test_arrays = split_arrays(dataset, test_index) if test_index.size else None
    metrics, best_state = fit_arrays(model, train_arrays, test_arrays, config)
    model.set_state(best_state)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics.write_csv(os.path.join(out_dir, f"{name}_curves.csv"))
        save_checkpoint(model, os.path.join(out_dir, f"{name}.bin"))
    return metrics


@dataclass
class FieldEvaluation:
    prediction: SolutionField
    truth: SolutionField
    error: np.ndarray

    @property
    def max_error(self):
        return float(self.error.max())

    @property
    def mean_error(self):
        return float(self.error.mean())


def evaluate_field(model, problem, u, v, a, grid, truth=None):
    """Query ``model`` at every node of ``grid`` and compare with the solver.

    ``u`` and ``v`` are :class:`~operon.functions.FunctionSample` objects
    carrying both sensor values (for the model) and solver-grid values.
    """
    if truth is None:
        truth = solve(problem, a.dense_values, v.dense_values, grid)
    tt, xx = np.meshgrid(grid.t, grid.x, indexing="ij")
    y = np.column_stack([xx.ravel(), tt.ravel()])
    functions = [np.broadcast_to(u.values, (y.shape[0], u.values.size)),
                 np.broadcast_to(v.values, (y.shape[0], v.values.size))]
    pred = predict_arrays(model, functions, y).reshape(grid.nt, grid.nx)
    return FieldEvaluation(SolutionField(grid, pred), truth, np.abs(pred - truth.values))


def write_grid_text(path, values):
    """Write ``nx nt`` then one line of ``nx`` values per time level."""
    nt, nx = values.shape
    with open(path, "w") as fh:
        fh.write(f"{nx} {nt}\n")
        for row in values:
            fh.write(" ".join(repr(float(x)) for x in row))
            fh.write("\n")


def read_grid_text(path):
    with open(path) as fh:
        nx, nt = (int(tok) for tok in fh.readline().split())
        values = np.array([float(tok) for tok in fh.read().split()])
    return values.reshape(nt, nx)


def write_pgm(path, values):
    """8-bit binary PGM heatmap, min to black and max to white; row 0 is t = 0."""
    nt, nx = values.shape
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        pixels = np.rint(255.0 * (values - lo) / (hi - lo)).astype(np.uint8)
    else:
        pixels = np.zeros(values.shape, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {nt}\n255\n".encode())
        fh.write(pixels.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    magic, dims, maxval, body = data.split(b"\n", 3)
    if magic != b"P5":
        raise ParameterError("not a binary PGM file")
    nx, nt = (int(tok) for tok in dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(nt, nx)


@dataclass
class CompareConfig:
    n_functions: int = 1000
    queries: int = 100
    train_fraction: float = 0.9
    master_seed: int = 0
    n_seeds: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)
    reference: ModelSpec = field(default_factory=ModelSpec)
    generation: GenerationParams = field(default_factory=GenerationParams)
    tolerance: float = 0.05

    def to_dict(self):
        d = asdict(self)
        d["reference"] = self.reference.to_dict()
        return d


_SHARED = {}


def _init_worker(dataset, data_split):
    _SHARED["dataset"] = dataset
    _SHARED["split"] = data_split


def _run_one(args):
    spec, train_config, out_dir, name = args
    model = build(spec)
    try:
        metrics = train(model, _SHARED["dataset"], _SHARED["split"], train_config, out_dir, name)
    except OperonError as exc:
        log.error("run %s failed: %s", name, exc)
        return name, None, str(exc)
    return name, metrics, None


def _median(values):
    return float(np.median(values)) if values else None


def compare(problem, config=None, dataset=None, out_dir=None, jobs=1):
    """Train all three kinds on one split, ``n_seeds`` times each, and tabulate best MSEs.

    Model specs are matched to ``config.reference`` by parameter count.
    Returns ``(report, metrics)`` where ``metrics[kind]`` lists one
    :class:`RunMetrics` per seed (``None`` for failed runs).
    """
    config = config or CompareConfig()
    if dataset is None:
        dataset = generate(problem, config.n_functions, config.queries, config.master_seed,
                           config.generation, jobs=jobs)
    elif dataset.problem != problem:
        raise ParameterError(f"dataset is for {dataset.problem}, not {problem}")
    data_split = split(dataset, config.train_fraction, config.master_seed)
    reference = ModelSpec.from_dict({**config.reference.to_dict(), "sensor_count": dataset.m,
                                     "n_branches": 2})
    specs = {kind: match_parameter_counts(reference, kind, config.tolerance) for kind in KINDS}

    tasks = []
    for r in range(config.n_seeds):
        seed = config.train.seed + r
        run_config = TrainConfig(**{**asdict(config.train), "seed": seed})
        for kind in KINDS:
            spec = ModelSpec.from_dict({**specs[kind].to_dict(), "seed": seed})
            tasks.append((spec, run_config, out_dir, f"{kind}_seed{r}"))

    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker,
                                 initargs=(dataset, data_split)) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        _init_worker(dataset, data_split)
        results = []
        for task in tasks:
            log.info("training %s", task[3])
            results.append(_run_one(task))
        _SHARED.clear()

    by_name = {name: (metrics, error) for name, metrics, error in results}
    metrics_by_kind = {kind: [] for kind in KINDS}
    models = {}
    complete = True
    for kind in KINDS:
        runs = []
        for r in range(config.n_seeds):
            metrics, error = by_name[f"{kind}_seed{r}"]
            metrics_by_kind[kind].append(metrics)
            if metrics is None:
                complete = False
                runs.append({"seed": config.train.seed + r, "error": error})
                continue
            runs.append({
                "seed": config.train.seed + r,
                "best_train_mse": metrics.best_train_mse,
                "best_train_epoch": metrics.best_train_epoch,
                "best_test_mse": metrics.best_test_mse,
                "best_test_epoch": metrics.best_test_epoch,
            })
        ok = [run for run in runs if "error" not in run]
        models[kind] = {
            "spec": specs[kind].to_dict(),
            "spec_digest": specs[kind].digest(),
            "param_count": build(specs[kind]).parameter_count,
            "runs": runs,
            "median_best_train_mse": _median([run["best_train_mse"] for run in ok]),
            "median_best_test_mse": _median([run["best_test_mse"] for run in ok]),
        }

    ratios = {}
    ref = models["edeeponet"]
    for kind in ("fnn", "deeponet"):
        base = models[kind]
        entry = {}
        for key in ("train", "test"):
            b, e = base[f"median_best_{key}_mse"], ref[f"median_best_{key}_mse"]
            entry[key] = b / e if b is not None and e else None
            entry[f"per_seed_{key}"] = [
                rb[f"best_{key}_mse"] / re[f"best_{key}_mse"]
                if "error" not in rb and "error" not in re else None
                for rb, re in zip(base["runs"], ref["runs"])
            ]
        ratios[kind] = entry

    report = {
        "problem": problem,
        "complete": complete,
        "dataset": {"n_functions": dataset.n_functions, "queries": dataset.queries,
                    "m": dataset.m, "master_seed": dataset.master_seed,
                    "sha256": dataset.digest()},
        "config": config.to_dict(),
        "models": models,
        "improvement": ratios,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report, metrics_by_kind


def format_report(report):
    """Aligned text table of median best MSEs and improvement ratios."""
    lines = [f"{'model':<10} {'params':>8} {'train MSE':>12} {'test MSE':>12} "
             f"{'train improv':>13} {'test improv':>12}"]
    for kind in KINDS:
        info = report["models"][kind]
        imp = report["improvement"].get(kind)
        tr = f"{imp['train']:.2f}x" if imp and imp["train"] else "--"
        te = f"{imp['test']:.2f}x" if imp and imp["test"] else "--"
        lines.append(
            f"{kind:<10} {info['param_count']:>8} {_fmt(info['median_best_train_mse']):>12} "
            f"{_fmt(info['median_best_test_mse']):>12} {tr:>13} {te:>12}"
        )
    if not report["complete"]:
        lines.append("INCOMPLETE: at least one run failed")
    return "\n".join(lines)


def _fmt(x):
    return "--" if x is None else f"{x:.3e}"


def draw_evaluation_inputs(problem, params, seed):
    """A fresh ``(u, v, a)`` triple for field evaluation."""
    return draw_inputs(problem, params, np.random.SeedSequence(seed, spawn_key=(2 ** 31,)))
