import json

import numpy as np
import pytest

from operon.dataset import GenerationParams, generate, solve, split
from operon.exceptions import DivergenceError, ParameterError
from operon.functions import FunctionSample
from operon.models import ModelSpec, build
from operon.solvers import SolverGrid, sample_query
from operon.training import (
    CompareConfig,
    TrainConfig,
    compare,
    draw_evaluation_inputs,
    evaluate_field,
    evaluate_mse,
    fit_arrays,
    format_report,
    mse,
    read_curves,
    read_grid_text,
    read_pgm,
    split_arrays,
    train,
    write_grid_text,
    write_pgm,
)

SMALL = GenerationParams(m=11, grid=SolverGrid(21, 11))


def small_spec(kind, seed=0):
    return ModelSpec(kind=kind, sensor_count=11, branch_widths=(8, 8), trunk_widths=(8, 8),
                     latent_dim=8, fnn_widths=(8, 8, 8), seed=seed)


@pytest.fixture(scope="module")
def dataset():
    return generate("diffusion", 20, 10, master_seed=0, params=SMALL)


def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([1.0, 3.0], [0.0, 0.0]) == 5.0
    assert mse([0.5], [-0.5]) == 1.0
    with pytest.raises(ParameterError):
        mse([], [])
    with pytest.raises(ParameterError):
        mse([1.0], [1.0, 2.0])


def test_default_batch_size():
    assert TrainConfig().resolved_batch_size(90_000) == 1000
    assert TrainConfig().resolved_batch_size(500) == 50
    assert TrainConfig().resolved_batch_size(5) == 1
    assert TrainConfig(batch_size=7).resolved_batch_size(90_000) == 7


@pytest.mark.parametrize("kw", [dict(lr=-1.0), dict(epochs=0), dict(batch_size=0)])
def test_invalid_train_config(kw):
    with pytest.raises(ParameterError):
        TrainConfig(**kw)


@pytest.mark.parametrize("kind", ["fnn", "deeponet", "edeeponet"])
def test_zero_learning_rate_freezes_parameters(kind, dataset):
    model = build(small_spec(kind))
    before = [p.copy() for p in model.parameters()]
    sp = split(dataset, 0.5, 0)
    metrics = train(model, dataset, sp, TrainConfig(lr=0.0, epochs=3))
    for p, q in zip(before, model.parameters()):
        np.testing.assert_array_equal(p, q)
    assert len(set(metrics.train_mse)) == 1
    assert len(set(metrics.test_mse)) == 1


def test_single_record_is_memorized():
    rng = np.random.default_rng(0)
    functions = [rng.normal(size=(1, 11)), rng.normal(size=(1, 11))]
    y, s = rng.uniform(size=(1, 2)), np.array([0.3])
    model = build(small_spec("edeeponet"))
    metrics, _ = fit_arrays(model, (functions, y, s), None,
                            TrainConfig(lr=1e-3, epochs=500, batch_size=1, keep_best=False))
    assert metrics.train_mse[-1] < 1e-6


@pytest.mark.parametrize("kind", ["fnn", "edeeponet"])
def test_training_reduces_loss(kind, dataset):
    model = build(small_spec(kind))
    metrics = train(model, dataset, split(dataset, 0.8, 0), TrainConfig(lr=1e-3, epochs=30))
    assert metrics.train_mse[-1] < metrics.train_mse[0]


def test_training_is_deterministic(dataset, tmp_path):
    sp = split(dataset, 0.8, 0)
    cfg = TrainConfig(lr=1e-3, epochs=4, seed=3)
    for sub in ("a", "b"):
        train(build(small_spec("deeponet", seed=3)), dataset, sp, cfg, tmp_path / sub)
    assert (tmp_path / "a" / "run_curves.csv").read_bytes() == \
        (tmp_path / "b" / "run_curves.csv").read_bytes()
    assert (tmp_path / "a" / "run.bin").read_bytes() == (tmp_path / "b" / "run.bin").read_bytes()


def test_curves_csv_and_best_values(dataset, tmp_path):
    sp = split(dataset, 0.8, 0)
    metrics = train(build(small_spec("edeeponet")), dataset, sp,
                    TrainConfig(lr=1e-3, epochs=6, eval_every=2), tmp_path)
    rows = read_curves(tmp_path / "run_curves.csv")
    assert [r[0] for r in rows] == [2, 4, 6]
    assert [r[2] for r in rows] == metrics.test_mse
    assert metrics.best_test_mse == min(r[2] for r in rows)
    assert metrics.best_train_mse == min(metrics.train_mse)
    assert len(metrics.epoch_seconds) == 6


def test_best_state_is_restored(dataset):
    sp = split(dataset, 0.8, 0)
    model = build(small_spec("edeeponet"))
    metrics = train(model, dataset, sp, TrainConfig(lr=1e-2, epochs=8))
    test = split_arrays(dataset, sp.records("test"))
    assert evaluate_mse(model, *test) == metrics.best_test_mse


def test_divergence_is_reported():
    rng = np.random.default_rng(0)
    functions = [rng.normal(size=(4, 11)), rng.normal(size=(4, 11))]
    s = np.array([1.0, np.inf, 0.0, 0.0])
    with pytest.raises(DivergenceError) as info:
        fit_arrays(build(small_spec("fnn")), (functions, rng.uniform(size=(4, 2)), s), None,
                   TrainConfig(epochs=1, batch_size=4))
    assert info.value.epoch == 1 and info.value.batch == 0


def test_model_and_dataset_mismatch_rejected(dataset):
    spec = ModelSpec(kind="edeeponet", sensor_count=12, branch_widths=(4,), trunk_widths=(4,),
                     latent_dim=4)
    with pytest.raises(ParameterError):
        train(build(spec), dataset, split(dataset, 0.5, 0), TrainConfig(epochs=1))


class _Oracle:
    """Stands in for a model and returns the exact solution at each query."""

    def __init__(self, field):
        self.field = field

    def predict(self, functions, y):
        return sample_query(self.field, y[:, 0], y[:, 1])


def test_field_evaluation_of_exact_predictor_is_zero():
    u, v, a = draw_evaluation_inputs("diffusion", SMALL, 0)
    truth = solve("diffusion", a.dense_values, v.dense_values, SMALL.grid)
    result = evaluate_field(_Oracle(truth), "diffusion", u, v, a, SMALL.grid)
    assert result.max_error == 0.0 and result.mean_error == 0.0


def test_field_evaluation_shapes_and_initial_slice():
    u, v, a = draw_evaluation_inputs("advdiff", SMALL, 1)
    model = build(small_spec("edeeponet"))
    result = evaluate_field(model, "advdiff", u, v, a, SMALL.grid)
    grid = SMALL.grid
    assert result.prediction.values.shape == result.truth.values.shape == (grid.nt, grid.nx)
    np.testing.assert_allclose(result.truth.values[0], v.dense_values, atol=1e-14)
    assert result.max_error >= result.mean_error >= 0.0
    again = evaluate_field(model, "advdiff", u, v, a, grid)
    np.testing.assert_array_equal(again.error, result.error)


def test_field_evaluation_constant_initial_condition():
    grid = SMALL.grid
    u = FunctionSample(np.zeros(11), np.zeros(grid.nx))
    v = FunctionSample(np.full(11, 0.25), np.full(grid.nx, 0.25))
    a = FunctionSample(np.full(11, 0.1), np.full(grid.nx, 0.1))
    model = build(small_spec("edeeponet"))
    result = evaluate_field(model, "diffusion", u, v, a, grid)
    np.testing.assert_allclose(result.truth.values, 0.25, atol=1e-14)


def test_grid_text_and_pgm_round_trip(tmp_path):
    values = np.random.default_rng(0).normal(size=(4, 6))
    write_grid_text(tmp_path / "g.txt", values)
    np.testing.assert_array_equal(read_grid_text(tmp_path / "g.txt"), values)
    assert (tmp_path / "g.txt").read_text().splitlines()[0] == "6 4"
    write_pgm(tmp_path / "g.pgm", values)
    pixels = read_pgm(tmp_path / "g.pgm")
    assert pixels.shape == (4, 6)
    assert pixels.min() == 0 and pixels.max() == 255
    assert pixels.flat[np.argmax(values)] == 255
    write_pgm(tmp_path / "flat.pgm", np.ones((2, 3)))
    assert not read_pgm(tmp_path / "flat.pgm").any()


@pytest.fixture(scope="module")
def small_compare(tmp_path_factory):
    out = tmp_path_factory.mktemp("compare")
    config = CompareConfig(n_functions=12, queries=8, n_seeds=2, generation=SMALL,
                           train=TrainConfig(lr=1e-3, epochs=3),
                           reference=ModelSpec(sensor_count=11, branch_widths=(8, 8),
                                               trunk_widths=(8, 8), latent_dim=8))
    report, metrics = compare("diffusion", config, out_dir=out)
    return out, report, metrics


def test_compare_report_structure(small_compare):
    out, report, metrics = small_compare
    assert report["complete"]
    assert set(report["models"]) == {"fnn", "deeponet", "edeeponet"}
    counts = [info["param_count"] for info in report["models"].values()]
    ref = report["models"]["edeeponet"]["param_count"]
    assert all(abs(c - ref) <= 0.05 * ref for c in counts)
    for kind, info in report["models"].items():
        assert len(info["runs"]) == 2 and len(metrics[kind]) == 2
        for r in range(2):
            assert (out / f"{kind}_seed{r}_curves.csv").exists()
            assert (out / f"{kind}_seed{r}.bin").exists()
    assert json.loads((out / "report.json").read_text()) == json.loads(json.dumps(report))
    assert "edeeponet" in format_report(report)


def test_compare_ratios_consistent_with_medians(small_compare):
    _, report, _ = small_compare
    models = report["models"]
    for kind in ("fnn", "deeponet"):
        for key in ("train", "test"):
            expected = models[kind][f"median_best_{key}_mse"] / models["edeeponet"][f"median_best_{key}_mse"]
            assert report["improvement"][kind][key] == pytest.approx(expected, rel=1e-12)
            values = [r[f"best_{key}_mse"] for r in models[kind]["runs"]]
            assert models[kind][f"median_best_{key}_mse"] == pytest.approx(np.median(values), rel=1e-12)


def test_compare_best_values_match_curves(small_compare):
    out, report, _ = small_compare
    for kind, info in report["models"].items():
        for r, run in enumerate(info["runs"]):
            rows = read_curves(out / f"{kind}_seed{r}_curves.csv")
            assert run["best_train_mse"] == min(row[1] for row in rows)
            assert run["best_test_mse"] == min(row[2] for row in rows)
