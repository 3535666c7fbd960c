"""Training loop, error metrics and the ablation report."""

import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from floodgtn.data import DataError
from floodgtn.models import ModelConfig, build_model
from floodgtn.training import (
    REPORT_COLUMNS,
    TIMED_REPORT_COLUMNS,
    EvalReport,
    EvaluationError,
    ReportRow,
    TrainConfig,
    TrainingDivergence,
    arm_config,
    evaluate,
    forecast_errors,
    run_ablation,
    time_models,
    train,
)

SMALL = dict(hidden_dim=8, n_heads=2, dropout=0.0)


def naive_errors(y_hat, y_true):
    total_abs = total_sq = 0.0
    n = 0
    for i in range(y_hat.shape[0]):
        for j in range(y_hat.shape[1]):
            for m in range(y_hat.shape[2]):
                d = y_hat[i, j, m] - y_true[i, j, m]
                total_abs += abs(d)
                total_sq += d * d
                n += 1
    return total_abs / n, math.sqrt(total_sq / n)


# -- metrics ----------------------------------------------------------------------------

def test_metric_worked_examples():
    y = np.arange(24.0).reshape(2, 3, 4)
    m = forecast_errors(y, y)
    assert m.mae == 0.0 and m.rmse == 0.0
    m = forecast_errors(y + 0.1, y)
    assert m.mae == pytest.approx(0.1, abs=1e-12) and m.rmse == pytest.approx(0.1, abs=1e-12)
    m = forecast_errors(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1), np.array([1.5, 2.0, 2.5]).reshape(1, 3, 1))
    assert m.mae == pytest.approx(1 / 3, abs=1e-12)
    assert m.rmse == pytest.approx(math.sqrt(1 / 6), abs=1e-12)
    assert np.allclose(m.mae_by_step, [0.5, 0.0, 0.5])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_metrics_match_naive_loop(n, k, m, seed):
    rng = np.random.default_rng(seed)
    y_hat, y_true = rng.normal(size=(n, k, m)) * 3, rng.normal(size=(n, k, m)) * 3
    mae, rmse = naive_errors(y_hat, y_true)
    got = forecast_errors(y_hat, y_true)
    assert abs(got.mae - mae) <= 1e-12 and abs(got.rmse - rmse) <= 1e-12
    assert got.mae <= got.rmse + 1e-12
    assert np.allclose(got.mae_by_step.mean(), got.mae)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 2, 2), elements=st.floats(-1e3, 1e3)))
def test_metrics_nonnegative_and_ordered(err):
    m = forecast_errors(err, np.zeros_like(err))
    assert 0.0 <= m.mae <= m.rmse * (1 + 1e-12)
    assert m.rmse <= np.abs(err).max() + 1e-9


def test_metric_errors():
    with pytest.raises(EvaluationError, match="empty test set"):
        forecast_errors(np.zeros((0, 24, 4)), np.zeros((0, 24, 4)))
    with pytest.raises(EvaluationError, match="does not match"):
        forecast_errors(np.zeros((1, 24, 4)), np.zeros((1, 24, 3)))


def test_evaluate_rejects_empty_set(small_windows):
    model = build_model(ModelConfig("persistence"), small_windows.layout)
    with pytest.raises(EvaluationError, match="empty test set"):
        evaluate(model, small_windows[:0])


# -- training -------------------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError, match="lr"):
        TrainConfig(lr=0)
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="precision"):
        TrainConfig(precision="float16")
    with pytest.raises(ValueError, match="unknown train config"):
        TrainConfig.from_dict({"learning_rate": 0.1})
    assert TrainConfig.from_dict({"lr": "1e-3", "epochs": "4"}) == TrainConfig(lr=1e-3, epochs=4)
    assert TrainConfig.from_dict(TrainConfig(seed=5).to_dict()) == TrainConfig(seed=5)


def test_loss_history_is_deterministic(small_windows):
    cfg = TrainConfig(epochs=3, batch_size=16, seed=7)
    runs = []
    for _ in range(2):
        model = build_model(ModelConfig("rnn", hidden_dim=8, dropout=0.2), small_windows.layout)
        result = train(model, small_windows, cfg)
        runs.append((result.losses, model.predict(small_windows[:5])))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1].tobytes() == runs[1][1].tobytes()
    assert len(runs[0][0]) == 3


def test_training_reduces_loss(small_windows):
    model = build_model(ModelConfig("gcn", **SMALL), small_windows.layout)
    result = train(model, small_windows, TrainConfig(epochs=4, batch_size=16, lr=3e-3))
    assert result.history[-1].train_loss < result.history[0].train_loss
    assert 1 <= result.best_epoch <= 4
    assert all(math.isfinite(r.val_mae) for r in result.history)


def test_divergence_is_reported(small_windows):
    model = build_model(ModelConfig("gcn", **SMALL), small_windows.layout)
    with pytest.raises(TrainingDivergence, match=r"divergence at epoch 1 \(lr=1000\)"):
        train(model, small_windows[:64], TrainConfig(epochs=3, batch_size=8, lr=1e3))


def test_empty_training_set_rejected(small_windows):
    model = build_model(ModelConfig("rnn", **SMALL), small_windows.layout)
    with pytest.raises(DataError, match="empty"):
        train(model, small_windows[:0], TrainConfig(epochs=1))


@pytest.mark.parametrize("arch", ["rnn", "gcn", "transformer"])
def test_overfits_a_single_window(arch, small_windows):
    model = build_model(ModelConfig(arch, hidden_dim=16, n_heads=2, dropout=0.0, seed=1), small_windows.layout)
    one = small_windows[100:101]
    result = train(model, one, TrainConfig(epochs=500, batch_size=1, lr=3e-3, patience=500))
    assert result.history[-1].train_loss < 1e-3


def test_samples_per_epoch_limits_batches(small_windows):
    model = build_model(ModelConfig("gcn", **SMALL), small_windows.layout)
    result = train(model, small_windows, TrainConfig(epochs=1, batch_size=10, samples_per_epoch=20))
    assert len(result.history) == 1


# -- ablation report ------------------------------------------------------------------------

def test_report_rows_validate():
    with pytest.raises(EvaluationError, match="exceeds RMSE"):
        ReportRow("rnn", "with", 0.3, 0.2)


def test_report_formats():
    report = EvalReport()
    report.add(ReportRow("rnn", "without", 0.2, 0.3, (0.1, 0.3), 120.0, 0.5))
    report.add(ReportRow("rnn", "with", 0.1, 0.15, (0.05, 0.15), 60.0, 0.25))
    report.add(ReportRow("gcn", "with", 0.12, 0.2))
    assert [(r.model, r.arm) for r in report.rows] == [("gcn", "with"), ("rnn", "with"), ("rnn", "without")]
    table = report.table().splitlines()
    assert table[0].split() == ["Model", "MAE", "w/", "FPC", "RMSE", "w/", "FPC", "MAE", "w/o", "FPC", "RMSE", "w/o", "FPC"]
    assert table[2].split() == ["gcn", "0.1200", "0.2000", "-", "-"]
    assert table[3].split() == ["rnn", "0.1000", "0.1500", "0.2000", "0.3000"]
    rows = list(csv.reader(io.StringIO(report.csv_text())))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert rows[2] == ["rnn", "with", "0.1", "0.15"]
    timed = list(csv.reader(io.StringIO(report.timed_csv_text())))
    assert tuple(timed[0]) == TIMED_REPORT_COLUMNS
    assert timed[3] == ["rnn", "without", "0.2", "0.3", "120.000000", "0.500000"]
    assert "2.000" in report.timing_table()          # minutes
    steps = list(csv.reader(io.StringIO(report.steps_csv_text())))
    assert steps[1:] == [["rnn", "with", "1", "0.05"], ["rnn", "with", "2", "0.15"],
                         ["rnn", "without", "1", "0.1"], ["rnn", "without", "2", "0.3"]]


def test_arm_config():
    base = ModelConfig("rnn")
    assert arm_config(base, "without").use_future_covariates is False
    assert arm_config(base, "with").use_future_covariates is True
    with pytest.raises(ValueError):
        arm_config(base, "both")


def test_run_ablation_structure(small_windows):
    train_set, test_set = small_windows[:300], small_windows[400:460]
    configs = [ModelConfig("persistence"), ModelConfig("gcn", **SMALL)]
    seen = []
    report, trained = run_ablation(configs, train_set, test_set, TrainConfig(epochs=1, batch_size=32), seen.append)
    assert [(r.model, r.arm) for r in report.rows] == [
        ("gcn", "with"), ("gcn", "without"), ("persistence", "with"), ("persistence", "without")]
    assert len(seen) == 3                                 # persistence is scored once
    p_with, p_without = report.get("persistence", "with"), report.get("persistence", "without")
    assert (p_with.mae_ft, p_with.rmse_ft) == (p_without.mae_ft, p_without.rmse_ft)
    assert all(r.mae_ft <= r.rmse_ft for r in report.rows)
    assert report.get("gcn", "with").train_s > 0 and p_with.train_s == 0
    assert trained[("gcn", "with")].scaler is trained[("gcn", "without")].scaler
    assert not trained[("gcn", "without")].config.use_future_covariates


def test_time_models(small_windows):
    model = build_model(ModelConfig("persistence"), small_windows.layout)
    from floodgtn.data import fit_scaler
    model.scaler = fit_scaler(small_windows)
    [(name, train_s, predict_s)] = time_models({"persistence": model}, small_windows, {"persistence": 0.0})
    assert name == "persistence" and train_s == 0.0 and predict_s > 0.0
    with pytest.raises(EvaluationError, match="missing checkpoint"):
        time_models({"rnn": None}, small_windows)
