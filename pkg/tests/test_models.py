"""Forecaster math against independent oracles: naive loop re-implementations
of both forward passes and central finite differences for every gradient."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from boardcast.dataset import ScalerParams, WindowedDataset
from boardcast.errors import (
    SchemaMismatchError,
    TrainingFailure,
    ValidationError,
)
from boardcast.models import (
    DLinearConfig,
    FittedModel,
    NLinearConfig,
    TrainConfig,
    decompose,
    forward_dlinear,
    forward_nlinear,
    loss_and_grads,
    moving_average,
    persistence_baseline,
    predict,
    seasonal_baseline,
    seasonal_from_window,
    train,
)
from boardcast.timeutils import HOUR, utc


# -- oracles ------------------------------------------------------------------

def naive_moving_average(series, k):
    pad = (k - 1) // 2
    padded = [series[0]] * pad + list(series) + [series[-1]] * pad
    return [sum(padded[i : i + k]) / k for i in range(len(series))]


def naive_nlinear(window, params, center):
    d, L = window.shape
    total = float(params["b_out"][0])
    for c in range(d):
        u = 0.0
        if center:
            last = window[c, L - 1]
            for l in range(L):
                u += params["w"][c, l] * (window[c, l] - last)
            u += params["b"][c] + last
        else:
            for l in range(L):
                u += params["w"][c, l] * window[c, l]
            u += params["b"][c]
        total += params["v"][c] * u
    return total


def naive_dlinear(window, params, k):
    d, L = window.shape
    total = float(params["b_out"][0])
    for c in range(d):
        trend = naive_moving_average(list(window[c]), k)
        u = params["b"][c]
        for l in range(L):
            wt = params["w_trend"][0, l] if params["w_trend"].shape[0] == 1 else params["w_trend"][c, l]
            wr = params["w_res"][0, l] if params["w_res"].shape[0] == 1 else params["w_res"][c, l]
            u += wt * trend[l] + wr * (window[c, l] - trend[l])
        total += params["v"][c] * u
    return total


def random_params(rng, algorithm, d, L, shared=False):
    if algorithm == "nlinear":
        return {
            "w": rng.normal(0, 0.5, (d, L)),
            "b": rng.normal(0, 0.5, d),
            "v": rng.normal(0, 0.5, d),
            "b_out": rng.normal(0, 0.5, 1),
        }
    lag_shape = (1, L) if shared else (d, L)
    return {
        "w_trend": rng.normal(0, 0.5, lag_shape),
        "w_res": rng.normal(0, 0.5, lag_shape),
        "b": rng.normal(0, 0.5, d),
        "v": rng.normal(0, 0.5, d),
        "b_out": rng.normal(0, 0.5, 1),
    }


def make_model(algorithm, params, d, L, horizon=6, target=0, **cfg):
    config = (
        NLinearConfig(lag=L, channels=d, **cfg)
        if algorithm == "nlinear"
        else DLinearConfig(lag=L, channels=d, **cfg)
    )
    return FittedModel(
        algorithm=algorithm,
        config=config,
        horizon=horizon,
        columns=[f"c{i}" for i in range(d)],
        target_channel=target,
        params=params,
    )


def synthetic_windows(n, d, L, horizon=6, seed=0, noise=0.0, wstar=None):
    """Windows where y is an exact linear functional of the target channel."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 1.0, (n, d, L))
    if wstar is None:
        wstar = rng.normal(0.0, 0.4, L)
    y = X[:, 0, :] @ wstar
    if noise > 0:
        y = y + rng.normal(0.0, noise, n)
    start = utc(2022, 1, 1)
    return WindowedDataset(
        X=X,
        y=y,
        origin_ts=[start + i * HOUR for i in range(n)],
        lag=L,
        horizon=horizon,
        columns=[f"c{i}" for i in range(d)],
        target_column="c0",
    )


# -- moving average / decomposition -------------------------------------------

class TestMovingAverage:
    def test_constant_series(self):
        out = moving_average(np.full(10, 3.5), 5)
        assert np.allclose(out, 3.5, atol=1e-15)

    def test_hand_computed_values(self):
        out = moving_average(np.array([1.0, 2, 3, 4, 5]), 3)
        assert np.allclose(out, [4 / 3, 2, 3, 4, 14 / 3], atol=1e-12)

    def test_k1_identity(self):
        series = np.random.default_rng(0).normal(size=8)
        assert np.array_equal(moving_average(series, 1), series)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValidationError):
            moving_average(np.zeros(8), 4)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        for k in (1, 3, 5, 7):
            series = rng.normal(size=12)
            assert np.allclose(moving_average(series, k), naive_moving_average(series, k), atol=1e-12)


class TestDecompose:
    def test_identity_many_random_windows(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            window = rng.normal(size=(4, 12))
            trend, residual = decompose(window, 5)
            assert np.max(np.abs(trend + residual - window)) < 1e-12

    def test_k1_residual_zero(self):
        window = np.random.default_rng(3).normal(size=(3, 9))
        _, residual = decompose(window, 1)
        assert np.max(np.abs(residual)) == 0.0

    def test_linear_ramp_interior_residual_zero(self):
        # A straight line is its own k=3 moving average except at padded edges.
        window = np.arange(10.0)[None, :]
        _, residual = decompose(window, 3)
        assert np.allclose(residual[0, 1:-1], 0.0, atol=1e-12)
        assert residual[0, 0] != 0.0 and residual[0, -1] != 0.0


# -- forward passes ------------------------------------------------------------

class TestForwardNLinear:
    def test_persistence_collapse(self):
        d, L = 5, 24
        params = {"w": np.zeros((d, L)), "b": np.zeros(d), "v": np.zeros(d), "b_out": np.zeros(1)}
        params["v"][2] = 1.0
        model = make_model("nlinear", params, d, L, target=2, center_on_last=True)
        rng = np.random.default_rng(4)
        for _ in range(50):
            window = rng.normal(size=(d, L))
            assert forward_nlinear(window, model) == window[2, -1]

    def test_uncentered_bias_only(self):
        d, L = 3, 8
        params = {"w": np.zeros((d, L)), "b": np.zeros(d), "v": np.zeros(d), "b_out": np.zeros(1)}
        params["b"][1] = 1.0
        params["v"][1] = 1.0
        model = make_model("nlinear", params, d, L, center_on_last=False)
        assert forward_nlinear(np.random.default_rng(5).normal(size=(d, L)), model) == 1.0

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(6)
        for center in (True, False):
            d, L = 4, 10
            params = random_params(rng, "nlinear", d, L)
            model = make_model("nlinear", params, d, L, center_on_last=center)
            for _ in range(20):
                window = rng.normal(size=(d, L))
                expected = naive_nlinear(window, params, center)
                assert forward_nlinear(window, model) == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self):
        params = random_params(np.random.default_rng(0), "nlinear", 3, 8)
        model = make_model("nlinear", params, 3, 8)
        with pytest.raises(SchemaMismatchError):
            model.forward(np.zeros((4, 8)))


class TestForwardDLinear:
    def test_k1_equals_plain_linear(self):
        rng = np.random.default_rng(7)
        d, L = 4, 12
        dparams = random_params(rng, "dlinear", d, L)
        dmodel = make_model("dlinear", dparams, d, L, kernel_size=1)
        nparams = {
            "w": dparams["w_trend"].copy(),
            "b": dparams["b"].copy(),
            "v": dparams["v"].copy(),
            "b_out": dparams["b_out"].copy(),
        }
        nmodel = make_model("nlinear", nparams, d, L, center_on_last=False)
        for _ in range(50):
            window = rng.normal(size=(d, L))
            assert abs(forward_dlinear(window, dmodel) - forward_nlinear(window, nmodel)) < 1e-12

    def test_constant_window_closed_form(self):
        rng = np.random.default_rng(8)
        d, L, k = 3, 9, 3
        params = random_params(rng, "dlinear", d, L)
        model = make_model("dlinear", params, d, L, kernel_size=k)
        c = 2.5
        window = np.full((d, L), c)
        # Constant trend = c, zero residual: y = sum_c v_c (c * sum_l wt_cl + b_c) + b_out.
        expected = float(params["b_out"][0])
        for ch in range(d):
            expected += params["v"][ch] * (c * params["w_trend"][ch].sum() + params["b"][ch])
        assert forward_dlinear(window, model) == pytest.approx(expected, abs=1e-10)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(9)
        for shared in (False, True):
            d, L, k = 4, 10, 5
            params = random_params(rng, "dlinear", d, L, shared=shared)
            model = make_model("dlinear", params, d, L, kernel_size=k, shared_weights=shared)
            for _ in range(20):
                window = rng.normal(size=(d, L))
                expected = naive_dlinear(window, params, k)
                assert forward_dlinear(window, model) == pytest.approx(expected, abs=1e-12)


# -- gradients -------------------------------------------------------------------

def finite_difference_check(algorithm, config, params, X, y, loss="mse", delta=1.0, eps=1e-6):
    value, grads = loss_and_grads(algorithm, config, params, X, y, loss=loss, delta=delta)
    for name, grad in grads.items():
        flat_grad = grad.ravel()
        for idx in range(flat_grad.size):
            perturbed = {k: v.copy() for k, v in params.items()}
            perturbed[name].ravel()[idx] += eps
            up, _ = loss_and_grads(algorithm, config, perturbed, X, y, loss=loss, delta=delta)
            perturbed[name].ravel()[idx] -= 2 * eps
            down, _ = loss_and_grads(algorithm, config, perturbed, X, y, loss=loss, delta=delta)
            numeric = (up - down) / (2 * eps)
            analytic = flat_grad[idx]
            rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            assert rel < 1e-5, f"{algorithm} {name}[{idx}]: {analytic} vs {numeric}"


class TestGradients:
    def test_nlinear_gradients(self):
        rng = np.random.default_rng(10)
        for center in (True, False):
            d, L = 3, 6
            config = NLinearConfig(lag=L, channels=d, center_on_last=center)
            params = random_params(rng, "nlinear", d, L)
            X = rng.normal(size=(8, d, L))
            y = rng.normal(size=8)
            finite_difference_check("nlinear", config, params, X, y)

    def test_dlinear_gradients(self):
        rng = np.random.default_rng(11)
        for shared in (False, True):
            d, L, k = 3, 6, 3
            config = DLinearConfig(lag=L, channels=d, kernel_size=k, shared_weights=shared)
            params = random_params(rng, "dlinear", d, L, shared=shared)
            X = rng.normal(size=(8, d, L))
            y = rng.normal(size=8)
            finite_difference_check("dlinear", config, params, X, y)

    def test_huber_gradients(self):
        rng = np.random.default_rng(12)
        d, L = 2, 5
        config = NLinearConfig(lag=L, channels=d)
        params = random_params(rng, "nlinear", d, L)
        X = rng.normal(size=(10, d, L))
        y = rng.normal(size=10) * 3.0  # push some residuals past delta
        finite_difference_check("nlinear", config, params, X, y, loss="huber", delta=1.0)


# -- training ----------------------------------------------------------------------

class TestTraining:
    def test_recovers_exact_linear_function(self):
        wstar = np.array([0.4, -0.2, 0.1, 0.3, -0.5, 0.25])
        train_set = synthetic_windows(600, d=3, L=6, seed=13, wstar=wstar)
        val_set = synthetic_windows(150, d=3, L=6, seed=14, wstar=wstar)

        config = NLinearConfig(lag=6, channels=3)
        tc = TrainConfig(learning_rate=5e-3, batch_size=64, max_epochs=300, patience=300, seed=0)
        model = train(config, tc, train_set, val_set)
        assert model.history.best_val_loss < 1e-4

    def test_bitwise_determinism(self):
        train_set = synthetic_windows(200, d=2, L=5, seed=15)
        val_set = synthetic_windows(50, d=2, L=5, seed=16)
        tc = TrainConfig(learning_rate=1e-2, batch_size=32, max_epochs=20, patience=20, seed=9)
        a = train(NLinearConfig(5, 2), tc, train_set, val_set)
        b = train(NLinearConfig(5, 2), tc, train_set, val_set)
        for key in a.params:
            assert np.array_equal(a.params[key], b.params[key])
        assert a.history.val_loss == b.history.val_loss

    def test_patience_stops_after_plateau(self):
        train_set = synthetic_windows(100, d=2, L=5, seed=17)
        val_set = synthetic_windows(40, d=2, L=5, seed=18)
        # A learning rate this small cannot move the loss by even one ulp,
        # so epoch 1 stays the best and patience runs out.
        tc = TrainConfig(learning_rate=1e-30, batch_size=32, max_epochs=50, patience=5, seed=0)
        model = train(NLinearConfig(5, 2), tc, train_set, val_set)
        history = model.history
        assert history.best_epoch == 1
        assert len(history.val_loss) == 1 + 5
        assert history.stopped_reason == "early_stop"
        assert history.best_val_loss <= min(history.val_loss)

    def test_best_epoch_weights_returned(self):
        train_set = synthetic_windows(300, d=2, L=6, seed=19)
        val_set = synthetic_windows(80, d=2, L=6, seed=20)
        tc = TrainConfig(learning_rate=5e-3, batch_size=32, max_epochs=40, patience=40, seed=1)
        model = train(NLinearConfig(6, 2), tc, train_set, val_set)
        out = model.forward(val_set.X)
        val_mse = float(np.mean((out - val_set.y) ** 2))
        assert val_mse == pytest.approx(model.history.best_val_loss, rel=1e-9)

    def test_divergence_reported(self):
        train_set = synthetic_windows(50, d=2, L=4, seed=21)
        val_set = synthetic_windows(20, d=2, L=4, seed=22)
        train_set.y = train_set.y * 1e180  # loss overflows to inf on epoch 1
        val_set.y = val_set.y * 1e180
        with np.errstate(over="ignore"), pytest.raises(TrainingFailure) as err:
            train(NLinearConfig(4, 2), TrainConfig(max_epochs=5, patience=5), train_set, val_set)
        assert err.value.last_finite_epoch == 0

    def test_callback_can_stop(self):
        train_set = synthetic_windows(100, d=2, L=4, seed=23)
        val_set = synthetic_windows(30, d=2, L=4, seed=24)
        model = train(
            NLinearConfig(4, 2),
            TrainConfig(max_epochs=50, patience=50),
            train_set,
            val_set,
            epoch_callback=lambda epoch, tl, vl: epoch < 3,
        )
        assert len(model.history.val_loss) == 3
        assert model.history.stopped_reason == "callback"


# -- prediction and baselines -------------------------------------------------------

def minutes_scaler(columns, mean=600.0, std=150.0):
    means = np.zeros(len(columns))
    stds = np.ones(len(columns))
    means[0], stds[0] = mean, std
    return ScalerParams(columns=columns, mean=means, std=stds, exempt=frozenset())


class TestPredict:
    def _persistence_model(self, d=3, L=6):
        params = {"w": np.zeros((d, L)), "b": np.zeros(d), "v": np.zeros(d), "b_out": np.zeros(1)}
        params["v"][0] = 1.0
        model = make_model("nlinear", params, d, L, target=0, center_on_last=True)
        model.scaler = minutes_scaler(model.columns)
        return model

    def test_persistence_model_returns_last_value_in_minutes(self):
        model = self._persistence_model()
        window = np.abs(np.random.default_rng(25).normal(600, 100, size=(3, 6)))
        assert predict(model, window) == pytest.approx(window[0, -1], abs=1e-9)

    def test_negative_output_clamped(self):
        model = self._persistence_model()
        model.params["b_out"][0] = -100.0  # forces a deeply negative scaled output
        window = np.zeros((3, 6))
        assert predict(model, window) == 0.0

    def test_composition_matches_manual_steps(self):
        from boardcast.models import invert_target, scale_window

        rng = np.random.default_rng(26)
        d, L = 3, 6
        params = random_params(rng, "nlinear", d, L)
        model = make_model("nlinear", params, d, L)
        model.scaler = minutes_scaler(model.columns)
        window = np.abs(rng.normal(600, 100, size=(d, L)))
        scaled = scale_window(window, model.scaler, model.columns)
        manual = max(invert_target(float(model.forward(scaled)), model.scaler, "c0"), 0.0)
        assert predict(model, window) == pytest.approx(manual, abs=1e-9)


class TestBaselines:
    def test_constant_series(self):
        window = np.full((2, 24), 432.1)
        assert persistence_baseline(window, 0) == 432.1
        assert seasonal_from_window(window, 0, lag=24, horizon=6) == 432.1

    def test_seasonal_h24_returns_value_at_t(self):
        window = np.random.default_rng(27).normal(600, 50, size=(2, 24))
        assert seasonal_from_window(window, 0, lag=24, horizon=24) == window[0, -1]

    def test_seasonal_on_24h_sine_is_exact(self):
        hours = np.arange(200)
        target = 600 + 100 * np.sin(2 * np.pi * hours / 24)
        start = utc(2022, 1, 1)
        table = pd.DataFrame(
            {
                "hour_ts": pd.to_datetime([start + int(i) * HOUR for i in hours], utc=True),
                "boarding_time_minute_hourly": target,
            }
        )
        errors = []
        for t_idx in range(30, 170):
            t = start + t_idx * HOUR
            pred = seasonal_baseline(table, t, 24, "boarding_time_minute_hourly")
            truth = table["boarding_time_minute_hourly"].iloc[t_idx + 24]
            errors.append(abs(pred - truth))
        assert np.mean(errors) < 1e-9

    def test_seasonal_before_table_start_errors(self):
        table = pd.DataFrame(
            {
                "hour_ts": pd.to_datetime([utc(2022, 1, 2)], utc=True),
                "boarding_time_minute_hourly": [500.0],
            }
        )
        from boardcast.errors import DataGapError

        with pytest.raises(DataGapError):
            seasonal_baseline(table, utc(2022, 1, 1, 5), 6, "boarding_time_minute_hourly")


class TestModelFile:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(28)
        d, L = 4, 8
        params = random_params(rng, "dlinear", d, L)
        model = make_model("dlinear", params, d, L, kernel_size=3)
        model.scaler = minutes_scaler(model.columns)
        model.extreme_mean, model.extreme_sd = 622.0, 296.0
        model.train_start, model.train_end = utc(2022, 1, 1), utc(2022, 3, 1)
        path = tmp_path / "model.json"
        model.save(path)
        loaded = FittedModel.load(path)
        for key in params:
            assert np.array_equal(loaded.params[key], model.params[key])
        assert loaded.scaler == model.scaler
        assert (loaded.extreme_mean, loaded.extreme_sd) == (622.0, 296.0)
        windows = rng.normal(size=(10, d, L))
        assert np.array_equal(loaded.forward(windows), model.forward(windows))
