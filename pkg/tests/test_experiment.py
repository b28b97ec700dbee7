"""Tests for the Monte Carlo runner, aggregation, rate fits and output files."""
import math

import numpy as np
import pandas as pd
import pytest

from roughest.config import ExperimentConfig
from roughest.errors import ConfigError, DomainError, RateFitError
from roughest.estimators import EstimatorConfig
from roughest.experiment import (
    RESULT_COLUMNS,
    ExperimentResults,
    aggregate,
    emit,
    fit_rate,
    fit_rates,
    load_results,
    run,
    theoretical_slope,
)


def piecewise_config(out_dir, **overrides):
    args = dict(model="piecewise", H=(0.3,), eta=(1.0,), N=(10, 11, 12), N_vol=6,
                replications=3, base_seed=5, output_dir=str(out_dir))
    args.update(overrides)
    return ExperimentConfig(**args)


def synthetic_aggregates(N, rmse, H=0.3):
    N = np.asarray(N)
    return pd.DataFrame({"model": "general", "H": H, "eta": 1.0, "N": N,
                         "rmse_H": rmse, "rmse_eta": rmse})


class TestRateFit:
    def test_theoretical_slope(self):
        assert theoretical_slope(0.3) == pytest.approx(-0.3125)

    def test_exact_power_law(self):
        N = np.arange(12, 17)
        fit = fit_rate(synthetic_aggregates(N, 0.7 * 2.0 ** (N * theoretical_slope(0.3))))
        assert fit.slope == pytest.approx(-0.3125, abs=1e-10)
        assert fit.stderr == pytest.approx(0.0, abs=1e-10)

    def test_noisy_power_law(self):
        rng = np.random.default_rng(3)
        N = np.arange(4, 25)
        rmse = 2.0 ** (N * theoretical_slope(0.1)) * (1 + 0.05 * rng.standard_normal(len(N)))
        fit = fit_rate(synthetic_aggregates(N, rmse, H=0.1))
        assert abs(fit.slope - theoretical_slope(0.1)) < 3 * fit.stderr

    @pytest.mark.parametrize("power", [1.0, 0.5, 2.0])
    def test_log_correction(self, power):
        N = np.arange(10, 16)
        rmse = 2.0 ** (N * theoretical_slope(0.2)) * (N * math.log(2)) ** power
        fit = fit_rate(synthetic_aggregates(N, rmse, H=0.2), quantity="eta", log_correction=True)
        assert fit.slope == pytest.approx(theoretical_slope(0.2), abs=1e-8)
        assert fit.log_coefficient == pytest.approx(power, abs=1e-8)

    def test_log_correction_needs_four_sizes(self):
        with pytest.raises(RateFitError):
            fit_rate(synthetic_aggregates([12, 13, 14], [0.3, 0.2, 0.1]), log_correction=True)

    def test_plain_fit_has_no_log_coefficient(self):
        N = np.arange(12, 17)
        assert fit_rate(synthetic_aggregates(N, 2.0 ** -N)).log_coefficient is None

    def test_too_few_sizes(self):
        with pytest.raises(RateFitError):
            fit_rate(synthetic_aggregates([12, 13], [0.1, 0.05]))

    def test_constant_rmse(self):
        with pytest.raises(RateFitError):
            fit_rate(synthetic_aggregates([12, 13, 14], [0.1, 0.1, 0.1]))

    def test_several_cells(self):
        frame = pd.concat([synthetic_aggregates([1, 2, 3], [0.3, 0.2, 0.1], H=h) for h in (0.1, 0.2)])
        with pytest.raises(RateFitError):
            fit_rate(frame)
        fits = fit_rates(frame)
        assert fits["H"].tolist() == [0.1, 0.2]
        assert fits["theoretical"].tolist() == [theoretical_slope(0.1), theoretical_slope(0.2)]

    def test_unknown_quantity(self):
        with pytest.raises(DomainError):
            fit_rate(synthetic_aggregates([1, 2, 3], [0.3, 0.2, 0.1]), quantity="sigma")


class TestAggregate:
    @pytest.fixture
    def rows(self):
        return pd.DataFrame({
            "model": ["general"] * 4, "H": [0.3] * 4, "eta": [1.0] * 4, "N": [10, 10, 10, 11],
            "rep": [0, 1, 2, 0], "H_hat": [0.4, 0.2, 0.33, 0.3], "eta_hat": [1.5, 0.5, 1.0, 1.0],
            "J_star": [3] * 4, "flags": [""] * 4, "wall_ms": [1.0] * 4,
        })

    def test_statistics(self, rows):
        agg = aggregate(rows)
        first = agg.iloc[0]
        assert list(agg["N"]) == [10, 11]
        assert first["count"] == 3
        assert first["bias_H"] == pytest.approx(0.01)
        assert first["rmse_H"] == pytest.approx(math.sqrt((0.01 + 0.01 + 0.0009) / 3))
        assert first["mae_H"] == pytest.approx(0.1)
        assert first["rmse_eta"] == pytest.approx(math.sqrt(0.5 / 3))
        assert agg.iloc[1]["rmse_H"] == pytest.approx(0.0, abs=1e-15)

    def test_order_insensitive(self, rows):
        shuffled = rows.sample(frac=1.0, random_state=7)
        pd.testing.assert_frame_equal(aggregate(shuffled), aggregate(rows))

    def test_empty(self):
        assert aggregate(pd.DataFrame(columns=RESULT_COLUMNS)).empty


class TestRun:
    def test_single_cell(self, tmp_path):
        results = run(piecewise_config(tmp_path, N=(10,), replications=1))
        assert len(results) == 1
        assert list(results.rows.columns) == RESULT_COLUMNS

    def test_rows_and_files(self, tmp_path):
        config = piecewise_config(tmp_path)
        results = run(config)
        assert len(results) == len(config.H) * len(config.eta) * len(config.N) * config.replications
        assert (tmp_path / "results.csv").exists()
        assert not (tmp_path / "results.partial.csv").exists()
        assert results.rows["H_hat"].between(0.05, 0.7).all()
        assert results.rows["eta_hat"].isna().all()

    def test_deterministic(self, tmp_path):
        first = run(piecewise_config(tmp_path / "a")).rows.drop(columns="wall_ms")
        second = run(piecewise_config(tmp_path / "b")).rows.drop(columns="wall_ms")
        pd.testing.assert_frame_equal(first, second)

    def test_seeds_follow_replication(self, tmp_path):
        a = run(piecewise_config(tmp_path / "a", base_seed=0, replications=2)).rows
        b = run(piecewise_config(tmp_path / "b", base_seed=1, replications=1)).rows
        # replication 1 of base seed 0 and replication 0 of base seed 1 share seed 1
        assert a[a["rep"] == 1]["H_hat"].tolist() == b["H_hat"].tolist()

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(ConfigError):
            run(piecewise_config(blocker / "out"))

    def test_general_model(self, tmp_path, small_table):
        config = ExperimentConfig(
            model="general", H=(0.3,), eta=(1.0,), N=(8, 9), oversample=2, replications=2,
            output_dir=str(tmp_path), estimator=EstimatorConfig(h_minus=0.25, h_plus=0.35, m_opt=1),
        )
        results = run(config, table=small_table)
        assert len(results) == 4
        assert results.rows["H_hat"].between(0.25, 0.35).all()
        assert results.rows["eta_hat"].notna().all()


class TestEmit:
    @pytest.fixture(scope="class")
    def results(self, tmp_path_factory):
        return run(piecewise_config(tmp_path_factory.mktemp("run"), H=(0.2, 0.3)))

    def test_files(self, results, tmp_path):
        written = emit(results, tmp_path)
        assert {p.name for p in written} == {"results.csv", "aggregates.csv", "rmse_vs_n.svg"}
        raw = (tmp_path / "results.csv").read_bytes()
        assert raw.startswith(b"model,H,eta,N,rep,H_hat,eta_hat,J_star,flags,wall_ms\n")
        assert b"\r" not in raw

    def test_csv_only(self, results, tmp_path):
        written = emit(results, tmp_path, formats={"csv"})
        assert not (tmp_path / "rmse_vs_n.svg").exists()
        assert len(written) == 2

    def test_round_trip(self, results, tmp_path):
        emit(results, tmp_path, formats={"csv"})
        pd.testing.assert_frame_equal(load_results(tmp_path).rows, results.rows)

    def test_svg_series(self, results, tmp_path):
        emit(results, tmp_path, formats={"svg"})
        svg = (tmp_path / "rmse_vs_n.svg").read_text()
        assert svg.count('id="series-') == 2
        assert svg.count('id="reference-') == 2

    def test_empty(self, tmp_path):
        with pytest.raises(DomainError):
            emit(ExperimentResults(rows=pd.DataFrame(columns=RESULT_COLUMNS)), tmp_path)

    def test_unknown_format(self, results, tmp_path):
        with pytest.raises(DomainError):
            emit(results, tmp_path, formats={"png"})

    def test_rate_fits_attached(self, results):
        fits = results.rate_fits
        assert set(fits.columns) >= {"slope", "stderr", "theoretical"}
