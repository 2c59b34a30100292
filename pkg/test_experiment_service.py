"""
实验服务测试：配置解析、扫描、结果输出
"""
import json
import math
import statistics

import numpy as np
import pytest

from services.experiment_service import (
    AGGREGATE_HEADER,
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    ResultRow,
    aggregate,
    emit_results,
    parse_config,
    run_sweep,
    serialize_config,
    trial_seed,
    with_overrides,
)

GOLDEN_ROWS = [
    ResultRow("capacity", "fpa", 2.0, 11, "capacity", 1.0, 0, 0.0, 1.25),
    ResultRow("capacity", "fpa", 2.0, 12, "capacity", 3.0, 0, 0.0, 2.5),
    ResultRow("capacity", "ma", 2.0, 13, "capacity", 4.0, 7, 5e-07, 830.0),
]

GOLDEN_CSV = (
    "case,scheme,A_over_lambda,trial_seed,metric_name,metric_value,iterations,residual,wall_time_ms\n"
    "capacity,fpa,2.0,11,capacity,1.0,0,0.0,0\n"
    "capacity,fpa,2.0,12,capacity,3.0,0,0.0,0\n"
    "capacity,ma,2.0,13,capacity,4.0,7,5e-07,0\n"
)

GOLDEN_AGGREGATE = (
    "case,scheme,A_over_lambda,mean,stderr,n\n"
    "capacity,fpa,2.0,2.0,1.0,2\n"
    "capacity,ma,2.0,4.0,0.0,1\n"
)


class TestParseConfig:

    def test_minimal_config_fills_defaults(self, write_config):
        config = parse_config(write_config("case=capacity\n"))
        assert config.num_antennas == 4
        assert config.d_over_lambda == 0.5
        assert config.num_paths == 10
        assert config.num_trials == 50
        assert config.schemes == ("ma", "fpa", "as")
        assert config.a_over_lambda == (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)

    def test_lists_booleans_and_comments(self, write_config):
        config = parse_config(write_config(
            "# RZF 案例\n"
            "case=rzf\n"
            "a_over_lambda=2, 3\n"
            "schemes=fpa,ma\n"
            "full_path_response=true\n"
            "alpha=6\n"
        ))
        assert config.case == "rzf"
        assert config.a_over_lambda == (2.0, 3.0)
        assert config.schemes == ("fpa", "ma")
        assert config.full_path_response is True
        assert config.alpha == 6.0

    def test_negative_spacing(self, write_config):
        with pytest.raises(ConfigError, match="d_over_lambda.*\\(0, inf\\)"):
            parse_config(write_config("case=capacity\nd_over_lambda=-1\n"))

    def test_unknown_key(self, write_config):
        with pytest.raises(ConfigError, match="antennas"):
            parse_config(write_config("case=capacity\nantennas=4\n"))

    def test_missing_case(self, write_config):
        with pytest.raises(ConfigError, match="case"):
            parse_config(write_config("num_trials=3\n"))

    def test_unparsable_value(self, write_config):
        with pytest.raises(ConfigError, match="num_trials"):
            parse_config(write_config("case=capacity\nnum_trials=many\n"))

    def test_bad_boolean(self, write_config):
        with pytest.raises(ConfigError, match="full_path_response"):
            parse_config(write_config("case=capacity\nfull_path_response=yes\n"))

    @pytest.mark.parametrize("line", [
        "case=mimo", "num_trials=0", "schemes=ma,sca", "schemes=ma,ma", "a_over_lambda=1,-2",
        "penalty_growth=1.0", "penalty_mode=sometimes", "candidate_policy=random", "base_seed=-1",
        "case=rzf\nalpha=nan", "case=rzf\nalpha=inf", "penalty_max=nan", "penalty_max=inf",
        "penalty_growth=inf", "max_power=nan",
    ])
    def test_out_of_range(self, write_config, line):
        text = line + "\n" if line.startswith("case=") else "case=capacity\n" + line + "\n"
        with pytest.raises(ConfigError):
            parse_config(write_config(text))

    def test_non_finite_alpha_reports_bounds(self, write_config):
        with pytest.raises(ConfigError, match=r"alpha 必须在 \[0.0, inf\) 内"):
            parse_config(write_config("case=rzf\nalpha=nan\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.env")

    def test_round_trip(self, write_config):
        original = parse_config(write_config(
            "case=rzf\na_over_lambda=1.5,2.25,3\nnum_trials=7\nnoise_power=0.1\nschemes=as,fpa\n"
        ))
        reparsed = parse_config(write_config(serialize_config(original), "copy.env"))
        assert reparsed == original

    @pytest.mark.parametrize("name", ["capacity.env", "rzf.env"])
    def test_shipped_configs_use_published_values(self, name):
        from pathlib import Path
        config = parse_config(Path(__file__).parent / "configs" / name)
        assert config.num_antennas == 4
        assert config.d_over_lambda == 0.5
        assert config.num_paths == 10
        assert config.penalty_initial == 5.0
        assert config.penalty_growth == 1.2
        assert config.objective_tol == 1e-3
        if config.case == "rzf":
            assert config.num_users == 4
            assert config.alpha == 6.0

    def test_overrides(self):
        config = with_overrides(ExperimentConfig("capacity"), num_trials=3, base_seed=None, schemes=("fpa",))
        assert config.num_trials == 3 and config.base_seed == 0 and config.schemes == ("fpa",)
        with pytest.raises(ConfigError):
            with_overrides(config, num_trials=0)


def test_trial_seeds_are_distinct():
    seeds = {trial_seed(0, a, t) for a in range(7) for t in range(50)}
    assert len(seeds) == 350
    assert trial_seed(0, 1, 2) == trial_seed(0, 1, 2)
    assert trial_seed(0, 1, 2) != trial_seed(1, 1, 2)


class TestRunSweep:

    def test_cardinality(self):
        config = ExperimentConfig("capacity", schemes=("fpa",), num_trials=2, a_over_lambda=(2.0, 3.0))
        rows = run_sweep(config)
        assert len(rows) == 4
        assert [row.a_over_lambda for row in rows] == [2.0, 2.0, 3.0, 3.0]
        assert all(row.metric_name == "capacity" and math.isfinite(row.metric_value) for row in rows)

    def test_common_random_numbers(self):
        config = ExperimentConfig("rzf", schemes=("fpa", "as"), num_trials=2, a_over_lambda=(2.0,))
        rows = run_sweep(config)
        by_scheme = {}
        for row in rows:
            by_scheme.setdefault(row.scheme, []).append(row)
        assert [r.trial_seed for r in by_scheme["fpa"]] == [r.trial_seed for r in by_scheme["as"]]
        for fpa, selected in zip(by_scheme["fpa"], by_scheme["as"]):
            assert selected.metric_name == "sum_rate"
            assert selected.iterations == 70
            assert fpa.iterations == 0

    def test_threads_do_not_change_rows(self):
        config = ExperimentConfig("capacity", schemes=("fpa", "as"), num_trials=3, a_over_lambda=(1.0, 2.0))
        strip = lambda rows: [(r.scheme, r.a_over_lambda, r.trial_seed, r.metric_value) for r in rows]
        assert strip(run_sweep(config, threads=4)) == strip(run_sweep(config, threads=1))

    def test_failure_becomes_error_row(self):
        config = ExperimentConfig("capacity", schemes=("as", "fpa"), num_trials=1, a_over_lambda=(0.5, 2.0))
        rows = run_sweep(config)
        errors = [row for row in rows if row.metric_name == "error"]
        assert [(row.scheme, row.a_over_lambda) for row in errors] == [("as", 0.5)]
        assert math.isnan(errors[0].metric_value)
        assert len(rows) == 4

    def test_ma_scheme_reports_iterations(self):
        config = ExperimentConfig("capacity", schemes=("ma", "fpa"), num_trials=1, a_over_lambda=(2.0,))
        ma, fpa = run_sweep(config)
        assert ma.scheme == "ma" and fpa.scheme == "fpa"
        assert ma.iterations >= 1
        assert ma.residual <= 1e-6
        assert math.isfinite(ma.metric_value)

    def test_identical_output_bytes(self, tmp_path):
        config = ExperimentConfig("rzf", schemes=("ma", "fpa", "as"), num_trials=1, a_over_lambda=(2.0,))
        first, _ = emit_results(run_sweep(config), tmp_path / "a.csv", include_wall_time=False)
        second, _ = emit_results(run_sweep(config), tmp_path / "b.csv", include_wall_time=False)
        assert first.read_bytes() == second.read_bytes()


class TestEmitResults:

    def test_single_row(self, tmp_path):
        path, _ = emit_results(GOLDEN_ROWS[:1], tmp_path / "one.csv")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        assert lines[0].split(",") == CSV_HEADER
        assert lines[1].endswith(",1.250")

    def test_golden_files(self, tmp_path):
        path, aggregate_path = emit_results(GOLDEN_ROWS, tmp_path / "golden.csv", include_wall_time=False)
        assert path.read_bytes() == GOLDEN_CSV.encode("utf-8")
        assert aggregate_path.name == "golden_aggregate.csv"
        assert aggregate_path.read_bytes() == GOLDEN_AGGREGATE.encode("utf-8")

    def test_jsonl(self, tmp_path):
        path, aggregate_path = emit_results(GOLDEN_ROWS, tmp_path / "rows.jsonl", fmt="jsonl")
        records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        assert [r["trial_seed"] for r in records] == [11, 12, 13]
        assert records[2]["wall_time_ms"] == 830.0
        assert all(sorted(r) == sorted(CSV_HEADER) for r in records)
        assert aggregate_path.read_text(encoding="utf-8").splitlines()[0].split(",") == AGGREGATE_HEADER

    def test_identical_values_have_zero_stderr(self):
        rows = [ResultRow("rzf", "fpa", 3.0, seed, "sum_rate", 0.1, 0, 0.0, 0.0) for seed in range(5)]
        (_, _, _, mean, stderr, n), = aggregate(rows)
        assert stderr == 0.0 and n == 5 and mean == pytest.approx(0.1)

    def test_error_rows_excluded_from_aggregate(self):
        rows = GOLDEN_ROWS + [ResultRow("capacity", "ma", 2.0, 14, "error", math.nan, 0, math.nan, 0.0)]
        table = aggregate(rows)
        assert table[1][5] == 1

    def test_empty_rows(self, tmp_path):
        with pytest.raises(ValueError):
            emit_results([], tmp_path / "empty.csv")

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        with pytest.raises(OSError, match="blocker"):
            emit_results(GOLDEN_ROWS, blocker / "out.csv")


def paired_summary(rows, better, worse, a_over_lambda):
    values = {}
    for row in rows:
        if row.a_over_lambda == a_over_lambda:
            values.setdefault(row.scheme, {})[row.trial_seed] = row.metric_value
    seeds = sorted(values[worse])
    diffs = np.array([values[better][s] - values[worse][s] for s in seeds])
    return diffs.mean(), statistics.stdev(diffs) / math.sqrt(len(diffs))


@pytest.mark.slow
def test_capacity_ordering_across_region_sizes():
    """MA ≥ AS ≥ FPA，且 MA 比 FPA 高出至少 3 个标准误"""
    config = ExperimentConfig("capacity", a_over_lambda=(2.0, 3.0, 4.0))
    rows = run_sweep(config, threads=4)
    assert not [row for row in rows if row.metric_name == "error"]
    for a in config.a_over_lambda:
        ma_as, _ = paired_summary(rows, "ma", "as", a)
        as_fpa, _ = paired_summary(rows, "as", "fpa", a)
        ma_fpa, stderr = paired_summary(rows, "ma", "fpa", a)
        assert ma_as >= 0 and as_fpa >= 0
        assert ma_fpa >= 3 * stderr


@pytest.mark.slow
def test_sum_rate_ordering_across_region_sizes():
    config = ExperimentConfig("rzf", schemes=("ma", "fpa"), a_over_lambda=(2.0, 3.0, 4.0))
    rows = run_sweep(config, threads=4)
    for a in config.a_over_lambda:
        ma_fpa, stderr = paired_summary(rows, "ma", "fpa", a)
        assert ma_fpa > 3 * stderr
