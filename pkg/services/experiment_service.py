"""
实验服务

解析实验配置（dotenv 格式），按归一化区域边长 A/λ 做带种子的蒙特卡洛扫描，
对每个方案记录容量或和速率，并输出 CSV / JSONL 结果与按 (方案, A/λ) 的汇总。
"""
import csv
import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from dotenv import dotenv_values

from services.baseline_service import antenna_selection, candidate_grid, fpa_layout
from services.case_service import CapacityProblem, RzfProblem
from services.channel_service import random_miso_users, random_mimo_model
from services.geometry_service import CANDIDATE_POLICIES, PlacementConstraints
from services.penalty_ao_service import (
    GRADIENT_MODES,
    PENALTY_MODES,
    AoConfig,
    PenaltySchedule,
    initialize_layout,
    run_penalty_ao,
)
from services.solver_service import PgConfig

logger = logging.getLogger(__name__)

CASES = ("capacity", "rzf")
SCHEMES = ("ma", "fpa", "as")
MA_INITS = ("fpa", "random")
RESULT_FORMATS = ("csv", "jsonl")
CSV_HEADER = ["case", "scheme", "A_over_lambda", "trial_seed", "metric_name", "metric_value",
              "iterations", "residual", "wall_time_ms"]
AGGREGATE_HEADER = ["case", "scheme", "A_over_lambda", "mean", "stderr", "n"]
ERROR_METRIC = "error"


class ConfigError(ValueError):
    """实验配置错误"""


@dataclass(frozen=True)
class ExperimentConfig:
    case: str
    num_antennas: int = 4
    num_device_antennas: int = 4
    num_users: int = 4
    num_paths: int = 10
    a_over_lambda: Tuple[float, ...] = (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
    d_over_lambda: float = 0.5
    # P_max 与 σ² 没有公开的参考值，取 10 dB 信噪比
    max_power: float = 10.0
    noise_power: float = 1.0
    alpha: float = 6.0
    num_trials: int = 50
    base_seed: int = 0
    schemes: Tuple[str, ...] = SCHEMES
    full_path_response: bool = False
    gradient_mode: str = "analytic"
    ma_init: str = "fpa"
    candidate_policy: str = "exhaustive"
    penalty_initial: float = 5.0
    penalty_growth: float = 1.2
    penalty_max: float = 1e6
    penalty_mode: str = "per_iteration"
    objective_tol: float = 1e-3
    residual_tol: float = 1e-6
    max_outer_iterations: int = 500
    z_tol: float = 1e-6
    z_max_sweeps: int = 100
    pg_initial_step: float = 0.1
    pg_armijo_c: float = 1e-4
    pg_backtrack_factor: float = 0.5
    pg_max_iters: int = 200
    pg_grad_tol: float = 1e-6

    def validate(self) -> "ExperimentConfig":
        """检查取值范围，出错时抛出带有范围说明的 ConfigError"""
        _choice("case", self.case, CASES)
        _choice("gradient_mode", self.gradient_mode, GRADIENT_MODES)
        _choice("ma_init", self.ma_init, MA_INITS)
        _choice("candidate_policy", self.candidate_policy, CANDIDATE_POLICIES)
        _choice("penalty_mode", self.penalty_mode, PENALTY_MODES)
        for name in ("num_antennas", "num_device_antennas", "num_users", "num_paths", "num_trials",
                     "max_outer_iterations", "z_max_sweeps", "pg_max_iters"):
            _at_least(name, getattr(self, name), 1)
        _at_least("base_seed", self.base_seed, 0)
        for name in ("d_over_lambda", "max_power", "noise_power", "penalty_initial", "objective_tol",
                     "residual_tol", "z_tol", "pg_initial_step", "pg_grad_tol"):
            _positive(name, getattr(self, name))
        _at_least("alpha", self.alpha, 0.0)
        _open_unit("pg_armijo_c", self.pg_armijo_c)
        _open_unit("pg_backtrack_factor", self.pg_backtrack_factor)
        if not (math.isfinite(self.penalty_growth) and self.penalty_growth > 1):
            raise ConfigError(f"penalty_growth 必须在 (1, inf) 内，实际为 {self.penalty_growth}")
        _positive("penalty_max", self.penalty_max)
        if self.penalty_max < self.penalty_initial:
            raise ConfigError(f"penalty_max 必须 >= penalty_initial ({self.penalty_initial})，实际为 {self.penalty_max}")
        if not self.a_over_lambda:
            raise ConfigError("a_over_lambda 不能为空")
        for value in self.a_over_lambda:
            _positive("a_over_lambda", value)
        if not self.schemes or len(set(self.schemes)) != len(self.schemes):
            raise ConfigError(f"schemes 不能为空且不能重复: {self.schemes}")
        for scheme in self.schemes:
            _choice("schemes", scheme, SCHEMES)
        return self

    def constraints(self, a_over_lambda: float) -> PlacementConstraints:
        return PlacementConstraints(a_over_lambda, self.d_over_lambda)

    def schedule(self) -> PenaltySchedule:
        return PenaltySchedule(self.penalty_initial, self.penalty_growth, self.penalty_max, self.penalty_mode)

    def ao_config(self) -> AoConfig:
        pg = PgConfig(self.pg_initial_step, self.pg_armijo_c, self.pg_backtrack_factor,
                      self.pg_max_iters, self.pg_grad_tol)
        return AoConfig(self.objective_tol, self.residual_tol, self.max_outer_iterations,
                        self.z_tol, self.z_max_sweeps, self.candidate_policy, pg)


@dataclass(frozen=True)
class ResultRow:
    case: str
    scheme: str
    a_over_lambda: float
    trial_seed: int
    metric_name: str
    metric_value: float
    iterations: int
    residual: float
    wall_time_ms: float


def _choice(name: str, value, allowed) -> None:
    if value not in allowed:
        raise ConfigError(f"{name} 必须是 {'/'.join(allowed)} 之一，实际为 {value!r}")


def _at_least(name: str, value, bound) -> None:
    if not (math.isfinite(value) and value >= bound):
        raise ConfigError(f"{name} 必须在 [{bound}, inf) 内，实际为 {value}")


def _positive(name: str, value) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} 必须在 (0, inf) 内，实际为 {value}")


def _open_unit(name: str, value) -> None:
    if not 0 < value < 1:
        raise ConfigError(f"{name} 必须在 (0, 1) 内，实际为 {value}")


_LIST_FIELDS = {"a_over_lambda": float, "schemes": str}
_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _convert(name: str, raw: str):
    kind = _FIELDS[name].type
    text = raw.strip()
    try:
        if name in _LIST_FIELDS:
            return tuple(_LIST_FIELDS[name](item.strip()) for item in text.split(",") if item.strip())
        if kind is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"{name}: 无法解析取值 {raw!r}") from e


def config_from_mapping(values: Dict[str, Optional[str]]) -> ExperimentConfig:
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"未知的配置项: {unknown[0]}")
    if not values.get("case"):
        raise ConfigError("缺少必需的配置项: case")
    parsed = {}
    for name, raw in values.items():
        if raw is None:
            raise ConfigError(f"{name}: 缺少取值")
        parsed[name] = _convert(name, raw)
    return ExperimentConfig(**parsed).validate()


def parse_config(path) -> ExperimentConfig:
    """
    读取 dotenv 格式的实验配置

    Args:
        path: 配置文件路径

    Returns:
        ExperimentConfig: 校验后的配置，缺省项取默认值
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"配置文件不存在: {path}")
    return config_from_mapping(dict(dotenv_values(path)))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    return "".join(f"{name}={_format_value(getattr(config, name))}\n" for name in _FIELDS)


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    changes = {key: value for key, value in changes.items() if value is not None}
    unknown = sorted(set(changes) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"未知的配置项: {unknown[0]}")
    return replace(config, **changes).validate()


def trial_seed(base_seed: int, a_index: int, trial: int) -> int:
    """由 (base_seed, A 下标, 试验编号) 派生互不相同的种子"""
    return int(np.random.SeedSequence([base_seed, a_index, trial]).generate_state(1, dtype=np.uint64)[0])


def build_problem(config: ExperimentConfig, rng: np.random.Generator):
    """为一个试验抽取信道并构造案例问题；同一试验的所有方案共用该信道"""
    if config.case == "capacity":
        model = random_mimo_model(rng, config.num_paths, config.num_device_antennas,
                                  full_path_response=config.full_path_response)
        return CapacityProblem(model, config.noise_power, config.max_power, config.gradient_mode)
    users = random_miso_users(rng, config.num_users, config.num_paths, config.noise_power)
    return RzfProblem(users, config.alpha, config.gradient_mode)


def _run_scheme(scheme: str, problem, config: ExperimentConfig, constraints: PlacementConstraints,
                seed: int) -> Tuple[float, int, float]:
    """返回 (指标, 迭代次数, 残差)"""
    if scheme == "fpa":
        return problem.metric(fpa_layout(config.num_antennas, constraints)), 0, 0.0

    if scheme == "as":
        grid = candidate_grid(constraints)
        selection = antenna_selection(grid, config.num_antennas, lambda s: problem.metric(grid.subset(s)))
        return selection.score, selection.evaluations, 0.0

    if config.ma_init == "fpa":
        init = fpa_layout(config.num_antennas, constraints)
    else:
        init = initialize_layout(config.num_antennas, constraints, seed=[seed, 1])
    report = run_penalty_ao(problem, constraints, init, config.schedule(), config.ao_config())
    return problem.metric(report.final_layout), report.outer_iterations, report.residual


def run_cell(config: ExperimentConfig, a_index: int, trial: int) -> List[Tuple[tuple, ResultRow]]:
    """一个 (A/λ, 试验) 单元：抽取一次信道，依次运行所有方案"""
    a_over_lambda = config.a_over_lambda[a_index]
    seed = trial_seed(config.base_seed, a_index, trial)
    constraints = config.constraints(a_over_lambda)
    problem = build_problem(config, np.random.default_rng(seed))

    rows = []
    for scheme in config.schemes:
        started = time.perf_counter()
        try:
            metric, iterations, residual = _run_scheme(scheme, problem, config, constraints, seed)
            metric_name = problem.metric_name
            if not math.isfinite(metric):
                raise ArithmeticError(f"指标为非有限值: {metric}")
        except Exception as e:
            logger.warning("方案 %s 在 A/λ=%s、试验 %d 失败: %s", scheme, a_over_lambda, trial, e)
            metric_name, metric, iterations, residual = ERROR_METRIC, math.nan, 0, math.nan
        elapsed = (time.perf_counter() - started) * 1000
        row = ResultRow(config.case, scheme, a_over_lambda, seed, metric_name, float(metric),
                        int(iterations), float(residual), elapsed)
        rows.append(((SCHEMES.index(scheme), a_index, trial), row))
    return rows


def run_sweep(config: ExperimentConfig, threads: int = 1) -> List[ResultRow]:
    """
    对所有 (A/λ, 试验, 方案) 运行实验

    Args:
        config: 校验后的实验配置
        threads: 并行执行单元的线程数

    Returns:
        list: 按 (方案, A/λ, 试验) 排序的结果行
    """
    config.validate()
    cells = [(a_index, trial) for a_index in range(len(config.a_over_lambda))
             for trial in range(config.num_trials)]
    logger.info("开始扫描: case=%s, %d 个单元, 方案 %s", config.case, len(cells), ",".join(config.schemes))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(lambda cell: run_cell(config, *cell), cells))
    else:
        results = [run_cell(config, *cell) for cell in cells]

    keyed = sorted((item for cell in results for item in cell), key=lambda item: item[0])
    return [row for _, row in keyed]


def aggregate(rows: List[ResultRow]) -> List[list]:
    """按 (case, 方案, A/λ) 求均值与标准误，跳过失败行"""
    groups: Dict[tuple, List[float]] = {}
    for row in rows:
        if row.metric_name == ERROR_METRIC:
            continue
        groups.setdefault((row.case, row.scheme, row.a_over_lambda), []).append(row.metric_value)

    table = []
    for (case, scheme, a_over_lambda), values in groups.items():
        stderr = statistics.stdev(values) / math.sqrt(len(values)) if len(values) > 1 else 0.0
        table.append([case, scheme, a_over_lambda, statistics.fmean(values), stderr, len(values)])
    return table


def _csv_fields(row: ResultRow, include_wall_time: bool) -> list:
    wall = f"{row.wall_time_ms:.3f}" if include_wall_time else "0"
    return [row.case, row.scheme, repr(row.a_over_lambda), row.trial_seed, row.metric_name,
            repr(row.metric_value), row.iterations, repr(row.residual), wall]


def emit_results(rows: List[ResultRow], path, fmt: str = "csv",
                 include_wall_time: bool = True) -> Tuple[Path, Path]:
    """
    写出结果文件和汇总文件

    Args:
        rows: 结果行（非空）
        path: 结果文件路径，汇总文件为同目录下的 <stem>_aggregate.csv
        fmt: "csv" 或 "jsonl"
        include_wall_time: False 时耗时列写 0，便于逐字节比较

    Returns:
        (results_path, aggregate_path)
    """
    if not rows:
        raise ValueError("没有可写出的结果行")
    _choice("fmt", fmt, RESULT_FORMATS)
    path = Path(path)
    aggregate_path = path.with_name(f"{path.stem}_aggregate.csv")

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            if fmt == "csv":
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(CSV_HEADER)
                writer.writerows(_csv_fields(row, include_wall_time) for row in rows)
            else:
                for row in rows:
                    record = dict(zip(CSV_HEADER, astuple(row)))
                    if not include_wall_time:
                        record["wall_time_ms"] = 0.0
                    f.write(json.dumps(record, sort_keys=True) + "\n")

        with open(aggregate_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(AGGREGATE_HEADER)
            for case, scheme, a_over_lambda, mean, stderr, n in aggregate(rows):
                writer.writerow([case, scheme, repr(a_over_lambda), repr(mean), repr(stderr), n])
    except OSError as e:
        raise OSError(f"无法写入结果文件 {path}: {e}") from e

    logger.info("结果已写入 %s 与 %s", path, aggregate_path)
    return path, aggregate_path
