"""
通用罚函数交替优化框架

引入辅助变量 z_m = r_m，把间距约束转移到 z 上，并在目标函数中加入
ρ Σ ||r_m - z_m||²。每轮外迭代依次更新 X、r（投影梯度）和 z（几何求解），
然后按 schedule 增大 ρ。
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple

import numpy as np

from services.geometry_service import (
    InfeasibleInstanceError,
    PlacementConstraints,
    as_layout,
    is_pairwise_feasible,
    pairwise_min_distance,
    penalty_residual,
    run_z_sweeps,
)
from services.solver_service import NonFiniteObjectiveError, PgConfig, project_to_region, projected_gradient

logger = logging.getLogger(__name__)

GRADIENT_MODES = ("analytic", "fd")
PENALTY_MODES = ("per_iteration", "per_stall")
FD_STEP = 1e-6
FINAL_TOL = 1e-6


class ProblemInstance(ABC):
    """
    一个具体的案例问题

    子类实现 X 子问题的求解、目标函数 f 以及 f 对天线位置的梯度；
    罚项及其梯度由基类统一添加。
    """

    gradient_mode: str = "analytic"

    @abstractmethod
    def solve_x(self, layout: np.ndarray) -> Tuple[Any, float]:
        """P1-a：固定位置求最优 X，返回 (X, f)"""

    @abstractmethod
    def evaluate(self, layout: np.ndarray, x: Any) -> float:
        """f(r, X)"""

    @abstractmethod
    def objective_gradient(self, layout: np.ndarray, x: Any) -> np.ndarray:
        """∂f/∂r，形状 (M, 2)"""

    def penalized(self, layout: np.ndarray, x: Any, z: np.ndarray, rho: float) -> float:
        return self.evaluate(layout, x) + rho * penalty_residual(layout, z)

    def gradient(self, layout: np.ndarray, x: Any, z: np.ndarray, rho: float) -> np.ndarray:
        """罚函数目标对位置的梯度"""
        if self.gradient_mode == "fd":
            return self.finite_difference_gradient(layout, x, z, rho)
        return self.objective_gradient(layout, x) + 2 * rho * (layout - z)

    def finite_difference_gradient(self, layout: np.ndarray, x: Any, z: np.ndarray, rho: float,
                                   step: float = FD_STEP) -> np.ndarray:
        layout = as_layout(layout)
        gradient = np.zeros_like(layout)
        for index in np.ndindex(layout.shape):
            forward, backward = layout.copy(), layout.copy()
            forward[index] += step
            backward[index] -= step
            gradient[index] = (self.penalized(forward, x, z, rho) - self.penalized(backward, x, z, rho)) / (2 * step)
        return gradient


@dataclass(frozen=True)
class PenaltySchedule:
    initial: float = 5.0
    growth: float = 1.2
    maximum: float = 1e6
    mode: str = "per_iteration"

    def __post_init__(self):
        if self.initial <= 0:
            raise ValueError(f"ρ_0 必须为正数: {self.initial}")
        if self.growth <= 1:
            raise ValueError(f"ρ 增长因子必须大于 1: {self.growth}")
        if self.maximum < self.initial:
            raise ValueError(f"ρ_max 不能小于 ρ_0: {self.maximum} < {self.initial}")
        if self.mode not in PENALTY_MODES:
            raise ValueError(f"未知的 ρ 增长方式: {self.mode}")

    def next(self, rho: float) -> float:
        return min(rho * self.growth, self.maximum)


@dataclass(frozen=True)
class AoConfig:
    objective_tol: float = 1e-3
    residual_tol: float = 1e-6
    max_outer_iterations: int = 500
    z_tol: float = 1e-6
    z_max_sweeps: int = 100
    candidate_policy: str = "exhaustive"
    pg: PgConfig = field(default_factory=PgConfig)

    def __post_init__(self):
        if self.objective_tol <= 0 or self.residual_tol <= 0 or self.z_tol <= 0:
            raise ValueError("终止阈值必须为正数")
        if self.max_outer_iterations < 1 or self.z_max_sweeps < 1:
            raise ValueError("迭代上限必须至少为 1")


@dataclass
class TraceEntry:
    """一轮外迭代的记录；block_values 为 (X 更新前, X 后, r 后, z 后) 的罚函数目标值"""

    objective: float
    residual: float
    rho: float
    penalized_objective: float
    block_values: Tuple[Optional[float], float, float, float]


@dataclass
class PenaltyState:
    r: np.ndarray
    z: np.ndarray
    x: Any
    rho: float
    objective_trace: List[float] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return penalty_residual(self.r, self.z)


@dataclass
class FinalizedLayout:
    layout: np.ndarray
    source: str  # "r" / "z"
    region_violation: bool


@dataclass
class SolverReport:
    final_layout: np.ndarray
    final_objective: float
    residual: float
    outer_iterations: int
    trace: List[TraceEntry]
    converged: bool
    layout_source: str
    region_violation: bool
    x: Any = None


def initialize_layout(num_antennas: int, constraints: PlacementConstraints, seed) -> np.ndarray:
    """
    确定性网格加随机抖动的可行初始布局

    Args:
        num_antennas: 天线数 M
        constraints: 区域与间距
        seed: 随机种子（整数或 numpy Generator）

    Returns:
        np.ndarray: (M, 2) 布局，两两间距 >= D
    """
    constraints.check_capacity(num_antennas)
    side, spacing_min = constraints.region_side, constraints.min_distance
    per_side = math.ceil(math.sqrt(num_antennas))

    cell = side / per_side
    if cell >= spacing_min:
        # 单元格中心，抖动幅度保证相邻点仍然满足间距
        ticks = cell * (np.arange(per_side) + 0.5)
        jitter = (cell - spacing_min) / 2
    else:
        ticks = spacing_min * np.arange(per_side)
        jitter = 0.0
    grid = np.array([(x, y) for y in ticks for x in ticks])[:num_antennas]

    rng = np.random.default_rng(seed)
    for attempt in range(1000):
        layout = project_to_region(grid + rng.uniform(-jitter, jitter, grid.shape), constraints)
        if is_pairwise_feasible(layout, spacing_min, tol=0.0):
            return layout
    raise InfeasibleInstanceError(f"infeasible instance: 1000 次抖动后仍未得到可行布局 (M={num_antennas})")


def finalize_layout(r, z, constraints: PlacementConstraints) -> FinalizedLayout:
    """
    选择对外报告的布局

    r 本身可行时返回 r；否则返回截断到区域内的 z。若截断破坏了间距约束，
    返回未截断的 z 并标记 region_violation。
    """
    r, z = as_layout(r), as_layout(z)
    if constraints.is_feasible(r, FINAL_TOL):
        return FinalizedLayout(r, "r", False)

    clamped = project_to_region(z, constraints)
    if is_pairwise_feasible(clamped, constraints.min_distance, FINAL_TOL):
        return FinalizedLayout(clamped, "z", False)

    logger.warning("region-boundary violation: z 截断到区域后不再满足间距约束，返回未截断的 z")
    return FinalizedLayout(z, "z", True)


def _relative_change(previous: float, current: float) -> float:
    return abs(current - previous) / max(abs(previous), np.finfo(float).tiny)


def _check_finite(value: float, what: str, trace: List[TraceEntry]) -> None:
    if not math.isfinite(value):
        raise NonFiniteObjectiveError(f"{what} 得到非有限目标值: {value}", trace)


def run_penalty_ao(instance: ProblemInstance, constraints: PlacementConstraints, init,
                   schedule: PenaltySchedule = PenaltySchedule(), config: AoConfig = AoConfig()) -> SolverReport:
    """
    Algorithm 1：罚函数交替优化

    Args:
        instance: 具体案例（容量最大化 / RZF）
        constraints: 区域与最小间距
        init: 区域内且满足间距的初始布局
        schedule: ρ 的初值与增长方式
        config: 终止条件与子问题参数

    Returns:
        SolverReport: 可行的最终布局、目标值与迭代轨迹
    """
    r = as_layout(init)
    constraints.check_capacity(len(r))
    if not constraints.contains(r):
        raise ValueError("初始布局不在可移动区域内")
    if not is_pairwise_feasible(r, constraints.min_distance):
        raise ValueError(f"初始布局不满足最小间距: {pairwise_min_distance(r):.6g} < {constraints.min_distance}")

    state = PenaltyState(r=r, z=r.copy(), x=None, rho=schedule.initial)
    trace: List[TraceEntry] = []
    previous = None
    converged = False
    iteration = 0

    for iteration in range(1, config.max_outer_iterations + 1):
        rho = state.rho
        before_x = None
        if state.x is not None:
            before_x = instance.penalized(state.r, state.x, state.z, rho)

        # 1. 更新 X（P1-a）
        state.x, objective = instance.solve_x(state.r)
        after_x = objective + rho * state.residual
        _check_finite(after_x, "X 更新", trace)

        # 2. 更新 r（P1-b），z 与 X 固定
        def objective_and_gradient(layout, x=state.x, z=state.z, rho=rho):
            return instance.penalized(layout, x, z, rho), instance.gradient(layout, x, z, rho)

        pg = projected_gradient(objective_and_gradient, state.r, constraints, config.pg)
        state.r = pg.layout
        after_r = pg.objective
        _check_finite(after_r, "r 更新", trace)

        # 3. 更新 z（P1-c）
        sweep = run_z_sweeps(state.r, state.z, constraints.min_distance, config.z_tol,
                             config.z_max_sweeps, config.candidate_policy)
        state.z = sweep.z
        objective = instance.evaluate(state.r, state.x)
        residual = state.residual
        after_z = objective + rho * residual
        _check_finite(after_z, "z 更新", trace)

        state.objective_trace.append(after_z)
        trace.append(TraceEntry(objective, residual, rho, after_z, (before_x, after_x, after_r, after_z)))
        logger.debug("第 %d 轮: f=%.6g, 残差=%.3g, ρ=%.4g", iteration, objective, residual, rho)

        stalled = previous is not None and _relative_change(previous, after_z) <= config.objective_tol
        previous = after_z
        if stalled and residual <= config.residual_tol:
            converged = True
            break

        if schedule.mode == "per_iteration" or (stalled and residual > config.residual_tol):
            state.rho = schedule.next(rho)

    if not converged:
        logger.warning("达到外迭代上限 %d 次仍未收敛 (残差 %.3g)", config.max_outer_iterations, state.residual)

    final = finalize_layout(state.r, state.z, constraints)
    x, final_objective = instance.solve_x(final.layout)
    _check_finite(final_objective, "最终布局", trace)
    logger.info("罚函数交替优化结束: %d 轮, f=%.6g, 残差=%.3g, 来源=%s",
                iteration, final_objective, state.residual, final.source)
    return SolverReport(
        final_layout=final.layout,
        final_objective=final_objective,
        residual=state.residual,
        outer_iterations=iteration,
        trace=trace,
        converged=converged,
        layout_source=final.source,
        region_violation=final.region_violation,
        x=x,
    )
