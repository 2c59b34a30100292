"""
各变量块的求解器

- 注水算法求发射协方差 Q（容量最大化）
- RZF 闭式预编码 F（多用户预编码）
- 目标函数 / 性能指标
- 天线位置子问题的投影梯度法（Armijo 回溯线搜索）
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import bisect

from services.geometry_service import PlacementConstraints, as_layout

logger = logging.getLogger(__name__)

# 截断 SVD 的相对秩阈值
RANK_TOL = 1e-10
PSD_TOL = 1e-10

ObjectiveAndGradient = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class ZeroChannelError(ArithmeticError):
    """信道矩阵数值上为零"""


class RegularizationRequiredError(ArithmeticError):
    """α = 0 且 H^H H 奇异"""


class NonFiniteObjectiveError(ArithmeticError):
    """目标函数或梯度出现 NaN / Inf"""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class WaterFillingResult:
    covariance: np.ndarray
    powers: np.ndarray
    water_level: float
    rank: int
    right_singular_vectors: np.ndarray


@dataclass(frozen=True)
class PgConfig:
    """投影梯度法参数（步长以波长为单位）"""

    initial_step: float = 0.1
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_iters: int = 200
    grad_tol: float = 1e-6
    max_backtracks: int = 60

    def __post_init__(self):
        if self.initial_step <= 0:
            raise ValueError(f"initial_step 必须为正数: {self.initial_step}")
        if not 0 < self.armijo_c < 1:
            raise ValueError(f"armijo_c 必须在 (0, 1) 内: {self.armijo_c}")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError(f"backtrack_factor 必须在 (0, 1) 内: {self.backtrack_factor}")
        if self.max_iters < 1 or self.max_backtracks < 1:
            raise ValueError("max_iters 与 max_backtracks 必须至少为 1")
        if self.grad_tol <= 0:
            raise ValueError(f"grad_tol 必须为正数: {self.grad_tol}")


@dataclass
class PgResult:
    layout: np.ndarray
    objective: float
    iterations: int
    converged: bool
    objectives: list


@dataclass(frozen=True)
class RzfInstance:
    alpha: float
    channel: np.ndarray
    precoder: np.ndarray

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"α 必须非负: {self.alpha}")
        k, m = np.shape(self.channel)
        if np.shape(self.precoder) != (m, k):
            raise ValueError(f"预编码矩阵形状应为 {(m, k)}，实际为 {np.shape(self.precoder)}")

    @property
    def objective(self) -> float:
        return rzf_objective(self.channel, self.precoder, self.alpha)


def water_filling(channel: np.ndarray, noise_power: float, max_power: float) -> WaterFillingResult:
    """
    注水功率分配

    Q* = Ṽ diag(p*) Ṽ^H，p_s* = max(1/p_0 - σ²/Λ̃[s,s]², 0)，
    水位 1/p_0 由二分法确定，使 Σ p_s* = P_max。

    Args:
        channel: (M, N) 信道矩阵
        noise_power: 噪声功率 σ²
        max_power: 功率预算 P_max

    Returns:
        WaterFillingResult: 协方差、各子信道功率、水位与秩
    """
    if max_power <= 0 or noise_power <= 0:
        raise ValueError(f"P_max 与 σ² 必须为正数: P_max={max_power}, σ²={noise_power}")

    _, singular, vh = np.linalg.svd(np.asarray(channel, dtype=complex), full_matrices=False)
    if singular.size == 0 or not singular[0] > np.finfo(float).tiny:
        raise ZeroChannelError("zero channel: 信道矩阵的奇异值全部为零")

    rank = int(np.sum(singular > RANK_TOL * singular[0]))
    floors = noise_power / singular[:rank] ** 2

    def excess(level: float) -> float:
        return float(np.sum(np.maximum(level - floors, 0.0)) - max_power)

    # floors.max() + P_max 在浮点下可能略低于真实水位（秩为 1 时恰好相等），上界留出相对余量
    upper = floors.max() + max_power + 1e-9 * (floors.max() + max_power)
    level = bisect(excess, floors.min(), upper, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    # 在确定的激活集合上精确求解水位
    active = floors < level
    level = (max_power + floors[active].sum()) / active.sum()
    powers = np.maximum(level - floors, 0.0)

    v = vh.conj().T[:, :rank]
    covariance = (v * powers) @ v.conj().T
    return WaterFillingResult(covariance, powers, float(level), rank, v)


def capacity(channel: np.ndarray, covariance: np.ndarray, noise_power: float) -> float:
    """log2 det(I + H Q H^H / σ²)，单位 bit/s/Hz"""
    channel = np.asarray(channel, dtype=complex)
    covariance = np.asarray(covariance, dtype=complex)
    if noise_power <= 0:
        raise ValueError(f"噪声功率必须为正数: {noise_power}")
    scale = max(1.0, float(np.abs(covariance).max(initial=0.0)))
    if np.abs(covariance - covariance.conj().T).max(initial=0.0) > PSD_TOL * scale:
        raise ValueError("Q 不是 Hermitian 矩阵")
    if covariance.size and np.linalg.eigvalsh(covariance).min() < -PSD_TOL * scale:
        raise ValueError("Q 不是半正定矩阵")

    gram = np.eye(channel.shape[0]) + channel @ covariance @ channel.conj().T / noise_power
    sign, logdet = np.linalg.slogdet(gram)
    return max(float(logdet) / math.log(2), 0.0)


def rzf_precoder(channel: np.ndarray, alpha: float) -> np.ndarray:
    """F* = (H^H H + αI)^{-1} H^H，通过求解 Hermitian 正定线性方程组得到"""
    channel = np.asarray(channel, dtype=complex)
    if alpha < 0:
        raise ValueError(f"α 必须非负: {alpha}")
    gram = channel.conj().T @ channel + alpha * np.eye(channel.shape[1])
    if alpha == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise RegularizationRequiredError("regularization required: α = 0 时 H^H H 奇异")
    try:
        return scipy.linalg.solve(gram, channel.conj().T, assume_a="pos")
    except np.linalg.LinAlgError as e:
        raise RegularizationRequiredError(f"regularization required: {e}") from e


def rzf_objective(channel: np.ndarray, precoder: np.ndarray, alpha: float) -> float:
    """||I_K - H F||_F² + α ||F||_F²"""
    channel = np.asarray(channel, dtype=complex)
    precoder = np.asarray(precoder, dtype=complex)
    residual = np.eye(channel.shape[0]) - channel @ precoder
    return float(np.sum(np.abs(residual) ** 2) + alpha * np.sum(np.abs(precoder) ** 2))


def sum_rate(channel: np.ndarray, precoder: np.ndarray, noise_powers: Sequence[float]) -> float:
    """Σ_k log2(1 + SINR_k)，F 按原样使用，不做功率归一化"""
    effective = np.asarray(channel, dtype=complex) @ np.asarray(precoder, dtype=complex)
    noise = np.broadcast_to(np.asarray(noise_powers, dtype=float), (effective.shape[0],))
    if np.any(noise <= 0):
        raise ValueError("噪声功率必须为正数")
    gains = np.abs(effective) ** 2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return float(np.sum(np.log2(1 + signal / (interference + noise))))


def project_to_region(points, region: PlacementConstraints) -> np.ndarray:
    """逐坐标截断到 [0, A]²"""
    return np.clip(np.asarray(points, dtype=float), 0.0, region.region_side)


def _evaluate(objective_and_gradient: ObjectiveAndGradient, layout: np.ndarray) -> Tuple[float, np.ndarray]:
    value, gradient = objective_and_gradient(layout)
    value = float(value)
    gradient = np.asarray(gradient, dtype=float).reshape(layout.shape)
    if not (math.isfinite(value) and np.all(np.isfinite(gradient))):
        raise NonFiniteObjectiveError(f"目标函数返回非有限值: f={value}")
    return value, gradient


def projected_gradient(objective_and_gradient: ObjectiveAndGradient, r_init, region: PlacementConstraints,
                       config: PgConfig = PgConfig()) -> PgResult:
    """
    投影梯度法：r^(i) = P_C{ r^(i-1) - η ∇G }，η 由 Armijo 回溯确定

    Args:
        objective_and_gradient: 回调，输入 (M, 2) 布局，返回 (目标值, 梯度)
        r_init: 区域内的初始布局
        region: 可移动区域
        config: 步长与终止条件

    Returns:
        PgResult: 最终布局、目标值与迭代信息
    """
    layout = as_layout(r_init)
    if not region.contains(layout):
        raise ValueError("初始布局不在可移动区域内")
    layout = project_to_region(layout, region)

    value, gradient = _evaluate(objective_and_gradient, layout)
    history = [value]
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        mapping = layout - project_to_region(layout - gradient, region)
        if np.linalg.norm(mapping) <= config.grad_tol:
            converged = True
            break

        step = config.initial_step
        accepted = False
        for _ in range(config.max_backtracks):
            candidate = project_to_region(layout - step * gradient, region)
            direction = candidate - layout
            if not np.any(direction):
                break
            candidate_value, candidate_gradient = _evaluate(objective_and_gradient, candidate)
            if candidate_value <= value + config.armijo_c * float(np.sum(gradient * direction)):
                accepted = True
                break
            step *= config.backtrack_factor

        if not accepted:
            # 回溯用尽仍无法下降，视为已到达数值上的驻点
            converged = True
            break
        layout, value, gradient = candidate, candidate_value, candidate_gradient
        history.append(value)

    logger.debug("投影梯度: %d 次迭代, 目标值 %.8g, 收敛=%s", iterations, value, converged)
    return PgResult(layout, value, iterations, converged, history)
