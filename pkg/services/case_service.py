"""
两个案例问题接入罚函数交替优化框架

- CapacityProblem: MIMO 容量最大化，X = Q（注水）
- RzfProblem: 多用户 MISO 正则化迫零预编码，X = F（闭式解）

框架统一最小化 f，因此容量案例的 f 取负容量。
"""
import math
from typing import Sequence, Tuple

import numpy as np

from services.channel_service import (
    MimoChannelModel,
    MisoUserModel,
    assemble_miso_channels,
    assemble_mimo_channel,
    miso_channel_position_jacobian,
    mimo_row_derivatives,
)
from services.penalty_ao_service import GRADIENT_MODES, ProblemInstance
from services.solver_service import RzfInstance, capacity, rzf_precoder, sum_rate, water_filling


def _check_mode(mode: str) -> str:
    if mode not in GRADIENT_MODES:
        raise ValueError(f"未知的梯度模式: {mode}")
    return mode


class CapacityProblem(ProblemInstance):
    """P(A2)：min -log2 det(I + H Q H^H / σ²) + ρ Σ ||r_m - z_m||²"""

    metric_name = "capacity"

    def __init__(self, model: MimoChannelModel, noise_power: float, max_power: float,
                 gradient_mode: str = "analytic"):
        if noise_power <= 0 or max_power <= 0:
            raise ValueError(f"P_max 与 σ² 必须为正数: P_max={max_power}, σ²={noise_power}")
        self.model = model
        self.noise_power = noise_power
        self.max_power = max_power
        self.gradient_mode = _check_mode(gradient_mode)

    def channel(self, layout) -> np.ndarray:
        return assemble_mimo_channel(layout, self.model)

    def solve_x(self, layout) -> Tuple[np.ndarray, float]:
        h = self.channel(layout)
        covariance = water_filling(h, self.noise_power, self.max_power).covariance
        return covariance, -capacity(h, covariance, self.noise_power)

    def evaluate(self, layout, covariance) -> float:
        return -capacity(self.channel(layout), covariance, self.noise_power)

    def objective_gradient(self, layout, covariance) -> np.ndarray:
        h = self.channel(layout)
        gram = np.eye(h.shape[0]) + h @ covariance @ h.conj().T / self.noise_power
        # W = Q H^H A^{-1}，A 为 Hermitian
        w = np.linalg.solve(gram, h @ covariance).conj().T
        dx, dy = mimo_row_derivatives(layout, self.model)
        scale = -2.0 / (self.noise_power * math.log(2))
        gx = np.einsum("mn,nm->m", dx, w).real
        gy = np.einsum("mn,nm->m", dy, w).real
        return scale * np.stack([gx, gy], axis=1)

    def metric(self, layout) -> float:
        """注水后的容量 (bit/s/Hz)"""
        return -self.solve_x(layout)[1]


class RzfProblem(ProblemInstance):
    """P(B2)：min ||I_K - H F||_F² + α ||F||_F² + ρ Σ ||r_m - z_m||²"""

    metric_name = "sum_rate"

    def __init__(self, users: Sequence[MisoUserModel], alpha: float, gradient_mode: str = "analytic"):
        if alpha < 0:
            raise ValueError(f"α 必须非负: {alpha}")
        self.users = list(users)
        self.alpha = alpha
        self.gradient_mode = _check_mode(gradient_mode)

    @property
    def noise_powers(self) -> np.ndarray:
        return np.array([user.noise_power for user in self.users])

    def channel(self, layout) -> np.ndarray:
        return assemble_miso_channels(layout, self.users)

    def solve_x(self, layout) -> Tuple[np.ndarray, float]:
        h = self.channel(layout)
        precoder = rzf_precoder(h, self.alpha)
        return precoder, RzfInstance(self.alpha, h, precoder).objective

    def evaluate(self, layout, precoder) -> float:
        return RzfInstance(self.alpha, self.channel(layout), precoder).objective

    def objective_gradient(self, layout, precoder) -> np.ndarray:
        h = self.channel(layout)
        error = np.eye(h.shape[0]) - h @ precoder
        weights = precoder @ error.conj().T
        dx, dy = miso_channel_position_jacobian(layout, self.users)
        gx = np.einsum("mk,mk->m", weights, dx).real
        gy = np.einsum("mk,mk->m", weights, dy).real
        return -2.0 * np.stack([gx, gy], axis=1)

    def metric(self, layout) -> float:
        """RZF 预编码下的和速率 (bit/s/Hz)"""
        precoder, _ = self.solve_x(layout)
        return sum_rate(self.channel(layout), precoder, self.noise_powers)
