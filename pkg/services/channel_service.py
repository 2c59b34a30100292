"""
场响应信道模型

信道矩阵是天线位置的确定性函数：
  MIMO:  H = [b(r_1), ..., b(r_M)]^H Σ G        (M × N)
  MISO:  第 k 行为 h_k^H，h_k[m] = Σ_q σ_{k,q} b_{k,q}(r_m)   (K × M)
长度统一以波长为单位（默认 λ = 1）。
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from services.geometry_service import as_layout, as_point

logger = logging.getLogger(__name__)


class ChannelModelError(ValueError):
    """信道模型参数不一致"""


@dataclass(frozen=True)
class PathAngles:
    """一组传播路径的仰角 θ 与方位角 φ（弧度，按原样保存）"""

    elevation: np.ndarray
    azimuth: np.ndarray

    def __post_init__(self):
        elevation = np.array(self.elevation, dtype=float).reshape(-1)
        azimuth = np.array(self.azimuth, dtype=float).reshape(-1)
        if elevation.shape != azimuth.shape:
            raise ChannelModelError(f"仰角与方位角数量不一致: {elevation.size} vs {azimuth.size}")
        if elevation.size < 1:
            raise ChannelModelError("至少需要一条路径")
        if not (np.all(np.isfinite(elevation)) and np.all(np.isfinite(azimuth))):
            raise ChannelModelError("路径角度必须为有限值")
        object.__setattr__(self, "elevation", elevation)
        object.__setattr__(self, "azimuth", azimuth)

    def __len__(self) -> int:
        return self.elevation.size

    @property
    def x_weights(self) -> np.ndarray:
        """ρ^q 中 x 的系数 sinθ cosφ"""
        return np.sin(self.elevation) * np.cos(self.azimuth)

    @property
    def y_weights(self) -> np.ndarray:
        """ρ^q 中 y 的系数 cosθ"""
        return np.cos(self.elevation)


@dataclass(frozen=True)
class MimoChannelModel:
    wavelength: float
    transmit_paths: PathAngles
    receive_paths: PathAngles
    path_response: np.ndarray
    num_device_antennas: int

    def __post_init__(self):
        sigma = np.array(self.path_response, dtype=complex)
        expected = (len(self.receive_paths), len(self.transmit_paths))
        if sigma.shape != expected:
            raise ChannelModelError(f"路径响应矩阵 Σ 的形状应为 {expected}，实际为 {sigma.shape}")
        if self.wavelength <= 0:
            raise ChannelModelError(f"波长必须为正数: {self.wavelength}")
        if self.num_device_antennas < 1:
            raise ChannelModelError(f"设备天线数必须至少为 1: {self.num_device_antennas}")
        object.__setattr__(self, "path_response", sigma)


@dataclass(frozen=True)
class MisoUserModel:
    wavelength: float
    paths: PathAngles
    gains: np.ndarray
    noise_power: float

    def __post_init__(self):
        gains = np.array(self.gains, dtype=complex).reshape(-1)
        if gains.size != len(self.paths):
            raise ChannelModelError(f"路径增益数量 {gains.size} 与路径数 {len(self.paths)} 不一致")
        if self.noise_power <= 0:
            raise ChannelModelError(f"噪声功率必须为正数: {self.noise_power}")
        if self.wavelength <= 0:
            raise ChannelModelError(f"波长必须为正数: {self.wavelength}")
        object.__setattr__(self, "gains", gains)


def _phases(layout: np.ndarray, paths: PathAngles, wavelength: float) -> np.ndarray:
    """(L, M) 相位矩阵 2π/λ · ρ^q(r_m)"""
    rho = np.outer(paths.x_weights, layout[:, 0]) + np.outer(paths.y_weights, layout[:, 1])
    return 2 * np.pi / wavelength * rho


def field_response_matrix(layout, paths: PathAngles, wavelength: float) -> np.ndarray:
    """第 m 列为 b(r_m) 的 (L, M) 矩阵"""
    return np.exp(1j * _phases(as_layout(layout), paths, wavelength))


def receive_field_vector(r, model: MimoChannelModel) -> np.ndarray:
    """b(r)，长度 L_r，每个元素模为 1"""
    return field_response_matrix(as_point(r), model.receive_paths, model.wavelength)[:, 0]


def transmit_field_matrix(model: MimoChannelModel) -> np.ndarray:
    """设备侧 (L_t, N) 场响应矩阵 G，(p, n) 元素为 exp{jπ sinθ_t^p cosφ_t^p (n-1)}"""
    n = np.arange(model.num_device_antennas)
    return np.exp(1j * np.pi * np.outer(model.transmit_paths.x_weights, n))


def assemble_mimo_channel(layout, model: MimoChannelModel) -> np.ndarray:
    """H = B^H Σ G，形状 (M, N)"""
    b = field_response_matrix(layout, model.receive_paths, model.wavelength)
    return b.conj().T @ model.path_response @ transmit_field_matrix(model)


def _check_users(users: Sequence[MisoUserModel]) -> None:
    if len(users) < 1:
        raise ChannelModelError("至少需要一个用户")
    wavelengths = {user.wavelength for user in users}
    if len(wavelengths) != 1:
        raise ChannelModelError(f"所有用户的波长必须一致: {sorted(wavelengths)}")


def assemble_miso_channels(layout, users: Sequence[MisoUserModel]) -> np.ndarray:
    """
    多用户 MISO 信道

    Args:
        layout: (M, 2) 天线位置
        users: K 个用户的模型

    Returns:
        np.ndarray: (K, M) 矩阵，第 k 行为 h_k^H，接收信号即 H F s
    """
    layout = as_layout(layout)
    _check_users(users)
    rows = []
    for user in users:
        b = field_response_matrix(layout, user.paths, user.wavelength)
        rows.append(np.conj(user.gains @ b))
    return np.vstack(rows)


def channel_position_jacobian(layout, model: MimoChannelModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    ∂H/∂x_m 与 ∂H/∂y_m

    Returns:
        (dx, dy): 形状均为 (M, M, N)，dx[m] 只有第 m 行非零
    """
    layout = as_layout(layout)
    rows_dx, rows_dy = mimo_row_derivatives(layout, model)
    num_antennas = len(layout)
    dx = np.zeros((num_antennas,) + rows_dx.shape, dtype=complex)
    dy = np.zeros_like(dx)
    for m in range(num_antennas):
        dx[m, m] = rows_dx[m]
        dy[m, m] = rows_dy[m]
    return dx, dy


def mimo_row_derivatives(layout, model: MimoChannelModel) -> Tuple[np.ndarray, np.ndarray]:
    """H 第 m 行对 x_m、y_m 的导数，形状均为 (M, N)"""
    layout = as_layout(layout)
    paths = model.receive_paths
    kappa = 2 * np.pi / model.wavelength
    b = field_response_matrix(layout, paths, model.wavelength)
    sigma_g = model.path_response @ transmit_field_matrix(model)
    # ∂conj(b_q)/∂x = -jκ sinθ cosφ · conj(b_q)
    db_x = -1j * kappa * paths.x_weights[:, None] * b.conj()
    db_y = -1j * kappa * paths.y_weights[:, None] * b.conj()
    return db_x.T @ sigma_g, db_y.T @ sigma_g


def miso_channel_position_jacobian(layout, users: Sequence[MisoUserModel]) -> Tuple[np.ndarray, np.ndarray]:
    """
    MISO 信道第 m 列对 x_m、y_m 的导数

    Returns:
        (dx, dy): 形状均为 (M, K)，dx[m] 为 ∂H[:, m]/∂x_m
    """
    layout = as_layout(layout)
    _check_users(users)
    cols_dx, cols_dy = [], []
    for user in users:
        kappa = 2 * np.pi / user.wavelength
        b = field_response_matrix(layout, user.paths, user.wavelength)
        weighted = user.gains[:, None] * b
        cols_dx.append(np.conj(1j * kappa * (user.paths.x_weights @ weighted)))
        cols_dy.append(np.conj(1j * kappa * (user.paths.y_weights @ weighted)))
    return np.array(cols_dx).T, np.array(cols_dy).T


def _complex_gaussian(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    scale = np.sqrt(variance / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def random_path_angles(rng: np.random.Generator, num_paths: int) -> PathAngles:
    """仰角、方位角均在 [0, π) 上独立均匀分布"""
    return PathAngles(rng.uniform(0.0, np.pi, num_paths), rng.uniform(0.0, np.pi, num_paths))


def random_mimo_model(rng: np.random.Generator, num_paths: int, num_device_antennas: int,
                      wavelength: float = 1.0, full_path_response: bool = False) -> MimoChannelModel:
    """
    生成随机 MIMO 场响应模型，L_t = L_r = num_paths

    Args:
        rng: 调用方提供的随机数流
        num_paths: 路径数 L
        num_device_antennas: 设备侧 ULA 天线数 N
        wavelength: 波长
        full_path_response: True 时 Σ 为满矩阵，否则为对角阵

    Returns:
        MimoChannelModel: 总平均路径功率归一化为 1
    """
    if num_paths < 1:
        raise ChannelModelError(f"路径数必须至少为 1: {num_paths}")
    transmit = random_path_angles(rng, num_paths)
    receive = random_path_angles(rng, num_paths)
    if full_path_response:
        sigma = _complex_gaussian(rng, (num_paths, num_paths), 1.0 / num_paths ** 2)
    else:
        sigma = np.diag(_complex_gaussian(rng, num_paths, 1.0 / num_paths))
    return MimoChannelModel(wavelength, transmit, receive, sigma, num_device_antennas)


def random_miso_users(rng: np.random.Generator, num_users: int, num_paths: int,
                      noise_power: float, wavelength: float = 1.0) -> List[MisoUserModel]:
    if num_users < 1:
        raise ChannelModelError(f"用户数必须至少为 1: {num_users}")
    users = []
    for _ in range(num_users):
        paths = random_path_angles(rng, num_paths)
        gains = _complex_gaussian(rng, num_paths, 1.0 / num_paths)
        users.append(MisoUserModel(wavelength, paths, gains, noise_power))
    return users
