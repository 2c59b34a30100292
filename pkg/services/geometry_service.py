"""
天线间距约束的几何服务

负责辅助变量 z 的子问题：在最小间距 D 的约束下，把每个 z_m 投影到
其余天线圆盘之外（三种情况的候选点分析），以及所需的圆-圆、射线-圆求交。
所有长度单位均为波长。
"""
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist

logger = logging.getLogger(__name__)

# 相切判定阈值
EPS_GEOM = 1e-10
# 候选点可行性过滤的容差
EPS_FEAS = 1e-9
# 目标值相等时按 (x, y) 字典序取最小
TIE_TOL = 1e-12

CANDIDATE_POLICIES = ("exhaustive", "minimal")


class GeometryError(ValueError):
    """几何计算异常"""


class DegenerateGeometryError(GeometryError):
    """退化输入：无穷多交点或方向无定义"""


class InfeasibleProjectionError(GeometryError):
    """过滤后候选点集合为空"""


class InfeasibleInstanceError(GeometryError):
    """区域内放不下 M 个满足间距的天线"""


def as_point(point) -> np.ndarray:
    p = np.array(point, dtype=float).reshape(2)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"坐标必须为有限值: {point}")
    return p


def as_layout(layout) -> np.ndarray:
    """把输入转换为 (M, 2) 的浮点数组（总是返回副本）"""
    arr = np.array(layout, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise ValueError(f"天线布局必须是 (M, 2) 数组，实际形状: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("天线布局包含非有限坐标")
    return arr


def pairwise_min_distance(layout) -> float:
    points = as_layout(layout)
    if len(points) < 2:
        return math.inf
    return float(pdist(points).min())


def is_pairwise_feasible(layout, min_distance: float, tol: float = EPS_FEAS) -> bool:
    return pairwise_min_distance(layout) >= min_distance - tol


def penalty_residual(r, z) -> float:
    """Σ_m ||r_m - z_m||²"""
    return float(np.sum((as_layout(r) - as_layout(z)) ** 2))


@dataclass(frozen=True)
class PlacementConstraints:
    """可移动区域 [0, A]² 与最小天线间距 D"""

    region_side: float
    min_distance: float

    def __post_init__(self):
        if not (math.isfinite(self.region_side) and self.region_side > 0):
            raise ValueError(f"区域边长 A 必须为正数: {self.region_side}")
        if not (math.isfinite(self.min_distance) and self.min_distance > 0):
            raise ValueError(f"最小间距 D 必须为正数: {self.min_distance}")

    def grid_capacity(self) -> int:
        """间距为 D 的方形网格在区域内最多能放下的点数"""
        per_side = int(math.floor(self.region_side / self.min_distance + 1e-12)) + 1
        return per_side * per_side

    def check_capacity(self, num_antennas: int) -> None:
        if num_antennas < 1:
            raise ValueError(f"天线数必须至少为 1: {num_antennas}")
        if num_antennas > self.grid_capacity():
            raise InfeasibleInstanceError(
                f"infeasible instance: 边长 {self.region_side} 的区域放不下 "
                f"{num_antennas} 个间距 {self.min_distance} 的天线"
            )

    def contains(self, layout, tol: float = 1e-12) -> bool:
        points = as_layout(layout)
        return bool(np.all(points >= -tol) and np.all(points <= self.region_side + tol))

    def is_feasible(self, layout, tol: float = 1e-6) -> bool:
        return self.contains(layout) and is_pairwise_feasible(layout, self.min_distance, tol)


@dataclass(frozen=True)
class DiskSet:
    """以固定的 z_l (l ≠ m) 为圆心、半径 D 的圆盘集合"""

    centers: np.ndarray
    radius: float

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(centers)):
            raise ValueError("圆心坐标必须为有限值")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"半径必须为正数: {self.radius}")
        object.__setattr__(self, "centers", centers)

    def __len__(self) -> int:
        return len(self.centers)

    def distances(self, point) -> np.ndarray:
        return np.hypot(*(as_point(point) - self.centers).T)

    def admits(self, point, tol: float = EPS_FEAS) -> bool:
        """point 是否在所有圆盘之外（容差 tol）"""
        if len(self) == 0:
            return True
        return bool(np.all(self.distances(point) >= self.radius - tol))

    def reflected(self) -> "DiskSet":
        """关于 x 轴的镜像"""
        return DiskSet(self.centers * np.array([1.0, -1.0]), self.radius)


@dataclass(frozen=True)
class Candidate:
    point: np.ndarray
    source: str  # "circle": 属于 W_l；"ray": 属于 U_l
    disk: int


@dataclass
class CandidateSet:
    members: List[Candidate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def add(self, points: Sequence[np.ndarray], source: str, disk: int) -> None:
        self.members.extend(Candidate(p, source, disk) for p in points)

    def feasible(self, disks: DiskSet) -> "CandidateSet":
        return CandidateSet([c for c in self.members if disks.admits(c.point)])

    def argmin(self, target: np.ndarray) -> np.ndarray:
        if not self.members:
            raise InfeasibleProjectionError("infeasible projection: 候选点集合为空")
        objectives = [float(np.sum((c.point - target) ** 2)) for c in self.members]
        best = min(objectives)
        tied = [c.point for c, value in zip(self.members, objectives) if value <= best + TIE_TOL]
        return min(tied, key=lambda p: (p[0], p[1])).copy()


def circle_circle_intersections(c1, r1: float, c2, r2: float) -> List[np.ndarray]:
    """
    两圆的实交点

    Args:
        c1, r1: 第一个圆的圆心和半径
        c2, r2: 第二个圆的圆心和半径

    Returns:
        list: 0、1（相切）或 2 个交点，按 (x, y) 排序
    """
    c1, c2 = as_point(c1), as_point(c2)
    if r1 <= 0 or r2 <= 0:
        raise ValueError(f"半径必须为正数: {r1}, {r2}")

    delta = c2 - c1
    d = math.hypot(delta[0], delta[1])
    if d <= EPS_GEOM:
        if abs(r1 - r2) <= EPS_GEOM:
            raise DegenerateGeometryError("degenerate: infinite intersections")
        return []
    if d > r1 + r2 + EPS_GEOM or d < abs(r1 - r2) - EPS_GEOM:
        return []

    u = delta / d
    a = (r1 * r1 - r2 * r2 + d * d) / (2 * d)
    foot = c1 + a * u
    if abs(d - (r1 + r2)) <= EPS_GEOM or abs(d - abs(r1 - r2)) <= EPS_GEOM:
        return [foot]

    h = math.sqrt(max(r1 * r1 - a * a, 0.0))
    normal = np.array([-u[1], u[0]])
    return sorted([foot + h * normal, foot - h * normal], key=lambda p: (p[0], p[1]))


def ray_circle_exits(center, radius: float, through) -> List[np.ndarray]:
    """过圆心和 through 的直线与圆的两个交点，近侧在前"""
    center, through = as_point(center), as_point(through)
    if radius <= 0:
        raise ValueError(f"半径必须为正数: {radius}")
    direction = through - center
    norm = math.hypot(direction[0], direction[1])
    if norm <= EPS_GEOM:
        raise DegenerateGeometryError("degenerate: direction undefined")
    u = direction / norm
    return [center + radius * u, center - radius * u]


def _vertices(disks: DiskSet, i: int, j: int) -> List[np.ndarray]:
    try:
        return circle_circle_intersections(disks.centers[i], disks.radius, disks.centers[j], disks.radius)
    except DegenerateGeometryError:
        # 重合的圆心没有孤立交点
        logger.debug("圆 %d 与圆 %d 圆心重合，跳过求交", i, j)
        return []


def enroll_candidates(r, disks: DiskSet, violated: Sequence[int],
                      policy: str = "exhaustive") -> CandidateSet:
    """
    为被违反的圆盘集合 L 生成候选点 V_l = W_l ∪ U_l

    Args:
        r: 目标点 r_m
        disks: 其余天线的圆盘
        violated: L 中的圆盘下标
        policy: "minimal" 只取 ∪_{l∈L} V_l；"exhaustive" 另外加入 L 以外圆之间的交点

    Returns:
        CandidateSet: 未经过滤的候选点
    """
    if policy not in CANDIDATE_POLICIES:
        raise ValueError(f"未知的候选点策略: {policy}")

    r = as_point(r)
    candidates = CandidateSet()
    for l in violated:
        center = disks.centers[l]
        try:
            exits = ray_circle_exits(center, disks.radius, r)
        except DegenerateGeometryError:
            # r_m 与 z_l 重合时固定取 (1, 0) 方向
            unit = np.array([1.0, 0.0])
            exits = [center + disks.radius * unit, center - disks.radius * unit]
        candidates.add(exits, "ray", l)
        for j in range(len(disks)):
            if j != l:
                candidates.add(_vertices(disks, l, j), "circle", l)

    if policy == "exhaustive":
        outside = [j for j in range(len(disks)) if j not in set(violated)]
        for i, j in combinations(outside, 2):
            candidates.add(_vertices(disks, i, j), "circle", i)
    return candidates


def project_outside_disks(r, disks: DiskSet, policy: str = "exhaustive") -> np.ndarray:
    """
    求解 min ||z - r||² s.t. ||z - z_l|| >= D（所有 l）

    Args:
        r: 目标点
        disks: 固定的其余圆盘
        policy: 候选点策略，见 enroll_candidates

    Returns:
        np.ndarray: 全局最优点
    """
    r = as_point(r)
    if len(disks) == 0:
        return r

    violated = np.flatnonzero(disks.distances(r) < disks.radius - EPS_FEAS)
    # 情况 (a)：r 不违反任何约束
    if violated.size == 0:
        return r

    # 情况 (b) |L| = 1 与情况 (c) |L| >= 2 共用同一套候选点枚举
    candidates = enroll_candidates(r, disks, violated.tolist(), policy).feasible(disks)
    return candidates.argmin(r)


def _feasible_objectives(points: np.ndarray, r: np.ndarray, disks: DiskSet) -> Tuple[np.ndarray, np.ndarray]:
    mask = np.ones(len(points), dtype=bool)
    for center in disks.centers:
        mask &= np.sum((points - center) ** 2, axis=1) >= disks.radius ** 2
    feasible = points[mask]
    return feasible, np.sum((feasible - r) ** 2, axis=1)


def grid_search_projection(r, disks: DiskSet, resolution: float = 1e-3,
                           coarse_resolution: float = 1e-2) -> Tuple[np.ndarray, float]:
    """
    暴力网格搜索，作为 project_outside_disks 的对照

    先在圆盘包围盒上做粗网格搜索，再在所有接近最优的粗网格点附近用细网格细化。

    Returns:
        (point, objective): 网格上目标值最小的可行点
    """
    r = as_point(r)
    if len(disks) == 0 or disks.admits(r, tol=0.0):
        return r, 0.0

    pad = disks.radius + 2 * coarse_resolution
    lo = np.minimum(disks.centers.min(axis=0), r) - pad
    hi = np.maximum(disks.centers.max(axis=0), r) + pad
    xs = np.arange(lo[0], hi[0] + coarse_resolution, coarse_resolution)
    ys = np.arange(lo[1], hi[1] + coarse_resolution, coarse_resolution)
    grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    coarse, coarse_obj = _feasible_objectives(grid, r, disks)

    index = int(np.argmin(coarse_obj))
    best_point, best_obj = coarse[index], float(coarse_obj[index])

    reach = 3 * coarse_resolution
    margin = 2 * reach * math.sqrt(best_obj) + reach ** 2
    seeds = coarse[coarse_obj <= best_obj + margin]
    offsets = np.arange(-reach, reach + resolution / 2, resolution)
    window = np.stack(np.meshgrid(offsets, offsets, indexing="ij"), axis=-1).reshape(-1, 2)

    for chunk in np.array_split(seeds, max(1, len(seeds) // 64)):
        points = (chunk[:, None, :] + window[None, :, :]).reshape(-1, 2)
        fine, fine_obj = _feasible_objectives(points, r, disks)
        if fine_obj.size and fine_obj.min() < best_obj:
            index = int(np.argmin(fine_obj))
            best_point, best_obj = fine[index], float(fine_obj[index])
    return best_point.copy(), best_obj


@dataclass
class ZSweepResult:
    z: np.ndarray
    objectives: List[float]  # 下标 0 为初始值，之后每轮一个
    sweeps: int
    fallbacks: int


def run_z_sweeps(r, z_init, min_distance: float, tol: float = 1e-6, max_sweeps: int = 100,
                 policy: str = "exhaustive") -> ZSweepResult:
    """
    按 m = 1..M 的顺序逐个更新 z_m，直到相邻两轮目标值的相对变化不超过 tol

    Args:
        r: 当前天线位置
        z_init: 满足间距约束的初始辅助变量
        min_distance: 最小间距 D
        tol: 相对变化阈值
        max_sweeps: 最大轮数
        policy: 候选点策略

    Returns:
        ZSweepResult: 新的 z 以及每轮目标值
    """
    r = as_layout(r)
    z = as_layout(z_init)
    if r.shape != z.shape:
        raise ValueError(f"r 与 z 的形状不一致: {r.shape} vs {z.shape}")
    if min_distance <= 0:
        raise ValueError(f"最小间距 D 必须为正数: {min_distance}")
    if max_sweeps < 1:
        raise ValueError(f"max_sweeps 必须至少为 1: {max_sweeps}")
    if not is_pairwise_feasible(z, min_distance):
        raise ValueError(
            f"z_init 不满足最小间距约束: 最小间距 {pairwise_min_distance(z):.6g} < {min_distance}"
        )

    objective = penalty_residual(r, z)
    history = [objective]
    fallbacks = 0
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for m in range(len(z)):
            others = DiskSet(np.delete(z, m, axis=0), min_distance)
            try:
                candidate = project_outside_disks(r[m], others, policy)
            except InfeasibleProjectionError:
                fallbacks += 1
                logger.warning("z_%d 的候选点集合为空，保留上一轮的位置", m)
                continue
            current = float(np.sum((z[m] - r[m]) ** 2))
            if float(np.sum((candidate - r[m]) ** 2)) <= current or not others.admits(z[m]):
                z[m] = candidate

        previous, objective = objective, penalty_residual(r, z)
        history.append(objective)
        if abs(previous - objective) <= tol * abs(previous):
            break

    logger.debug("z 子问题: %d 轮, 目标值 %.6g", sweeps, objective)
    return ZSweepResult(z=z, objectives=history, sweeps=sweeps, fallbacks=fallbacks)


def solve_z_subproblem(r, z_init, min_distance: float, tol: float = 1e-6, max_sweeps: int = 100,
                       policy: str = "exhaustive") -> np.ndarray:
    """P1-c：返回更新后的辅助变量 z"""
    return run_z_sweeps(r, z_init, min_distance, tol, max_sweeps, policy).z


def random_projection_instance(rng: np.random.Generator, max_disks: int = 4, min_distance_range=(0.3, 1.0),
                               half_width: float = 1.0, max_attempts: int = 1000) -> Tuple[np.ndarray, DiskSet]:
    """
    随机生成一个 z_m 投影实例：1..max_disks 个两两间距 >= D 的圆心，以及目标点 r

    Returns:
        (r, disks)
    """
    radius = float(rng.uniform(*min_distance_range))
    wanted = int(rng.integers(1, max_disks + 1))
    centers: List[np.ndarray] = []
    for _ in range(max_attempts):
        if len(centers) == wanted:
            break
        point = rng.uniform(-half_width, half_width, 2)
        if all(math.hypot(*(point - c)) >= radius for c in centers):
            centers.append(point)
    target = rng.uniform(-half_width, half_width, 2)
    return target, DiskSet(np.array(centers), radius)
