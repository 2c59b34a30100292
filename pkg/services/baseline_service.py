"""
对比方案：固定位置天线 (FPA) 与穷举天线选择 (AS)
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Optional, Tuple

import numpy as np

from services.geometry_service import PlacementConstraints, as_layout, is_pairwise_feasible

logger = logging.getLogger(__name__)

HALF_WAVELENGTH = 0.5
AS_CANDIDATES = 8
AS_COLUMNS = 4

SubsetEvaluator = Callable[[Tuple[int, ...]], float]


class RegionTooSmallError(ValueError):
    """网格超出可移动区域"""


@dataclass(frozen=True)
class CandidateGrid:
    positions: np.ndarray
    spacing: float = HALF_WAVELENGTH

    def __post_init__(self):
        positions = as_layout(self.positions)
        if not is_pairwise_feasible(positions, self.spacing, tol=1e-12):
            raise ValueError(f"候选天线间距小于 {self.spacing}")
        object.__setattr__(self, "positions", positions)

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, indices) -> np.ndarray:
        return self.positions[list(indices)]


@dataclass
class SelectionResult:
    indices: Tuple[int, ...]
    score: float
    evaluations: int


def _anchored_grid(count: int, columns: int, spacing: float, constraints: PlacementConstraints) -> np.ndarray:
    rows = math.ceil(count / columns)
    extent = (max(columns, rows) - 1) * spacing
    if extent > constraints.region_side + 1e-12:
        raise RegionTooSmallError(
            f"region too small: {rows}×{columns} 网格需要边长 {extent}，区域边长只有 {constraints.region_side}"
        )
    return np.array([(spacing * (i % columns), spacing * (i // columns)) for i in range(count)], dtype=float)


def fpa_layout(num_antennas: int, constraints: PlacementConstraints,
               spacing: float = HALF_WAVELENGTH) -> np.ndarray:
    """
    固定位置天线布局

    从区域角点 (0, 0) 开始、间距 λ/2 的方形网格，按行优先填充；M = 4 时为 2×2。
    """
    if num_antennas < 1:
        raise ValueError(f"天线数必须至少为 1: {num_antennas}")
    columns = math.ceil(math.sqrt(num_antennas))
    return _anchored_grid(num_antennas, columns, spacing, constraints)


def candidate_grid(constraints: PlacementConstraints, count: int = AS_CANDIDATES,
                   spacing: float = HALF_WAVELENGTH) -> CandidateGrid:
    """AS 的候选天线：默认 2×4 网格；放不下 4 列时改用区域能容纳的列数"""
    fit = int(math.floor(constraints.region_side / spacing + 1e-12)) + 1
    columns = min(AS_COLUMNS, fit)
    return CandidateGrid(_anchored_grid(count, columns, spacing, constraints), spacing)


def antenna_selection(grid: CandidateGrid, choose: int, evaluator: SubsetEvaluator,
                      max_workers: Optional[int] = None) -> SelectionResult:
    """
    穷举所有大小为 choose 的子集，返回评分最高者

    Args:
        grid: 候选天线
        choose: 选中的天线数
        evaluator: 子集下标 -> 评分
        max_workers: 大于 1 时并行评估

    Returns:
        SelectionResult: 并列时取字典序最小的下标元组
    """
    if not 1 <= choose <= len(grid):
        raise ValueError(f"choose 必须在 [1, {len(grid)}] 内: {choose}")

    subsets = list(combinations(range(len(grid)), choose))
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            scores = list(executor.map(evaluator, subsets))
    else:
        scores = [evaluator(subset) for subset in subsets]

    # combinations 按字典序生成，严格大于才替换即可保证并列时取第一个
    best_index = 0
    for index, score in enumerate(scores):
        if score > scores[best_index]:
            best_index = index
    logger.debug("天线选择: %d 个子集, 最优 %s = %.6g", len(subsets), subsets[best_index], scores[best_index])
    return SelectionResult(subsets[best_index], float(scores[best_index]), len(subsets))
