"""
对齐模块 - DTW与soft-DTW：累计代价、归一化分数、梯度和三元组损失

两种动态规划都沿反对角线用numpy向量化计算。
步进模式为对称的 {(1,0), (0,1), (1,1)}，无斜率约束、无带宽限制。
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Literal, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from svctool.errors import AlignmentError

logger = logging.getLogger(__name__)

LocalDistance = Literal["euclidean", "cityblock", "sqeuclidean"]


class AlignmentResult(BaseModel):
    """DTW对齐结果"""
    model_config = ConfigDict(frozen=True)

    accumulated_cost: float = Field(..., ge=0, description="终点(n,m)的累计代价")
    path: Tuple[Tuple[int, int], ...] = Field(..., description="对齐路径（0起始索引对）")
    path_length: int = Field(..., ge=1, description="路径长度")
    normalized_score: float = Field(..., ge=0, description="累计代价 / 路径长度")


@dataclass(frozen=True)
class SoftDtwResult:
    """soft-DTW结果: 值以及对第一个序列的梯度 (n, d)"""
    gamma: float
    value: float
    gradient_wrt_first: np.ndarray


def _as_matrix(seq: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise AlignmentError(f"{name} must be a 1-D or 2-D array")
    if arr.shape[0] == 0:
        raise AlignmentError(f"{name} is empty")
    return arr


def _check_pair(A: ArrayLike, B: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    a = _as_matrix(A, "first sequence")
    b = _as_matrix(B, "second sequence")
    if a.shape[1] != b.shape[1]:
        raise AlignmentError(f"channel mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def _diagonals(n: int, m: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """按反对角线顺序产生 (i数组, j数组)，索引以1起始"""
    for k in range(2, n + m + 1):
        ii = np.arange(max(1, k - m), min(n, k - 1) + 1)
        yield ii, k - ii


def local_cost_matrix(A: ArrayLike, B: ArrayLike, local: LocalDistance = "euclidean") -> np.ndarray:
    """
    逐行局部距离矩阵

    Args:
        A: (n, d) 序列
        B: (m, d) 序列
        local: euclidean | cityblock | sqeuclidean

    Returns:
        np.ndarray: (n, m) 距离矩阵
    """
    a, b = _check_pair(A, B)
    if local not in ("euclidean", "cityblock", "sqeuclidean"):
        raise AlignmentError(f"Unknown local distance: {local}")
    return cdist(a, b, metric=local)


def _accumulate(cost: np.ndarray) -> np.ndarray:
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for ii, jj in _diagonals(n, m):
        best = np.minimum(np.minimum(acc[ii - 1, jj - 1], acc[ii - 1, jj]), acc[ii, jj - 1])
        acc[ii, jj] = cost[ii - 1, jj - 1] + best
    return acc


def _backtrack(acc: np.ndarray) -> List[Tuple[int, int]]:
    """回溯最优路径；平局时依次优先对角、纵向、横向"""
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        diag, vert, horiz = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
        if diag <= vert and diag <= horiz:
            i, j = i - 1, j - 1
        elif vert <= horiz:
            i -= 1
        else:
            j -= 1
        path.append((i - 1, j - 1))
    path.reverse()
    return path


def dtw(A: ArrayLike, B: ArrayLike, local: LocalDistance = "euclidean") -> AlignmentResult:
    """
    经典DTW

    Args:
        A: (n, d) 序列
        B: (m, d) 序列
        local: 局部距离 euclidean | cityblock

    Returns:
        AlignmentResult: 累计代价、路径及归一化分数

    Raises:
        AlignmentError: 空输入或通道数不一致
    """
    cost = local_cost_matrix(A, B, local)
    acc = _accumulate(cost)
    path = _backtrack(acc)
    total = float(acc[-1, -1])
    return AlignmentResult(
        accumulated_cost=total,
        path=tuple(path),
        path_length=len(path),
        normalized_score=total / len(path),
    )


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not gamma > 0:
        raise AlignmentError(f"gamma must be > 0, got {gamma}")
    return gamma


def _soft_forward(cost: np.ndarray, gamma: float) -> np.ndarray:
    """soft-DTW前向递推，返回 (n+2, m+2) 的R表"""
    n, m = cost.shape
    acc = np.full((n + 2, m + 2), np.inf)
    acc[0, 0] = 0.0
    for ii, jj in _diagonals(n, m):
        prev = np.stack((acc[ii - 1, jj - 1], acc[ii - 1, jj], acc[ii, jj - 1]))
        # logsumexp内部做最大值平移，避免溢出
        acc[ii, jj] = cost[ii - 1, jj - 1] - gamma * logsumexp(-prev / gamma, axis=0)
    return acc


def _soft_backward(cost: np.ndarray, acc: np.ndarray, gamma: float) -> np.ndarray:
    """soft-DTW反向递推，返回对代价矩阵的梯度 (n, m)"""
    n, m = cost.shape
    d_ext = np.zeros((n + 2, m + 2))
    d_ext[1:n + 1, 1:m + 1] = cost
    r = acc.copy()
    r[:, m + 1] = -np.inf
    r[n + 1, :] = -np.inf
    r[n + 1, m + 1] = r[n, m]

    e = np.zeros((n + 2, m + 2))
    e[n + 1, m + 1] = 1.0
    for ii, jj in reversed(list(_diagonals(n, m))):
        base = r[ii, jj]
        a = np.exp((r[ii + 1, jj] - base - d_ext[ii + 1, jj]) / gamma)
        b = np.exp((r[ii, jj + 1] - base - d_ext[ii, jj + 1]) / gamma)
        c = np.exp((r[ii + 1, jj + 1] - base - d_ext[ii + 1, jj + 1]) / gamma)
        e[ii, jj] = e[ii + 1, jj] * a + e[ii, jj + 1] * b + e[ii + 1, jj + 1] * c
    return e[1:n + 1, 1:m + 1]


def soft_dtw_value(A: ArrayLike, B: ArrayLike, gamma: float = 1.0) -> float:
    """
    只计算soft-DTW值（平方欧氏局部代价）

    Args:
        A: (n, d) 序列
        B: (m, d) 序列
        gamma: 平滑参数 > 0

    Returns:
        float: soft-DTW值
    """
    gamma = _check_gamma(gamma)
    cost = local_cost_matrix(A, B, "sqeuclidean")
    acc = _soft_forward(cost, gamma)
    return float(acc[cost.shape[0], cost.shape[1]])


def soft_dtw(A: ArrayLike, B: ArrayLike, gamma: float = 1.0) -> SoftDtwResult:
    """
    soft-DTW值及其对第一个序列的梯度

    Args:
        A: (n, d) 序列
        B: (m, d) 序列
        gamma: 平滑参数 > 0

    Returns:
        SoftDtwResult: 值与梯度

    Raises:
        AlignmentError: gamma <= 0、空输入或通道数不一致
    """
    gamma = _check_gamma(gamma)
    a, b = _check_pair(A, B)
    cost = local_cost_matrix(a, b, "sqeuclidean")
    acc = _soft_forward(cost, gamma)
    n, m = cost.shape
    value = float(acc[n, m])
    if not np.isfinite(value):
        raise AlignmentError("soft-DTW value is not finite")

    weights = _soft_backward(cost, acc, gamma)
    # d||a_i - b_j||^2 / d a_i = 2 (a_i - b_j)
    gradient = 2.0 * (weights.sum(axis=1)[:, None] * a - weights @ b)
    return SoftDtwResult(gamma=gamma, value=value, gradient_wrt_first=gradient)


def soft_dtw_divergence(A: ArrayLike, B: ArrayLike, gamma: float = 1.0) -> float:
    """
    soft-DTW散度 sdtw(A,B) - (sdtw(A,A) + sdtw(B,B)) / 2，非负

    Args:
        A: (n, d) 序列
        B: (m, d) 序列
        gamma: 平滑参数 > 0

    Returns:
        float: 散度
    """
    value = soft_dtw_value(A, B, gamma)
    return value - 0.5 * (soft_dtw_value(A, A, gamma) + soft_dtw_value(B, B, gamma))


def triplet_hinge(d_positive: float, d_negative: float, margin: float) -> float:
    """三元组铰链: max(0, d(a,p) - d(a,n) + margin)"""
    if margin < 0:
        raise AlignmentError(f"margin must be >= 0, got {margin}")
    return max(0.0, float(d_positive) - float(d_negative) + float(margin))


def triplet_loss(anchor: ArrayLike, positive: ArrayLike, negative: ArrayLike,
                 gamma: float = 1.0, margin: float = 1.0) -> float:
    """
    基于soft-DTW距离的三元组损失

    Args:
        anchor: 锚点序列
        positive: 同类序列
        negative: 异类序列
        gamma: soft-DTW平滑参数
        margin: 间隔 >= 0

    Returns:
        float: max(0, sdtw(a,p) - sdtw(a,n) + margin)
    """
    return triplet_hinge(
        soft_dtw_value(anchor, positive, gamma),
        soft_dtw_value(anchor, negative, gamma),
        margin,
    )
