"""
特征模块 - 时间函数、全局特征向量、特征差向量和路径签名特征
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from svctool.errors import FeatureError
from svctool.sigdata import Signature, WritingInput

logger = logging.getLogger(__name__)

TIME_FUNCTION_NAMES: Tuple[str, ...] = (
    "x", "y", "dx", "dy", "ddx", "ddy", "v", "dv", "a", "theta", "p", "dp",
)
PRESSURE_CHANNELS: Tuple[str, ...] = ("p", "dp")

MINIMUM_FEATURES: Tuple[str, ...] = ("std_x", "std_y", "duration_ms")
EXTENDED_FEATURES: Tuple[str, ...] = MINIMUM_FEATURES + (
    "mean_v", "max_v", "mean_p", "std_p", "sample_count",
    "path_length", "width", "height", "aspect_ratio",
)

FeatureSet = Literal["minimum", "extended"]

MAX_SIGNATURE_DEPTH = 4


# ---------------------------------------------------------------------------
# 时间函数
# ---------------------------------------------------------------------------

def derivative(series: np.ndarray, timestamps: np.ndarray) -> np.ndarray:
    """
    对时间求导：内部点用中心差分，端点用单侧差分

    Args:
        series: 数值序列
        timestamps: 严格递增的时间戳（毫秒）

    Returns:
        np.ndarray: 与输入等长的导数序列

    Raises:
        FeatureError: 长度小于2、长度不一致或时间戳非严格递增
    """
    s = np.asarray(series, dtype=np.float64)
    t = np.asarray(timestamps, dtype=np.float64)
    if s.ndim != 1 or s.shape != t.shape:
        raise FeatureError("series and timestamps must be 1-D of equal length")
    if s.shape[0] < 2:
        raise FeatureError(f"derivative needs at least 2 samples, got {s.shape[0]}")
    if np.any(np.diff(t) <= 0):
        raise FeatureError("timestamps must be strictly increasing")

    out = np.empty_like(s)
    out[1:-1] = (s[2:] - s[:-2]) / (t[2:] - t[:-2])
    out[0] = (s[1] - s[0]) / (t[1] - t[0])
    out[-1] = (s[-1] - s[-2]) / (t[-1] - t[-2])
    return out


@dataclass(frozen=True)
class TimeFunctionSet:
    """多通道时间函数，values形状为 (n, 通道数)"""
    names: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise FeatureError("time function matrix does not match channel names")

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def channel(self, name: str) -> np.ndarray:
        """按名称取单个通道"""
        return self.values[:, self.names.index(name)]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """按名称顺序取多个通道组成的矩阵"""
        return self.values[:, [self.names.index(n) for n in names]]

    def without(self, names: Sequence[str]) -> "TimeFunctionSet":
        """去掉指定通道"""
        keep = [n for n in self.names if n not in names]
        return TimeFunctionSet(names=tuple(keep), values=self.matrix(keep))


def _collapse_duplicates(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """相同时间戳的连续采样点只保留第一个；返回保留掩码和展开索引"""
    keep = np.concatenate(([True], np.diff(t) != 0))
    expand = np.cumsum(keep) - 1
    return keep, expand


def time_functions(sig: Signature) -> TimeFunctionSet:
    """
    提取12个时间函数: x, y, dx, dy, ddx, ddy, v, dv, a, theta, p, dp

    导数在去重后的时间网格上计算，再展开回原采样长度。

    Args:
        sig: 预处理后的签名

    Returns:
        TimeFunctionSet: 时间函数集合
    """
    keep, expand = _collapse_duplicates(sig.t)
    t = sig.t[keep]

    def d(series: np.ndarray) -> np.ndarray:
        return derivative(series, t)

    x, y, p = sig.x[keep], sig.y[keep], sig.pressure[keep]
    dx, dy = d(x), d(y)
    ddx, ddy = d(dx), d(dy)
    v = np.hypot(dx, dy)
    a = np.hypot(ddx, ddy)
    theta = np.arctan2(dy, dx)
    theta[v == 0] = 0.0
    columns = [x, y, dx, dy, ddx, ddy, v, d(v), a, theta, p, d(p)]

    values = np.column_stack(columns)[expand]
    return TimeFunctionSet(names=TIME_FUNCTION_NAMES, values=values)


def online_time_functions(sig: Signature) -> TimeFunctionSet:
    """
    DTW在线系统使用的时间函数；无压力信息的手指签名去掉压力及其导数通道

    Args:
        sig: 预处理后的签名

    Returns:
        TimeFunctionSet: 时间函数集合
    """
    tf = time_functions(sig)
    if sig.meta.input == WritingInput.FINGER:
        return tf.without(PRESSURE_CHANNELS)
    return tf


# ---------------------------------------------------------------------------
# 全局特征
# ---------------------------------------------------------------------------

class GlobalFeatureVector(BaseModel):
    """固定顺序的命名全局特征"""
    model_config = ConfigDict(frozen=True)

    names: Tuple[str, ...] = Field(..., description="特征名")
    values: Tuple[float, ...] = Field(..., description="特征值")

    @model_validator(mode="after")
    def _check(self) -> "GlobalFeatureVector":
        if len(self.names) != len(self.values):
            raise ValueError("names and values differ in length")
        if any(math.isnan(v) for v in self.values):
            raise ValueError("NaN feature value")
        return self

    def as_array(self) -> np.ndarray:
        """转换为numpy数组"""
        return np.asarray(self.values, dtype=np.float64)

    def as_dict(self) -> Dict[str, float]:
        """转换为 名称 -> 值 字典"""
        return dict(zip(self.names, self.values))

    def __len__(self) -> int:
        return len(self.values)


def global_features(sig: Signature, feature_set: FeatureSet = "extended") -> GlobalFeatureVector:
    """
    计算全局特征（标准差为总体标准差）

    Args:
        sig: 签名
        feature_set: minimum | extended

    Returns:
        GlobalFeatureVector: 全局特征向量
    """
    if feature_set not in ("minimum", "extended"):
        raise FeatureError(f"Unknown feature set: {feature_set}")

    values = {
        "std_x": float(np.std(sig.x)),
        "std_y": float(np.std(sig.y)),
        "duration_ms": float(sig.t[-1] - sig.t[0]),
    }
    if feature_set == "extended":
        v = time_functions(sig).channel("v")
        width = float(np.ptp(sig.x))
        height = float(np.ptp(sig.y))
        values.update({
            "mean_v": float(np.mean(v)),
            "max_v": float(np.max(v)),
            "mean_p": float(np.mean(sig.pressure)),
            "std_p": float(np.std(sig.pressure)),
            "sample_count": float(len(sig)),
            "path_length": float(np.sum(np.hypot(np.diff(sig.x), np.diff(sig.y)))),
            "width": width,
            "height": height,
            "aspect_ratio": width / height if height > 0 else 0.0,
        })
    names = MINIMUM_FEATURES if feature_set == "minimum" else EXTENDED_FEATURES
    return GlobalFeatureVector(names=names, values=tuple(values[n] for n in names))


def feature_difference(f_enrolled: GlobalFeatureVector, f_test: GlobalFeatureVector) -> GlobalFeatureVector:
    """
    特征差向量 F = |F_enrolled - F_test|

    Args:
        f_enrolled: 注册签名特征
        f_test: 测试签名特征

    Returns:
        GlobalFeatureVector: 逐元素绝对差

    Raises:
        FeatureError: 维度或特征名不一致
    """
    if f_enrolled.names != f_test.names:
        raise FeatureError(
            f"feature vectors differ: {len(f_enrolled)} vs {len(f_test)} features")
    diff = np.abs(f_enrolled.as_array() - f_test.as_array())
    return GlobalFeatureVector(names=f_enrolled.names, values=tuple(float(v) for v in diff))


# ---------------------------------------------------------------------------
# 路径签名
# ---------------------------------------------------------------------------

def _segment_levels(delta: np.ndarray, depth: int) -> List[np.ndarray]:
    """线性段的签名: 第k层为 delta^{⊗k} / k!"""
    levels = [np.array(1.0)]
    for k in range(1, depth + 1):
        levels.append(np.multiply.outer(levels[-1], delta) / k)
    return levels


def chen_combine(first: List[np.ndarray], second: List[np.ndarray]) -> List[np.ndarray]:
    """
    Chen恒等式：拼接路径的签名 = 两段签名的张量积（截断）

    Args:
        first: 第一段路径的各层（含第0层标量1）
        second: 第二段路径的各层

    Returns:
        List[np.ndarray]: 拼接路径的各层
    """
    depth = len(first) - 1
    combined = [np.array(1.0)]
    for k in range(1, depth + 1):
        level = first[k] + second[k]
        for i in range(1, k):
            level = level + np.multiply.outer(first[i], second[k - i])
        combined.append(level)
    return combined


def path_signature_levels(path: np.ndarray, depth: int) -> List[np.ndarray]:
    """
    分段线性路径的截断签名

    Args:
        path: (n, d) 路径点
        depth: 截断深度 1..4

    Returns:
        List[np.ndarray]: 第0..depth层，第k层形状为 (d,)*k
    """
    points = np.asarray(path, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise FeatureError("path needs at least 2 points")
    if not 1 <= depth <= MAX_SIGNATURE_DEPTH:
        raise FeatureError(f"depth must be in 1..{MAX_SIGNATURE_DEPTH}, got {depth}")

    increments = np.diff(points, axis=0)
    levels = _segment_levels(increments[0], depth)
    for delta in increments[1:]:
        levels = chen_combine(levels, _segment_levels(delta, depth))
    return levels


def _flatten(levels: List[np.ndarray]) -> Tuple[float, ...]:
    return tuple(float(v) for level in levels[1:] for v in level.ravel())


def _words(dim: int, depth: int) -> List[str]:
    alphabet = "123456789"[:dim]
    return ["".join(w) for k in range(1, depth + 1) for w in itertools.product(alphabet, repeat=k)]


class PathSignatureVector(BaseModel):
    """二维路径 (x, y) 的截断签名项，按层、按字典序排列"""
    model_config = ConfigDict(frozen=True)

    depth: int = Field(..., ge=1, le=MAX_SIGNATURE_DEPTH, description="截断深度")
    terms: Tuple[float, ...] = Field(..., description="迭代积分系数")

    @model_validator(mode="after")
    def _check_terms(self) -> "PathSignatureVector":
        expected = sum(2 ** k for k in range(1, self.depth + 1))
        if len(self.terms) != expected:
            raise ValueError(f"depth {self.depth} needs {expected} terms, got {len(self.terms)}")
        return self

    def level(self, k: int) -> np.ndarray:
        """取第k层，形状 (2,)*k"""
        if not 1 <= k <= self.depth:
            raise FeatureError(f"level {k} outside 1..{self.depth}")
        start = sum(2 ** j for j in range(1, k))
        return np.asarray(self.terms[start:start + 2 ** k]).reshape((2,) * k)

    def signed_area(self) -> float:
        """第2层反对称部分，即路径与其弦围成的有向面积"""
        if self.depth < 2:
            raise FeatureError("signed area needs depth >= 2")
        level2 = self.level(2)
        return 0.5 * float(level2[0, 1] - level2[1, 0])


def path_signature(sig: Signature, depth: int) -> PathSignatureVector:
    """
    签名轨迹 (x, y) 的路径签名

    Args:
        sig: 签名
        depth: 截断深度 1..4

    Returns:
        PathSignatureVector: 路径签名特征
    """
    if not 1 <= depth <= MAX_SIGNATURE_DEPTH:
        raise FeatureError(f"depth must be in 1..{MAX_SIGNATURE_DEPTH}, got {depth}")
    levels = path_signature_levels(np.column_stack((sig.x, sig.y)), depth)
    return PathSignatureVector(depth=depth, terms=_flatten(levels))


def mad_feature_vector(sig: Signature, depth: int = 2) -> GlobalFeatureVector:
    """
    路径签名 + 统计特征：(x, y) 与一阶导数 (dx, dy) 两条路径的签名，加扩展全局特征

    Args:
        sig: 预处理后的签名
        depth: 路径签名深度

    Returns:
        GlobalFeatureVector: 组合特征向量
    """
    tf = time_functions(sig)
    names: List[str] = []
    values: List[float] = []
    for prefix, channels in (("sig_xy", ("x", "y")), ("sig_dxdy", ("dx", "dy"))):
        levels = path_signature_levels(tf.matrix(channels), depth)
        names.extend(f"{prefix}_{w}" for w in _words(2, depth))
        values.extend(_flatten(levels))
    stats = global_features(sig, "extended")
    names.extend(stats.names)
    values.extend(stats.values)
    return GlobalFeatureVector(names=tuple(names), values=tuple(values))
