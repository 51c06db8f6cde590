"""
验证器模块 - 打分公式、阈值模型、分数归一化与融合、分类器外壳

约定：所有输出分数越高越可能为真签名。
"""

import itertools
import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import Pipeline, make_pipeline
from sklearn.preprocessing import StandardScaler

from svctool.alignment import LocalDistance, dtw
from svctool.errors import ConfigurationError, ModelError
from svctool.evaluation import compute_eer
from svctool.features import time_functions
from svctool.sigdata import Signature

logger = logging.getLogger(__name__)

# G_th的下限，避免相同参考签名导致退化
G_TH_FLOOR = 1e-9

DEFAULT_TANH_CONSTANT = 0.01
DEFAULT_GRID_STEP = 0.05
DEFAULT_ALPHA_GRID: Tuple[float, ...] = (1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0)
DEFAULT_SCALE_GRID: Tuple[float, ...] = (1.0, 1.25, 1.5, 2.0)

AggregationMode = Literal["mean", "max"]

# 基线系统: 坐标及其一阶、二阶导数
BASELINE_CHANNELS: Tuple[str, ...] = ("x", "y", "dx", "dy", "ddx", "ddy")


def clamp_unit(value: float) -> float:
    """截断到[0,1]"""
    return min(1.0, max(0.0, float(value)))


# ---------------------------------------------------------------------------
# 基线DTW
# ---------------------------------------------------------------------------

def pair_znormalize(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    在两条序列的并集上逐通道z标准化；常量通道置0

    Args:
        a: (n, d) 序列
        b: (m, d) 序列

    Returns:
        Tuple[np.ndarray, np.ndarray]: 标准化后的两条序列
    """
    both = np.vstack((a, b))
    mean = both.mean(axis=0)
    std = both.std(axis=0)
    live = std > 0
    scale = np.where(live, std, 1.0)
    za = np.where(live, (a - mean) / scale, 0.0)
    zb = np.where(live, (b - mean) / scale, 0.0)
    return za, zb


def distance_to_similarity(distance: float) -> float:
    """exp(-distance)，距离0映射为1"""
    return float(np.exp(-distance))


def baseline_dtw_distance(a: np.ndarray, b: np.ndarray, local: LocalDistance = "euclidean") -> float:
    """基线通道矩阵之间的归一化DTW距离（先做成对z标准化）"""
    za, zb = pair_znormalize(a, b)
    return dtw(za, zb, local).normalized_score


def baseline_dtw_score(reference: Signature, questioned: Signature,
                       local: LocalDistance = "euclidean") -> float:
    """
    基线DTW分数

    Args:
        reference: 已预处理(mad)的参考签名
        questioned: 已预处理(mad)的待验证签名
        local: 局部距离

    Returns:
        float: exp(-归一化DTW距离)，[0,1]内
    """
    a = time_functions(reference).matrix(BASELINE_CHANNELS)
    b = time_functions(questioned).matrix(BASELINE_CHANNELS)
    return distance_to_similarity(baseline_dtw_distance(a, b, local))


# ---------------------------------------------------------------------------
# 局部阈值（k近邻）
# ---------------------------------------------------------------------------

class LocalThresholdModel(BaseModel):
    """局部阈值模型: 真签名阈值G_th、伪造阈值F_th和缩放参数s"""
    model_config = ConfigDict(frozen=True)

    g_th: float = Field(..., ge=0, description="真签名阈值")
    f_th: float = Field(..., description="伪造阈值")
    s: float = Field(..., gt=0, description="缩放参数")

    @model_validator(mode="after")
    def _check_denominator(self) -> "LocalThresholdModel":
        if not self.s * self.f_th > self.g_th:
            raise ValueError(f"s*F_th ({self.s * self.f_th}) must exceed G_th ({self.g_th})")
        return self


def sigstat_local_score(d: float, model: LocalThresholdModel) -> float:
    """
    局部阈值分数 P_q = (s*F_th - d) / (s*F_th - G_th)

    未截断；d < G_th 时大于1，d > s*F_th 时小于0。

    Args:
        d: DTW距离
        model: 局部阈值模型

    Returns:
        float: P_q
    """
    upper = model.s * model.f_th
    return (upper - d) / (upper - model.g_th)


def knn_genuine_threshold(distances: Sequence[float], k: int = 3) -> float:
    """
    参考签名两两距离中最小k个的均值（下限G_TH_FLOOR）

    Args:
        distances: 参考签名两两之间的距离
        k: 近邻个数，实际取 min(k, 距离个数)

    Returns:
        float: G_th
    """
    values = np.sort(np.asarray(distances, dtype=np.float64))
    if values.size == 0:
        raise ModelError("no reference-to-reference distances")
    k = min(int(k), values.size)
    return max(float(np.mean(values[:k])), G_TH_FLOOR)


def fit_local_thresholds(
    references: Sequence,
    distance: Callable[[object, object], float],
    dev_distances: Sequence[float] = (),
    dev_genuine: Sequence[bool] = (),
    k: int = 3,
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    scale_grid: Sequence[float] = DEFAULT_SCALE_GRID,
) -> LocalThresholdModel:
    """
    拟合局部阈值模型

    G_th取参考签名两两距离中最小k个的均值；F_th = alpha * G_th，
    (alpha, s) 在开发集比对上网格搜索使EER最小，平局取较小alpha再取较小s。

    Args:
        references: 参考签名（已预处理的任意表示，由distance解释）
        distance: 距离函数
        dev_distances: 开发集比对距离
        dev_genuine: 开发集比对是否为真签名
        k: 近邻个数
        alpha_grid: alpha候选
        scale_grid: s候选

    Returns:
        LocalThresholdModel: 拟合的模型

    Raises:
        ModelError: 参考签名少于2个
    """
    if len(references) < 2:
        raise ModelError(f"local thresholds need at least 2 references, got {len(references)}")
    pairwise = [float(distance(a, b)) for a, b in itertools.combinations(references, 2)]
    g_th = knn_genuine_threshold(pairwise, k)

    alphas = sorted(alpha_grid)
    scales = sorted(scale_grid)
    d = np.asarray(dev_distances, dtype=np.float64)
    truth = np.asarray(dev_genuine, dtype=bool)
    if d.shape != truth.shape:
        raise ModelError("dev distances and labels differ in length")
    if not (truth.any() and (~truth).any()):
        logger.warning("Development pairs lack a class; using the smallest alpha and scale")
        return LocalThresholdModel(g_th=g_th, f_th=alphas[0] * g_th, s=scales[0])

    best: Optional[Tuple[float, LocalThresholdModel]] = None
    for alpha in alphas:
        for s in scales:
            if not s * alpha * g_th > g_th:
                continue
            model = LocalThresholdModel(g_th=g_th, f_th=alpha * g_th, s=s)
            scores = np.clip((s * model.f_th - d) / (s * model.f_th - g_th), 0.0, 1.0)
            eer, _ = compute_eer(scores[truth], scores[~truth])
            if best is None or eer < best[0]:
                best = (eer, model)
    if best is None:
        raise ModelError("no (alpha, s) candidate satisfies s*F_th > G_th")
    logger.debug(f"Local thresholds: G_th={g_th:.6g} F_th={best[1].f_th:.6g} s={best[1].s} dev EER={best[0]:.3f}%")
    return best[1]


# ---------------------------------------------------------------------------
# 全局阈值
# ---------------------------------------------------------------------------

class GroupThresholds(BaseModel):
    """单个输入组的全局阈值统计量"""
    model_config = ConfigDict(frozen=True)

    d_g_min: float = Field(..., description="真签名比对的最小距离")
    d_f_med: float = Field(..., description="伪造比对距离的中位数")

    @model_validator(mode="after")
    def _check_order(self) -> "GroupThresholds":
        if not self.d_f_med > self.d_g_min:
            raise ValueError(f"d_f_med ({self.d_f_med}) must exceed d_g_min ({self.d_g_min})")
        return self


class GlobalThresholdModel(BaseModel):
    """全局阈值模型，按输入方式(stylus/finger)分组"""
    model_config = ConfigDict(frozen=True)

    groups: Dict[str, GroupThresholds] = Field(..., description="组名 -> 阈值统计量")

    def group(self, name: str) -> GroupThresholds:
        """
        取出分组阈值

        Raises:
            ConfigurationError: 未知分组
        """
        try:
            return self.groups[name]
        except KeyError:
            raise ConfigurationError(f"Unknown threshold group: {name}")


def sigstat_global_score(d: float, model: GlobalThresholdModel, group: str) -> float:
    """
    全局阈值分数 P_q = 1 - (d_f_med - d) / (d_f_med - d_g_min)

    d < d_g_min 时为0，d > d_f_med 时为1。该分数越大越像伪造，
    输出前需用 flip_score 翻转。

    Args:
        d: 距离
        model: 全局阈值模型
        group: 输入分组

    Returns:
        float: [0,1]内的P_q
    """
    stats = model.group(group)
    if d < stats.d_g_min:
        return 0.0
    if d > stats.d_f_med:
        return 1.0
    return 1.0 - (stats.d_f_med - d) / (stats.d_f_med - stats.d_g_min)


def flip_score(score: float) -> float:
    """极性翻转 1 - score"""
    return 1.0 - score


def fit_global_thresholds(
    distances: Sequence[float],
    genuine: Sequence[bool],
    groups: Sequence[str],
) -> GlobalThresholdModel:
    """
    按输入分组拟合全局阈值：d_g_min为真签名距离最小值，d_f_med为伪造距离中位数

    Args:
        distances: 开发集比对距离
        genuine: 是否真签名比对
        groups: 每个比对的输入分组

    Returns:
        GlobalThresholdModel: 拟合的模型

    Raises:
        ModelError: 长度不一致、某组缺少真签名或伪造比对
    """
    d = np.asarray(distances, dtype=np.float64)
    truth = np.asarray(genuine, dtype=bool)
    names = np.asarray(groups, dtype=object)
    if not (d.shape == truth.shape == names.shape):
        raise ModelError("distances, labels and groups differ in length")
    if d.size == 0:
        raise ModelError("no development comparisons")

    fitted: Dict[str, GroupThresholds] = {}
    for name in sorted(set(names.tolist())):
        in_group = names == name
        genuine_d = d[in_group & truth]
        forgery_d = d[in_group & ~truth]
        if genuine_d.size == 0 or forgery_d.size == 0:
            raise ModelError(f"group '{name}' needs both genuine and forgery comparisons")
        try:
            fitted[name] = GroupThresholds(
                d_g_min=float(np.min(genuine_d)),
                d_f_med=float(np.median(forgery_d)),
            )
        except ValueError as e:
            raise ModelError(f"group '{name}': {e}") from e
    return GlobalThresholdModel(groups=fitted)


# ---------------------------------------------------------------------------
# 归一化与融合
# ---------------------------------------------------------------------------

def tanh_normalize(score: ArrayLike, mu: float, sigma: float,
                   constant: float = DEFAULT_TANH_CONSTANT) -> Any:
    """
    tanh估计器归一化 0.5 * (tanh(c * (score - mu) / sigma) + 1)

    Args:
        score: 分数（标量或数组）
        mu: 位置参数
        sigma: 尺度参数 > 0
        constant: 常数c

    Returns:
        与输入同形状的(0,1)内分数
    """
    if not sigma > 0:
        raise ModelError(f"sigma must be > 0, got {sigma}")
    return 0.5 * (np.tanh(constant * (np.asarray(score, dtype=np.float64) - mu) / sigma) + 1.0)


class FusionModel(BaseModel):
    """加权和融合模型：每路分数的tanh参数和凸组合权重"""
    model_config = ConfigDict(frozen=True)

    mu: Tuple[float, ...] = Field(..., description="每路分数的位置参数")
    sigma: Tuple[float, ...] = Field(..., description="每路分数的尺度参数")
    weights: Tuple[float, ...] = Field(..., description="融合权重")
    tanh_constant: float = Field(DEFAULT_TANH_CONSTANT, gt=0, description="tanh常数")

    @model_validator(mode="after")
    def _check(self) -> "FusionModel":
        if not len(self.mu) == len(self.sigma) == len(self.weights):
            raise ValueError("mu, sigma and weights differ in length")
        if any(s <= 0 for s in self.sigma):
            raise ValueError("sigma must be > 0")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")
        return self

    def normalize(self, raw_scores: Sequence[float]) -> List[float]:
        """逐路tanh归一化"""
        if len(raw_scores) != len(self.weights):
            raise ModelError(f"expected {len(self.weights)} scores, got {len(raw_scores)}")
        return [
            float(tanh_normalize(s, m, sd, self.tanh_constant))
            for s, m, sd in zip(raw_scores, self.mu, self.sigma)
        ]

    def fuse(self, raw_scores: Sequence[float]) -> float:
        """归一化后加权融合"""
        return weighted_fusion(self.normalize(raw_scores), self)


def weighted_fusion(scores: Sequence[float], model: FusionModel) -> float:
    """
    加权和融合

    Args:
        scores: 已归一化到[0,1]的各路分数
        model: 融合模型

    Returns:
        float: 融合分数

    Raises:
        ModelError: 分数个数与权重个数不一致
    """
    if len(scores) != len(model.weights):
        raise ModelError(f"expected {len(model.weights)} scores, got {len(scores)}")
    return clamp_unit(float(np.dot(np.asarray(scores, dtype=np.float64), model.weights)))


def weight_grid(n_streams: int, step: float = DEFAULT_GRID_STEP) -> Iterator[Tuple[float, ...]]:
    """
    按字典序升序枚举权重单纯形上步长为step的网格点

    Args:
        n_streams: 分数路数
        step: 步长，1/step须为整数

    Yields:
        Tuple[float, ...]: 和为1的非负权重
    """
    parts = int(round(1.0 / step))
    if parts < 1 or abs(parts * step - 1.0) > 1e-9:
        raise ModelError(f"grid step must divide 1, got {step}")

    def compositions(total: int, slots: int) -> Iterator[Tuple[int, ...]]:
        if slots == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(total - first, slots - 1):
                yield (first,) + rest

    for combo in compositions(parts, n_streams):
        yield tuple(c / parts for c in combo)


def fit_fusion_weights(
    streams: ArrayLike,
    genuine: Sequence[bool],
    step: float = DEFAULT_GRID_STEP,
    tanh_constant: float = DEFAULT_TANH_CONSTANT,
) -> FusionModel:
    """
    在开发集上拟合融合模型

    tanh参数取每路真签名分数的均值和标准差；权重在单纯形网格上穷举，
    取开发集EER最小者，平局取字典序最小的权重向量。

    Args:
        streams: (比对数, 路数) 的原始分数矩阵
        genuine: 是否真签名比对
        step: 网格步长
        tanh_constant: tanh常数

    Returns:
        FusionModel: 拟合的模型

    Raises:
        ModelError: 少于2路分数或标签只有一类
    """
    matrix = np.asarray(streams, dtype=np.float64)
    truth = np.asarray(genuine, dtype=bool)
    if matrix.ndim != 2 or matrix.shape[1] < 2:
        raise ModelError("fusion needs a matrix with at least 2 score streams")
    if matrix.shape[0] != truth.shape[0]:
        raise ModelError("score matrix and labels differ in length")
    if not (truth.any() and (~truth).any()):
        raise ModelError("fusion fitting needs both genuine and impostor comparisons")

    mu = matrix[truth].mean(axis=0)
    sigma = matrix[truth].std(axis=0)
    sigma = np.where(sigma > 0, sigma, 1.0)
    normalized = np.column_stack([
        tanh_normalize(matrix[:, i], mu[i], sigma[i], tanh_constant) for i in range(matrix.shape[1])
    ])

    best_eer, best_weights, evaluated = None, None, 0
    for weights in weight_grid(matrix.shape[1], step):
        evaluated += 1
        fused = normalized @ np.asarray(weights)
        eer, _ = compute_eer(fused[truth], fused[~truth])
        if best_eer is None or eer < best_eer:
            best_eer, best_weights = eer, weights
    logger.info(f"Fusion weights {best_weights} (dev EER {best_eer:.3f}%, {evaluated} candidates)")
    return FusionModel(
        mu=tuple(float(v) for v in mu),
        sigma=tuple(float(v) for v in sigma),
        weights=best_weights,
        tanh_constant=tanh_constant,
    )


def aggregate_reference_scores(per_reference: Sequence[float], mode: AggregationMode = "mean") -> float:
    """
    多个参考签名分数的聚合

    Args:
        per_reference: 每个参考签名的分数
        mode: mean | max

    Returns:
        float: 聚合分数
    """
    if len(per_reference) == 0:
        raise ModelError("no reference scores to aggregate")
    if mode == "mean":
        return float(np.mean(per_reference))
    if mode == "max":
        return float(np.max(per_reference))
    raise ConfigurationError(f"Unknown aggregation mode: {mode}")


# ---------------------------------------------------------------------------
# 分类器外壳
# ---------------------------------------------------------------------------

class BinaryScorer(ABC):
    """二分类打分器接口：输入为特征差向量，输出为真签名的概率"""

    @abstractmethod
    def fit(self, features: ArrayLike, genuine: Sequence[bool]) -> "BinaryScorer":
        """
        训练打分器

        Args:
            features: (样本数, 特征数) 非负特征差矩阵
            genuine: 是否真签名

        Returns:
            BinaryScorer: self
        """
        pass

    @abstractmethod
    def predict_proba(self, features: ArrayLike) -> np.ndarray:
        """
        预测为真签名的概率

        Args:
            features: (样本数, 特征数) 非负特征差矩阵

        Returns:
            np.ndarray: [0,1]内的概率
        """
        pass


class LogisticScorer(BinaryScorer):
    """
    加权距离上的逻辑回归

    每个特征差先除以其标准差，权重取冒名与真签名均值之差（截断为非负），
    加权和作为单一距离送入 StandardScaler + LogisticRegression。
    距离对每个特征差单调不减、概率对距离单调递减，因此特征差全为0时得分最高。
    """

    def __init__(self, c: float = 1.0, seed: int = 0) -> None:
        self.c = c
        self.seed = seed
        self.feature_scale: Optional[np.ndarray] = None
        self.feature_weights: Optional[np.ndarray] = None
        self.model: Optional[Pipeline] = None

    @staticmethod
    def _check_features(features: ArrayLike) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.ndim != 2 or not np.all(np.isfinite(x)):
            raise ModelError("features must be a finite 2-D matrix")
        if np.any(x < 0):
            raise ModelError("features must be non-negative differences")
        return x

    def distance(self, features: ArrayLike) -> np.ndarray:
        """特征差矩阵 -> 加权距离"""
        if self.feature_weights is None:
            raise ModelError("logistic scorer is not fitted")
        x = self._check_features(features)
        if x.shape[1] != self.feature_weights.size:
            raise ModelError(f"expected {self.feature_weights.size} features, got {x.shape[1]}")
        return (x / self.feature_scale) @ self.feature_weights

    def fit(self, features: ArrayLike, genuine: Sequence[bool]) -> "LogisticScorer":
        x = self._check_features(features)
        y = np.asarray(genuine, dtype=bool)
        if x.shape[0] != y.shape[0]:
            raise ModelError("feature matrix and labels differ in length")
        if y.all() or not y.any():
            raise ModelError("logistic scorer needs both classes")

        scale = x.std(axis=0)
        self.feature_scale = np.where(scale > 0, scale, 1.0)
        z = x / self.feature_scale
        gap = np.clip(z[~y].mean(axis=0) - z[y].mean(axis=0), 0.0, None)
        if gap.sum() <= 0:
            raise ModelError("no feature difference separates genuine from impostor pairs")
        self.feature_weights = gap / gap.sum()

        d = self.distance(x).reshape(-1, 1)
        self.model = make_pipeline(StandardScaler(), LogisticRegression(C=self.c, random_state=self.seed))
        self.model.fit(d, y.astype(int))
        slope = float(self.model[-1].coef_[0, 0])
        if slope >= 0:
            raise ModelError("fitted scorer does not decrease with distance")
        logger.debug(
            f"Logistic scorer fitted on {x.shape[0]} samples, "
            f"{int(np.count_nonzero(self.feature_weights))}/{x.shape[1]} weighted features, slope {slope:.4f}")
        return self

    def predict_proba(self, features: ArrayLike) -> np.ndarray:
        if self.model is None:
            raise ModelError("logistic scorer is not fitted")
        d = self.distance(features).reshape(-1, 1)
        genuine_column = list(self.model.classes_).index(1)
        return self.model.predict_proba(d)[:, genuine_column]
