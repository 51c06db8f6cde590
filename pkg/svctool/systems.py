"""
验证系统模块 - 验证系统抽象接口、注册机制和流水线构建

每个系统负责: 预处理与特征表示(prepare)、可选的开发集拟合(fit)、
用户注册集处理(enroll) 和单次比对打分(score，输出[0,1]，越高越像真签名)。
"""

import itertools
import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np

from svctool.alignment import dtw, soft_dtw_divergence, triplet_loss
from svctool.config import DEFAULT_CONFIG, PipelineConfig, get_config
from svctool.errors import ConfigurationError, EvaluationError, ModelError
from svctool.features import (
    GlobalFeatureVector, TimeFunctionSet, feature_difference, global_features, mad_feature_vector,
    online_time_functions, time_functions,
)
from svctool.preprocess import PreprocessMode, preprocess
from svctool.sigdata import (
    Signature, SignatureStore, Truth, parse_comparison_file, parse_label_file,
)
from svctool.verifiers import (
    BASELINE_CHANNELS, FusionModel, GlobalThresholdModel, LocalThresholdModel, LogisticScorer,
    aggregate_reference_scores, baseline_dtw_distance, clamp_unit, distance_to_similarity,
    fit_fusion_weights, fit_global_thresholds, fit_local_thresholds, flip_score,
    pair_znormalize, sigstat_global_score, sigstat_local_score,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DevSet:
    """开发集: 带标签的签名对"""
    pairs: List[Tuple[Signature, Signature]]
    genuine: np.ndarray

    def __len__(self) -> int:
        return len(self.pairs)


def load_dev_set(pipeline: PipelineConfig, store: Optional[SignatureStore] = None) -> DevSet:
    """
    读取流水线配置中的开发集

    Args:
        pipeline: 流水线配置
        store: 签名缓存

    Returns:
        DevSet: 开发集

    Raises:
        ConfigurationError: 未配置开发集
        EvaluationError: 比对ID与标签ID不一致
    """
    if not pipeline.has_dev_set():
        raise ConfigurationError(f"verifier '{pipeline.verifier}' needs dev_comparisons and dev_labels")
    store = store or SignatureStore()
    tasks = parse_comparison_file(pipeline.dev_comparisons)
    labels = {label.comparison_id: label for label in parse_label_file(pipeline.dev_labels)}
    ids = {task.comparison_id for task in tasks}
    missing, extra = sorted(ids - set(labels)), sorted(set(labels) - ids)
    if missing or extra:
        raise EvaluationError("dev comparison and label ids differ", missing, extra)

    pairs = [(store.load(t.reference_path), store.load(t.questioned_path)) for t in tasks]
    genuine = np.array([labels[t.comparison_id].truth == Truth.GENUINE for t in tasks], dtype=bool)
    logger.info(f"Loaded dev set: {int(genuine.sum())} genuine / {int((~genuine).sum())} impostor")
    return DevSet(pairs=pairs, genuine=genuine)


def _common_channels(a: TimeFunctionSet, b: TimeFunctionSet) -> Tuple[np.ndarray, np.ndarray]:
    """两个时间函数集合的公共通道矩阵（任一方无压力时两边都去掉压力通道）"""
    names = [n for n in a.names if n in b.names]
    return a.matrix(names), b.matrix(names)


class Verifier(ABC):
    """验证系统抽象接口"""

    name: str = ""
    default_preprocessing: PreprocessMode = "none"
    requires_dev: bool = False

    def __init__(self, pipeline: PipelineConfig, settings: Optional[Dict[str, Any]] = None) -> None:
        """
        初始化验证系统

        Args:
            pipeline: 流水线配置
            settings: 应用配置（缺省时使用默认值）
        """
        self.pipeline = pipeline
        self.settings = dict(DEFAULT_CONFIG)
        self.settings.update(settings or {})
        self.preprocessing: PreprocessMode = pipeline.preprocessing or self.default_preprocessing
        self.enrollment = pipeline.enrollment
        self.aggregation = pipeline.aggregation
        self._prepared: Dict[int, Tuple[Signature, Any]] = {}
        self._lock = threading.Lock()

    def prepare(self, sig: Signature) -> Any:
        """
        预处理并提取该系统使用的表示（按对象缓存）

        Args:
            sig: 原始签名

        Returns:
            Any: 系统内部表示
        """
        key = id(sig)
        with self._lock:
            cached = self._prepared.get(key)
        if cached is not None:
            return cached[1]
        rep = self.represent(preprocess(sig, self.preprocessing))
        with self._lock:
            self._prepared[key] = (sig, rep)
        return rep

    @abstractmethod
    def represent(self, sig: Signature) -> Any:
        """由预处理后的签名计算内部表示"""
        pass

    @abstractmethod
    def score(self, reference: Signature, questioned: Signature) -> float:
        """
        对一次比对打分

        Args:
            reference: 参考签名
            questioned: 待验证签名

        Returns:
            float: [0,1]内的分数，越高越像真签名
        """
        pass

    def fit(self, dev: DevSet) -> None:
        """在开发集上拟合（默认无需拟合）"""
        pass

    def enroll(self, enrollment: Dict[str, List[Signature]]) -> None:
        """处理每个用户的参考签名集合（默认无需处理）"""
        pass

    def score_references(self, references: Sequence[Signature], questioned: Signature) -> float:
        """
        对多个参考签名打分并聚合

        Args:
            references: 同一用户的参考签名
            questioned: 待验证签名

        Returns:
            float: 聚合分数
        """
        return aggregate_reference_scores(
            [self.score(reference, questioned) for reference in references], self.aggregation)


class VerifierRegistry:
    """验证系统注册表"""

    _verifiers: Dict[str, Type[Verifier]] = {}

    @classmethod
    def register(cls, verifier_class: Type[Verifier]) -> Type[Verifier]:
        """
        注册验证系统类（可作装饰器使用）

        Args:
            verifier_class: 验证系统类

        Returns:
            Type[Verifier]: 原类
        """
        if verifier_class.name in cls._verifiers:
            logger.warning(f"Verifier {verifier_class.name} already registered, overwriting")
        cls._verifiers[verifier_class.name] = verifier_class
        logger.debug(f"Registered verifier: {verifier_class.name}")
        return verifier_class

    @classmethod
    def get(cls, name: str) -> Type[Verifier]:
        """
        获取验证系统类

        Raises:
            ConfigurationError: 未注册的名称
        """
        try:
            return cls._verifiers[name]
        except KeyError:
            raise ConfigurationError(f"Unknown verifier: {name}")

    @classmethod
    def list_verifiers(cls) -> List[str]:
        """已注册的验证系统名称"""
        return sorted(cls._verifiers)


# ---------------------------------------------------------------------------
# DTW类系统
# ---------------------------------------------------------------------------

@VerifierRegistry.register
class BaselineDtwVerifier(Verifier):
    """基线DTW: x, y及其一阶、二阶导数"""

    name = "baseline_dtw"
    default_preprocessing = "mad"

    def represent(self, sig: Signature) -> np.ndarray:
        return time_functions(sig).matrix(BASELINE_CHANNELS)

    def score(self, reference: Signature, questioned: Signature) -> float:
        distance = baseline_dtw_distance(
            self.prepare(reference), self.prepare(questioned), self.pipeline.local_distance)
        return distance_to_similarity(distance)


@VerifierRegistry.register
class SigOnlineVerifier(Verifier):
    """在线DTW: 12个时间函数（手指输入去掉压力通道），欧氏距离"""

    name = "sig_online"

    def represent(self, sig: Signature) -> TimeFunctionSet:
        return online_time_functions(sig)

    def score(self, reference: Signature, questioned: Signature) -> float:
        a, b = _common_channels(self.prepare(reference), self.prepare(questioned))
        za, zb = pair_znormalize(a, b)
        return distance_to_similarity(dtw(za, zb, self.pipeline.local_distance).normalized_score)


def _local_channels(tf: TimeFunctionSet) -> TimeFunctionSet:
    """局部阈值系统使用的通道: x, y（有压力时加p）"""
    keep = [n for n in ("x", "y", "p") if n in tf.names]
    return tf.without([n for n in tf.names if n not in keep])


@VerifierRegistry.register
class SigstatLocalVerifier(Verifier):
    """
    局部阈值分类器：每个用户一个LocalThresholdModel

    (alpha, s) 在注册集上构造的无标签开发对上搜索：
    同一用户参考签名之间为真签名对，与其他用户参考签名之间为冒名对。
    """

    name = "sigstat_local"
    default_preprocessing = "sigstat"
    max_impostor_subjects = 4

    def __init__(self, pipeline: PipelineConfig, settings: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(pipeline, settings)
        self.models: Dict[str, LocalThresholdModel] = {}
        self._distances: Dict[Tuple[int, int], float] = {}
        self._enroll_lock = threading.Lock()

    def represent(self, sig: Signature) -> TimeFunctionSet:
        return _local_channels(online_time_functions(sig))

    def distance(self, first: Signature, second: Signature) -> float:
        """两个签名的归一化DTW距离（按对象对缓存）"""
        key = (id(first), id(second))
        with self._lock:
            cached = self._distances.get(key)
        if cached is not None:
            return cached
        a, b = _common_channels(self.prepare(first), self.prepare(second))
        value = dtw(a, b, self.pipeline.local_distance).normalized_score
        with self._lock:
            self._distances[key] = value
        return value

    def enroll(self, enrollment: Dict[str, List[Signature]]) -> None:
        subjects = sorted(enrollment)
        for index, subject in enumerate(subjects):
            references = enrollment[subject]
            if len(references) < 2:
                continue
            genuine_d = [self.distance(a, b) for a, b in itertools.combinations(references, 2)]
            others = [subjects[(index + k) % len(subjects)]
                      for k in range(1, min(self.max_impostor_subjects, len(subjects) - 1) + 1)]
            impostor_d = [self.distance(ref, enrollment[other][0]) for ref in references for other in others]
            self.models[subject] = fit_local_thresholds(
                references, self.distance,
                dev_distances=genuine_d + impostor_d,
                dev_genuine=[True] * len(genuine_d) + [False] * len(impostor_d),
                k=int(self.settings["knn_k"]),
                alpha_grid=self.settings["local_alpha_grid"],
                scale_grid=self.settings["local_scale_grid"],
            )

        lonely = [s for s in subjects if s not in self.models]
        if lonely:
            if not self.models:
                raise ModelError("local thresholds need a subject with at least 2 references")
            fallback = sorted(self.models.values(), key=lambda m: m.g_th)[len(self.models) // 2]
            logger.warning(f"{len(lonely)} subjects have a single reference; using a median model")
            for subject in lonely:
                self.models[subject] = fallback

    def score(self, reference: Signature, questioned: Signature) -> float:
        subject = reference.meta.subject_id
        model = self.models.get(subject)
        if model is None:
            # 未注册用户: 只注册一次，其余线程等待
            with self._enroll_lock:
                if subject not in self.models:
                    self.enroll({subject: [reference]})
                model = self.models[subject]
        return clamp_unit(sigstat_local_score(self.distance(reference, questioned), model))


@VerifierRegistry.register
class SigstatGlobalVerifier(Verifier):
    """
    全局阈值分类器：DTW距离、|Δstd_x|、|Δstd_y|、|Δduration| 四路，
    按待验证签名的输入方式分组，翻转后等权融合
    """

    name = "sigstat_global"
    default_preprocessing = "sigstat"
    requires_dev = True
    streams = ("dtw", "std_x", "std_y", "duration_ms")

    def __init__(self, pipeline: PipelineConfig, settings: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(pipeline, settings)
        self.models: Dict[str, GlobalThresholdModel] = {}

    def represent(self, sig: Signature) -> Tuple[TimeFunctionSet, Dict[str, float]]:
        return _local_channels(online_time_functions(sig)), global_features(sig, "minimum").as_dict()

    def distances(self, reference: Signature, questioned: Signature) -> Dict[str, float]:
        """四路距离"""
        (tf_a, stats_a), (tf_b, stats_b) = self.prepare(reference), self.prepare(questioned)
        a, b = _common_channels(tf_a, tf_b)
        values = {"dtw": dtw(a, b, self.pipeline.local_distance).normalized_score}
        for name in self.streams[1:]:
            values[name] = abs(stats_a[name] - stats_b[name])
        return values

    def fit(self, dev: DevSet) -> None:
        rows = [self.distances(a, b) for a, b in dev.pairs]
        groups = [b.meta.input.value for _, b in dev.pairs]
        for name in self.streams:
            self.models[name] = fit_global_thresholds([r[name] for r in rows], dev.genuine, groups)

    def score(self, reference: Signature, questioned: Signature) -> float:
        if not self.models:
            raise ModelError("sigstat_global is not fitted")
        group = questioned.meta.input.value
        values = self.distances(reference, questioned)
        flipped = [flip_score(sigstat_global_score(values[n], self.models[n], group)) for n in self.streams]
        return clamp_unit(float(np.mean(flipped)))


# ---------------------------------------------------------------------------
# 特征差 + 分类器外壳
# ---------------------------------------------------------------------------

class _ScorerVerifier(Verifier):
    """特征向量差输入二分类打分器的系统"""

    requires_dev = True

    def __init__(self, pipeline: PipelineConfig, settings: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(pipeline, settings)
        self.scorer = LogisticScorer(seed=pipeline.seed)
        self._fitted = False

    def difference(self, reference: Signature, questioned: Signature) -> np.ndarray:
        return feature_difference(self.prepare(reference), self.prepare(questioned)).as_array()

    def fit(self, dev: DevSet) -> None:
        matrix = np.vstack([self.difference(a, b) for a, b in dev.pairs])
        self.scorer.fit(matrix, dev.genuine)
        self._fitted = True

    def score(self, reference: Signature, questioned: Signature) -> float:
        if not self._fitted:
            raise ModelError(f"{self.name} is not fitted")
        return clamp_unit(float(self.scorer.predict_proba(self.difference(reference, questioned))[0]))


@VerifierRegistry.register
class FeatureDifferenceVerifier(_ScorerVerifier):
    """全局特征差向量 |F_enrolled - F_test|"""

    name = "feature_difference"

    def represent(self, sig: Signature) -> GlobalFeatureVector:
        return global_features(sig, self.pipeline.feature_set)


@VerifierRegistry.register
class MadVerifier(_ScorerVerifier):
    """路径签名 + 统计特征的差向量"""

    name = "mad"
    default_preprocessing = "mad"

    def represent(self, sig: Signature) -> GlobalFeatureVector:
        return mad_feature_vector(sig)


# ---------------------------------------------------------------------------
# soft-DTW
# ---------------------------------------------------------------------------

def _znormalize(matrix: np.ndarray) -> np.ndarray:
    std = matrix.std(axis=0)
    live = std > 0
    return np.where(live, (matrix - matrix.mean(axis=0)) / np.where(live, std, 1.0), 0.0)


@VerifierRegistry.register
class SoftDtwVerifier(Verifier):
    """
    soft-DTW散度系统

    gamma未指定时，在注册集三元组(锚点, 同用户参考, 其他用户参考)上
    取平均三元组损失最小的候选值。
    """

    name = "softdtw"
    default_preprocessing = "mad"
    max_triplets = 8
    margin = 1.0

    def __init__(self, pipeline: PipelineConfig, settings: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(pipeline, settings)
        self.gamma: float = pipeline.gamma if pipeline.gamma is not None else 1.0

    def represent(self, sig: Signature) -> TimeFunctionSet:
        return online_time_functions(sig)

    def _pair(self, first: Signature, second: Signature) -> Tuple[np.ndarray, np.ndarray]:
        a, b = _common_channels(self.prepare(first), self.prepare(second))
        return _znormalize(a), _znormalize(b)

    def enroll(self, enrollment: Dict[str, List[Signature]]) -> None:
        if self.pipeline.gamma is not None:
            return
        subjects = [s for s in sorted(enrollment) if len(enrollment[s]) >= 2]
        if not subjects or len(enrollment) < 2:
            logger.info(f"Not enough enrollment triplets, keeping gamma={self.gamma}")
            return
        others = sorted(enrollment)
        triplets = []
        for subject in subjects[:self.max_triplets]:
            negative_subject = next(o for o in others[others.index(subject) + 1:] + others if o != subject)
            triplets.append((enrollment[subject][0], enrollment[subject][1], enrollment[negative_subject][0]))

        best: Optional[Tuple[float, float]] = None
        for gamma in sorted(self.settings["softdtw_gamma_grid"]):
            losses = []
            for anchor, positive, negative in triplets:
                a, p = self._pair(anchor, positive)
                _, n = self._pair(anchor, negative)
                if p.shape[1] != n.shape[1]:
                    continue
                losses.append(triplet_loss(a, p, n, gamma, self.margin))
            if not losses:
                continue
            loss = float(np.mean(losses))
            if best is None or loss < best[0]:
                best = (loss, gamma)
        if best is not None:
            self.gamma = best[1]
            logger.info(f"soft-DTW gamma={self.gamma} (mean triplet loss {best[0]:.4f})")

    def score(self, reference: Signature, questioned: Signature) -> float:
        a, b = self._pair(reference, questioned)
        divergence = max(0.0, soft_dtw_divergence(a, b, self.gamma))
        return distance_to_similarity(divergence / (a.shape[0] + b.shape[0]))


# ---------------------------------------------------------------------------
# 融合
# ---------------------------------------------------------------------------

@VerifierRegistry.register
class FusionVerifier(Verifier):
    """成员系统分数经tanh归一化后加权求和"""

    name = "fusion"

    def __init__(self, pipeline: PipelineConfig, settings: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(pipeline, settings)
        self.members: List[Verifier] = []
        for member in pipeline.fusion_members:
            member_pipeline = pipeline.model_copy(update={
                "verifier": member, "preprocessing": None,
                "fusion_members": [], "fusion_weights": None,
            })
            self.members.append(VerifierRegistry.get(member)(member_pipeline, self.settings))
        self.model: Optional[FusionModel] = None
        if pipeline.fusion_weights is not None:
            total = float(sum(pipeline.fusion_weights))
            if total <= 0 or any(w < 0 for w in pipeline.fusion_weights):
                raise ConfigurationError("fusion_weights must be non-negative with a positive sum")
            weights = [w / total for w in pipeline.fusion_weights]
            weights[-1] = max(0.0, 1.0 - sum(weights[:-1]))
            n = len(weights)
            self.model = FusionModel(
                mu=(0.0,) * n, sigma=(1.0,) * n, weights=tuple(weights),
                tanh_constant=float(self.settings["tanh_constant"]))
        self.requires_dev = self.model is None or any(m.requires_dev for m in self.members)

    def represent(self, sig: Signature) -> Signature:
        return sig

    def fit(self, dev: DevSet) -> None:
        for member in self.members:
            member.fit(dev)
        if self.model is None:
            enrollment: Dict[str, List[Signature]] = {}
            for reference, _ in dev.pairs:
                group = enrollment.setdefault(reference.meta.subject_id, [])
                if all(reference is not r for r in group):
                    group.append(reference)
            for member in self.members:
                member.enroll(enrollment)
            streams = [[member.score(a, b) for member in self.members] for a, b in dev.pairs]
            self.model = fit_fusion_weights(
                streams, dev.genuine,
                step=float(self.settings["fusion_grid_step"]),
                tanh_constant=float(self.settings["tanh_constant"]),
            )

    def enroll(self, enrollment: Dict[str, List[Signature]]) -> None:
        for member in self.members:
            member.enroll(enrollment)

    def score(self, reference: Signature, questioned: Signature) -> float:
        if self.model is None:
            raise ModelError("fusion weights are not fitted")
        return self.model.fuse([member.score(reference, questioned) for member in self.members])


def build_verifier(pipeline: PipelineConfig,
                   settings: Optional[Dict[str, Any]] = None,
                   store: Optional[SignatureStore] = None) -> Verifier:
    """
    按流水线配置构建（并在需要时拟合）验证系统

    Args:
        pipeline: 流水线配置
        settings: 应用配置（缺省时读取配置文件）
        store: 签名缓存

    Returns:
        Verifier: 可直接打分的验证系统

    Raises:
        ConfigurationError: 未知系统或缺少开发集
    """
    settings = settings if settings is not None else get_config()
    verifier = VerifierRegistry.get(pipeline.verifier)(pipeline, settings)
    if verifier.requires_dev or pipeline.has_dev_set():
        if verifier.requires_dev and not pipeline.has_dev_set():
            raise ConfigurationError(f"verifier '{pipeline.verifier}' needs dev_comparisons and dev_labels")
        verifier.fit(load_dev_set(pipeline, store))
    logger.info(f"Built verifier {verifier.name} (preprocessing={verifier.preprocessing})")
    return verifier
