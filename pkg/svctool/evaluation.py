"""
评测模块 - 协议运行、FAR/FRR曲线、EER、任务报告和奖牌积分排名

分数约定: 越高越可能为真签名，分数 >= 阈值 即接受。
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from svctool.errors import EvaluationError, ProtocolError, SvcError
from svctool.sigdata import (
    ComparisonTask, ForgeryType, LabelRecord, ScoreRecord, Signature, SignatureStore, Truth,
)
from svctool.utils import err_console

logger = logging.getLogger(__name__)

ForgeryFilter = Literal["all", "skilled", "random"]

# 每个任务前三名的奖牌积分
MEDAL_POINTS: Tuple[int, ...] = (3, 2, 1)


# ---------------------------------------------------------------------------
# FAR / FRR / EER
# ---------------------------------------------------------------------------

def _as_scores(values: Iterable[float], name: str) -> np.ndarray:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise EvaluationError(f"no {name} scores")
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"non-finite {name} score")
    return arr


def far_frr_curve(genuine_scores: Iterable[float],
                  impostor_scores: Iterable[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    在所有分数构成的阈值上扫描FAR/FRR

    阈值为分数并集（升序）再加一个略大于最大分数的阈值，
    因此曲线从 (FAR=1, FRR=0) 走到 (FAR=0, FRR=1)。

    Args:
        genuine_scores: 真签名比对分数
        impostor_scores: 冒名比对分数

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: 阈值、FAR、FRR（比例，非百分比）

    Raises:
        EvaluationError: 任一列表为空
    """
    genuine = np.sort(_as_scores(genuine_scores, "genuine"))
    impostor = np.sort(_as_scores(impostor_scores, "impostor"))

    union = np.unique(np.concatenate((genuine, impostor)))
    thresholds = np.append(union, np.nextafter(union[-1], np.inf))
    # FAR: 冒名分数 >= 阈值的比例；FRR: 真签名分数 < 阈值的比例
    far = 1.0 - np.searchsorted(impostor, thresholds, side="left") / impostor.size
    frr = np.searchsorted(genuine, thresholds, side="left") / genuine.size
    return thresholds, far, frr


def compute_eer(genuine_scores: Iterable[float],
                impostor_scores: Iterable[float]) -> Tuple[float, float]:
    """
    计算等错误率

    Args:
        genuine_scores: 真签名比对分数
        impostor_scores: 冒名比对分数

    Returns:
        Tuple[float, float]: (EER百分比, EER处阈值)；无精确交点时在相邻阈值间线性插值

    Raises:
        EvaluationError: 任一列表为空
    """
    thresholds, far, frr = far_frr_curve(genuine_scores, impostor_scores)
    gap = far - frr
    k = int(np.argmax(gap <= 0))
    if gap[k] == 0 or k == 0:
        return float(far[k] * 100.0), float(thresholds[k])

    w = gap[k - 1] / (gap[k - 1] - gap[k])
    eer = far[k - 1] + w * (far[k] - far[k - 1])
    threshold = thresholds[k - 1] + w * (thresholds[k] - thresholds[k - 1])
    return float(eer * 100.0), float(threshold)


# ---------------------------------------------------------------------------
# 任务评测
# ---------------------------------------------------------------------------

class EvaluationReport(BaseModel):
    """单个任务的评测报告"""
    model_config = ConfigDict(frozen=True)

    task: Literal[1, 2, 3] = Field(..., description="任务编号")
    forgery: ForgeryFilter = Field("all", description="参与评测的冒名类型")
    eer_percent: float = Field(..., ge=0.0, le=100.0, description="EER (%)")
    threshold_at_eer: float = Field(..., description="EER处阈值")
    far_frr_curve: List[Tuple[float, float, float]] = Field(..., description="(阈值, FAR, FRR)")
    n_genuine: int = Field(..., ge=1, description="真签名比对数")
    n_impostor: int = Field(..., ge=1, description="冒名比对数")


def split_by_forgery(labels: Sequence[LabelRecord], kind: ForgeryFilter = "all") -> List[LabelRecord]:
    """
    按冒名类型筛选标签，真签名比对始终保留

    Args:
        labels: 标签记录
        kind: all | skilled | random

    Returns:
        List[LabelRecord]: 筛选后的标签
    """
    if kind == "all":
        return list(labels)
    wanted = ForgeryType(kind)
    return [
        label for label in labels
        if label.truth == Truth.GENUINE or label.forgery == wanted
    ]


def evaluate_task(scores: Sequence[ScoreRecord], labels: Sequence[LabelRecord],
                  task: int, forgery: ForgeryFilter = "all") -> EvaluationReport:
    """
    评测一个任务

    Args:
        scores: 分数记录
        labels: 标签记录（ID集合须与分数完全一致）
        task: 任务编号 1|2|3
        forgery: 参与评测的冒名类型

    Returns:
        EvaluationReport: 评测报告

    Raises:
        EvaluationError: ID不一致或某一类为空
    """
    by_id = {record.comparison_id: record.score for record in scores}
    label_ids = {label.comparison_id for label in labels}
    missing = label_ids - set(by_id)
    extra = set(by_id) - label_ids
    if missing or extra:
        raise EvaluationError("score and label ids differ", sorted(missing), sorted(extra))

    selected = split_by_forgery(labels, forgery)
    genuine = sorted(by_id[l.comparison_id] for l in selected if l.truth == Truth.GENUINE)
    impostor = sorted(by_id[l.comparison_id] for l in selected if l.truth == Truth.IMPOSTOR)

    thresholds, far, frr = far_frr_curve(genuine, impostor)
    eer, threshold = compute_eer(genuine, impostor)
    logger.info(f"Task {task} ({forgery}): EER {eer:.4f}% over {len(genuine)} genuine / {len(impostor)} impostor")
    return EvaluationReport(
        task=task,
        forgery=forgery,
        eer_percent=eer,
        threshold_at_eer=threshold,
        far_frr_curve=[(float(t), float(a), float(r)) for t, a, r in zip(thresholds, far, frr)],
        n_genuine=len(genuine),
        n_impostor=len(impostor),
    )


# ---------------------------------------------------------------------------
# 协议运行
# ---------------------------------------------------------------------------

def load_pairs(comparisons: Sequence[ComparisonTask],
               store: SignatureStore) -> List[Tuple[Signature, Signature]]:
    pairs = []
    for task in comparisons:
        try:
            pairs.append((store.load(task.reference_path), store.load(task.questioned_path)))
        except SvcError as e:
            raise ProtocolError(f"cannot load signature: {e}", task.comparison_id)
    return pairs


def enrollment_sets(pairs: Sequence[Tuple[Signature, Signature]]) -> Dict[str, List[Signature]]:
    """
    从比对列表收集每个用户的参考签名（去重，保持首次出现顺序）

    Args:
        pairs: (参考签名, 待验证签名) 列表

    Returns:
        Dict[str, List[Signature]]: 用户ID -> 参考签名
    """
    sets: Dict[str, List[Signature]] = {}
    seen = set()
    for reference, _ in pairs:
        if id(reference) in seen:
            continue
        seen.add(id(reference))
        sets.setdefault(reference.meta.subject_id, []).append(reference)
    return sets


def run_protocol(comparisons: Sequence[ComparisonTask],
                 pipeline: Any,
                 max_workers: Optional[int] = None,
                 show_progress: Optional[bool] = None,
                 store: Optional[SignatureStore] = None) -> List[ScoreRecord]:
    """
    对比对列表逐一打分

    Args:
        comparisons: 比对任务
        pipeline: PipelineConfig 或已构建的验证系统
        max_workers: 并发数（默认取应用配置）
        show_progress: 是否显示进度条（默认取应用配置）
        store: 签名缓存

    Returns:
        List[ScoreRecord]: 与输入顺序一致的分数记录

    Raises:
        ProtocolError: 签名文件不可读或打分失败，指明比对ID
    """
    from svctool.config import get_config
    from svctool.systems import Verifier, build_verifier

    if not comparisons:
        return []

    settings = get_config()
    workers = max(1, int(max_workers or settings.get("max_workers", 4)))
    if show_progress is None:
        show_progress = bool(settings.get("show_progress", True))
    store = store or SignatureStore()

    verifier = pipeline if isinstance(pipeline, Verifier) else build_verifier(pipeline, settings, store)
    pairs = load_pairs(comparisons, store)
    enrollment = enrollment_sets(pairs)
    verifier.enroll(enrollment)
    logger.info(f"Scoring {len(pairs)} comparisons with {verifier.name} ({workers} workers)")

    def score_one(index: int) -> float:
        reference, questioned = pairs[index]
        if verifier.enrollment == "subject":
            references = enrollment[reference.meta.subject_id]
            return verifier.score_references(references, questioned)
        return verifier.score(reference, questioned)

    results: List[Optional[float]] = [None] * len(pairs)
    with Progress(
        SpinnerColumn(),
        TextColumn("[bold green]Scoring[/bold green]"),
        BarColumn(),
        TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
        TimeElapsedColumn(),
        console=err_console,
        transient=True,
        disable=not show_progress,
    ) as progress:
        bar = progress.add_task("", total=len(pairs))
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(score_one, i): i for i in range(len(pairs))}
            for future in as_completed(futures):
                index = futures[future]
                try:
                    results[index] = future.result()
                except Exception as e:
                    for pending in futures:
                        pending.cancel()
                    raise ProtocolError(f"scoring failed: {e}", comparisons[index].comparison_id) from e
                progress.update(bar, advance=1)

    return [
        ScoreRecord(comparison_id=task.comparison_id, score=score)
        for task, score in zip(comparisons, results)
    ]


# ---------------------------------------------------------------------------
# 排名
# ---------------------------------------------------------------------------

class RankingRow(BaseModel):
    """排名表中的一行"""
    model_config = ConfigDict(frozen=True)

    position: int = Field(..., ge=1, description="名次")
    team: str = Field(..., description="队伍")
    task_points: Dict[int, int] = Field(..., description="任务 -> 积分")
    total_points: int = Field(..., ge=0, description="总积分")
    best_eer: Optional[float] = Field(None, description="最佳单任务EER (%)")


def rank_teams(per_task_eers: Mapping[str, Mapping[Union[int, str], float]],
               reference_systems: Iterable[str] = ()) -> List[RankingRow]:
    """
    奖牌积分排名：每个任务按EER升序，前三名分别得3/2/1分

    同一任务EER相同时按队名排序；总排名按总分降序，
    再按最佳单任务EER升序，最后按队名。

    Args:
        per_task_eers: 队伍 -> (任务 -> EER%)
        reference_systems: 只作对照、不参与积分和排名的系统

    Returns:
        List[RankingRow]: 排名行
    """
    excluded = set(reference_systems)
    teams = {
        team: {int(task): float(eer) for task, eer in tasks.items()}
        for team, tasks in per_task_eers.items()
        if team not in excluded
    }
    all_tasks = sorted({task for tasks in teams.values() for task in tasks})

    points: Dict[str, Dict[int, int]] = {team: {task: 0 for task in all_tasks} for team in teams}
    for task in all_tasks:
        entrants = sorted((tasks[task], team) for team, tasks in teams.items() if task in tasks)
        for (_, team), medal in zip(entrants, MEDAL_POINTS):
            points[team][task] = medal

    def best(team: str) -> float:
        return min(teams[team].values()) if teams[team] else float("inf")

    order = sorted(teams, key=lambda team: (-sum(points[team].values()), best(team), team))
    return [
        RankingRow(
            position=i,
            team=team,
            task_points=points[team],
            total_points=sum(points[team].values()),
            best_eer=best(team) if teams[team] else None,
        )
        for i, team in enumerate(order, start=1)
    ]
