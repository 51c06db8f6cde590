"""
显示与报告模块 - 终端表格以及报告、曲线、排名文件的输出
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd
from rich import box
from rich.table import Table

from svctool.errors import FormatError
from svctool.evaluation import EvaluationReport, RankingRow
from svctool.features import global_features
from svctool.sigdata import PathLike, Signature
from svctool.utils import console, format_float

logger = logging.getLogger(__name__)

TASK_NAMES = {1: "Office", 2: "Mobile", 3: "Office/Mobile"}


# ---------------------------------------------------------------------------
# 终端显示
# ---------------------------------------------------------------------------

def display_report(report: EvaluationReport) -> None:
    """显示评测报告摘要"""
    table = Table(title=f"Task {report.task}: {TASK_NAMES[report.task]}", show_header=False, box=box.ROUNDED)
    table.add_column("项目", style="cyan")
    table.add_column("值", style="white")
    table.add_row("冒名类型", report.forgery)
    table.add_row("EER (%)", f"[bold green]{report.eer_percent:.4f}[/bold green]")
    table.add_row("EER阈值", f"{report.threshold_at_eer:.6g}")
    table.add_row("真签名比对", str(report.n_genuine))
    table.add_row("冒名比对", str(report.n_impostor))
    console.print(table)


def display_ranking(rows: Sequence[RankingRow]) -> None:
    """显示排名表"""
    tasks = sorted({task for row in rows for task in row.task_points})
    table = Table(title="总排名", show_header=True, box=box.ROUNDED)
    table.add_column("名次", style="cyan", justify="right")
    table.add_column("队伍", style="white")
    for task in tasks:
        table.add_column(f"Task {task}", justify="right")
    table.add_column("总积分", style="green", justify="right")
    for row in rows:
        style = "bold" if row.position == 1 else None
        table.add_row(
            str(row.position), row.team,
            *[str(row.task_points.get(task, 0)) for task in tasks],
            str(row.total_points), style=style,
        )
    console.print(table)


def display_signature(sig: Signature, source: str) -> None:
    """显示签名摘要"""
    table = Table(title=f"签名 {source}", show_header=False, box=box.ROUNDED)
    table.add_column("字段", style="cyan")
    table.add_column("值", style="white")
    meta = sig.meta
    table.add_row("用户", meta.subject_id)
    table.add_row("输入方式", meta.input.value)
    table.add_row("场景", meta.scenario.value)
    table.add_row("真伪", meta.authenticity.value)
    table.add_row("会话", "-" if meta.session is None else str(meta.session))
    table.add_row("采样点", str(len(sig)))
    table.add_row("抬笔采样点", str(int(np.count_nonzero(sig.pen_up))))
    table.add_row("X范围", f"{sig.x.min():.2f} .. {sig.x.max():.2f}")
    table.add_row("Y范围", f"{sig.y.min():.2f} .. {sig.y.max():.2f}")
    table.add_row("压力范围", f"{sig.pressure.min():.2f} .. {sig.pressure.max():.2f}")
    for name, value in global_features(sig, "extended").as_dict().items():
        table.add_row(name, f"{value:.6g}")
    console.print(table)


def display_config(config: Mapping[str, Any]) -> None:
    """显示应用配置"""
    table = Table(title="当前配置")
    table.add_column("配置项", style="cyan")
    table.add_column("值", style="green")
    for key, value in config.items():
        table.add_row(key, str(value))
    console.print(table)


# ---------------------------------------------------------------------------
# 报告文件
# ---------------------------------------------------------------------------

def report_kv_lines(report: EvaluationReport) -> List[str]:
    """报告的 key=value 行（曲线行为 curve=阈值,FAR,FRR）"""
    lines = [
        f"task={report.task}",
        f"forgery={report.forgery}",
        f"eer_percent={format_float(report.eer_percent)}",
        f"threshold_at_eer={format_float(report.threshold_at_eer)}",
        f"n_genuine={report.n_genuine}",
        f"n_impostor={report.n_impostor}",
    ]
    lines.extend(
        f"curve={format_float(t)},{format_float(far)},{format_float(frr)}"
        for t, far, frr in report.far_frr_curve
    )
    return lines


def write_report_kv(report: EvaluationReport, path: PathLike) -> None:
    """写入机器可读的 key=value 报告"""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(report_kv_lines(report)) + "\n")
    logger.info(f"Report written to {path}")


def write_report_text(report: EvaluationReport, path: PathLike) -> None:
    """写入人类可读的文本报告"""
    lines = [
        f"Task {report.task} ({TASK_NAMES[report.task]} scenario), impostors: {report.forgery}",
        f"  EER:                 {report.eer_percent:.4f} %",
        f"  Threshold at EER:    {report.threshold_at_eer:.6g}",
        f"  Genuine comparisons: {report.n_genuine}",
        f"  Impostor comparisons:{report.n_impostor:>5d}",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def write_curve_csv(report: EvaluationReport, path: PathLike) -> None:
    """
    写入FAR/FRR曲线CSV（列: threshold, far, frr）

    Args:
        report: 评测报告
        path: 输出路径
    """
    df = pd.DataFrame(report.far_frr_curve, columns=["threshold", "far", "frr"])
    df.to_csv(path, index=False, encoding="utf-8", float_format="%.17g")
    logger.info(f"Curve exported to {path}")


def write_ranking_csv(rows: Sequence[RankingRow], path: PathLike) -> None:
    """
    写入排名CSV（Position, Team, Total Points, 以及每个任务的积分）

    Args:
        rows: 排名行
        path: 输出路径
    """
    tasks = sorted({task for row in rows for task in row.task_points})
    columns = ["Position", "Team", "Total Points"] + [f"Task {task} Points" for task in tasks]
    data = [
        [row.position, row.team, row.total_points] + [row.task_points.get(task, 0) for task in tasks]
        for row in rows
    ]
    pd.DataFrame(data, columns=columns).to_csv(path, index=False, encoding="utf-8")
    logger.info(f"Ranking exported to {path}")


def read_eer_table(path: PathLike) -> Dict[str, Dict[int, float]]:
    """
    读取队伍EER表（列: team, task, eer）

    Args:
        path: CSV文件路径

    Returns:
        Dict[str, Dict[int, float]]: 队伍 -> (任务 -> EER%)

    Raises:
        FormatError: 缺少列、数值无效或(队伍, 任务)重复
    """
    source = str(path)
    try:
        df = pd.read_csv(path, dtype={"team": str, "task": str}, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return {}
    except (OSError, pd.errors.ParserError) as e:
        raise FormatError(f"cannot read EER table: {e}", source)

    missing = {"team", "task", "eer"} - set(df.columns)
    if missing:
        raise FormatError(f"missing columns: {', '.join(sorted(missing))}", source, 1)

    table: Dict[str, Dict[int, float]] = {}
    for offset, row in enumerate(df.itertuples(index=False)):
        line = offset + 2
        try:
            task = int(str(row.task).strip())
            eer = float(row.eer)
        except (TypeError, ValueError):
            raise FormatError(f"task must be an integer id and eer a number, got task={row.task!r}", source, line)
        if task < 1:
            raise FormatError(f"task id {task} must be positive", source, line)
        if not 0.0 <= eer <= 100.0:
            raise FormatError(f"EER {eer} outside [0,100]", source, line)
        team = str(row.team).strip()
        if task in table.setdefault(team, {}):
            raise FormatError(f"duplicate entry for {team}, task {task}", source, line)
        table[team][task] = eer
    return table


def write_eer_table(per_task_eers: Mapping[str, Mapping[int, float]], path: PathLike) -> None:
    """写入队伍EER表（team, task, eer）"""
    data = [(team, task, eer) for team, tasks in per_task_eers.items() for task, eer in sorted(tasks.items())]
    pd.DataFrame(data, columns=["team", "task", "eer"]).to_csv(path, index=False, encoding="utf-8")


def record_team_eer(path: PathLike, team: str, task: int, eer_percent: float) -> None:
    """
    在队伍EER表中记录(或替换)一个任务的EER，表不存在时新建

    Args:
        path: CSV文件路径
        team: 队伍
        task: 任务编号
        eer_percent: EER (%)
    """
    path = Path(path)
    table = read_eer_table(path) if path.exists() else {}
    table.setdefault(team, {})[task] = eer_percent
    write_eer_table(table, output_path(path))
    logger.info(f"Recorded EER {eer_percent:.4f}% for {team}, task {task} in {path}")


def output_path(path: PathLike) -> Path:
    """确保输出文件所在目录存在"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path
