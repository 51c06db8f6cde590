"""
命令行界面模块 - 提供命令行交互功能
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Tuple

import click

from svctool import __version__
from svctool.config import coerce_setting, get_config, load_pipeline_config, update_config_setting
from svctool.display import (
    display_config, display_ranking, display_report, display_signature, output_path,
    read_eer_table, record_team_eer, write_curve_csv, write_ranking_csv, write_report_kv,
    write_report_text,
)
from svctool.errors import SvcError
from svctool.evaluation import evaluate_task, load_pairs, rank_teams, run_protocol
from svctool.sigdata import (
    SignatureStore, parse_comparison_file, parse_label_file, parse_score_file,
    parse_signature_file, write_score_file,
)
from svctool.synth import gen_synthetic_dataset
from svctool.systems import load_dev_set
from svctool.utils import (
    configure_logging, format_float, print_error, print_info, print_success, print_warning,
    validate_existing_file,
)

# 获取日志记录器
logger = logging.getLogger(__name__)


def _fail(action: str, error: Exception) -> None:
    logger.debug(f"{action} failed", exc_info=error)
    print_error(str(error))
    sys.exit(1)


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='启用详细日志记录')
@click.version_option(__version__, prog_name='svc')
def cli(verbose: bool) -> None:
    """
    在线签名验证评测工具 - 运行验证系统、计算EER并按奖牌积分排名
    """
    configure_logging(verbose)


@cli.command('compare')
@click.argument('comparisons', callback=validate_existing_file)
@click.option('--pipeline', '-p', 'pipeline_file', required=True, callback=validate_existing_file,
              help='流水线配置文件 (JSON)')
@click.option('--out', '-o', type=click.Path(dir_okay=False), help='输出分数文件')
@click.option('--dry-run', is_flag=True, help='只检查输入文件，不打分')
@click.option('--workers', type=click.IntRange(min=1), help='并发比对数')
def compare(comparisons: str, pipeline_file: str, out: Optional[str], dry_run: bool,
            workers: Optional[int]) -> None:
    """对比对文件中的每一对签名打分"""
    if not out and not dry_run:
        raise click.UsageError("需要 --out（或使用 --dry-run）")

    try:
        pipeline = load_pipeline_config(Path(pipeline_file))
        tasks = parse_comparison_file(comparisons)

        if dry_run:
            store = SignatureStore()
            load_pairs(tasks, store)
            if pipeline.has_dev_set():
                load_dev_set(pipeline, store)
            print_success(f"输入检查通过: {len(tasks)} 个比对, 验证系统 {pipeline.verifier}")
            return

        # 全部打分成功后才写文件
        records = run_protocol(tasks, pipeline, max_workers=workers)
        write_score_file(records, output_path(out))
        print_success(f"已写入 {len(records)} 个分数: {out}")
    except SvcError as e:
        _fail("compare", e)


@cli.command('eval')
@click.argument('scores', callback=validate_existing_file)
@click.argument('labels', callback=validate_existing_file)
@click.option('--task', '-t', type=click.Choice(['1', '2', '3']), required=True, help='任务编号')
@click.option('--forgery', '-f', type=click.Choice(['all', 'skilled', 'random']), default='all',
              show_default=True, help='参与评测的冒名类型')
@click.option('--curve', type=click.Path(dir_okay=False), help='导出FAR/FRR曲线CSV')
@click.option('--out', '-o', type=click.Path(dir_okay=False), help='导出 key=value 报告')
@click.option('--text', type=click.Path(dir_okay=False), help='导出文本报告')
@click.option('--team', help='队伍名称（与 --table 一起使用）')
@click.option('--table', type=click.Path(dir_okay=False), help='把EER记入队伍EER表（供 rank 使用）')
def evaluate(scores: str, labels: str, task: str, forgery: str, curve: Optional[str],
             out: Optional[str], text: Optional[str], team: Optional[str],
             table: Optional[str]) -> None:
    """根据标签计算某个任务的EER"""
    if bool(team) != bool(table):
        raise click.UsageError("--team 和 --table 需要同时使用")
    try:
        report = evaluate_task(parse_score_file(scores), parse_label_file(labels), int(task), forgery)
        click.echo(f"eer_percent={format_float(report.eer_percent)}")
        display_report(report)
        if curve:
            write_curve_csv(report, output_path(curve))
        if out:
            write_report_kv(report, output_path(out))
        if text:
            write_report_text(report, output_path(text))
        if table and team:
            record_team_eer(table, team, report.task, report.eer_percent)
            print_success(f"已记录 {team} 在 task {report.task} 的EER: {table}")
    except SvcError as e:
        _fail("eval", e)


@cli.command('rank')
@click.argument('table', callback=validate_existing_file)
@click.option('--out', '-o', type=click.Path(dir_okay=False), help='导出排名CSV')
@click.option('--reference-system', '-r', 'reference_systems', multiple=True,
              help='只作对照、不参与排名的系统（可重复）')
def rank(table: str, out: Optional[str], reference_systems: Tuple[str, ...]) -> None:
    """按奖牌积分对队伍排名（输入CSV列: team, task, eer）"""
    try:
        per_task_eers = read_eer_table(table)
        for name in reference_systems:
            if name not in per_task_eers:
                print_warning(f"对照系统 {name} 不在EER表中")
        rows = rank_teams(per_task_eers, reference_systems)
        if rows:
            display_ranking(rows)
        else:
            print_info("没有可排名的队伍")
        if out:
            write_ranking_csv(rows, output_path(out))
            print_success(f"排名已导出: {out}")
    except SvcError as e:
        _fail("rank", e)


@cli.command('synth')
@click.option('--seed', type=int, default=42, show_default=True, help='随机种子')
@click.option('--subjects', type=int, default=20, show_default=True, help='用户数')
@click.option('--out', '-o', type=click.Path(file_okay=False), required=True, help='输出目录')
def synth(seed: int, subjects: int, out: str) -> None:
    """生成可复现的合成签名数据集"""
    try:
        manifest = gen_synthetic_dataset(seed, subjects, out)
        print_success(f"已生成 {manifest.n_signatures} 个签名 ({manifest.n_subjects} 个用户): {out}")
        for name, files in sorted(manifest.tasks.items()):
            print_info(f"task {name}: {files.comparisons} / {files.labels} ({files.n_comparisons} 个比对)")
    except SvcError as e:
        _fail("synth", e)


@cli.command('inspect')
@click.argument('file', callback=validate_existing_file)
def inspect(file: str) -> None:
    """解析签名文件并显示摘要"""
    try:
        display_signature(parse_signature_file(file), file)
    except SvcError as e:
        _fail("inspect", e)


@cli.group()
def config() -> None:
    """配置管理命令"""
    pass


@config.command('show')
def config_show() -> None:
    """显示当前配置"""
    display_config(get_config())


@config.command('set')
@click.argument('key')
@click.argument('value')
def config_set(key: str, value: str) -> None:
    """设置配置项值"""
    try:
        converted = coerce_setting(key, value)
        if update_config_setting(key, converted):
            print_success(f"已更新配置项 {key} = {converted}")
        else:
            print_error("更新配置失败")
            sys.exit(1)
    except SvcError as e:
        _fail("config set", e)


if __name__ == '__main__':
    cli()
