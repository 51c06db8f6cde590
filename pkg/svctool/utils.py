"""
工具函数模块 - 提供日志配置、终端输出和参数校验等辅助功能
"""

import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

import click
from rich.console import Console
from rich.markup import escape

console = Console()
err_console = Console(stderr=True)


def configure_logging(verbose: bool = False) -> Optional[Path]:
    """
    配置日志记录

    Args:
        verbose: 是否启用详细日志

    Returns:
        Optional[Path]: 日志文件路径，无法创建日志目录时返回None
    """
    from svctool.config import get_config_dir

    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)  # 内部级别为DEBUG，输出级别由handlers控制

    # 清除任何现有的处理程序
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # 控制台只显示警告以上级别
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.DEBUG if verbose else logging.WARNING)
    console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
    root_logger.addHandler(console_handler)

    timestamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    log_file = get_config_dir() / "logs" / f"svctool-{timestamp}.log"
    try:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
    except OSError as e:
        logging.getLogger(__name__).warning(f"File logging disabled: {e}")
        return None

    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(
        logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    root_logger.addHandler(file_handler)

    logging.info(f"Log started at {timestamp}")
    logging.info(f"Verbose logging: {verbose}")
    return log_file


def validate_existing_file(ctx: click.Context, param: click.Parameter, value: Optional[str]) -> Optional[str]:
    """
    验证输入文件路径（Click回调）

    Args:
        ctx: Click上下文
        param: 参数对象
        value: 文件路径

    Returns:
        Optional[str]: 有效的文件路径

    Raises:
        click.BadParameter: 如果文件路径无效
    """
    if not value:
        return value

    path = Path(value)
    if not path.exists():
        raise click.BadParameter(f"文件不存在: {value}")
    if not path.is_file():
        raise click.BadParameter(f"不是一个文件: {value}")
    return value


def format_float(value: float) -> str:
    """
    以完整精度格式化浮点数（repr可无损往返）

    Args:
        value: 浮点数

    Returns:
        str: 十进制字符串
    """
    return repr(float(value))


def print_error(message: str) -> None:
    """
    打印错误消息

    Args:
        message: 错误消息
    """
    err_console.print(f"[bold red]错误: {escape(message)}[/bold red]", highlight=False)


def print_warning(message: str) -> None:
    """
    打印警告消息

    Args:
        message: 警告消息
    """
    err_console.print(f"[bold yellow]警告: {escape(message)}[/bold yellow]", highlight=False)


def print_success(message: str) -> None:
    """打印成功消息"""
    console.print(f"[bold green]{escape(message)}[/bold green]", highlight=False)


def print_info(message: str) -> None:
    """打印信息消息"""
    console.print(f"[cyan]{escape(message)}[/cyan]", highlight=False)
