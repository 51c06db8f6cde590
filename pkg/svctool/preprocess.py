"""
预处理模块 - 去除零压力采样点和两种归一化方式

sigstat: 压力为0的采样点先被移除（仅触控笔），X/Y/压力缩放到[0,1]后减去均值
mad:     X/Y映射到[-1,1]，压力映射到[0,1]；无压力信息时压力全为1
"""

import logging
from typing import Literal

import numpy as np

from svctool.errors import ConfigurationError, DegenerateSignatureError, SignatureInvariantError
from svctool.sigdata import Signature, WritingInput

logger = logging.getLogger(__name__)

PreprocessMode = Literal["mad", "sigstat", "none"]


def remove_zero_pressure(sig: Signature) -> Signature:
    """
    移除压力为0的采样点（触控笔签名）

    Args:
        sig: 触控笔签名

    Returns:
        Signature: 仅含压力>0采样点的签名，顺序不变

    Raises:
        SignatureInvariantError: 输入不是触控笔签名
        DegenerateSignatureError: 剩余采样点少于2个
    """
    if sig.meta.input != WritingInput.STYLUS:
        raise SignatureInvariantError("zero-pressure removal applies to stylus signatures only")
    mask = sig.pressure > 0
    kept = int(np.count_nonzero(mask))
    if kept < 2:
        raise DegenerateSignatureError(
            f"only {kept} samples with pressure > 0 remain", sig.meta.subject_id)
    if kept < len(sig):
        logger.debug(f"Removed {len(sig) - kept} zero-pressure samples")
    return sig.select(mask)


def _unit_scale(channel: np.ndarray) -> np.ndarray:
    """(c - min) / (max - min)；常量通道返回None"""
    low, high = float(np.min(channel)), float(np.max(channel))
    if high <= low:
        return None
    return (channel - low) / (high - low)


def normalize_sigstat(sig: Signature) -> Signature:
    """
    X、Y、压力缩放到[0,1]再减去各自均值；常量通道映射为全0

    Args:
        sig: 签名

    Returns:
        Signature: 归一化后的签名（采样数与时间戳不变）
    """
    channels = {}
    for name in ("x", "y", "pressure"):
        scaled = _unit_scale(getattr(sig, name))
        channels[name] = np.zeros(len(sig)) if scaled is None else scaled - scaled.mean()
    return sig.replace(normalized=True, **channels)


def normalize_mad(sig: Signature) -> Signature:
    """
    X、Y仿射映射到[-1,1]（常量通道取中点0），压力映射到[0,1]

    手指签名（无压力信息）以及常量压力通道的压力置为全1。

    Args:
        sig: 签名

    Returns:
        Signature: 归一化后的签名（采样数与时间戳不变）
    """
    channels = {}
    for name in ("x", "y"):
        scaled = _unit_scale(getattr(sig, name))
        channels[name] = np.zeros(len(sig)) if scaled is None else 2.0 * scaled - 1.0

    pressure = None if sig.meta.input == WritingInput.FINGER else _unit_scale(sig.pressure)
    channels["pressure"] = np.ones(len(sig)) if pressure is None else pressure
    return sig.replace(normalized=True, **channels)


def preprocess(sig: Signature, mode: PreprocessMode) -> Signature:
    """
    按名称执行预处理流程

    Args:
        sig: 原始签名
        mode: mad | sigstat | none

    Returns:
        Signature: 预处理后的签名
    """
    if mode == "mad":
        return normalize_mad(sig)
    if mode == "sigstat":
        if sig.meta.input == WritingInput.STYLUS:
            sig = remove_zero_pressure(sig)
        return normalize_sigstat(sig)
    if mode == "none":
        return sig
    raise ConfigurationError(f"Unknown preprocessing mode: {mode}")
