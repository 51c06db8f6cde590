"""
配置管理模块 - 负责应用配置和验证流水线配置
"""
import os
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from svctool.errors import ConfigurationError

# 配置常量
APP_NAME = "realsignature"
HOME_ENV_VAR = "SVCTOOL_HOME"
CONFIG_FILE_NAME = "config.json"

# 配置默认值
DEFAULT_CONFIG: Dict[str, Any] = {
    "max_workers": 4,             # 协议运行时并发比对数
    "tanh_constant": 0.01,        # tanh估计器常数
    "fusion_grid_step": 0.05,     # 融合权重网格步长
    "knn_k": 3,                   # 局部阈值的k近邻个数
    "local_alpha_grid": [1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0],
    "local_scale_grid": [1.0, 1.25, 1.5, 2.0],
    "softdtw_gamma_grid": [0.1, 1.0, 10.0],
    "show_progress": True,
}

# 合成数据生成器常量（测试脚手架，固定不可配置）
SYNTH_CONSTANTS: Dict[str, Any] = {
    "step_ms": 10,
    "min_samples": 300,
    "max_samples": 800,
    "min_components": 3,
    "max_components": 5,
    "freq_range": (0.5, 3.0),
    "amp_range": (0.3, 1.0),
    "device_scale": 1000.0,
    "pressure_max": 1023.0,
    "n_references": 4,
    "n_genuine": 4,
    "n_skilled": 4,
    "n_random": 4,
    "writer_variability": (0.5, 2.0),
    "genuine_warp": 0.04,
    "genuine_jitter": 0.01,
    "genuine_length_jitter": 0.04,
    "session_scale": {1: 1.0, 2: 1.5},
    "placement_jitter": 50.0,
    "size_jitter": 0.03,
    "skilled_amp_noise": 0.15,
    "skilled_phase_noise": 0.35,
    "skilled_quality": (0.3, 1.0),
    "skilled_warp": 0.15,
    "skilled_slowdown": (0.2, 0.6),   # 额外时长比例，乘以伪造质量因子
    "skilled_jitter": 0.02,
    "pen_up_gaps": (1, 3),
    "pen_up_width": 0.02,
    "smooth_window": 15,
    "min_length": 60,
}

logger = logging.getLogger(__name__)


def get_config_dir() -> Path:
    """获取配置目录（可通过SVCTOOL_HOME环境变量覆盖）"""
    override = os.environ.get(HOME_ENV_VAR)
    return Path(override) if override else Path.home() / ".svctool"


def get_config_file() -> Path:
    """获取配置文件路径"""
    return get_config_dir() / CONFIG_FILE_NAME


def ensure_config_dir() -> None:
    """确保配置目录存在"""
    config_dir = get_config_dir()
    if not config_dir.exists():
        config_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Created configuration directory: {config_dir}")


def get_config() -> Dict[str, Any]:
    """
    获取应用配置。如果配置文件不存在，则创建默认配置。

    Returns:
        Dict[str, Any]: 配置字典
    """
    config_file = get_config_file()

    if not config_file.exists():
        try:
            ensure_config_dir()
            with open(config_file, "w", encoding="utf-8") as f:
                json.dump(DEFAULT_CONFIG, f, indent=2)
            logger.info(f"Created default configuration file: {config_file}")
        except OSError as e:
            logger.warning(f"Could not write default configuration: {e}")
        return json.loads(json.dumps(DEFAULT_CONFIG))

    try:
        with open(config_file, "r", encoding="utf-8") as f:
            config = json.load(f)
        # 确保所有默认配置项都存在
        for key, value in DEFAULT_CONFIG.items():
            if key not in config:
                config[key] = value
        return config
    except (json.JSONDecodeError, OSError) as e:
        logger.error(f"Failed to read configuration file: {e}")
        return json.loads(json.dumps(DEFAULT_CONFIG))


def save_config(config: Dict[str, Any]) -> bool:
    """
    保存应用配置

    Args:
        config: 要保存的配置字典

    Returns:
        bool: 保存成功返回True，否则返回False
    """
    try:
        ensure_config_dir()
        with open(get_config_file(), "w", encoding="utf-8") as f:
            json.dump(config, f, indent=2)
        logger.info("Configuration saved successfully")
        return True
    except OSError as e:
        logger.error(f"Failed to save configuration: {e}")
        return False


def update_config_setting(key: str, value: Any) -> bool:
    """
    更新单个配置设置

    Args:
        key: 配置键
        value: 配置值

    Returns:
        bool: 更新成功返回True，否则返回False
    """
    if key not in DEFAULT_CONFIG:
        raise ConfigurationError(f"Unknown configuration key: {key}")
    config = get_config()
    config[key] = value
    return save_config(config)


def coerce_setting(key: str, raw: str) -> Any:
    """
    将命令行传入的字符串转换为配置项的类型

    Args:
        key: 配置键
        raw: 字符串值

    Returns:
        Any: 转换后的值
    """
    if key not in DEFAULT_CONFIG:
        raise ConfigurationError(f"Unknown configuration key: {key}")
    default = DEFAULT_CONFIG[key]
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"Invalid value for {key}: {raw}")
    return raw


VerifierName = Literal[
    "baseline_dtw", "sig_online", "sigstat_local", "sigstat_global",
    "feature_difference", "mad", "softdtw", "fusion",
]


class PipelineConfig(BaseModel):
    """验证流水线配置"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    verifier: VerifierName = Field(..., description="验证系统名称")
    preprocessing: Optional[Literal["mad", "sigstat", "none"]] = Field(
        None, description="预处理方式，缺省时由验证系统决定")
    feature_set: Literal["minimum", "extended"] = Field("extended", description="全局特征集")
    aggregation: Literal["mean", "max"] = Field("mean", description="多参考签名分数聚合方式")
    enrollment: Literal["single", "subject"] = Field("single", description="参考签名使用方式")
    local_distance: Literal["euclidean", "cityblock"] = Field("euclidean", description="DTW局部距离")
    fusion_members: List[VerifierName] = Field(default_factory=list, description="融合成员系统")
    fusion_weights: Optional[List[float]] = Field(None, description="融合权重（缺省时拟合）")
    dev_comparisons: Optional[Path] = Field(None, description="开发集比对文件")
    dev_labels: Optional[Path] = Field(None, description="开发集标签文件")
    gamma: Optional[float] = Field(None, gt=0, description="soft-DTW平滑参数")
    seed: int = Field(0, description="随机种子")

    @model_validator(mode="after")
    def _check_fusion(self) -> "PipelineConfig":
        if self.verifier == "fusion":
            if len(self.fusion_members) < 2:
                raise ValueError("fusion needs at least two fusion_members")
            if "fusion" in self.fusion_members:
                raise ValueError("fusion cannot be nested")
            if self.fusion_weights is not None and len(self.fusion_weights) != len(self.fusion_members):
                raise ValueError("fusion_weights must match fusion_members")
        if (self.dev_comparisons is None) != (self.dev_labels is None):
            raise ValueError("dev_comparisons and dev_labels must be given together")
        return self

    def has_dev_set(self) -> bool:
        """是否配置了开发集"""
        return self.dev_comparisons is not None and self.dev_labels is not None


def load_pipeline_config(path: Path) -> PipelineConfig:
    """
    读取流水线配置文件（JSON键值）

    Args:
        path: 配置文件路径

    Returns:
        PipelineConfig: 验证后的配置

    Raises:
        ConfigurationError: 文件不可读或内容无效
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read pipeline config: {e}", str(path))
    if not isinstance(raw, dict):
        raise ConfigurationError("pipeline config must be a JSON object", str(path))

    # 相对路径以配置文件所在目录为基准
    for key in ("dev_comparisons", "dev_labels"):
        if raw.get(key):
            candidate = Path(raw[key])
            if not candidate.is_absolute():
                raw[key] = str(path.parent / candidate)

    try:
        config = PipelineConfig(**raw)
    except ValidationError as e:
        raise ConfigurationError(f"invalid pipeline config: {e}", str(path))
    logger.debug(f"Loaded pipeline config {path}: {config.verifier}")
    return config
