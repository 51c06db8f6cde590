"""
错误类型模块
定义工具包统一的异常层次结构
"""

from typing import Any, Dict, List, Optional


class SvcError(Exception):
    """工具包错误基类"""

    def __init__(self, message: str, source: Optional[str] = None,
                 details: Optional[Dict[str, Any]] = None) -> None:
        """
        初始化错误

        Args:
            message: 错误消息
            source: 出错的来源（文件路径、比对ID等）
            details: 错误详情
        """
        self.message = message
        self.source = source
        self.details = details or {}
        super().__init__(f"{source}: {message}" if source else message)


class FormatError(SvcError, ValueError):
    """文件格式错误，带行号"""

    def __init__(self, message: str, source: Optional[str] = None,
                 line: Optional[int] = None) -> None:
        self.line = line
        location = f"{source}:{line}" if source and line else source
        super().__init__(message, location, {"line": line})


class SignatureInvariantError(SvcError, ValueError):
    """签名数据违反类型约束"""
    pass


class DegenerateSignatureError(SignatureInvariantError):
    """预处理后签名不可用（少于2个采样点）"""
    pass


class AlignmentError(SvcError, ValueError):
    """对齐输入错误"""
    pass


class ModelError(SvcError, ValueError):
    """模型拟合或模型约束错误"""
    pass


class ConfigurationError(SvcError):
    """配置错误"""
    pass


class ProtocolError(SvcError):
    """协议运行错误，指明出错的比对ID"""

    def __init__(self, message: str, comparison_id: str,
                 details: Optional[Dict[str, Any]] = None) -> None:
        self.comparison_id = comparison_id
        super().__init__(message, f"comparison {comparison_id}", details)


class EvaluationError(SvcError, ValueError):
    """评测输入错误"""

    def __init__(self, message: str, missing: Optional[List[str]] = None,
                 extra: Optional[List[str]] = None) -> None:
        self.missing = sorted(missing or [])
        self.extra = sorted(extra or [])
        parts = [message]
        if self.missing:
            parts.append(f"missing ids: {', '.join(self.missing)}")
        if self.extra:
            parts.append(f"extra ids: {', '.join(self.extra)}")
        super().__init__("; ".join(parts), details={"missing": self.missing, "extra": self.extra})


class FeatureError(SvcError, ValueError):
    """特征提取输入错误（长度不足、维度不符、深度越界）"""
    pass
