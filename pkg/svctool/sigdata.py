"""
签名数据模块 - 签名、比对、分数与标签的领域类型，以及文本文件的读写

签名文件格式:
    COUNT <n>
    META subject=<id> input=<stylus|finger> scenario=<office|mobile> auth=<genuine|skilled|random|unknown> [session=<k>]
    x y t p s        (n行，空格分隔，s: 0=落笔, 1=抬笔)

比对文件: comparison_id,reference_path,questioned_path
分数文件: comparison_id,score
标签文件: comparison_id,<genuine|impostor>[,<skilled|random>]
"""

import logging
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from svctool.errors import FormatError, SignatureInvariantError
from svctool.utils import format_float

logger = logging.getLogger(__name__)

# 手指输入没有压力信息时的填充常量
PRESSURE_FILL = 1.0

PathLike = Union[str, Path]

# 只接受小数点，不接受千位分隔符、下划线、nan/inf
_REAL_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_INT_RE = re.compile(r"^[+-]?\d+$")


class PenState(str, Enum):
    """笔状态"""
    DOWN = "down"
    UP = "up"


class WritingInput(str, Enum):
    """书写输入方式"""
    STYLUS = "stylus"
    FINGER = "finger"


class Scenario(str, Enum):
    """采集场景"""
    OFFICE = "office"
    MOBILE = "mobile"


class Authenticity(str, Enum):
    """签名真伪（采集元数据）"""
    GENUINE = "genuine"
    SKILLED = "skilled"
    RANDOM = "random"
    UNKNOWN = "unknown"


class Truth(str, Enum):
    """比对的真实标签"""
    GENUINE = "genuine"
    IMPOSTOR = "impostor"


class ForgeryType(str, Enum):
    """伪造类型"""
    SKILLED = "skilled"
    RANDOM = "random"


class SignatureSample(BaseModel):
    """单个采样点"""
    model_config = ConfigDict(frozen=True)

    x: float = Field(..., description="X坐标（设备单位）")
    y: float = Field(..., description="Y坐标（设备单位）")
    pressure: float = Field(..., ge=0, description="压力（不可用时为填充常量）")
    t: int = Field(..., description="时间戳（毫秒）")
    pen_state: PenState = Field(PenState.DOWN, description="笔状态")


class SignatureMeta(BaseModel):
    """签名采集元数据"""
    model_config = ConfigDict(frozen=True)

    subject_id: str = Field(..., description="用户ID（不透明字符串）")
    input: WritingInput = Field(..., description="书写输入方式")
    scenario: Scenario = Field(..., description="采集场景")
    authenticity: Authenticity = Field(Authenticity.UNKNOWN, description="真伪")
    session: Optional[int] = Field(None, ge=0, description="采集会话编号")

    @field_validator("subject_id")
    @classmethod
    def _check_subject(cls, value: str) -> str:
        if not value or any(c.isspace() for c in value):
            raise ValueError("subject_id must be non-empty without whitespace")
        return value


def _frozen(values: Iterable, dtype: Any) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Signature:
    """
    在线签名：按时间排序的采样通道 + 元数据

    通道以只读numpy数组保存，构造后不可修改。
    """
    x: np.ndarray
    y: np.ndarray
    pressure: np.ndarray
    t: np.ndarray
    pen_up: np.ndarray
    meta: SignatureMeta
    # 归一化后的通道可以为负，不再满足原始压力约束
    normalized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _frozen(self.x, np.float64))
        object.__setattr__(self, "y", _frozen(self.y, np.float64))
        object.__setattr__(self, "pressure", _frozen(self.pressure, np.float64))
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "pen_up", _frozen(self.pen_up, bool))

        n = self.x.shape[0]
        for name in ("x", "y", "pressure", "t", "pen_up"):
            arr = getattr(self, name)
            if arr.ndim != 1 or arr.shape[0] != n:
                raise SignatureInvariantError(f"channel {name} must be 1-D of length {n}")
        if n < 2:
            raise SignatureInvariantError(f"signature needs at least 2 samples, got {n}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))
                and np.all(np.isfinite(self.pressure))):
            raise SignatureInvariantError("non-finite sample value")
        if not self.normalized and np.any(self.pressure < 0):
            raise SignatureInvariantError("pressure must be >= 0")
        if np.any(np.diff(self.t) < 0):
            raise SignatureInvariantError("timestamps must be non-decreasing")

    @classmethod
    def from_samples(cls, samples: Sequence[SignatureSample], meta: SignatureMeta) -> "Signature":
        """
        由采样点列表构造签名

        Args:
            samples: 采样点
            meta: 元数据

        Returns:
            Signature: 签名
        """
        return cls(
            x=[s.x for s in samples],
            y=[s.y for s in samples],
            pressure=[s.pressure for s in samples],
            t=[s.t for s in samples],
            pen_up=[s.pen_state == PenState.UP for s in samples],
            meta=meta,
        )

    @property
    def samples(self) -> List[SignatureSample]:
        """采样点列表视图"""
        return [
            SignatureSample(
                x=float(self.x[i]), y=float(self.y[i]), pressure=float(self.pressure[i]),
                t=int(self.t[i]), pen_state=PenState.UP if self.pen_up[i] else PenState.DOWN,
            )
            for i in range(len(self))
        ]

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Signature):
            return NotImplemented
        return (self.meta == other.meta
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.pressure, other.pressure)
                and np.array_equal(self.t, other.t)
                and np.array_equal(self.pen_up, other.pen_up)
                and self.normalized == other.normalized)

    __hash__ = None  # type: ignore[assignment]

    def replace(self, **changes: Any) -> "Signature":
        """返回替换了部分通道的新签名"""
        values = {
            "x": self.x, "y": self.y, "pressure": self.pressure,
            "t": self.t, "pen_up": self.pen_up, "meta": self.meta,
            "normalized": self.normalized,
        }
        values.update(changes)
        return Signature(**values)

    def select(self, mask: np.ndarray) -> "Signature":
        """按布尔掩码保留采样点，顺序不变"""
        return self.replace(
            x=self.x[mask], y=self.y[mask], pressure=self.pressure[mask],
            t=self.t[mask], pen_up=self.pen_up[mask],
        )


class ComparisonTask(BaseModel):
    """协议中的一次比对（参考签名, 待验证签名）"""
    model_config = ConfigDict(frozen=True)

    comparison_id: str = Field(..., min_length=1, description="比对ID（不透明）")
    reference_path: Path = Field(..., description="参考签名文件")
    questioned_path: Path = Field(..., description="待验证签名文件")


class ScoreRecord(BaseModel):
    """比对分数，越高越可能为真签名"""
    model_config = ConfigDict(frozen=True)

    comparison_id: str = Field(..., min_length=1, description="比对ID")
    score: float = Field(..., ge=0.0, le=1.0, description="分数 [0,1]")


class LabelRecord(BaseModel):
    """比对的真实标签（评测方持有）"""
    model_config = ConfigDict(frozen=True)

    comparison_id: str = Field(..., min_length=1, description="比对ID")
    truth: Truth = Field(..., description="真实标签")
    forgery: Optional[ForgeryType] = Field(None, description="伪造类型（仅冒名比对）")

    @model_validator(mode="after")
    def _check_forgery(self) -> "LabelRecord":
        if self.truth == Truth.GENUINE and self.forgery is not None:
            raise ValueError("genuine comparisons carry no forgery type")
        return self


# ---------------------------------------------------------------------------
# 签名文件
# ---------------------------------------------------------------------------

def _parse_real(token: str, path: str, line: int) -> float:
    if not _REAL_RE.match(token):
        raise FormatError(f"non-numeric token '{token}'", path, line)
    return float(token)


def _parse_int(token: str, path: str, line: int) -> int:
    if not _INT_RE.match(token):
        raise FormatError(f"non-integer token '{token}'", path, line)
    return int(token)


def _parse_meta(text: str, path: str) -> SignatureMeta:
    tokens = text.split()
    if not tokens or tokens[0] != "META":
        raise FormatError("second line must start with META", path, 2)
    fields: Dict[str, str] = {}
    for token in tokens[1:]:
        key, sep, value = token.partition("=")
        if not sep or not value:
            raise FormatError(f"malformed META field '{token}'", path, 2)
        if key in fields:
            raise FormatError(f"duplicate META field '{key}'", path, 2)
        fields[key] = value

    known = {"subject", "input", "scenario", "auth", "session"}
    unknown = sorted(set(fields) - known)
    if unknown:
        raise FormatError(f"unknown META fields: {', '.join(unknown)}", path, 2)
    missing = sorted({"subject", "input", "scenario", "auth"} - set(fields))
    if missing:
        raise FormatError(f"missing META fields: {', '.join(missing)}", path, 2)

    try:
        return SignatureMeta(
            subject_id=fields["subject"],
            input=WritingInput(fields["input"]),
            scenario=Scenario(fields["scenario"]),
            authenticity=Authenticity(fields["auth"]),
            session=_parse_int(fields["session"], path, 2) if "session" in fields else None,
        )
    except (ValueError, ValidationError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"invalid META value: {e}", path, 2)


def parse_signature_file(path: PathLike) -> Signature:
    """
    读取签名文件

    Args:
        path: 签名文件路径

    Returns:
        Signature: 签名，采样点保持文件顺序

    Raises:
        FormatError: 头部格式错误、非数值、数量不符、时间戳递减等（带行号）
    """
    source = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise FormatError(f"cannot read signature file: {e}", source)

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty signature file", source, 1)

    header = lines[0].split()
    if len(header) != 2 or header[0] != "COUNT":
        raise FormatError("first line must be 'COUNT <n>'", source, 1)
    count = _parse_int(header[1], source, 1)
    if count < 2:
        raise FormatError(f"signature needs at least 2 samples, header says {count}", source, 1)
    if len(lines) < 2:
        raise FormatError("missing META line", source, 2)
    meta = _parse_meta(lines[1], source)

    rows = lines[2:]
    if len(rows) != count:
        line = len(lines) if len(rows) < count else count + 3
        raise FormatError(f"sample count mismatch: header says {count}, found {len(rows)}", source, line)

    data = np.empty((count, 4), dtype=np.float64)
    t = np.empty(count, dtype=np.int64)
    pen_up = np.empty(count, dtype=bool)
    for k, row in enumerate(rows):
        line_no = k + 3
        tokens = row.split()
        if len(tokens) != 5:
            raise FormatError(f"expected 5 fields 'x y t p s', found {len(tokens)}", source, line_no)
        data[k, 0] = _parse_real(tokens[0], source, line_no)
        data[k, 1] = _parse_real(tokens[1], source, line_no)
        t[k] = _parse_int(tokens[2], source, line_no)
        data[k, 2] = _parse_real(tokens[3], source, line_no)
        if data[k, 2] < 0:
            raise FormatError("pressure must be >= 0", source, line_no)
        if tokens[4] not in ("0", "1"):
            raise FormatError(f"pen state must be 0 or 1, found '{tokens[4]}'", source, line_no)
        pen_up[k] = tokens[4] == "1"
        if k > 0 and t[k] < t[k - 1]:
            raise FormatError("timestamps must be non-decreasing", source, line_no)

    if meta.input == WritingInput.FINGER and np.any(data[:, 2] != PRESSURE_FILL):
        raise FormatError(f"finger signatures must carry pressure {PRESSURE_FILL}", source)

    logger.debug(f"Parsed signature {source}: {count} samples")
    return Signature(x=data[:, 0], y=data[:, 1], pressure=data[:, 2], t=t, pen_up=pen_up, meta=meta)


def check_raw_signature(sig: Signature) -> None:
    """
    检查原始（可写入文件的）签名约束

    Raises:
        SignatureInvariantError: 手指签名压力不等于填充常量
    """
    if sig.normalized:
        raise SignatureInvariantError("normalized signatures cannot be written as raw files")
    if sig.meta.input == WritingInput.FINGER and np.any(sig.pressure != PRESSURE_FILL):
        raise SignatureInvariantError(f"finger signatures must carry pressure {PRESSURE_FILL}")


def write_signature_file(sig: Signature, path: PathLike) -> None:
    """
    写入签名文件（完整精度，可无损读回）

    Args:
        sig: 签名
        path: 输出路径
    """
    check_raw_signature(sig)
    meta = sig.meta
    meta_fields = [
        f"subject={meta.subject_id}",
        f"input={meta.input.value}",
        f"scenario={meta.scenario.value}",
        f"auth={meta.authenticity.value}",
    ]
    if meta.session is not None:
        meta_fields.append(f"session={meta.session}")

    out = [f"COUNT {len(sig)}", "META " + " ".join(meta_fields)]
    for i in range(len(sig)):
        out.append(" ".join((
            format_float(sig.x[i]), format_float(sig.y[i]), str(int(sig.t[i])),
            format_float(sig.pressure[i]), "1" if sig.pen_up[i] else "0",
        )))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(out) + "\n")
    logger.debug(f"Wrote signature {path}: {len(sig)} samples")


# ---------------------------------------------------------------------------
# 协议文件（比对 / 分数 / 标签）
# ---------------------------------------------------------------------------

def _data_lines(path: PathLike) -> Iterable[Tuple[int, List[str]]]:
    """逐行读取CSV风格文件，跳过空行和#注释行"""
    source = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise FormatError(f"cannot read file: {e}", source)
    for line_no, line in enumerate(text.split("\n"), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield line_no, [field.strip() for field in stripped.split(",")]


def parse_comparison_file(path: PathLike) -> List[ComparisonTask]:
    """
    读取比对文件

    Args:
        path: 比对文件路径（相对签名路径以该文件所在目录为基准）

    Returns:
        List[ComparisonTask]: 按文件顺序的比对任务

    Raises:
        FormatError: 字段数错误或比对ID重复
    """
    source = str(path)
    base = Path(path).parent
    tasks: List[ComparisonTask] = []
    seen: Dict[str, int] = {}
    for line_no, fields in _data_lines(path):
        if len(fields) != 3:
            raise FormatError(f"expected 3 fields, found {len(fields)}", source, line_no)
        comparison_id, reference, questioned = fields
        if not comparison_id or not reference or not questioned:
            raise FormatError("empty field", source, line_no)
        if comparison_id in seen:
            raise FormatError(
                f"duplicate comparison id '{comparison_id}' (first on line {seen[comparison_id]})",
                source, line_no)
        seen[comparison_id] = line_no
        ref_path, q_path = Path(reference), Path(questioned)
        tasks.append(ComparisonTask(
            comparison_id=comparison_id,
            reference_path=ref_path if ref_path.is_absolute() else base / ref_path,
            questioned_path=q_path if q_path.is_absolute() else base / q_path,
        ))
    logger.debug(f"Parsed {len(tasks)} comparisons from {source}")
    return tasks


def _relative_to(path: Path, base: Path) -> str:
    try:
        return Path(path).resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return str(path)


def write_comparison_file(tasks: Sequence[ComparisonTask], path: PathLike) -> None:
    """
    写入比对文件（签名路径尽量写成相对路径）

    Args:
        tasks: 比对任务
        path: 输出路径
    """
    base = Path(path).parent
    seen = set()
    out = []
    for task in tasks:
        if task.comparison_id in seen:
            raise FormatError(f"duplicate comparison id '{task.comparison_id}'", str(path))
        seen.add(task.comparison_id)
        out.append(",".join((task.comparison_id,
                             _relative_to(task.reference_path, base),
                             _relative_to(task.questioned_path, base))))
    _write_lines(out, path)


def _write_lines(lines: List[str], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(line + "\n" for line in lines))


def write_score_file(records: Sequence[ScoreRecord], path: PathLike) -> None:
    """
    写入分数文件，每行 comparison_id,score

    Args:
        records: 分数记录
        path: 输出路径

    Raises:
        FormatError: 比对ID重复
    """
    seen = set()
    out = []
    for record in records:
        if record.comparison_id in seen:
            raise FormatError(f"duplicate comparison id '{record.comparison_id}'", str(path))
        seen.add(record.comparison_id)
        out.append(f"{record.comparison_id},{format_float(record.score)}")
    _write_lines(out, path)


def parse_score_file(path: PathLike) -> List[ScoreRecord]:
    """
    读取分数文件

    Args:
        path: 分数文件路径

    Returns:
        List[ScoreRecord]: 分数记录

    Raises:
        FormatError: 字段数错误、分数越界或比对ID重复
    """
    source = str(path)
    records: List[ScoreRecord] = []
    seen = set()
    for line_no, fields in _data_lines(path):
        if len(fields) != 2:
            raise FormatError(f"expected 2 fields, found {len(fields)}", source, line_no)
        comparison_id, raw_score = fields
        score = _parse_real(raw_score, source, line_no)
        if not 0.0 <= score <= 1.0:
            raise FormatError(f"score {raw_score} outside [0,1]", source, line_no)
        if comparison_id in seen:
            raise FormatError(f"duplicate comparison id '{comparison_id}'", source, line_no)
        seen.add(comparison_id)
        records.append(ScoreRecord(comparison_id=comparison_id, score=score))
    return records


def write_label_file(labels: Sequence[LabelRecord], path: PathLike) -> None:
    """写入标签文件"""
    out = []
    for label in labels:
        fields = [label.comparison_id, label.truth.value]
        if label.forgery is not None:
            fields.append(label.forgery.value)
        out.append(",".join(fields))
    _write_lines(out, path)


def parse_label_file(path: PathLike) -> List[LabelRecord]:
    """
    读取标签文件

    Args:
        path: 标签文件路径

    Returns:
        List[LabelRecord]: 标签记录

    Raises:
        FormatError: 字段无效或比对ID重复
    """
    source = str(path)
    labels: List[LabelRecord] = []
    seen = set()
    for line_no, fields in _data_lines(path):
        if len(fields) not in (2, 3):
            raise FormatError(f"expected 2 or 3 fields, found {len(fields)}", source, line_no)
        if fields[0] in seen:
            raise FormatError(f"duplicate comparison id '{fields[0]}'", source, line_no)
        seen.add(fields[0])
        try:
            labels.append(LabelRecord(
                comparison_id=fields[0],
                truth=Truth(fields[1]),
                forgery=ForgeryType(fields[2]) if len(fields) == 3 else None,
            ))
        except ValueError as e:
            raise FormatError(f"invalid label: {e}", source, line_no)
    return labels


@dataclass
class SignatureStore:
    """按路径缓存已解析的签名，线程安全"""
    _cache: Dict[Path, Signature] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def load(self, path: PathLike) -> Signature:
        """
        读取（或从缓存获取）签名

        Args:
            path: 签名文件路径

        Returns:
            Signature: 签名
        """
        key = Path(path).resolve()
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        sig = parse_signature_file(key)
        with self._lock:
            self._cache.setdefault(key, sig)
        return sig

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)
