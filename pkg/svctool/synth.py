"""
合成数据模块 - 生成可复现的签名数据集（测试脚手架）

每个用户一条基准轨迹（x、y为若干正弦分量之和，压力与y方向速度相关）。
真签名 = 基准 + 平滑抖动 + 单调时间扭曲；熟练伪造 = 扰动后的基准 + 更大的时间畸变；
随机伪造 = 其他用户的真签名。同一种子输出的字节完全相同。
"""

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from svctool.config import SYNTH_CONSTANTS
from svctool.errors import ConfigurationError
from svctool.sigdata import (
    PRESSURE_FILL, Authenticity, ComparisonTask, ForgeryType, LabelRecord, PathLike, Scenario, Signature,
    SignatureMeta, Truth, WritingInput, write_comparison_file, write_label_file, write_signature_file,
)

logger = logging.getLogger(__name__)

C = SYNTH_CONSTANTS

MANIFEST_NAME = "manifest.json"
SIGNATURE_DIR = "signatures"


class TaskFiles(BaseModel):
    """一个任务的协议文件"""
    comparisons: str = Field(..., description="比对文件（相对数据集目录）")
    labels: str = Field(..., description="标签文件（相对数据集目录）")
    n_comparisons: int = Field(..., ge=0, description="比对数")


class SynthManifest(BaseModel):
    """合成数据集清单"""
    seed: int = Field(..., description="随机种子")
    n_subjects: int = Field(..., ge=2, description="用户数")
    n_signatures: int = Field(..., ge=0, description="签名文件数")
    subjects: Dict[str, str] = Field(..., description="用户ID -> 输入方式")
    tasks: Dict[str, TaskFiles] = Field(..., description="任务编号 -> 协议文件")


@dataclass(frozen=True)
class _BaseTrajectory:
    """基准轨迹参数"""
    x_freq: np.ndarray
    x_amp: np.ndarray
    x_phase: np.ndarray
    y_freq: np.ndarray
    y_amp: np.ndarray
    y_phase: np.ndarray
    p_freq: float
    p_phase: float
    n_samples: int

    def evaluate(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """在参数u∈[0,1]处求 x, y 和压力比例(0,1]"""
        def waves(freq: np.ndarray, amp: np.ndarray, phase: np.ndarray) -> np.ndarray:
            return (amp[:, None] * np.sin(2 * np.pi * freq[:, None] * u[None, :] + phase[:, None])).sum(axis=0)

        # 书写方向从左到右
        x = waves(self.x_freq, self.x_amp, self.x_phase) + 1.5 * u
        y = waves(self.y_freq, self.y_amp, self.y_phase)
        dy = np.gradient(y, u) if u.size > 1 else np.zeros_like(u)
        scale = np.max(np.abs(dy)) or 1.0
        p = 0.6 + 0.25 * np.sin(2 * np.pi * self.p_freq * u + self.p_phase) - 0.15 * np.tanh(dy / scale)
        return x, y, np.clip(p, 0.05, 1.0)


def _draw_base(rng: np.random.Generator) -> _BaseTrajectory:
    def components() -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = int(rng.integers(C["min_components"], C["max_components"] + 1))
        return (rng.uniform(*C["freq_range"], size=k),
                rng.uniform(*C["amp_range"], size=k),
                rng.uniform(0, 2 * np.pi, size=k))

    x_freq, x_amp, x_phase = components()
    y_freq, y_amp, y_phase = components()
    return _BaseTrajectory(
        x_freq=x_freq, x_amp=x_amp, x_phase=x_phase,
        y_freq=y_freq, y_amp=y_amp, y_phase=y_phase,
        p_freq=float(rng.uniform(*C["freq_range"])),
        p_phase=float(rng.uniform(0, 2 * np.pi)),
        n_samples=int(rng.integers(C["min_samples"], C["max_samples"] + 1)),
    )


def _imitate(base: _BaseTrajectory, rng: np.random.Generator, quality: float) -> _BaseTrajectory:
    """伪造者对基准轨迹的模仿：振幅、相位带噪声，quality越小模仿越好"""
    def perturb(amp: np.ndarray, phase: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        new_amp = amp * (1.0 + rng.normal(0, C["skilled_amp_noise"] * quality, size=amp.shape))
        new_phase = phase + rng.normal(0, C["skilled_phase_noise"] * quality, size=phase.shape)
        return new_amp, new_phase

    x_amp, x_phase = perturb(base.x_amp, base.x_phase)
    y_amp, y_phase = perturb(base.y_amp, base.y_phase)
    slowdown = 1.0 + rng.uniform(*C["skilled_slowdown"]) * quality
    return replace(
        base, x_amp=x_amp, x_phase=x_phase, y_amp=y_amp, y_phase=y_phase,
        p_phase=base.p_phase + float(rng.normal(0, C["skilled_phase_noise"] * quality)),
        n_samples=int(round(base.n_samples * slowdown)),
    )


def _smooth_noise(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    window = int(C["smooth_window"])
    raw = rng.normal(0, sigma, size=n + window - 1)
    return np.convolve(raw, np.ones(window) / np.sqrt(window), mode="valid")


def _realize(base: _BaseTrajectory, rng: np.random.Generator, meta: SignatureMeta,
             n: int, warp: float, jitter: float) -> Signature:
    """由基准轨迹采样一次书写"""
    n = max(int(C["min_length"]), n)
    s = np.linspace(0.0, 1.0, n)
    r = int(rng.integers(1, 4))
    eps = float(rng.uniform(-warp, warp))
    # |eps| < 1 时扭曲单调
    u = s + eps * np.sin(2 * np.pi * r * s) / (2 * np.pi * r)
    x, y, p = base.evaluate(u)
    x = x + _smooth_noise(rng, n, jitter)
    y = y + _smooth_noise(rng, n, jitter)

    size = 1.0 + float(rng.normal(0, C["size_jitter"]))
    offset = rng.uniform(-C["placement_jitter"], C["placement_jitter"], size=2)
    unit = C["device_scale"] / 8.0
    big_x = np.round(C["device_scale"] / 2 + offset[0] + size * unit * x, 2)
    big_y = np.round(C["device_scale"] / 2 + offset[1] + size * unit * y, 2)

    pen_up = np.zeros(n, dtype=bool)
    if meta.input == WritingInput.STYLUS:
        pressure = np.round(p * C["pressure_max"], 2)
        width = max(2, int(C["pen_up_width"] * n))
        low, high = n // 10, n - n // 10 - width
        for _ in range(int(rng.integers(C["pen_up_gaps"][0], C["pen_up_gaps"][1] + 1))):
            start = int(rng.integers(low, high))
            pen_up[start:start + width] = True
        pressure[pen_up] = 0.0
    else:
        pressure = np.full(n, PRESSURE_FILL)

    t = np.arange(n, dtype=np.int64) * int(C["step_ms"])
    return Signature(x=big_x, y=big_y, pressure=pressure, t=t, pen_up=pen_up, meta=meta)


def _digest(*parts: object) -> str:
    return hashlib.sha1(":".join(str(p) for p in parts).encode("utf-8")).hexdigest()


@dataclass
class _Subject:
    subject_id: str
    input: WritingInput
    scenario: Scenario
    references: List[Path]
    genuine: List[Path]
    skilled: List[Path]


def gen_synthetic_dataset(seed: int, n_subjects: int, out_dir: PathLike) -> SynthManifest:
    """
    生成合成数据集

    偶数序号用户为办公室/触控笔，奇数序号为移动/手指。
    task1 = 办公室用户的比对，task2 = 移动用户的比对，task3 = 全部比对。

    Args:
        seed: 随机种子
        n_subjects: 用户数 >= 2
        out_dir: 输出目录

    Returns:
        SynthManifest: 数据集清单（同时写入 manifest.json）

    Raises:
        ConfigurationError: 用户数少于2
    """
    if n_subjects < 2:
        raise ConfigurationError(f"synthetic dataset needs at least 2 subjects, got {n_subjects}")

    out = Path(out_dir)
    sig_dir = out / SIGNATURE_DIR
    sig_dir.mkdir(parents=True, exist_ok=True)

    streams = np.random.SeedSequence(seed).spawn(n_subjects + 1)
    order_rng = np.random.default_rng(streams[-1])
    n_signatures = 0

    def emit(sig: Signature, subject_id: str, kind: str, index: int) -> Path:
        nonlocal n_signatures
        path = sig_dir / f"{_digest(seed, subject_id, kind, index)[:16]}.sig"
        write_signature_file(sig, path)
        n_signatures += 1
        return path

    subjects: List[_Subject] = []
    for k in range(n_subjects):
        rng = np.random.default_rng(streams[k])
        stylus = k % 2 == 0
        subject_id = f"u{seed}_{k:03d}"
        writing = WritingInput.STYLUS if stylus else WritingInput.FINGER
        scenario = Scenario.OFFICE if stylus else Scenario.MOBILE
        base = _draw_base(rng)
        variability = float(rng.uniform(*C["writer_variability"]))

        def genuine_take(session: int) -> Signature:
            scale = C["session_scale"][session] * variability
            n = int(round(base.n_samples * (1.0 + rng.normal(0, C["genuine_length_jitter"] * scale))))
            meta = SignatureMeta(subject_id=subject_id, input=writing, scenario=scenario,
                                 authenticity=Authenticity.GENUINE, session=session)
            return _realize(base, rng, meta, n, min(0.9, C["genuine_warp"] * scale), C["genuine_jitter"] * scale)

        references = [emit(genuine_take(1), subject_id, "reference", i) for i in range(C["n_references"])]
        genuine = [emit(genuine_take(2), subject_id, "genuine", i) for i in range(C["n_genuine"])]

        skilled = []
        for i in range(C["n_skilled"]):
            quality = float(rng.uniform(*C["skilled_quality"]))
            forged = _imitate(base, rng, quality)
            meta = SignatureMeta(subject_id=subject_id, input=writing, scenario=scenario,
                                 authenticity=Authenticity.SKILLED, session=2)
            sig = _realize(forged, rng, meta, forged.n_samples, C["skilled_warp"], C["skilled_jitter"] * quality)
            skilled.append(emit(sig, subject_id, "skilled", i))

        subjects.append(_Subject(subject_id, writing, scenario, references, genuine, skilled))

    # (用户序号, 比对ID, 任务, 标签)
    rows: List[Tuple[int, ComparisonTask, LabelRecord]] = []
    for k, subject in enumerate(subjects):
        def add(kind: str, i: int, questioned: Path, truth: Truth,
                forgery: Optional[ForgeryType] = None) -> None:
            comparison_id = _digest(seed, subject.subject_id, kind, i, "cmp")[:12]
            rows.append((k, ComparisonTask(
                comparison_id=comparison_id,
                reference_path=subject.references[i % len(subject.references)],
                questioned_path=questioned,
            ), LabelRecord(comparison_id=comparison_id, truth=truth, forgery=forgery)))

        for i, path in enumerate(subject.genuine):
            add("genuine", i, path, Truth.GENUINE)
        for i, path in enumerate(subject.skilled):
            add("skilled", i, path, Truth.IMPOSTOR, ForgeryType.SKILLED)

        # 随机伪造优先选同一场景的其他用户
        same = [j for j in range(n_subjects) if j != k and subjects[j].scenario == subject.scenario]
        other = [j for j in range(n_subjects) if j != k and j not in same]
        pool = list(order_rng.permutation(same)) + list(order_rng.permutation(other))
        for i in range(C["n_random"]):
            donor = subjects[int(pool[i % len(pool)])]
            add("random", i, donor.genuine[i % len(donor.genuine)], Truth.IMPOSTOR, ForgeryType.RANDOM)

    order = order_rng.permutation(len(rows))
    rows = [rows[int(i)] for i in order]

    task_members = {
        "1": lambda k: subjects[k].scenario == Scenario.OFFICE,
        "2": lambda k: subjects[k].scenario == Scenario.MOBILE,
        "3": lambda k: True,
    }
    tasks: Dict[str, TaskFiles] = {}
    for task, member in task_members.items():
        selected = [(cmp, label) for k, cmp, label in rows if member(k)]
        comparisons_name = f"task{task}_comparisons.csv"
        labels_name = f"task{task}_labels.csv"
        write_comparison_file([cmp for cmp, _ in selected], out / comparisons_name)
        write_label_file([label for _, label in selected], out / labels_name)
        tasks[task] = TaskFiles(comparisons=comparisons_name, labels=labels_name, n_comparisons=len(selected))

    manifest = SynthManifest(
        seed=seed,
        n_subjects=n_subjects,
        n_signatures=n_signatures,
        subjects={s.subject_id: s.input.value for s in subjects},
        tasks=tasks,
    )
    with open(out / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(manifest.model_dump(), indent=2, sort_keys=True) + "\n")
    logger.info(f"Generated {n_signatures} signatures for {n_subjects} subjects in {out}")
    return manifest
