import logging

import numpy as np
import pytest

from svctool.sigdata import Authenticity, Scenario, Signature, SignatureMeta, WritingInput
from svctool.synth import gen_synthetic_dataset


@pytest.fixture(autouse=True)
def isolated_home(tmp_path_factory, monkeypatch):
    """配置目录和日志写到临时目录，测试结束后恢复根日志处理器"""
    home = tmp_path_factory.mktemp("svc_home")
    monkeypatch.setenv("SVCTOOL_HOME", str(home))
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield home
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


def make_signature(x, y, pressure=None, t=None, pen_up=None, subject="s1",
                   input="stylus", authenticity="genuine", session=1) -> Signature:
    """测试用签名构造函数"""
    n = len(x)
    writing = WritingInput(input)
    if pressure is None:
        pressure = np.full(n, 1.0) if writing == WritingInput.FINGER else np.linspace(100.0, 500.0, n)
    return Signature(
        x=x,
        y=y,
        pressure=pressure,
        t=np.arange(n) * 10 if t is None else t,
        pen_up=np.zeros(n, dtype=bool) if pen_up is None else pen_up,
        meta=SignatureMeta(
            subject_id=subject,
            input=writing,
            scenario=Scenario.OFFICE if writing == WritingInput.STYLUS else Scenario.MOBILE,
            authenticity=Authenticity(authenticity),
            session=session,
        ),
    )


@pytest.fixture
def wave_signature():
    """简单的正弦轨迹签名"""
    def factory(phase: float = 0.0, n: int = 120, subject: str = "s1", input: str = "stylus"):
        u = np.linspace(0.0, 1.0, n)
        return make_signature(
            x=500.0 + 300.0 * u + 40.0 * np.sin(2 * np.pi * 2 * u + phase),
            y=500.0 + 80.0 * np.sin(2 * np.pi * 3 * u + phase),
            subject=subject,
            input=input,
        )
    return factory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """4个用户的合成数据集"""
    out = tmp_path_factory.mktemp("synth_small")
    manifest = gen_synthetic_dataset(seed=7, n_subjects=4, out_dir=out)
    return out, manifest
