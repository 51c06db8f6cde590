import numpy as np
import pytest

from svctool.errors import FormatError, SignatureInvariantError
from svctool.sigdata import (
    ForgeryType, LabelRecord, ScoreRecord, SignatureStore, Truth, WritingInput,
    parse_comparison_file, parse_label_file, parse_score_file, parse_signature_file,
    write_label_file, write_score_file, write_signature_file,
)
from tests.conftest import make_signature

HEADER = "COUNT 3\nMETA subject=u1 input=stylus scenario=office auth=genuine session=1\n"


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_parse_signature_file(tmp_path):
    """测试读取签名文件"""
    path = _write(tmp_path, "a.sig", HEADER + "1.5 2 0 10 0\n2.5 3 10 0 1\n3.5 4 20 12.25 0\n")
    sig = parse_signature_file(path)
    assert len(sig) == 3
    assert sig.meta.subject_id == "u1"
    assert sig.meta.input == WritingInput.STYLUS
    assert sig.meta.session == 1
    np.testing.assert_array_equal(sig.x, [1.5, 2.5, 3.5])
    np.testing.assert_array_equal(sig.t, [0, 10, 20])
    np.testing.assert_array_equal(sig.pen_up, [False, True, False])
    assert sig.pressure[2] == 12.25


def test_signature_file_is_lossless(tmp_path, rng):
    """测试写入后读回完全一致"""
    n = 50
    sig = make_signature(x=rng.normal(size=n) * 1e3, y=rng.normal(size=n) / 3.0,
                         pressure=rng.uniform(0, 1023, size=n))
    path = tmp_path / "b.sig"
    write_signature_file(sig, path)
    assert parse_signature_file(path) == sig


@pytest.mark.parametrize("body, line", [
    ("1 2 0 10 0\n2 x 10 10 0\n3 4 20 10 0\n", 4),
    ("1 2 0 10 0\n2 3 10 10 0\n3 4 5 10 0\n", 5),
    ("1 2 0 10 0\n2 3 10 -1 0\n3 4 20 10 0\n", 4),
    ("1 2 0 10 0\n2 3 10 10 2\n3 4 20 10 0\n", 4),
    ("1 2 0 10 0\n2 3 10 10\n3 4 20 10 0\n", 4),
    ("1,5 2 0 10 0\n2 3 10 10 0\n3 4 20 10 0\n", 3),
])
def test_signature_format_errors_carry_line(tmp_path, body, line):
    """测试格式错误带行号"""
    path = _write(tmp_path, "bad.sig", HEADER + body)
    with pytest.raises(FormatError) as info:
        parse_signature_file(path)
    assert info.value.line == line
    assert f":{line}" in str(info.value)


def test_signature_count_mismatch(tmp_path):
    """测试采样点数与头部不符"""
    path = _write(tmp_path, "short.sig", HEADER + "1 2 0 10 0\n2 3 10 10 0\n")
    with pytest.raises(FormatError, match="count mismatch"):
        parse_signature_file(path)


def test_signature_header_errors(tmp_path):
    """测试头部和META错误"""
    with pytest.raises(FormatError):
        parse_signature_file(_write(tmp_path, "h1.sig", "NUM 2\n"))
    meta_missing = "COUNT 2\nMETA subject=u1 input=stylus\n1 2 0 1 0\n2 3 10 1 0\n"
    with pytest.raises(FormatError, match="missing META"):
        parse_signature_file(_write(tmp_path, "h2.sig", meta_missing))
    bad_input = "COUNT 2\nMETA subject=u1 input=pen scenario=office auth=genuine\n1 2 0 1 0\n2 3 10 1 0\n"
    with pytest.raises(FormatError):
        parse_signature_file(_write(tmp_path, "h3.sig", bad_input))


def test_finger_signature_requires_fill_pressure(tmp_path):
    """测试手指签名的压力必须为填充常量"""
    text = "COUNT 2\nMETA subject=u1 input=finger scenario=mobile auth=genuine\n1 2 0 0.5 0\n2 3 10 1 0\n"
    with pytest.raises(FormatError, match="finger"):
        parse_signature_file(_write(tmp_path, "f.sig", text))


def test_signature_invariants():
    """测试签名构造约束"""
    with pytest.raises(SignatureInvariantError):
        make_signature(x=[1.0], y=[1.0])
    with pytest.raises(SignatureInvariantError):
        make_signature(x=[1.0, 2.0], y=[1.0, 2.0], t=[10, 0])
    with pytest.raises(SignatureInvariantError):
        make_signature(x=[1.0, np.nan], y=[1.0, 2.0])
    with pytest.raises(SignatureInvariantError):
        make_signature(x=[1.0, 2.0], y=[1.0, 2.0], pressure=[1.0, -1.0])


def test_signature_channels_are_read_only():
    """测试签名通道不可修改"""
    sig = make_signature(x=[1.0, 2.0, 3.0], y=[1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        sig.x[0] = 5.0


def test_comparison_file_relative_paths(tmp_path):
    """测试比对文件相对路径以文件所在目录为基准"""
    path = _write(tmp_path, "cmp.csv", "# comment\nc1,sigs/a.sig,sigs/b.sig\n\nc2,/abs/a.sig,b.sig\n")
    tasks = parse_comparison_file(path)
    assert [t.comparison_id for t in tasks] == ["c1", "c2"]
    assert tasks[0].reference_path == tmp_path / "sigs" / "a.sig"
    assert str(tasks[1].reference_path) == "/abs/a.sig"


def test_comparison_file_duplicate_id(tmp_path):
    """测试比对ID重复"""
    path = _write(tmp_path, "cmp.csv", "c1,a.sig,b.sig\nc1,a.sig,c.sig\n")
    with pytest.raises(FormatError) as info:
        parse_comparison_file(path)
    assert info.value.line == 2


def test_score_file(tmp_path):
    """测试分数文件读写与越界检查"""
    path = tmp_path / "scores.csv"
    write_score_file([ScoreRecord(comparison_id="c1", score=0.25), ScoreRecord(comparison_id="c2", score=1.0)], path)
    assert path.read_text() == "c1,0.25\nc2,1.0\n"
    assert [r.score for r in parse_score_file(path)] == [0.25, 1.0]

    with pytest.raises(FormatError, match="outside"):
        parse_score_file(_write(tmp_path, "bad.csv", "c1,1.5\n"))


def test_label_file(tmp_path):
    """测试标签文件"""
    path = _write(tmp_path, "labels.csv", "c1,genuine\nc2,impostor,skilled\nc3,impostor,random\n")
    labels = parse_label_file(path)
    assert labels[0] == LabelRecord(comparison_id="c1", truth=Truth.GENUINE)
    assert labels[1].forgery == ForgeryType.SKILLED
    assert labels[2].forgery == ForgeryType.RANDOM

    out = tmp_path / "labels_out.csv"
    write_label_file(labels, out)
    assert out.read_text() == "c1,genuine\nc2,impostor,skilled\nc3,impostor,random\n"

    with pytest.raises(FormatError):
        parse_label_file(_write(tmp_path, "bad.csv", "c1,genuine,skilled\n"))
    with pytest.raises(FormatError):
        parse_label_file(_write(tmp_path, "bad2.csv", "c1,maybe\n"))


def test_signature_store_caches(tmp_path):
    """测试签名缓存"""
    path = _write(tmp_path, "a.sig", HEADER + "1 2 0 10 0\n2 3 10 10 0\n3 4 20 10 0\n")
    store = SignatureStore()
    first = store.load(path)
    assert store.load(tmp_path / "." / "a.sig") is first
    assert len(store) == 1
