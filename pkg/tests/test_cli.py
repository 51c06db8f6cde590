import json
import re

import pandas as pd
import pytest
from click.testing import CliRunner

from svctool.cli import cli
from svctool.config import get_config
from svctool.display import write_eer_table
from tests.test_evaluation import TABLE_1

EER_RE = re.compile(r"eer_percent=([0-9.eE+-]+)")


@pytest.fixture
def runner():
    return CliRunner()


def _pipeline(tmp_path, **fields):
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps({"verifier": "baseline_dtw", **fields}))
    return path


def _eer(result) -> float:
    assert result.exit_code == 0, result.output
    return float(EER_RE.search(result.output).group(1))


def test_version(runner):
    """测试版本号输出"""
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert "1.0.0" in result.output


def test_compare_and_eval(runner, small_dataset, tmp_path):
    """测试打分后评测，并导出曲线与报告"""
    out, manifest = small_dataset
    scores = tmp_path / "scores.csv"
    result = runner.invoke(cli, [
        "compare", str(out / manifest.tasks["1"].comparisons),
        "--pipeline", str(_pipeline(tmp_path)), "--out", str(scores), "--workers", "2",
    ])
    assert result.exit_code == 0, result.output
    lines = scores.read_text().splitlines()
    assert len(lines) == manifest.tasks["1"].n_comparisons

    curve, report = tmp_path / "curve.csv", tmp_path / "report.txt"
    result = runner.invoke(cli, [
        "eval", str(scores), str(out / manifest.tasks["1"].labels), "--task", "1",
        "--curve", str(curve), "--out", str(report),
    ])
    eer = _eer(result)
    assert 0.0 <= eer <= 100.0
    assert list(pd.read_csv(curve).columns) == ["threshold", "far", "frr"]
    kv = report.read_text().splitlines()
    assert kv[0] == "task=1"
    assert f"eer_percent={eer!r}" in kv
    assert any(line.startswith("curve=") for line in kv)


def test_compare_dry_run_writes_nothing(runner, small_dataset, tmp_path):
    """测试 --dry-run 只检查输入"""
    out, manifest = small_dataset
    scores = tmp_path / "scores.csv"
    result = runner.invoke(cli, [
        "compare", str(out / manifest.tasks["2"].comparisons),
        "--pipeline", str(_pipeline(tmp_path)), "--out", str(scores), "--dry-run",
    ])
    assert result.exit_code == 0, result.output
    assert not scores.exists()


def test_compare_requires_out(runner, small_dataset, tmp_path):
    """测试未指定输出文件"""
    out, manifest = small_dataset
    result = runner.invoke(cli, [
        "compare", str(out / manifest.tasks["2"].comparisons), "--pipeline", str(_pipeline(tmp_path)),
    ])
    assert result.exit_code == 2


def test_compare_missing_signature(runner, small_dataset, tmp_path):
    """测试签名文件缺失时非零退出并指明比对ID，且不写分数文件"""
    out, manifest = small_dataset
    first = (out / manifest.tasks["1"].comparisons).read_text().splitlines()[0]
    _, reference, _ = first.split(",")
    comparisons = tmp_path / "cmp.csv"
    comparisons.write_text(f"ok1,{out / reference},{out / reference}\nbroken7,{out / reference},nowhere.sig\n")
    scores = tmp_path / "scores.csv"
    result = runner.invoke(cli, [
        "compare", str(comparisons), "--pipeline", str(_pipeline(tmp_path)), "--out", str(scores),
    ])
    assert result.exit_code == 1
    assert "broken7" in result.output
    assert not scores.exists()


def test_eval_perfect_separation(runner, tmp_path):
    """测试完全可分时输出 eer_percent=0.0"""
    scores = tmp_path / "scores.csv"
    labels = tmp_path / "labels.csv"
    scores.write_text("a,0.9\nb,0.8\nc,0.1\nd,0.2\n")
    labels.write_text("a,genuine\nb,genuine\nc,impostor,random\nd,impostor,skilled\n")
    result = runner.invoke(cli, ["eval", str(scores), str(labels), "--task", "2"])
    assert result.exit_code == 0, result.output
    assert "eer_percent=0.0" in result.output


def test_eval_id_mismatch(runner, tmp_path):
    """测试ID不一致时非零退出并列出ID"""
    scores = tmp_path / "scores.csv"
    labels = tmp_path / "labels.csv"
    scores.write_text("a,0.9\nzz,0.1\n")
    labels.write_text("a,genuine\nc,impostor\n")
    result = runner.invoke(cli, ["eval", str(scores), str(labels), "--task", "1"])
    assert result.exit_code == 1
    assert "zz" in result.output and "c" in result.output


def test_eval_rejects_bad_task(runner, tmp_path):
    """测试任务编号无效"""
    scores = tmp_path / "scores.csv"
    scores.write_text("a,0.9\n")
    result = runner.invoke(cli, ["eval", str(scores), str(scores), "--task", "4"])
    assert result.exit_code == 2


def test_eval_records_team_eer_for_rank(runner, tmp_path):
    """测试 eval --team/--table 累积EER表，rank 读取该表"""
    labels = tmp_path / "labels.csv"
    labels.write_text("a,genuine\nb,genuine\nc,impostor,random\nd,impostor,skilled\n")
    good = tmp_path / "good.csv"
    good.write_text("a,0.9\nb,0.8\nc,0.1\nd,0.2\n")
    bad = tmp_path / "bad.csv"
    bad.write_text("a,0.1\nb,0.2\nc,0.9\nd,0.8\n")
    table = tmp_path / "eers.csv"

    for team, scores in (("alpha", bad), ("beta", bad), ("alpha", good)):
        result = runner.invoke(cli, ["eval", str(scores), str(labels), "--task", "2",
                                     "--team", team, "--table", str(table)])
        assert result.exit_code == 0, result.output

    eers = pd.read_csv(table)
    assert list(eers["team"]) == ["alpha", "beta"]
    assert list(eers["eer"]) == [0.0, 100.0]

    out = tmp_path / "ranking.csv"
    result = runner.invoke(cli, ["rank", str(table), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert list(pd.read_csv(out)["Total Points"]) == [3, 2]

    result = runner.invoke(cli, ["eval", str(good), str(labels), "--task", "2", "--team", "alpha"])
    assert result.exit_code == 2


def test_rank_rejects_fractional_task_id(runner, tmp_path):
    """测试任务编号不是整数时报错而不是截断"""
    table = tmp_path / "eers.csv"
    table.write_text("team,task,eer\nsolo,1.5,4.0\n")
    result = runner.invoke(cli, ["rank", str(table)])
    assert result.exit_code == 1
    assert "1.5" in result.output


def test_rank_reproduces_totals(runner, tmp_path):
    """测试排名CSV复现总积分"""
    table = tmp_path / "eers.csv"
    write_eer_table(TABLE_1, table)
    out = tmp_path / "ranking.csv"
    result = runner.invoke(cli, ["rank", str(table), "--out", str(out)])
    assert result.exit_code == 0, result.output
    ranking = pd.read_csv(out)
    assert list(ranking.columns[:3]) == ["Position", "Team", "Total Points"]
    assert list(ranking["Team"]) == ["DLVC-Lab", "SIG", "TUSUR KIBEVS", "SigStat", "MaD", "JAIRG"]
    assert list(ranking["Total Points"]) == [9, 5, 3, 1, 0, 0]


def test_rank_single_team_and_empty(runner, tmp_path):
    """测试单个队伍和空表"""
    table = tmp_path / "one.csv"
    table.write_text("team,task,eer\nsolo,1,4.0\nsolo,2,5.0\nsolo,3,6.0\n")
    out = tmp_path / "ranking.csv"
    result = runner.invoke(cli, ["rank", str(table), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert list(pd.read_csv(out)["Total Points"]) == [9]

    empty = tmp_path / "empty.csv"
    empty.write_text("")
    result = runner.invoke(cli, ["rank", str(empty)])
    assert result.exit_code == 0, result.output


def test_rank_reference_system(runner, tmp_path):
    """测试对照系统不参与排名，未知名称给出警告"""
    table = tmp_path / "eers.csv"
    write_eer_table(TABLE_1, table)
    out = tmp_path / "ranking.csv"
    result = runner.invoke(cli, ["rank", str(table), "-r", "DLVC-Lab", "-r", "nobody", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "nobody" in result.output
    assert "DLVC-Lab" not in list(pd.read_csv(out)["Team"])


def test_rank_duplicate_entry(runner, tmp_path):
    """测试重复的(队伍, 任务)"""
    table = tmp_path / "dup.csv"
    table.write_text("team,task,eer\nsolo,1,4.0\nsolo,1,5.0\n")
    result = runner.invoke(cli, ["rank", str(table)])
    assert result.exit_code == 1
    assert "duplicate" in result.output


def test_synth_and_inspect(runner, tmp_path):
    """测试生成数据集并查看签名"""
    out = tmp_path / "data"
    result = runner.invoke(cli, ["synth", "--seed", "3", "--subjects", "2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "manifest.json").exists()

    sig = sorted((out / "signatures").glob("*.sig"))[0]
    result = runner.invoke(cli, ["inspect", str(sig)])
    assert result.exit_code == 0, result.output
    assert "std_x" in result.output


def test_synth_rejects_one_subject(runner, tmp_path):
    """测试用户数不足"""
    result = runner.invoke(cli, ["synth", "--subjects", "1", "--out", str(tmp_path / "x")])
    assert result.exit_code == 1


def test_inspect_bad_file(runner, tmp_path):
    """测试查看格式错误的签名文件"""
    bad = tmp_path / "bad.sig"
    bad.write_text("COUNT 2\n")
    result = runner.invoke(cli, ["inspect", str(bad)])
    assert result.exit_code == 1


def test_config_show_and_set(runner):
    """测试显示和设置配置"""
    result = runner.invoke(cli, ["config", "set", "max_workers", "2"])
    assert result.exit_code == 0, result.output
    assert get_config()["max_workers"] == 2

    result = runner.invoke(cli, ["config", "show"])
    assert result.exit_code == 0
    assert "max_workers" in result.output

    assert runner.invoke(cli, ["config", "set", "no_such_key", "1"]).exit_code == 1
    assert runner.invoke(cli, ["config", "set", "max_workers", "many"]).exit_code == 1


@pytest.mark.slow
def test_end_to_end_random_vs_skilled(runner, tmp_path):
    """测试端到端: 随机伪造EER不超过20%，熟练伪造EER更高"""
    data = tmp_path / "data"
    assert runner.invoke(cli, ["synth", "--seed", "42", "--subjects", "20", "--out", str(data)]).exit_code == 0
    scores = tmp_path / "scores.csv"
    result = runner.invoke(cli, [
        "compare", str(data / "task3_comparisons.csv"),
        "--pipeline", str(_pipeline(tmp_path)), "--out", str(scores),
    ])
    assert result.exit_code == 0, result.output

    labels = str(data / "task3_labels.csv")
    random_eer = _eer(runner.invoke(cli, ["eval", str(scores), labels, "--task", "3", "--forgery", "random"]))
    skilled_eer = _eer(runner.invoke(cli, ["eval", str(scores), labels, "--task", "3", "--forgery", "skilled"]))
    assert random_eer <= 20.0
    assert skilled_eer > random_eer
