import json
from concurrent.futures import ThreadPoolExecutor

import pytest

from svctool.config import PipelineConfig, load_pipeline_config
from svctool.errors import ConfigurationError, EvaluationError
from svctool.evaluation import enrollment_sets, evaluate_task, load_pairs, run_protocol
from svctool.sigdata import SignatureStore, Truth, parse_comparison_file, parse_label_file, parse_signature_file
from svctool.systems import (
    BaselineDtwVerifier, FusionVerifier, SigstatLocalVerifier, VerifierRegistry, build_verifier,
    load_dev_set,
)


def _dev_pipeline(small_dataset, **fields):
    out, manifest = small_dataset
    return PipelineConfig(
        dev_comparisons=out / manifest.tasks["3"].comparisons,
        dev_labels=out / manifest.tasks["3"].labels,
        **fields,
    )


def _run(small_dataset, pipeline, task="3"):
    out, manifest = small_dataset
    tasks = parse_comparison_file(out / manifest.tasks[task].comparisons)
    records = run_protocol(tasks, pipeline, max_workers=2, show_progress=False)
    assert [r.comparison_id for r in records] == [t.comparison_id for t in tasks]
    assert all(0.0 <= r.score <= 1.0 for r in records)
    return evaluate_task(records, parse_label_file(out / manifest.tasks[task].labels), int(task))


def test_registry_lists_all_systems():
    """测试所有验证系统已注册"""
    assert VerifierRegistry.list_verifiers() == sorted([
        "baseline_dtw", "sig_online", "sigstat_local", "sigstat_global",
        "feature_difference", "mad", "softdtw", "fusion",
    ])
    assert VerifierRegistry.get("baseline_dtw") is BaselineDtwVerifier
    with pytest.raises(ConfigurationError):
        VerifierRegistry.get("nope")


def test_default_preprocessing():
    """测试各系统的默认预处理"""
    assert BaselineDtwVerifier(PipelineConfig(verifier="baseline_dtw")).preprocessing == "mad"
    assert SigstatLocalVerifier(PipelineConfig(verifier="sigstat_local")).preprocessing == "sigstat"
    explicit = PipelineConfig(verifier="sigstat_local", preprocessing="none")
    assert SigstatLocalVerifier(explicit).preprocessing == "none"


def test_baseline_identity_scores_one(small_dataset):
    """测试参考签名与自身比对得分为1"""
    out, manifest = small_dataset
    task = parse_comparison_file(out / manifest.tasks["1"].comparisons)[0]
    sig = parse_signature_file(task.reference_path)
    verifier = build_verifier(PipelineConfig(verifier="baseline_dtw"), settings={})
    assert verifier.score(sig, sig) == 1.0


@pytest.mark.parametrize("name", ["baseline_dtw", "sig_online", "sigstat_local", "softdtw"])
def test_unsupervised_systems_run(small_dataset, name):
    """测试无需开发集的系统"""
    report = _run(small_dataset, PipelineConfig(verifier=name))
    assert 0.0 <= report.eer_percent <= 100.0


def test_subject_enrollment_aggregates(small_dataset):
    """测试按用户注册集打分"""
    report = _run(small_dataset, PipelineConfig(verifier="baseline_dtw", enrollment="subject", aggregation="max"))
    assert report.n_genuine == 16


@pytest.mark.parametrize("name", ["sigstat_global", "feature_difference", "mad"])
def test_dev_systems_run(small_dataset, name):
    """测试需要开发集的系统"""
    report = _run(small_dataset, _dev_pipeline(small_dataset, verifier=name))
    assert 0.0 <= report.eer_percent <= 100.0


def test_dev_systems_require_dev_set():
    """测试缺少开发集"""
    with pytest.raises(ConfigurationError):
        build_verifier(PipelineConfig(verifier="sigstat_global"), settings={})


def test_fusion_with_explicit_weights(small_dataset):
    """测试给定权重的融合"""
    pipeline = PipelineConfig(verifier="fusion", fusion_members=["baseline_dtw", "sig_online"],
                              fusion_weights=[3.0, 1.0])
    verifier = build_verifier(pipeline, settings={})
    assert isinstance(verifier, FusionVerifier)
    assert verifier.model.weights == (0.75, 0.25)
    _run(small_dataset, pipeline, task="1")


def test_fusion_fits_weights(small_dataset):
    """测试在开发集上拟合融合权重"""
    pipeline = _dev_pipeline(small_dataset, verifier="fusion", fusion_members=["baseline_dtw", "sigstat_global"])
    verifier = build_verifier(pipeline, settings={})
    assert abs(sum(verifier.model.weights) - 1.0) < 1e-12
    assert len(verifier.model.mu) == 2


def test_pipeline_config_validation():
    """测试流水线配置校验"""
    with pytest.raises(ValueError):
        PipelineConfig(verifier="fusion", fusion_members=["baseline_dtw"])
    with pytest.raises(ValueError):
        PipelineConfig(verifier="fusion", fusion_members=["baseline_dtw", "fusion"])
    with pytest.raises(ValueError):
        PipelineConfig(verifier="baseline_dtw", dev_labels="labels.csv")
    with pytest.raises(ValueError):
        PipelineConfig(verifier="baseline_dtw", colour="blue")


def test_load_pipeline_config_relative_dev_paths(tmp_path, small_dataset):
    """测试配置文件中的相对开发集路径"""
    out, manifest = small_dataset
    path = out / "pipeline_test.json"
    path.write_text(json.dumps({
        "verifier": "sigstat_global",
        "dev_comparisons": manifest.tasks["3"].comparisons,
        "dev_labels": manifest.tasks["3"].labels,
    }))
    pipeline = load_pipeline_config(path)
    assert pipeline.dev_comparisons == out / manifest.tasks["3"].comparisons
    dev = load_dev_set(pipeline)
    assert len(dev) == 48
    assert int(dev.genuine.sum()) == 16
    path.unlink()

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_pipeline_config(broken)
    broken.write_text(json.dumps({"verifier": "unknown"}))
    with pytest.raises(ConfigurationError):
        load_pipeline_config(broken)


def test_load_dev_set_id_mismatch(tmp_path, small_dataset):
    """测试开发集比对与标签不一致"""
    out, manifest = small_dataset
    labels = tmp_path / "labels.csv"
    labels.write_text("only_one,genuine\n")
    pipeline = PipelineConfig(verifier="mad", dev_comparisons=out / manifest.tasks["1"].comparisons,
                              dev_labels=labels)
    with pytest.raises(EvaluationError):
        load_dev_set(pipeline)


@pytest.mark.parametrize("name", VerifierRegistry.list_verifiers())
def test_exact_copy_never_scores_below_a_forgery(small_dataset, name):
    """测试所有系统: 待验证签名换成参考签名的副本后，得分不低于任何冒名比对"""
    out, manifest = small_dataset
    fields = {"fusion_members": ["baseline_dtw", "mad"]} if name == "fusion" else {}
    verifier = build_verifier(_dev_pipeline(small_dataset, verifier=name, **fields), settings={})

    tasks = parse_comparison_file(out / manifest.tasks["3"].comparisons)
    labels = {label.comparison_id: label for label in parse_label_file(out / manifest.tasks["3"].labels)}
    store = SignatureStore()
    pairs = load_pairs(tasks, store)
    verifier.enroll(enrollment_sets(pairs))

    forgery_scores = [
        verifier.score(reference, questioned)
        for task, (reference, questioned) in zip(tasks, pairs)
        if labels[task.comparison_id].truth == Truth.IMPOSTOR
    ]
    for task, (reference, _) in zip(tasks, pairs):
        copy = parse_signature_file(task.reference_path)
        assert copy is not reference
        assert verifier.score(reference, copy) >= max(forgery_scores) - 1e-12, task.comparison_id


def test_sigstat_local_enrolls_unseen_subject_once(small_dataset):
    """测试并发打分时未注册用户只注册一次，使用中位模型"""
    out, manifest = small_dataset
    tasks = parse_comparison_file(out / manifest.tasks["3"].comparisons)
    sets = enrollment_sets(load_pairs(tasks, SignatureStore()))
    unseen = sorted(sets)[-1]
    verifier = SigstatLocalVerifier(PipelineConfig(verifier="sigstat_local"), settings={})
    verifier.enroll({subject: refs for subject, refs in sets.items() if subject != unseen})
    enrolled = dict(verifier.models)

    reference, questioned = sets[unseen][0], sets[unseen][1]
    with ThreadPoolExecutor(max_workers=4) as executor:
        scores = list(executor.map(lambda _: verifier.score(reference, questioned), range(8)))
    assert len(set(scores)) == 1
    assert verifier.models[unseen] in enrolled.values()
    assert {s: m for s, m in verifier.models.items() if s != unseen} == enrolled
