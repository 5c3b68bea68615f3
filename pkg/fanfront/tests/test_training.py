import os
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from fanfront import formats, training
from fanfront.array import ArrayGeometry, look_directions, superdirective_weights
from fanfront.corpus import CorpusRecipe, Partition, build_corpus
from fanfront.formats import FormatError, ManifestEntry
from fanfront.layers import VARIANTS
from fanfront.network import tiny_instance
from fanfront.options import OptionError
from fanfront.testframework import TestSuite, check_close, check_raises
from fanfront.training import (Dataset, EvaluationReport, MetricLog, TrainConfig,
                               TrainingError, TrendReport)

test = TestSuite()

RECIPE = CorpusRecipe(classes=2, duration_s=0.25, noise_directions=8, snr_db=(10.0, 20.0),
        partitions=(Partition("set1", 0.25, {"train": 8, "dev": 4, "test": 4}),))

SMALL = TrainConfig(epochs=2, warmup_epochs=1, batch_size=16, hidden_width=8, filters=8,
        directions=4, fan_filters=3, chunk_size=8)


def small_corpus(directory, seed=0):
    entries = build_corpus(RECIPE, directory, seed)
    return entries, training.load_corpus(entries, directory, RECIPE.frame_config())


@test(TrainConfig)
def test_train_config():
    cfg = TrainConfig()
    assert cfg.ladder() == ("classifier_only", "fe_plus_classifier", "joint")
    assert TrainConfig(stage="classifier_only").ladder() == ("classifier_only",)
    assert cfg.adam().learning_rate == 1e-3
    check_raises(OptionError, TrainConfig, stage="mc_only")
    check_raises(OptionError, TrainConfig, batch_size=0)
    check_raises(OptionError, TrainConfig, beta2=1.5)
    check_raises(OptionError, TrainConfig, epochs=-1)


def entry(path, class_id, snr_db=10.0, playback=False, split="test"):
    return ManifestEntry(path, class_id, snr_db, playback, split)


@test(Dataset)
def test_datasets():
    entries = [entry("a.wav", 0), entry("b.wav", 1), entry("c.wav", 1)]
    stacks = [np.zeros((2, 3, 2, 5), dtype=complex), np.zeros((0, 3, 2, 5), dtype=complex),
              np.ones((3, 3, 2, 5), dtype=complex)]
    dataset = Dataset.from_utterances(entries, stacks)
    assert len(dataset) == 5
    assert dataset.labels.tolist() == [0, 0, 1, 1, 1]
    assert dataset.utterances.tolist() == [0, 0, 2, 2, 2]
    batches = dataset.batches(2, np.random.default_rng(0))
    assert [len(b) for b in batches] == [2, 2, 1]
    assert sorted(np.concatenate(batches).tolist()) == list(range(5))
    check_raises(TrainingError, Dataset.from_utterances, [], [])


@test(training.utterance_decisions)
def test_utterance_decisions():
    entries = [entry("a.wav", 1), entry("b.wav", 0), entry("c.wav", 1)]
    dataset = Dataset(np.zeros((3, 1, 1, 1)), np.array([1, 1, 0]), np.array([0, 0, 1]), entries)
    log_posteriors = np.log(np.array([[0.6, 0.3, 0.1], [0.01, 0.3, 0.69], [0.2, 0.7, 0.1]]))
    decisions = training.utterance_decisions(dataset, log_posteriors)
    # averaging the posteriors themselves would pick class 2 for the first utterance
    assert decisions.tolist() == [1, 1, -1]
    assert training.accuracy(dataset, decisions) == 1.0 / 3


@test(training.relative_error_reduction)
def test_relative_error_reduction():
    assert training.relative_error_reduction(5, 10) == 0.5
    assert training.relative_error_reduction(0, 0) == 0.0
    assert training.relative_error_reduction(3, 0) is None
    check_close(training.relative_error_reduction(12, 10), -0.2, 1e-12)


def report_entries():
    return [
        entry("set1/test/a.wav", 0, 0.0, False),
        entry("set1/test/b.wav", 1, 10.0, True),
        entry("set2/test/c.wav", 0, 20.0, True),
        entry("set2/test/d.wav", 1, 20.0, False),
    ]


@test(EvaluationReport)
def test_evaluation_report():
    report = EvaluationReport.build(report_entries(), [0, 1, 1, -1], [1, 1, 1, 1])
    assert [(r.group, r.name, r.playback) for r in report.rows] == [
        ("snr", "<=5dB", False), ("snr", "5-15dB", True), ("snr", ">15dB", False),
        ("snr", ">15dB", True), ("partition", "set1", False), ("partition", "set1", True),
        ("partition", "set2", False), ("partition", "set2", True), ("total", "total", None)]
    assert report.row("snr", "<=5dB", False).reduction == 1.0
    assert report.row("snr", "5-15dB", True).reduction == 0.0
    assert report.row("snr", ">15dB", False).reduction is None
    total = report.row("total", "total")
    assert (total.count, total.correct, total.baseline_correct) == (4, 2, 2)
    assert total.accuracy == 0.5 and total.reduction == 0.0
    rows = report.csv_rows()
    assert rows[2] == ("snr", ">15dB", "0", "1", "0.000000", "1.000000", "n/a")
    assert rows[-1] == ("total", "total", "", "4", "0.500000", "0.500000", "0.000000")
    table = report.table()
    assert "n/a" in table and ">15dB PB" in table and "set2 noPB" in table
    check_raises(KeyError, report.row, "partition", "set3", True)


@test(EvaluationReport)
def test_report_without_baseline():
    report = EvaluationReport.build(report_entries(), [0, 0, 0, 0])
    assert not report.has_baseline
    assert report.row("total", "total").reduction is None
    assert report.csv_rows()[-1] == ("total", "total", "", "4", "0.500000", "", "")
    assert "RER" not in report.table()
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, "report.csv")
        report.write(path)
        with open(path) as f:
            lines = f.read().splitlines()
    assert lines[0] == ",".join(EvaluationReport.header)
    assert len(lines) == 1 + len(report.rows)


@test(MetricLog)
def test_metric_log():
    log = MetricLog()
    log.append(1, "classifier_only", 0.7, 0.6, 0.5)
    log.append(2, "joint", 0.5, 0.55, 0.75)
    assert log.formatted()[1] == ("2", "joint", "0.500000", "0.550000", "0.750000")
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, "metrics.csv")
        log.write(path)
        with open(path) as f:
            assert f.read().splitlines() == [
                "epoch,stage,train_loss,dev_loss,dev_accuracy",
                "1,classifier_only,0.700000,0.600000,0.500000",
                "2,joint,0.500000,0.550000,0.750000"]


def accuracies(**changes):
    values = dict((tag, 0.8) for tag in VARIANTS)
    values["raw1ch"] = 0.7
    values.update(dict((k.replace("_", "-"), v) for k, v in changes.items()))
    return values


@test(training.trend_checks)
def test_trend_checks():
    checks = training.trend_checks(accuracies(bat_at=0.804), accuracies(bat_fan_max=0.9))
    assert checks == {
        "bat-fan-avg >= bat-at": True,
        "bat-fan-avg >= bat-fan-max on playback": False,
        "multi-channel >= raw1ch": True,
    }
    assert not training.trend_checks(accuracies(fan_max=0.6), accuracies())[
            "multi-channel >= raw1ch"]
    assert not training.trend_checks(accuracies(bat_at=0.81), accuracies())[
            "bat-fan-avg >= bat-at"]


@test(TrendReport)
def test_trend_majority():
    good, bad = accuracies(), accuracies(bat_at=0.9)
    report = TrendReport([0, 1, 2], [good, bad, good], [good, good, good])
    assert report.majority()["bat-fan-avg >= bat-at"]
    assert report.passed
    report = TrendReport([0, 1, 2], [bad, bad, good], [good, good, good])
    assert not report.majority()["bat-fan-avg >= bat-at"]
    assert not report.passed
    # two seeds need both
    assert not TrendReport([0, 1], [good, bad], [good, good]).passed
    assert len(report.csv_rows()) == 18
    assert report.csv_rows()[0] == ("0", "raw1ch", "0.700000", "0.700000")
    assert "VIOLATED" in report.table()


@test(training.load_corpus)
def test_load_corpus():
    with tempfile.TemporaryDirectory() as directory:
        entries, data = small_corpus(directory)
    assert data.pair == (0, 3)
    assert data.classes == 2
    assert sorted(data.datasets) == ["dev", "test", "train"]
    train = data.split("train")
    # 0.25 s gives 24 frames, so 8 stacks of 3 per utterance
    assert train.stacks.shape == (64, 3, 2, 127)
    assert data.stats.frame_count == 8 * 24
    assert data.stats.mean.shape == (2, 127, 2)
    normalized = train.stacks.reshape(-1, 2, 127)
    check_close(normalized.real.mean(axis=0), np.zeros((2, 127)), 1e-9)
    assert len(data.split("test").entries) == 4


@test(training.load_corpus)
def test_load_corpus_errors():
    with tempfile.TemporaryDirectory() as directory:
        entries = build_corpus(RECIPE, directory, 1)
        no_train = [e for e in entries if e.split != "train"]
        e = check_raises(TrainingError, training.load_corpus, no_train, directory)
        assert "empty split" in str(e)
        mono = os.path.join(directory, "mono.wav")
        formats.write_wav(mono, np.zeros((1, 4000)), 16000)
        broken = entries + [ManifestEntry("mono.wav", 0, 10.0, False, "dev")]
        e = check_raises(FormatError, training.load_corpus, broken, directory)
        assert "missing" in str(e)
        short = os.path.join(directory, "short.wav")
        formats.write_wav(short, np.zeros((7, 300)), 16000)
        too_short = [e for e in entries if e.split == "train"] + [
                ManifestEntry("short.wav", 0, 10.0, False, "dev")]
        e = check_raises(TrainingError, training.load_corpus, too_short, directory)
        assert "empty split" in str(e)


@test(training.create_pipeline)
def test_created_pipelines():
    with tempfile.TemporaryDirectory() as directory:
        entries, data = small_corpus(directory)
    pipeline = training.create_pipeline("bat-fan-avg", data, SMALL, 2)
    design = superdirective_weights(ArrayGeometry.default().subset([0, 3]), look_directions(4),
            RECIPE.frame_config().bin_omegas())
    check_close(pipeline.mc.layer("bat").params["weights"], design.weights, 1e-12)
    assert pipeline.fe.dims == (8, 127)
    assert pipeline.lfr_factor == 3 and pipeline.classes == 2
    assert pipeline.stats is data.stats and pipeline.pair == (0, 3)


@test(training.batch_gradients)
def test_chunked_gradients_match():
    pipeline, stacks, labels = tiny_instance("bat-fan-max", batch=7)
    whole_loss, whole = training.batch_gradients(pipeline, stacks, labels, "joint", 7)
    loss, grads = pipeline.forward_loss(stacks, labels)
    check_close(whole_loss, loss, 1e-12)
    for chunk in (1, 3):
        chunked_loss, chunked = training.batch_gradients(pipeline, stacks, labels, "joint",
                chunk)
        check_close(chunked_loss, whole_loss, 1e-12)
        for name in whole:
            check_close(chunked[name], whole[name], 1e-12)
    with ThreadPoolExecutor(max_workers=3) as executor:
        threaded_loss, threaded = training.batch_gradients(pipeline, stacks, labels, "joint",
                3, executor)
    serial_loss, serial = training.batch_gradients(pipeline, stacks, labels, "joint", 3)
    assert threaded_loss == serial_loss
    for name in serial:
        assert np.array_equal(threaded[name], serial[name])


@test(training.train_stagewise)
def test_training_is_deterministic():
    with tempfile.TemporaryDirectory() as directory:
        entries, data = small_corpus(directory)
    first, log = training.train_variant("bat-fan-avg", data, SMALL)
    second, again = training.train_variant("bat-fan-avg", data, SMALL)
    threaded, threaded_log = training.train_variant("bat-fan-avg", data, SMALL.replace(threads=2))
    assert log == again and log == threaded_log
    assert [row[:2] for row in log.rows] == [
        (1, "classifier_only"), (2, "classifier_only"), (3, "fe_plus_classifier"),
        (4, "fe_plus_classifier"), (5, "joint"), (6, "joint")]
    for name, value in first.parameters().items():
        assert np.array_equal(value, second.parameters()[name])
    assert first.stage == "joint"
    for row in log.rows:
        assert np.isfinite(row[2]) and np.isfinite(row[3]) and 0 <= row[4] <= 1


@test(training.train_stagewise)
def test_warmup_trains_only_new_parameters():
    with tempfile.TemporaryDirectory() as directory:
        entries, data = small_corpus(directory)
    cfg = SMALL.replace(epochs=1, warmup_epochs=1)
    only_classifier = training.train_variant("fan-max", data,
            cfg.replace(stage="classifier_only"))[0]
    assert only_classifier.stage == "classifier_only"
    fresh = training.create_pipeline("fan-max", data, cfg, 2)
    ladder = training.train_variant("fan-max", data, cfg)[0]
    # every stage ran a single warm-up epoch, so the classifier only moved in the first
    for name, value in only_classifier.parameters("classifier_only").items():
        assert np.array_equal(ladder.parameters()[name], value)
    for name in ("fe.weights", "mc.fan.filters"):
        assert not np.array_equal(ladder.parameters()[name], fresh.parameters()[name])
    assert np.array_equal(only_classifier.parameters()["fe.weights"],
            fresh.parameters()["fe.weights"])


@test(training.train_stagewise)
def test_training_needs_both_splits():
    pipeline, stacks, labels = tiny_instance("raw1ch")
    entries = [entry("a.wav", 0, split="train")]
    train = Dataset(stacks, labels, np.zeros(len(labels), dtype=np.int64), entries)
    empty = Dataset(stacks[:0], labels[:0], np.zeros(0, dtype=np.int64), [])
    check_raises(TrainingError, training.train_stagewise, pipeline, train, empty, SMALL)
    check_raises(TrainingError, training.train_stagewise, pipeline, empty, train, SMALL)


@test(training.classify)
def test_classify_and_evaluate():
    with tempfile.TemporaryDirectory() as directory:
        entries, data = small_corpus(directory)
        pipeline = training.train_variant("raw2ch", data, SMALL)[0]
        test_entries = [e for e in entries if e.split == "test"]
        formats.write_wav(os.path.join(directory, "short.wav"), np.zeros((7, 300)), 16000)
        short = ManifestEntry("short.wav", 1, 10.0, False, "test")
        decisions = training.classify(pipeline, test_entries + [short], directory)
        assert decisions.shape == (5,)
        assert all(d in (0, 1) for d in decisions[:4])
        assert decisions[4] == -1
        assert training.classify(pipeline, [], directory).shape == (0,)
        report = training.evaluate(pipeline, test_entries, directory, baseline=pipeline)
        total = report.row("total", "total")
        assert total.count == 4 and total.correct == total.baseline_correct
        pipeline.stats = None
        check_raises(TrainingError, training.classify, pipeline, test_entries, directory)


@test(training.trend_experiment)
def test_trend_experiment():
    with tempfile.TemporaryDirectory() as directory:
        report = training.trend_experiment(directory, [3], SMALL.replace(epochs=1),
                recipe=RECIPE)
        assert os.path.exists(os.path.join(directory, "seed_3", "manifest.tsv"))
    assert report.seeds == [3]
    assert sorted(report.overall[0]) == sorted(VARIANTS)
    assert all(0 <= v <= 1 for v in report.overall[0].values())
    assert all(0 <= v <= 1 for v in report.playback[0].values())
    assert len(report.majority()) == 3
    assert len(report.csv_rows()) == 6
