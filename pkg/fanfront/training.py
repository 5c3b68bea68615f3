"""
Training and evaluation on a corpus: turning manifest entries into LFR stacks,
the stage-wise training ladder, utterance-level evaluation reports and the
trend experiment that compares all six MC variants.

Training runs the ladder up to TrainConfig.stage. Stage classifier_only
trains the classifier on oracle LFBE features of channel 0;
fe_plus_classifier adds the FE layer on the channel 0 power spectrum; joint
trains everything, MC module included. Each stage after the first starts
with warmup_epochs epochs in which only the parameters new to that stage are
updated.

Gradients of a batch are summed over fixed chunks of chunk_size stacks, in
chunk order, so results are the same whatever the number of threads.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from fanfront import formats
from fanfront.array import (ArrayGeometry, look_directions, select_diagonal_pair,
                            superdirective_weights)
from fanfront.corpus import SNR_BUCKETS, CorpusRecipe, build_corpus, snr_bucket
from fanfront.formats import FormatError
from fanfront.frontend import (FrameConfig, frame_and_transform, gmvn_apply, gmvn_fit,
                               lfr_stack)
from fanfront.layers import VARIANTS, LayerConfig, assemble_variant
from fanfront.network import AdamConfig, AdamState, Pipeline, STAGES, adam_step
from fanfront.options import Options

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 0.005


class TrainingError(ValueError):
    pass


class TrainConfig(Options):
    """
    Hyperparameters of train_stagewise. epochs is per stage; stage is the
    last stage of the ladder to run. hidden_width and filters size the
    classifier and the FE layer of new pipelines.
    """
    defaults = {
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 32,
        "epochs": 5,
        "warmup_epochs": 1,
        "seed": 0,
        "stage": "joint",
        "hidden_width": 128,
        "filters": 64,
        "directions": 12,
        "fan_filters": 24,
        "chunk_size": 16,
        "threads": 1,
    }

    def check(self):
        self.adam()
        for name in ("batch_size", "hidden_width", "filters", "directions",
                     "fan_filters", "chunk_size", "threads"):
            self.require(int(self[name]) >= 1, "%s must be at least 1" % name)
        self.require(self.epochs >= 0, "epochs must be non-negative")
        self.require(self.warmup_epochs >= 0, "warmup_epochs must be non-negative")
        self.require(self.stage in STAGES, "stage must be one of %s, not %r"
                % (", ".join(STAGES), self.stage))

    def adam(self):
        return AdamConfig(learning_rate=self.learning_rate, beta1=self.beta1,
                beta2=self.beta2, eps=self.eps)

    def ladder(self):
        return STAGES[:STAGES.index(self.stage) + 1]


class Dataset(object):
    """
    The LFR stacks of a set of utterances. stacks is (S, f, M, K) complex,
    labels and utterances are (S,) with utterances indexing entries.
    """
    def __init__(self, stacks, labels, utterances, entries):
        self.stacks = stacks
        self.labels = labels
        self.utterances = utterances
        self.entries = list(entries)

    @classmethod
    def from_utterances(cls, entries, utterance_stacks):
        shape = None
        parts, labels, owners = [], [], []
        for index, (entry, stacks) in enumerate(zip(entries, utterance_stacks)):
            shape = stacks.shape[1:]
            parts.append(stacks)
            labels.append(np.full(len(stacks), entry.class_id, dtype=np.int64))
            owners.append(np.full(len(stacks), index, dtype=np.int64))
        if shape is None:
            raise TrainingError("no utterances")
        return cls(np.concatenate(parts), np.concatenate(labels),
                np.concatenate(owners), entries)

    def __len__(self):
        return len(self.stacks)

    def batches(self, batch_size, rng):
        order = rng.permutation(len(self))
        return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]

    def __repr__(self):
        return "Dataset(%d stacks from %d utterances)" % (len(self), len(self.entries))


def read_spectra(entry, root, frame_config, pair):
    """
    The (T, 2, K) spectra of the microphone pair in one utterance.
    """
    pcm = formats.read_wav(entry.resolve(root), frame_config.sample_rate_hz)
    if max(pair) >= pcm.shape[0]:
        raise FormatError("%s has %d channels; microphone %d is missing"
                % (entry.path, pcm.shape[0], max(pair)))
    return frame_and_transform(pcm[list(pair)], frame_config)


def _map(function, items, threads):
    if threads <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(function, items))


def load_spectra(entries, root, frame_config, pair, threads=1):
    return _map(lambda e: read_spectra(e, root, frame_config, pair), entries, threads)


def stack_utterances(spectra, stats, lfr_factor):
    """
    Normalizes each utterance's spectra with stats and cuts it into LFR
    stacks.
    """
    return [lfr_stack(gmvn_apply(s, stats), lfr_factor) for s in spectra]


class CorpusData(object):
    """
    A manifest read for training: the microphone pair, the GMVN statistics
    fitted on the train split and a Dataset per split.
    """
    def __init__(self, frame_config, geometry, pair, stats, datasets):
        self.frame_config = frame_config
        self.geometry = geometry
        self.pair = pair
        self.stats = stats
        self.datasets = datasets

    @property
    def classes(self):
        return int(max(d.labels.max() for d in self.datasets.values())) + 1

    def split(self, name):
        try:
            return self.datasets[name]
        except KeyError:
            raise TrainingError("the manifest has no %s utterances" % name)


def load_corpus(entries, root, frame_config=None, geometry=None, threads=1):
    """
    Reads the utterances of a manifest, fits GMVN statistics on the train
    split and builds LFR datasets for every split present.
    """
    frame_config = frame_config or FrameConfig()
    geometry = geometry or ArrayGeometry.default()
    pair = select_diagonal_pair(geometry)
    by_split = {}
    for entry in entries:
        by_split.setdefault(entry.split, []).append(entry)
    if not by_split.get("train"):
        raise TrainingError("empty split: the manifest has no train utterances")
    spectra = dict((split, load_spectra(group, root, frame_config, pair, threads))
            for split, group in by_split.items())
    stats = gmvn_fit(np.concatenate(spectra["train"]), frame_config.variance_floor)
    datasets = {}
    for split, group in by_split.items():
        stacks = stack_utterances(spectra[split], stats, frame_config.lfr_factor)
        datasets[split] = Dataset.from_utterances(group, stacks)
        if not len(datasets[split]):
            raise TrainingError("empty split: no %s utterance is long enough for one "
                    "LFR stack" % split)
        logger.info("%s: %r", split, datasets[split])
    return CorpusData(frame_config, geometry, pair, stats, datasets)


def create_pipeline(tag, data, cfg, classes):
    """
    A fresh pipeline for variant tag on data's microphone pair, with BAT
    weights from a superdirective design for the pair.
    """
    frame_config = data.frame_config
    layer_config = LayerConfig(bins=frame_config.bins, channels=len(data.pair),
            directions=cfg.directions, filters=cfg.fan_filters, seed=cfg.seed)
    init = None
    if tag.startswith("bat"):
        init = superdirective_weights(data.geometry.subset(data.pair),
                look_directions(cfg.directions), frame_config.bin_omegas(),
                layer_config.sigma2)
    mc = assemble_variant(tag, layer_config, init)
    pipeline = Pipeline.create(mc, classes, frame_config.lfr_factor,
            frame_config.sample_rate_hz, cfg.filters, cfg.hidden_width, cfg.seed)
    pipeline.stats = data.stats
    pipeline.frame_config = frame_config
    pipeline.pair = tuple(data.pair)
    return pipeline


def batch_gradients(pipeline, stacks, labels, stage, chunk_size, executor=None):
    """
    Mean loss and gradients over a batch, reduced over chunks of chunk_size
    stacks in a fixed order.
    """
    total = len(stacks)

    def run(start):
        chunk = slice(start, start + chunk_size)
        loss, cache = pipeline.forward_loss(stacks[chunk], labels[chunk], stage)
        return len(labels[chunk]) / float(total), loss, pipeline.backward(cache)

    starts = range(0, total, chunk_size)
    results = list(executor.map(run, starts)) if executor else [run(s) for s in starts]
    loss = 0.0
    grads = {}
    for weight, chunk_loss, chunk_grads in results:
        loss += weight * chunk_loss
        for name, value in chunk_grads.items():
            grads[name] = grads[name] + weight * value if name in grads else weight * value
    return loss, grads


def evaluate_stacks(pipeline, dataset, stage, chunk_size=256):
    """
    Mean cross-entropy over the stacks of dataset and the stack
    log-posteriors (S, C).
    """
    losses = []
    posteriors = []
    for start in range(0, len(dataset), chunk_size):
        chunk = slice(start, start + chunk_size)
        loss, cache = pipeline.forward_loss(dataset.stacks[chunk], dataset.labels[chunk], stage)
        losses.append(loss * len(dataset.labels[chunk]))
        posteriors.append(pipeline.log_posteriors(dataset.stacks[chunk], stage))
    return sum(losses) / len(dataset), np.concatenate(posteriors)


def utterance_decisions(dataset, log_posteriors):
    """
    The class decided for each utterance of dataset: the argmax of its
    stacks' mean log-posterior. Utterances without stacks get -1.
    """
    count = len(dataset.entries)
    sums = np.zeros((count, log_posteriors.shape[1]))
    np.add.at(sums, dataset.utterances, log_posteriors)
    stacks = np.bincount(dataset.utterances, minlength=count)
    decisions = np.argmax(sums / np.maximum(stacks, 1)[:, np.newaxis], axis=1)
    decisions[stacks == 0] = -1
    return decisions


def accuracy(dataset, decisions):
    labels = np.array([e.class_id for e in dataset.entries])
    return float(np.mean(decisions == labels)) if len(labels) else 0.0


class MetricLog(object):
    header = ("epoch", "stage", "train_loss", "dev_loss", "dev_accuracy")

    def __init__(self):
        self.rows = []

    def append(self, epoch, stage, train_loss, dev_loss, dev_accuracy):
        self.rows.append((epoch, stage, train_loss, dev_loss, dev_accuracy))
        logger.info("epoch %d (%s): train loss %.4f, dev loss %.4f, dev accuracy %.2f%%",
                epoch, stage, train_loss, dev_loss, 100 * dev_accuracy)

    def formatted(self):
        return [(str(epoch), stage, "%.6f" % t, "%.6f" % d, "%.6f" % a)
                for epoch, stage, t, d, a in self.rows]

    def write(self, path):
        formats.write_csv(path, self.header, self.formatted())

    def __eq__(self, other):
        return isinstance(other, MetricLog) and self.rows == other.rows

    def __ne__(self, other):
        return not self == other


def _stage_parameters(pipeline, stage):
    names = set(pipeline.parameters(stage))
    index = STAGES.index(stage)
    if index == 0:
        return names, names
    return names, names - set(pipeline.parameters(STAGES[index - 1]))


def train_stagewise(pipeline, train, dev, cfg):
    """
    Trains pipeline in place through cfg's ladder of stages and returns
    (pipeline, MetricLog). Batches are shuffled with a generator seeded by
    cfg.seed, so a fixed seed gives an identical log.
    """
    if not len(train):
        raise TrainingError("empty split: no train stacks")
    if not len(dev):
        raise TrainingError("empty split: no dev stacks")
    adam_cfg = cfg.adam()
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 2])
    log = MetricLog()
    epoch = 0
    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for stage in cfg.ladder():
            names, new_names = _stage_parameters(pipeline, stage)
            pipeline.stage = stage
            for stage_epoch in range(cfg.epochs):
                trained = new_names if stage_epoch < cfg.warmup_epochs else names
                params = pipeline.parameters(stage)
                losses = []
                for batch in train.batches(cfg.batch_size, rng):
                    loss, grads = batch_gradients(pipeline, train.stacks[batch],
                            train.labels[batch], stage, cfg.chunk_size, executor)
                    adam_step(params, grads, state, adam_cfg, sorted(trained))
                    losses.append(loss * len(batch))
                epoch += 1
                dev_loss, posteriors = evaluate_stacks(pipeline, dev, stage)
                log.append(epoch, stage, sum(losses) / len(train), dev_loss,
                        accuracy(dev, utterance_decisions(dev, posteriors)))
    finally:
        if executor is not None:
            executor.shutdown()
    return pipeline, log


def train_variant(tag, data, cfg):
    """
    Creates and trains a pipeline for tag on data's train and dev splits.
    """
    pipeline = create_pipeline(tag, data, cfg, data.classes)
    dev = data.datasets.get("dev")
    if dev is None:
        raise TrainingError("empty split: the manifest has no dev utterances")
    return train_stagewise(pipeline, data.split("train"), dev, cfg)


def classify(pipeline, entries, root, threads=1):
    """
    The utterance-level decisions of pipeline on entries, preparing the audio
    with the statistics, frame settings and microphone pair stored in the
    pipeline.
    """
    if pipeline.stats is None or pipeline.frame_config is None:
        raise TrainingError("pipeline carries no GMVN statistics or frame settings")
    if not entries:
        return np.zeros(0, dtype=np.int64)
    spectra = load_spectra(entries, root, pipeline.frame_config, pipeline.pair, threads)
    stacks = stack_utterances(spectra, pipeline.stats, pipeline.lfr_factor)
    dataset = Dataset.from_utterances(entries, stacks)
    posteriors = np.zeros((0, pipeline.classes))
    if len(dataset):
        posteriors = np.concatenate([pipeline.log_posteriors(dataset.stacks[i:i + 256],
                pipeline.stage) for i in range(0, len(dataset), 256)])
    for entry, s in zip(entries, stacks):
        if not len(s):
            logger.warning("%s is too short for one LFR stack; counted as an error", entry.path)
    return utterance_decisions(dataset, posteriors)


def relative_error_reduction(errors, baseline_errors):
    """
    (baseline error - error) / baseline error, 0 when both are zero and None
    when only the baseline is perfect.
    """
    if baseline_errors == 0:
        return 0.0 if errors == 0 else None
    return (baseline_errors - errors) / float(baseline_errors)


class ReportRow(object):
    def __init__(self, group, name, playback, count, correct, baseline_correct=None):
        self.group = group
        self.name = name
        self.playback = playback
        self.count = count
        self.correct = correct
        self.baseline_correct = baseline_correct

    @property
    def accuracy(self):
        return self.correct / float(self.count) if self.count else 0.0

    @property
    def reduction(self):
        if self.baseline_correct is None:
            return None
        return relative_error_reduction(self.count - self.correct,
                self.count - self.baseline_correct)

    def label(self):
        if self.playback is None:
            return self.name
        return "%s %s" % (self.name, "PB" if self.playback else "noPB")


class EvaluationReport(object):
    """
    Utterance accuracy by SNR bucket and playback flag, by partition and
    playback flag, and in total, with the relative error reduction against
    a baseline when one was given.
    """
    header = ("group", "name", "playback", "utterances", "accuracy",
              "baseline_accuracy", "error_reduction")

    def __init__(self, rows, has_baseline):
        self.rows = rows
        self.has_baseline = has_baseline

    @classmethod
    def build(cls, entries, decisions, baseline_decisions=None):
        correct = np.array([d == e.class_id for d, e in zip(decisions, entries)], dtype=bool)
        base = None
        if baseline_decisions is not None:
            base = np.array([d == e.class_id for d, e in zip(baseline_decisions, entries)],
                    dtype=bool)
        groups = [
            ("snr", lambda e: snr_bucket(e.snr_db), list(SNR_BUCKETS)),
            ("partition", lambda e: e.partition,
             sorted(set(e.partition for e in entries))),
        ]
        rows = []
        for group, key, names in groups:
            for name in names:
                for playback in (False, True):
                    mask = np.array([key(e) == name and e.playback == playback
                                     for e in entries], dtype=bool)
                    if mask.any():
                        rows.append(cls._row(group, name, playback, mask, correct, base))
        everything = np.ones(len(entries), dtype=bool)
        rows.append(cls._row("total", "total", None, everything, correct, base))
        return cls(rows, base is not None)

    @staticmethod
    def _row(group, name, playback, mask, correct, base):
        return ReportRow(group, name, playback, int(mask.sum()), int(correct[mask].sum()),
                None if base is None else int(base[mask].sum()))

    def row(self, group, name, playback=None):
        for row in self.rows:
            if (row.group, row.name, row.playback) == (group, name, playback):
                return row
        raise KeyError((group, name, playback))

    def csv_rows(self):
        result = []
        for row in self.rows:
            baseline = reduction = ""
            if self.has_baseline:
                baseline = "%.6f" % (row.baseline_correct / float(max(row.count, 1)))
                reduction = "n/a" if row.reduction is None else "%.6f" % row.reduction
            playback = "" if row.playback is None else str(int(row.playback))
            result.append((row.group, row.name, playback, str(row.count),
                    "%.6f" % row.accuracy, baseline, reduction))
        return result

    def write(self, path):
        formats.write_csv(path, self.header, self.csv_rows())

    def table(self):
        lines = ["%-22s %6s %9s" % ("", "utts", "accuracy") +
                 (" %9s %9s" % ("baseline", "RER") if self.has_baseline else "")]
        for row in self.rows:
            line = "%-22s %6d %8.2f%%" % (row.label(), row.count, 100 * row.accuracy)
            if self.has_baseline:
                reduction = row.reduction
                line += " %8.2f%% %9s" % (100.0 * row.baseline_correct / max(row.count, 1),
                        "n/a" if reduction is None else "%.2f%%" % (100 * reduction))
            lines.append(line)
        return "\n".join(lines)


def evaluate(pipeline, entries, root, baseline=None, threads=1):
    decisions = classify(pipeline, entries, root, threads)
    baseline_decisions = None
    if baseline is not None:
        baseline_decisions = classify(baseline, entries, root, threads)
    return EvaluationReport.build(entries, decisions, baseline_decisions)


def trend_checks(overall, playback, tolerance=TIE_TOLERANCE):
    """
    The three trend checks for one seed, from per-variant accuracies over
    all test utterances (overall) and over the playback ones (playback).
    Differences within tolerance count as ties, which pass.
    """
    def at_least(a, b):
        return a >= b - tolerance
    return {
        "bat-fan-avg >= bat-at": at_least(overall["bat-fan-avg"], overall["bat-at"]),
        "bat-fan-avg >= bat-fan-max on playback":
                at_least(playback["bat-fan-avg"], playback["bat-fan-max"]),
        "multi-channel >= raw1ch": all(at_least(overall[tag], overall["raw1ch"])
                for tag in VARIANTS if tag != "raw1ch"),
    }


class TrendReport(object):
    """
    Per-seed accuracies and trend checks; a check holds when it passes for a
    strict majority of seeds.
    """
    def __init__(self, seeds, overall, playback):
        self.seeds = list(seeds)
        self.overall = overall
        self.playback = playback
        self.checks = [trend_checks(o, p) for o, p in zip(overall, playback)]

    def majority(self):
        names = self.checks[0].keys() if self.checks else []
        return dict((name, 2 * sum(c[name] for c in self.checks) > len(self.checks))
                for name in names)

    @property
    def passed(self):
        return all(self.majority().values())

    def csv_rows(self):
        rows = []
        for seed, overall, playback in zip(self.seeds, self.overall, self.playback):
            for tag in VARIANTS:
                rows.append((str(seed), tag, "%.6f" % overall[tag], "%.6f" % playback[tag]))
        return rows

    def table(self):
        lines = ["%-12s" % "variant" + "".join(" seed %-6d" % s for s in self.seeds)]
        for tag in VARIANTS:
            lines.append("%-12s" % tag + "".join(" %10.2f%%" % (100 * o[tag])
                    for o in self.overall))
        for name, held in sorted(self.majority().items()):
            lines.append("%-45s %s" % (name, "holds" if held else "VIOLATED"))
        return "\n".join(lines)


def trend_experiment(out_dir, seeds, cfg, recipe=None, geometry=None, threads=1):
    """
    For each seed, simulates recipe (the trend corpus by default) under
    out_dir, trains every variant with the same budget and measures test
    accuracy overall and on playback utterances.
    """
    recipe = recipe or CorpusRecipe.trend()
    geometry = geometry or ArrayGeometry.default()
    overall, playback = [], []
    for seed in seeds:
        root = os.path.join(out_dir, "seed_%d" % seed)
        entries = build_corpus(recipe, root, seed, geometry, threads)
        data = load_corpus(entries, root, recipe.frame_config(), geometry, threads)
        test = [e for e in entries if e.split == "test"]
        if not test:
            raise TrainingError("empty split: the trend corpus has no test utterances")
        overall.append({})
        playback.append({})
        for tag in VARIANTS:
            pipeline = train_variant(tag, data, cfg.replace(seed=seed, threads=threads))[0]
            report = evaluate(pipeline, test, root, threads=threads)
            overall[-1][tag] = report.row("total", "total").accuracy
            flagged = [r for r in report.rows if r.group == "snr" and r.playback]
            count = sum(r.count for r in flagged)
            playback[-1][tag] = (sum(r.correct for r in flagged) / float(count)
                    if count else 0.0)
            logger.info("seed %d, %s: accuracy %.2f%%", seed, tag, 100 * overall[-1][tag])
    return TrendReport(seeds, overall, playback)
