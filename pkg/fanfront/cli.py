"""
The fanfront command line. Every subcommand is a cmd_* function taking the
parsed arguments and returning an exit status; main maps exceptions onto
exit statuses:

 * 0: success
 * 1: usage errors (bad flags, unknown variant, invalid option values)
 * 2: data errors (unreadable or malformed files, empty splits, bad corpora)
 * 3: numeric failures (non-finite losses or gradients, failed gradient checks)

Tables go to stdout; progress is logged to stderr.
"""

import argparse
import logging
import os
import sys

import numpy as np

from fanfront import formats
from fanfront.array import (ArrayError, ArrayGeometry, beampattern, look_directions,
                            ordering_violations, select_diagonal_pair,
                            superdirective_weights)
from fanfront.corpus import CorpusError, CorpusRecipe, MANIFEST_NAME, build_corpus, bucket_counts
from fanfront.formats import FormatError
from fanfront.frontend import FrameConfig, FrontendError, frame_and_transform
from fanfront.grammar import ParseException
from fanfront.layers import (DISPLAY_NAMES, VARIANTS, LayerConfig, LayerError,
                             assemble_variant, parameter_breakdown, parameter_count)
from fanfront.network import NetworkError, NumericError, gradient_check, tiny_instance
from fanfront.options import OptionError
from fanfront.static import StaticTypeError
from fanfront.training import (MetricLog, TrainConfig, TrainingError, evaluate,
                               load_corpus, train_variant, trend_experiment)

logger = logging.getLogger(__name__)

USAGE_ERROR = 1
DATA_ERROR = 2
NUMERIC_ERROR = 3

DATA_ERRORS = (FrontendError, ArrayError, CorpusError, FormatError, ParseException,
               StaticTypeError, TrainingError, NetworkError, OSError)


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, "%s: error: %s\n" % (self.prog, message))


def _frame_config(args):
    return FrameConfig(fft_size=getattr(args, "fft_size", None),
            window_len_samples=getattr(args, "window_len", None),
            hop_samples=getattr(args, "hop", None))


def _geometry(args):
    if getattr(args, "geometry", None):
        return formats.read_geometry(args.geometry)
    return ArrayGeometry.default()


def _manifest(args):
    entries = formats.read_manifest(args.manifest)
    return entries, os.path.dirname(os.path.abspath(args.manifest))


def _train_config(args):
    return TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed,
            threads=args.threads, batch_size=args.batch_size, stage=args.stage,
            warmup_epochs=args.warmup_epochs, hidden_width=args.hidden_width)


def cmd_simulate(args):
    recipe = CorpusRecipe.read(args.recipe) if args.recipe else CorpusRecipe.default()
    entries = build_corpus(recipe, args.out, args.seed, _geometry(args), args.threads)
    print("%-10s %-6s %-8s %-9s %6s" % ("partition", "split", "snr", "playback", "count"))
    for (partition, split, bucket, playback), count in bucket_counts(entries):
        print("%-10s %-6s %-8s %-9s %6d" % (partition, split, bucket,
                "PB" if playback else "noPB", count))
    print("%d utterances in %s" % (len(entries), os.path.join(args.out, MANIFEST_NAME)))
    return 0


def cmd_extract(args):
    entries, root = _manifest(args)
    cfg = _frame_config(args)
    failures = 0
    for entry in entries:
        target = os.path.join(args.out, os.path.splitext(entry.path)[0] + ".fanf")
        try:
            spectra = frame_and_transform(formats.read_wav(entry.resolve(root),
                    cfg.sample_rate_hz), cfg)
            directory = os.path.dirname(target)
            if directory:
                os.makedirs(directory, exist_ok=True)
            formats.write_features(target, spectra)
        except (FormatError, FrontendError, OSError) as e:
            logger.error("%s: %s", entry.path, e)
            failures += 1
            continue
        logger.debug("%s: %d frames", target, len(spectra))
    print("extracted %d of %d utterances" % (len(entries) - failures, len(entries)))
    return DATA_ERROR if failures else 0


def cmd_beampattern(args):
    cfg = _frame_config(args)
    geometry = _geometry(args)
    if not args.all_mics:
        geometry = geometry.subset(select_diagonal_pair(geometry))
    directions = look_directions(args.directions)
    design = superdirective_weights(geometry, directions, cfg.bin_omegas(), args.sigma2)
    azimuths = np.radians(np.arange(0.0, 360.0, args.resolution))
    frequencies = cfg.bin_frequencies()
    rows = []
    for d, direction in enumerate(directions):
        for k, omega in enumerate(design.omegas):
            gains = beampattern(design.weights[d, k], geometry, omega, azimuths)
            for azimuth, gain in zip(azimuths, gains):
                rows.append((str(d), "%.1f" % np.degrees(direction.azimuth), str(k + 1),
                        "%.3f" % frequencies[k], "%.1f" % np.degrees(azimuth),
                        "%.4f" % (10 * np.log10(max(gain, 1e-30)))))
    formats.write_csv(args.out, ("direction", "look_deg", "bin", "frequency_hz",
            "azimuth_deg", "gain_db"), rows)
    distortion = np.max(np.abs(design.response(geometry) - 1.0))
    print("%d directions x %d bins on %d mics, max |w^H v - 1| = %.3g"
            % (len(directions), len(design.omegas), geometry.num_mics, distortion))
    if geometry.num_mics == 2:
        violations = ordering_violations(geometry, design)
        print("look-direction ordering violations: %d" % len(violations))
    return 0


def cmd_gradcheck(args):
    tags = VARIANTS if args.variant in (None, "all") else (args.variant,)
    failed = False
    for tag in tags:
        pipeline, stacks, labels = tiny_instance(tag, args.seed)
        for check in gradient_check(pipeline, stacks, labels, "joint", tolerance=args.tolerance):
            print("%-12s %-28s %10.3g %s" % (tag, check.name, check.relative_error,
                    "ok" if check.passed else "FAILED"))
            failed = failed or not check.passed
    return NUMERIC_ERROR if failed else 0


def cmd_params(args):
    config = LayerConfig(init="random", bins=args.bins, directions=args.directions,
            filters=args.filters)
    variant = assemble_variant(args.variant, config)
    print("%s (%s)" % (DISPLAY_NAMES[args.variant], args.variant))
    print("%-8s %12s %10s %12s" % ("layer", "weights", "biases", "total"))
    for name, weights, biases, total in parameter_breakdown(variant):
        print("%-8s %12s %10s %12s" % (name, "{:,}".format(weights), "{:,}".format(biases),
                "{:,}".format(total)))
    print("%-8s %36s" % ("total", "{:,}".format(parameter_count(variant))))
    fan = assemble_variant("bat-fan-avg", config).layer("fan").parameter_counts()
    affine = assemble_variant("bat-at", config).layer("affine").parameter_counts()
    fan_total, affine_total = sum(fan.values()), sum(affine.values())
    print("FAN/affine ratio: %s / %s = %.3f%%" % ("{:,}".format(fan_total),
            "{:,}".format(affine_total), 100.0 * fan_total / affine_total))
    return 0


def cmd_train(args):
    cfg = _train_config(args)
    entries, root = _manifest(args)
    data = load_corpus(entries, root, _frame_config(args), _geometry(args), args.threads)
    pipeline, log = train_variant(args.variant, data, cfg)
    formats.save_checkpoint(args.checkpoint, args.variant, pipeline)
    log_path = args.out or args.checkpoint + ".metrics.csv"
    log.write(log_path)
    print("%-6s %-20s %10s %10s %10s" % MetricLog.header)
    for row in log.formatted():
        print("%-6s %-20s %10s %10s %10s" % row)
    return 0


def cmd_eval(args):
    entries, root = _manifest(args)
    entries = [e for e in entries if e.split == args.split]
    if not entries:
        raise TrainingError("empty split: the manifest has no %s utterances" % args.split)
    tag, pipeline = formats.load_checkpoint(args.checkpoint)
    baseline = None
    if args.baseline_checkpoint:
        baseline = formats.load_checkpoint(args.baseline_checkpoint)[1]
    report = evaluate(pipeline, entries, root, baseline, args.threads)
    print("%s on %d %s utterances" % (DISPLAY_NAMES[tag], len(entries), args.split))
    print(report.table())
    if args.out:
        report.write(args.out)
    return 0


def cmd_trend(args):
    recipe = CorpusRecipe.read(args.recipe) if args.recipe else CorpusRecipe.trend()
    report = trend_experiment(args.out, args.seeds, _train_config(args), recipe,
            _geometry(args), args.threads)
    print(report.table())
    formats.write_csv(os.path.join(args.out, "trend.csv"),
            ("seed", "variant", "accuracy", "playback_accuracy"), report.csv_rows())
    if not report.passed:
        logger.warning("a trend check was violated by a majority of seeds")
    return 0


def _add_common(parser, seed=True, threads=True):
    if seed:
        parser.add_argument("--seed", type=int, default=0)
    if threads:
        parser.add_argument("--threads", type=int, default=1,
                help="worker threads (results don't depend on it)")


def _add_frame(parser):
    parser.add_argument("--fft-size", type=int)
    parser.add_argument("--window-len", type=int, help="window length in samples")
    parser.add_argument("--hop", type=int, help="hop in samples")


def _add_training(parser):
    defaults = TrainConfig.defaults
    parser.add_argument("--epochs", type=int, default=defaults["epochs"],
            help="epochs per stage")
    parser.add_argument("--lr", type=float, default=defaults["learning_rate"])
    parser.add_argument("--batch-size", type=int, default=defaults["batch_size"])
    parser.add_argument("--stage", default=defaults["stage"],
            choices=("classifier_only", "fe_plus_classifier", "joint"),
            help="last stage of the training ladder")
    parser.add_argument("--warmup-epochs", type=int, default=defaults["warmup_epochs"])
    parser.add_argument("--hidden-width", type=int, default=defaults["hidden_width"])


def build_parser():
    parser = ArgumentParser(prog="fanfront", description="Multi-channel acoustic "
            "front-ends with frequency-aligned networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    p = commands.add_parser("simulate", help="render a synthetic corpus")
    p.add_argument("--recipe", help="corpus recipe file (default: the two-partition recipe)")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--geometry")
    _add_common(p)
    p.set_defaults(run=cmd_simulate)

    p = commands.add_parser("extract", help="write FANF feature files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="feature directory")
    _add_frame(p)
    p.set_defaults(run=cmd_extract)

    p = commands.add_parser("beampattern", help="dump superdirective beampatterns as CSV")
    p.add_argument("--out", required=True, help="CSV file")
    p.add_argument("--geometry")
    p.add_argument("--all-mics", action="store_true",
            help="design for every microphone instead of the diagonal pair")
    p.add_argument("--directions", type=int, default=12)
    p.add_argument("--sigma2", type=float, default=LayerConfig.defaults["sigma2"])
    p.add_argument("--resolution", type=float, default=5.0, help="azimuth grid step in degrees")
    _add_frame(p)
    p.set_defaults(run=cmd_beampattern)

    p = commands.add_parser("gradcheck", help="check gradients on a tiny instance")
    p.add_argument("--variant", choices=VARIANTS + ("all",), default="all")
    p.add_argument("--tolerance", type=float, default=1e-4)
    _add_common(p, threads=False)
    p.set_defaults(run=cmd_gradcheck)

    p = commands.add_parser("params", help="count the parameters of a variant")
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--bins", type=int, default=127)
    p.add_argument("--directions", type=int, default=12)
    p.add_argument("--filters", type=int, default=24)
    p.set_defaults(run=cmd_params)

    p = commands.add_parser("train", help="train a variant stage by stage")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint to write")
    p.add_argument("--out", help="metric log CSV (default: next to the checkpoint)")
    p.add_argument("--geometry")
    _add_common(p)
    _add_training(p)
    _add_frame(p)
    p.set_defaults(run=cmd_train)

    p = commands.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline-checkpoint")
    p.add_argument("--split", choices=formats.SPLITS, default="test")
    p.add_argument("--out", help="report CSV")
    _add_common(p, seed=False)
    p.set_defaults(run=cmd_eval)

    p = commands.add_parser("trend", help="compare all variants over several seeds")
    p.add_argument("--out", required=True, help="working directory")
    p.add_argument("--recipe", help="corpus recipe file (default: the trend recipe)")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--geometry")
    _add_common(p, seed=False)
    _add_training(p)
    p.set_defaults(run=cmd_trend, seed=0)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.run(args)
    except (OptionError, LayerError) as e:
        logger.error("%s", e)
        return USAGE_ERROR
    except NumericError as e:
        logger.error("numeric failure: %s", e)
        return NUMERIC_ERROR
    except DATA_ERRORS as e:
        logger.error("%s", e)
        return DATA_ERROR
