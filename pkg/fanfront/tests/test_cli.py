import contextlib
import io
import os
import tempfile

from fanfront import cli, formats
from fanfront.testframework import TestSuite, check_raises

test = TestSuite()

SMALL_RECIPE = """\
classes 2
duration 0.25
snr 10.0 20.0
noise-directions 8
partition set1 playback 0.25
  train 8
  dev 4
  test 4
"""


def run(*argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        status = cli.main(["-q"] + list(argv))
    return status, out.getvalue()


def simulate(directory, text=SMALL_RECIPE):
    recipe = os.path.join(directory, "recipe.txt")
    with open(recipe, "w") as f:
        f.write(text)
    corpus = os.path.join(directory, "corpus")
    status, output = run("simulate", "--recipe", recipe, "--out", corpus)
    assert status == 0, output
    return os.path.join(corpus, "manifest.tsv"), output


@test(cli.cmd_params)
def test_params():
    status, output = run("params", "--variant", "bat-fan-avg")
    assert status == 0
    assert "FAN/affine ratio: 312 / 193,675 = 0.161%" in output
    assert "9,144" in output
    status, output = run("params", "--variant", "raw1ch")
    assert status == 0
    assert "16,256" in output


@test(cli.main)
def test_usage_errors():
    e = check_raises(SystemExit, cli.main, ["params", "--variant", "no-such-variant"])
    assert e.code == cli.USAGE_ERROR
    assert run("params", "--variant", "bat-at", "--bins", "0")[0] == cli.USAGE_ERROR


@test(cli.cmd_simulate)
def test_empty_recipe():
    with tempfile.TemporaryDirectory() as directory:
        manifest, output = simulate(directory, "classes 2\n")
        assert "0 utterances" in output
        assert formats.read_manifest(manifest) == []


@test(cli.cmd_gradcheck)
def test_gradcheck():
    status, output = run("gradcheck", "--variant", "raw1ch")
    assert status == 0
    assert "ok" in output and "FAILED" not in output


@test(cli.cmd_beampattern)
def test_beampattern():
    with tempfile.TemporaryDirectory() as directory:
        target = os.path.join(directory, "beams.csv")
        status, output = run("beampattern", "--out", target, "--directions", "4",
                "--resolution", "90")
        assert status == 0
        assert "ordering violations" in output
        with open(target) as f:
            lines = f.read().splitlines()
        assert lines[0].startswith("direction,look_deg")
        assert len(lines) == 1 + 4 * 127 * 4


@test(cli.cmd_train)
def test_simulate_train_and_evaluate():
    with tempfile.TemporaryDirectory() as directory:
        manifest, output = simulate(directory)
        assert "16 utterances" in output
        features = os.path.join(directory, "features")
        status, output = run("extract", "--manifest", manifest, "--out", features)
        assert status == 0 and "extracted 16 of 16" in output
        written = [name for root, dirs, names in os.walk(features) for name in names]
        assert len(written) == 16 and all(name.endswith(".fanf") for name in written)

        checkpoint = os.path.join(directory, "raw1ch.fanc")
        status, output = run("train", "--manifest", manifest, "--variant", "raw1ch",
                "--checkpoint", checkpoint, "--epochs", "1", "--warmup-epochs", "0",
                "--hidden-width", "8", "--batch-size", "16")
        assert status == 0
        assert os.path.exists(checkpoint)
        assert os.path.exists(checkpoint + ".metrics.csv")
        assert formats.load_checkpoint(checkpoint)[0] == "raw1ch"

        report = os.path.join(directory, "report.csv")
        status, output = run("eval", "--manifest", manifest, "--checkpoint", checkpoint,
                "--baseline-checkpoint", checkpoint, "--out", report)
        assert status == 0
        assert "4 test utterances" in output and "RER" in output
        assert os.path.exists(report)


@test(cli.cmd_eval)
def test_data_errors():
    with tempfile.TemporaryDirectory() as directory:
        missing = os.path.join(directory, "missing.fanc")
        assert run("eval", "--manifest", os.path.join(directory, "none.tsv"),
                "--checkpoint", missing)[0] == cli.DATA_ERROR
        manifest = simulate(directory)[0]
        assert run("eval", "--manifest", manifest, "--checkpoint", missing)[0] == cli.DATA_ERROR
        bad = os.path.join(directory, "bad.txt")
        with open(bad, "w") as f:
            f.write("classes two\n")
        assert run("simulate", "--recipe", bad, "--out", directory)[0] == cli.DATA_ERROR
