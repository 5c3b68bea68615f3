import os
import struct
import tempfile

import numpy as np

from fanfront import formats
from fanfront.array import ArrayGeometry
from fanfront.formats import FormatError, ManifestEntry
from fanfront.frontend import FrameConfig, gmvn_fit
from fanfront.network import pipeline_from_state, pipeline_state, tiny_instance
from fanfront.testframework import TestSuite, check_close, check_raises

test = TestSuite()


def random_spectra(shape, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@test(formats.encode_features)
def test_feature_header_layout():
    data = formats.encode_features(random_spectra((4, 2, 127)))
    assert data[:4] == b"FANF"
    assert struct.unpack("<HIII", data[4:18]) == (formats.FEATURE_VERSION, 127, 2, 4)
    assert len(data) == 18 + 8 * 4 * 2 * 127


@test(formats.decode_features)
def test_feature_values_are_float32_frame_major():
    spectra = random_spectra((3, 2, 5))
    decoded = formats.decode_features(formats.encode_features(spectra))
    assert decoded.shape == (3, 2, 5)
    expected = spectra.astype(np.complex64).astype(np.complex128)
    assert np.array_equal(decoded, expected)
    # the first value written is frame 0, channel 0, bin 0, real then imaginary
    first = np.frombuffer(formats.encode_features(spectra)[18:26], dtype="<f4")
    assert first.tolist() == [np.float32(spectra[0, 0, 0].real), np.float32(spectra[0, 0, 0].imag)]


@test(formats.decode_features)
def test_bad_feature_files():
    data = formats.encode_features(random_spectra((2, 1, 3)))
    check_raises(FormatError, formats.decode_features, b"FANX" + data[4:])
    check_raises(FormatError, formats.decode_features, data[:-1])
    e = check_raises(FormatError, formats.decode_features, data[:4] + struct.pack("<H", 9) + data[6:])
    assert "version" in str(e)
    check_raises(FormatError, formats.encode_features, np.zeros((3, 5)))


@test(formats.write_features)
def test_feature_files_on_disk():
    spectra = random_spectra((2, 3, 7))
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, "utt.fanf")
        formats.write_features(path, spectra)
        check_close(formats.read_features(path), spectra, 1e-6)


def tiny_pipeline(tag):
    pipeline = tiny_instance(tag)[0]
    frames = random_spectra((10, 2, 5))
    pipeline.stats = gmvn_fit(frames)
    pipeline.frame_config = FrameConfig(fft_size=16, window_len_samples=12, hop_samples=6,
            lfr_factor=2)
    pipeline.pair = (0, 3)
    pipeline.stage = "fe_plus_classifier"
    return pipeline


@test(formats.encode_checkpoint)
def test_checkpoint_round_trip_is_bit_exact():
    for tag in ("raw1ch", "bat-at", "bat-fan-avg"):
        data = formats.encode_checkpoint(tag, pipeline_state(tiny_pipeline(tag)))
        assert data[:4] == b"FANM"
        read_tag, entries = formats.decode_checkpoint(data)
        assert read_tag == tag
        rebuilt = pipeline_from_state(tag, dict((n, v) for n, v, t in entries))
        assert formats.encode_checkpoint(tag, pipeline_state(rebuilt)) == data
        assert rebuilt.pair == (0, 3)
        assert rebuilt.stage == "fe_plus_classifier"
        assert rebuilt.frame_config.fft_size == 16
        assert rebuilt.stats.frame_count == 10


@test(formats.decode_checkpoint)
def test_checkpoint_marks_state_entries():
    data = formats.encode_checkpoint("bat-fan-max", pipeline_state(tiny_pipeline("bat-fan-max")))
    entries = formats.decode_checkpoint(data)[1]
    trainable = dict((name, t) for name, value, t in entries)
    assert trainable["mc.bat.weights"] and trainable["fe.weights"]
    assert trainable["classifier.output.biases"]
    assert not trainable["gmvn.mean"] and not trainable["mc.bins"]
    weights = dict((name, value) for name, value, t in entries)["mc.bat.weights"]
    assert np.iscomplexobj(weights) and weights.shape == (3, 5, 2)


@test(formats.load_checkpoint)
def test_checkpoint_files():
    pipeline = tiny_pipeline("fan-max")
    _, stacks, _ = tiny_instance("fan-max")
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, "model.fanm")
        formats.save_checkpoint(path, "fan-max", pipeline)
        tag, loaded = formats.load_checkpoint(path)
    assert tag == "fan-max"
    check_close(loaded.log_posteriors(stacks), pipeline.log_posteriors(stacks), 1e-4)


@test(formats.decode_checkpoint)
def test_bad_checkpoints():
    data = formats.encode_checkpoint("raw2ch", pipeline_state(tiny_pipeline("raw2ch")))
    check_raises(FormatError, formats.decode_checkpoint, b"FANF" + data[4:])
    check_raises(FormatError, formats.decode_checkpoint, data[:-2])
    e = check_raises(FormatError, formats.decode_checkpoint, data[:6] + b"\x63" + data[7:])
    assert "variant" in str(e)
    check_raises(FormatError, formats.encode_checkpoint, "raw3ch", [])


@test(formats.parse_geometry)
def test_geometry_files():
    geometry = formats.parse_geometry("# a pair\n0.036 0 0\n-0.036 0 0  # second\n"
            "speed-of-sound 340\n")
    assert geometry.num_mics == 2
    assert geometry.speed_of_sound == 340.0
    default = ArrayGeometry.default()
    assert formats.parse_geometry(formats.format_geometry(default)) == default
    e = check_raises(FormatError, formats.parse_geometry, "0 0 0\n0 0\n")
    assert "geometry line 2" in str(e)
    check_raises(FormatError, formats.parse_geometry, "# nothing\n")


@test(ManifestEntry)
def test_manifest_round_trip():
    entries = [
        ManifestEntry("set1/train/utt_00000.wav", 0, 12.5, False, "train"),
        ManifestEntry("set1/dev/utt_00001.wav", 3, np.inf, True, "dev"),
        ManifestEntry("/abs/utt.wav", 1, -4.25, True, "test"),
    ]
    text = formats.format_manifest(entries)
    assert text.splitlines()[1] == "set1/dev/utt_00001.wav\t3\tinf\t1\tdev"
    assert formats.parse_manifest(text) == entries
    assert entries[0].partition == "set1"
    assert entries[2].partition == ""
    assert entries[0].resolve("/corpus") == os.path.join("/corpus", "set1/train/utt_00000.wav")
    assert entries[2].resolve("/corpus") == "/abs/utt.wav"


@test(formats.parse_manifest)
def test_bad_manifests():
    good = "a.wav\t0\t1.0\t0\ttrain\n"
    e = check_raises(FormatError, formats.parse_manifest, good + "a.wav\t1\t2.0\t1\tdev\n")
    assert "duplicate path" in str(e)
    e = check_raises(FormatError, formats.parse_manifest, good + "b.wav\t1\t2.0\t1\tvalidation\n")
    assert "manifest line 2" in str(e)
    check_raises(FormatError, formats.parse_manifest, "b.wav\t1\t2.0\t2\tdev\n")
    check_raises(FormatError, formats.parse_manifest, "b.wav 1 2.0 1 dev\n")
    assert formats.parse_manifest("") == []


RECIPE = """
# two partitions
classes 4
duration 0.25
snr -5 25
partition set1 playback 0.1
  train 100
  dev 20
partition set2 playback 1
  test 10
"""


@test(formats.parse_recipe)
def test_recipes():
    settings, partitions = formats.parse_recipe(RECIPE)
    assert settings == {"classes": 4, "duration_s": 0.25, "snr_db": (-5.0, 25.0)}
    assert partitions == [("set1", 0.1, {"train": 100, "dev": 20}),
                          ("set2", 1.0, {"test": 10})]
    assert formats.parse_recipe(formats.format_recipe(settings, partitions)) == (settings, partitions)


@test(formats.parse_recipe)
def test_bad_recipes():
    e = check_raises(FormatError, formats.parse_recipe, "train 5\n")
    assert "outside a partition" in str(e)
    check_raises(FormatError, formats.parse_recipe, "partition a playback 1.5\n")
    check_raises(FormatError, formats.parse_recipe, "partition a playback 0\n  train -1\n")
    check_raises(FormatError, formats.parse_recipe, "partition a playback 0\npartition a playback 1\n")
    e = check_raises(FormatError, formats.parse_recipe, "classes 2\ncolour red\n")
    assert "recipe line 2" in str(e)


@test(formats.write_wav)
def test_wav_round_trip():
    pcm = np.array([[0.0, 0.5, -0.5, -1.0], [0.25, -0.25, 1.0 / 32768, 0.0]])
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, "x.wav")
        formats.write_wav(path, pcm, 16000)
        read = formats.read_wav(path, 16000)
        assert read.shape == (2, 4)
        assert np.array_equal(read, pcm)
        e = check_raises(FormatError, formats.read_wav, path, 8000)
        assert "sample rate" in str(e)
        check_raises(FormatError, formats.read_wav, os.path.join(directory, "missing.wav"))


@test(formats.write_wav)
def test_wav_clips_full_scale():
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, "x.wav")
        formats.write_wav(path, np.array([1.0, -1.0]), 8000)
        assert formats.read_wav(path).tolist() == [[32767 / 32768.0, -1.0]]


@test(formats.write_csv)
def test_csv():
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, "x.csv")
        formats.write_csv(path, ("a", "b"), [("1", "x"), ("2", "y")])
        with open(path) as f:
            assert f.read() == "a,b\n1,x\n2,y\n"
