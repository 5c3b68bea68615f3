"""
Readers and writers for everything fanfront puts on disk:

 * FANF feature files: b"FANF", u16 version, u32 K, u32 M, u32 T, then T*M*K
   complex values as little-endian float32 (real, imaginary) pairs, frame
   major, then channel, then bin.
 * FANM checkpoints: b"FANM", u16 version, u8 variant tag index, u16 entry
   count, then per entry a u8 name length and the name, a u8 flags byte
   (bit 0 complex, bit 1 non-trainable state), a u8 dimension count, one u32
   per dimension and the values as little-endian float32 (complex values as
   interleaved pairs).
 * geometry files: one "x y z" row per microphone in meters, optionally a
   "speed-of-sound c" line; "#" starts a comment.
 * corpus manifests: tab-separated path, class id, SNR in dB, playback flag
   (0 or 1) and split (train, dev or test), one utterance per line.
 * corpus recipes: the keyword format described in parse_recipe.
 * 16-bit PCM WAV files (through soundfile) and CSV reports.

The binary formats are parsed with the combinator parsers of
fanfront.grammar, the text formats line by line with the same parsers.
"""

import csv
import io
import logging
import os
import struct

import numpy as np
import soundfile

from fanfront import grammar
from fanfront.array import ArrayGeometry, SPEED_OF_SOUND
from fanfront.grammar import (Bind, Block, Chars, Exact, Literal, ParseException,
        Regex, Repeat, keyword, integer, real, u8, u16, u32)
from fanfront.layers import VARIANTS
from fanfront.network import pipeline_from_state, pipeline_state

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"FANF"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"FANM"
CHECKPOINT_VERSION = 1
FLAG_COMPLEX = 1
FLAG_STATE = 2
SPLITS = ("train", "dev", "test")


class FormatError(ValueError):
    pass


def _parse(parser, data, what):
    try:
        return parser.parse_string(data)
    except ParseException as e:
        raise FormatError("%s: %s" % (what, e))


def _parse_lines(statement, text, what):
    """
    Parses every non-blank, non-comment line of text with statement and
    returns the values in order. Errors name the line.
    """
    values = []
    for number, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        try:
            values.append(statement.parse_string(line))
        except ParseException as e:
            raise FormatError("%s line %d: %s" % (what, number, e))
    return values


# Feature files

feature_header = FEATURE_MAGIC + u16 + u32 + u32 + u32


def encode_features(spectra):
    """
    The FANF encoding of a (T, M, K) complex spectrum sequence.
    """
    spectra = np.asarray(spectra)
    if spectra.ndim != 3:
        raise FormatError("features must have shape (T, M, K), not %s" % (spectra.shape,))
    T, M, K = spectra.shape
    data = np.ascontiguousarray(spectra, dtype=np.complex128).astype("<c8")
    return (FEATURE_MAGIC + struct.pack("<HIII", FEATURE_VERSION, K, M, T)
            + data.view("<f4").tobytes())


def _feature_body(header):
    version, K, M, T = header
    if version != FEATURE_VERSION:
        raise FormatError("unsupported FANF version %d" % version)
    return Block(2 * T * M * K)[lambda blob: blob.view("<c8").astype(np.complex128)
            .reshape(T, M, K)]


feature_file = Bind(feature_header, _feature_body)


def decode_features(data):
    return _parse(feature_file, data, "feature file")


def write_features(path, spectra):
    with open(path, "wb") as f:
        f.write(encode_features(spectra))


def read_features(path):
    with open(path, "rb") as f:
        return decode_features(f.read())


# Checkpoints

def encode_checkpoint(tag, entries):
    """
    The FANM encoding of entries, a list of (name, array, trainable)
    triples, for the variant tag.
    """
    if tag not in VARIANTS:
        raise FormatError("unknown variant %r" % tag)
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC + struct.pack("<HBH", CHECKPOINT_VERSION,
            VARIANTS.index(tag), len(entries)))
    for name, value, trainable in entries:
        value = np.asarray(value)
        encoded = name.encode("utf-8")
        if len(encoded) > 255 or value.ndim > 255:
            raise FormatError("entry %s can't be stored" % name)
        flags = (FLAG_COMPLEX if np.iscomplexobj(value) else 0) | (0 if trainable else FLAG_STATE)
        out.write(struct.pack("<B", len(encoded)) + encoded)
        out.write(struct.pack("<BB", flags, value.ndim))
        out.write(struct.pack("<%dI" % value.ndim, *value.shape))
        if flags & FLAG_COMPLEX:
            blob = np.ascontiguousarray(value).astype("<c8").view("<f4")
        else:
            blob = np.ascontiguousarray(value).astype("<f4")
        out.write(blob.tobytes())
    return out.getvalue()


def _entry_body(head):
    name, flags, dims = head[0], head[1], head[2:]
    size = int(np.prod(dims)) if dims else 1
    complex_entry = bool(flags & FLAG_COMPLEX)

    def build(blob):
        if complex_entry:
            value = blob.view("<c8").astype(np.complex128)
        else:
            value = blob.astype(np.float64)
        return (name.decode("utf-8"), value.reshape(dims), not flags & FLAG_STATE)
    return Block(size * (2 if complex_entry else 1))[build]


checkpoint_entry = Bind(Bind(u8, Chars) + u8 + Bind(u8, lambda n: grammar.PyStruct(
        "<%dI" % n, "%d dimensions" % n)), _entry_body)


def _checkpoint_body(header):
    version, tag_index, count = header
    if version != CHECKPOINT_VERSION:
        raise FormatError("unsupported FANM version %d" % version)
    if tag_index >= len(VARIANTS):
        raise FormatError("unknown variant tag index %d" % tag_index)
    return Repeat(checkpoint_entry, count, count)[lambda entries: (VARIANTS[tag_index], entries)]


checkpoint_file = Bind(CHECKPOINT_MAGIC + u16 + u8 + u16, _checkpoint_body)


def decode_checkpoint(data):
    """
    Returns (tag, entries) with entries a list of (name, array, trainable).
    """
    return _parse(checkpoint_file, data, "checkpoint")


def save_checkpoint(path, tag, pipeline):
    data = encode_checkpoint(tag, pipeline_state(pipeline))
    with open(path, "wb") as f:
        f.write(data)
    logger.info("wrote %s checkpoint to %s (%d bytes)", tag, path, len(data))


def load_checkpoint(path):
    """
    Returns (tag, pipeline).
    """
    with open(path, "rb") as f:
        tag, entries = decode_checkpoint(f.read())
    return tag, pipeline_from_state(tag, dict((name, value) for name, value, t in entries))


# Geometry files

geometry_statement = ((keyword("speed-of-sound") + real)[lambda c: ("speed", c)]
        | (real + real + real)[lambda row: ("mic", row)])


def parse_geometry(text):
    speed = SPEED_OF_SOUND
    rows = []
    for kind, value in _parse_lines(geometry_statement, text, "geometry"):
        if kind == "speed":
            speed = value
        else:
            rows.append(value)
    if not rows:
        raise FormatError("geometry: no microphone rows")
    return ArrayGeometry(rows, speed)


def format_geometry(geometry):
    lines = ["speed-of-sound %r" % geometry.speed_of_sound]
    lines += ["%r %r %r" % tuple(float(v) for v in row) for row in geometry.positions]
    return "\n".join(lines) + "\n"


def read_geometry(path):
    with open(path, encoding="utf-8") as f:
        return parse_geometry(f.read())


# Manifests

class ManifestEntry(object):
    """
    One utterance of a corpus. path is as written in the manifest, relative
    to the manifest's directory unless absolute; partition is the first
    component of a relative path ("set1" in "set1/train/utt_00000.wav").
    """
    def __init__(self, path, class_id, snr_db, playback, split):
        if split not in SPLITS:
            raise FormatError("unknown split %r" % split)
        self.path = path
        self.class_id = int(class_id)
        self.snr_db = float(snr_db)
        self.playback = bool(playback)
        self.split = split

    @property
    def partition(self):
        parts = self.path.replace("\\", "/").split("/")
        return parts[0] if len(parts) > 1 and not os.path.isabs(self.path) else ""

    def resolve(self, root):
        return self.path if os.path.isabs(self.path) else os.path.join(root, self.path)

    def format(self):
        snr = "inf" if np.isinf(self.snr_db) else "%.6f" % self.snr_db
        return "\t".join([self.path, str(self.class_id), snr,
                          "1" if self.playback else "0", self.split])

    def __eq__(self, other):
        return isinstance(other, ManifestEntry) and self.format() == other.format()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "ManifestEntry(%s)" % self.format().replace("\t", ", ")


def _check_split(name):
    if name not in SPLITS:
        raise ValueError("split (one of %s), not %r" % (", ".join(SPLITS), name))
    return name


tab = Literal("\t")
manifest_row = Exact(Regex(r"[^\t\r\n]+")(expected="path") + tab + integer + tab + real
        + tab + Regex("[01]")[int](expected="playback flag 0 or 1") + tab
        + Regex(r"[a-z]+")[_check_split])[lambda row: ManifestEntry(*row)]


def parse_manifest(text):
    entries = []
    seen = set()
    for number, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            entry = manifest_row.parse_string(line.rstrip("\r\n"), whitespace=grammar.Invalid())
        except ParseException as e:
            raise FormatError("manifest line %d: %s" % (number, e))
        if entry.path in seen:
            raise FormatError("manifest line %d: duplicate path %s" % (number, entry.path))
        seen.add(entry.path)
        entries.append(entry)
    return entries


def format_manifest(entries):
    return "".join(entry.format() + "\n" for entry in entries)


def read_manifest(path):
    with open(path, encoding="utf-8") as f:
        return parse_manifest(f.read())


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_manifest(entries))


# Recipes

def _check_fraction(value):
    if not 0 <= value <= 1:
        raise ValueError("a playback fraction in [0, 1], not %r" % value)
    return value


def _check_count(value):
    if value < 0:
        raise ValueError("a non-negative count, not %r" % value)
    return value


partition_name = Regex(r"[A-Za-z0-9_\-]+")(expected="partition name")
split_count = integer[_check_count]
recipe_statement = grammar.First(
    (keyword("classes") + integer)[lambda v: ("classes", v)],
    (keyword("duration") + real)[lambda v: ("duration_s", v)],
    (keyword("snr") + real + real)[lambda v: ("snr_db", v)],
    (keyword("playback-level") + real + real)[lambda v: ("playback_level_db", v)],
    (keyword("target-rms") + real)[lambda v: ("target_rms", v)],
    (keyword("sample-rate") + integer)[lambda v: ("sample_rate_hz", v)],
    (keyword("noise-directions") + integer)[lambda v: ("noise_directions", v)],
    (keyword("partition") + partition_name + keyword("playback") + real[_check_fraction])
            [lambda v: ("partition", v)],
    (grammar.First(*[keyword(s)[lambda _, s=s: s] for s in SPLITS]) + split_count)
            [lambda v: ("split", v)],
)


def parse_recipe(text):
    """
    Parses a corpus recipe. Settings lines are "classes n", "duration
    seconds", "snr low high", "playback-level low high", "target-rms value",
    "sample-rate hz" and "noise-directions n". A "partition name playback
    fraction" line starts a partition; the "train n", "dev n" and "test n"
    lines after it give its utterance counts. Returns (settings, partitions)
    with partitions a list of (name, playback fraction, {split: count}).
    """
    settings = {}
    partitions = []
    for kind, value in _parse_lines(recipe_statement, text, "recipe"):
        if kind == "partition":
            if any(p[0] == value[0] for p in partitions):
                raise FormatError("recipe: partition %s given twice" % value[0])
            partitions.append((value[0], value[1], {}))
        elif kind == "split":
            if not partitions:
                raise FormatError("recipe: %s count outside a partition" % value[0])
            partitions[-1][2][value[0]] = value[1]
        else:
            settings[kind] = value
    return settings, partitions


def format_recipe(settings, partitions):
    names = {
        "classes": "classes", "duration_s": "duration", "snr_db": "snr",
        "playback_level_db": "playback-level", "target_rms": "target-rms",
        "sample_rate_hz": "sample-rate", "noise_directions": "noise-directions",
    }
    lines = []
    for key in sorted(settings):
        value = settings[key]
        value = value if isinstance(value, (tuple, list)) else (value,)
        lines.append(" ".join([names[key]] + [repr(v) for v in value]))
    for partition, fraction, splits in partitions:
        lines.append("partition %s playback %r" % (partition, fraction))
        lines += ["  %s %d" % (s, splits[s]) for s in SPLITS if s in splits]
    return "\n".join(lines) + "\n"


# Audio

def read_wav(path, sample_rate=None):
    """
    Reads a 16-bit PCM WAV file into a (channels, samples) float64 array in
    [-1, 1). If sample_rate is given, the file must match it.
    """
    try:
        data, rate = soundfile.read(path, dtype="int16", always_2d=True)
    except RuntimeError as e:
        raise FormatError("%s: %s" % (path, e))
    if sample_rate is not None and rate != sample_rate:
        raise FormatError("%s has sample rate %d, expected %d" % (path, rate, sample_rate))
    return data.T.astype(np.float64) / 32768.0


def write_wav(path, pcm, sample_rate):
    """
    Writes a (channels, samples) array of samples in [-1, 1] as 16-bit PCM.
    """
    pcm = np.atleast_2d(np.asarray(pcm, dtype=np.float64))
    data = np.clip(np.round(pcm * 32768.0), -32768, 32767).astype(np.int16)
    soundfile.write(path, data.T, sample_rate, subtype="PCM_16", format="WAV")


# Reports

def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
