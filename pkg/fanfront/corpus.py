"""
Synthetic multi-channel corpora. Each utterance is a scene: a far-field
target of band-limited noise whose bands identify its class, a diffuse noise
field scaled to a requested SNR and, for some utterances, a loud near-field
playback interferer (band-limited noise of another class) next to microphone
0. The components are rendered separately, so the SNR label of every
utterance is exact.

A corpus is described by a CorpusRecipe: settings plus partitions, each with
a playback fraction and per-split utterance counts. build_corpus renders a
recipe into WAV files and a manifest; every utterance draws from its own
random stream, seeded by (corpus seed, utterance index), so the output does
not depend on how many threads render it.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from fanfront import formats
from fanfront.array import ArrayGeometry, LookDirection, delays
from fanfront.fe import hz_to_mel, mel_to_hz
from fanfront.formats import ManifestEntry, SPLITS
from fanfront.frontend import FrameConfig
from fanfront.options import Options

logger = logging.getLogger(__name__)

PLAYBACK_DISTANCE = 0.05
DELAY_TAPS = 32
SNR_BUCKETS = ("<=5dB", "5-15dB", ">15dB")
MANIFEST_NAME = "manifest.tsv"


class CorpusError(ValueError):
    pass


class Partition(object):
    """
    A named group of utterances sharing a playback fraction, with an
    utterance count per split.
    """
    def __init__(self, name, playback_fraction, splits):
        self.name = name
        self.playback_fraction = float(playback_fraction)
        self.splits = dict(splits)
        if not 0 <= self.playback_fraction <= 1:
            raise CorpusError("partition %s: playback fraction must lie in [0, 1]" % name)
        for split, count in self.splits.items():
            if split not in SPLITS:
                raise CorpusError("partition %s: unknown split %r" % (name, split))
            if count < 0:
                raise CorpusError("partition %s: negative count for %s" % (name, split))

    def playback_count(self, split):
        """
        The exact number of playback utterances in split.
        """
        return int(round(self.playback_fraction * self.splits.get(split, 0)))

    @property
    def total(self):
        return sum(self.splits.values())

    def _key(self):
        return (self.name, self.playback_fraction, tuple(sorted(self.splits.items())))

    def __eq__(self, other):
        return isinstance(other, Partition) and self._key() == other._key()

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return "Partition(%s, playback %g, %s)" % (self.name, self.playback_fraction,
                ", ".join("%s=%d" % (s, self.splits[s]) for s in SPLITS if s in self.splits))


class CorpusRecipe(Options):
    """
    What build_corpus renders. snr_db and playback_level_db are (low, high)
    ranges sampled uniformly; the playback level is relative to the target.
    Class c of C owns mel bands c and c + C of 2C equal-width mel bands
    spanning band_range_hz.
    """
    defaults = {
        "classes": 6,
        "duration_s": 0.5,
        "snr_db": (-5.0, 25.0),
        "playback_level_db": (-5.0, 10.0),
        "target_rms": 0.03,
        "sample_rate_hz": 16000,
        "noise_directions": 64,
        "band_range_hz": (200.0, 6000.0),
        "partitions": (),
    }

    def check(self):
        self.require(int(self.classes) >= 1, "classes must be at least 1")
        self.require(self.duration_s > 0, "duration_s must be positive")
        for name in ("snr_db", "playback_level_db", "band_range_hz"):
            low, high = self[name]
            self.require(low <= high, "%s range is empty" % name)
        self.require(self.target_rms >= 0, "target_rms must be non-negative")
        self.require(self.noise_directions >= 1, "noise_directions must be at least 1")
        self.require(0 < self.band_range_hz[0] and
                self.band_range_hz[1] < self.sample_rate_hz / 2.0,
                "band_range_hz must lie strictly inside (0, Nyquist)")
        names = [p.name for p in self.partitions]
        self.require(len(set(names)) == len(names), "partition names must be unique")

    @classmethod
    def default(cls, **overrides):
        """
        Two partitions: set1 (train, dev and test) with playback in 10% of
        the utterances and set2 (dev and test) with playback in all of them.
        """
        return cls({"partitions": (
            Partition("set1", 0.1, {"train": 600, "dev": 150, "test": 150}),
            Partition("set2", 1.0, {"dev": 50, "test": 50}),
        )}, **overrides)

    @classmethod
    def trend(cls, **overrides):
        """
        The six-class corpus the trend experiment trains on: 600/150/150
        utterances, SNR in [-5, 25] dB, playback in 30%.
        """
        return cls({"classes": 6, "snr_db": (-5.0, 25.0), "partitions": (
            Partition("trend", 0.3, {"train": 600, "dev": 150, "test": 150}),
        )}, **overrides)

    @classmethod
    def parse(cls, text):
        settings, partitions = formats.parse_recipe(text)
        settings["partitions"] = tuple(Partition(*p) for p in partitions)
        return cls(settings)

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.parse(f.read())

    def format(self):
        settings = dict((k, v) for k, v in self if k not in ("partitions", "band_range_hz"))
        return formats.format_recipe(settings, [(p.name, p.playback_fraction, p.splits)
                for p in self.partitions])

    @property
    def total(self):
        return sum(p.total for p in self.partitions)

    def frame_config(self):
        return FrameConfig(sample_rate_hz=self.sample_rate_hz)


class Playback(object):
    """
    A near-field interferer: band-limited noise in the bands of class_id,
    level_db above the target, distance meters outward from microphone 0.
    """
    def __init__(self, class_id, bands, level_db, distance=PLAYBACK_DISTANCE):
        self.class_id = int(class_id)
        self.bands = list(bands)
        self.level_db = float(level_db)
        self.distance = float(distance)

    def __repr__(self):
        return "Playback(class %d, %+.1f dB)" % (self.class_id, self.level_db)


class SyntheticScene(object):
    """
    Everything needed to render one utterance. bands are (low, high) Hz
    pairs; seed is an int or a sequence of ints for numpy's SeedSequence.
    """
    def __init__(self, class_id, target_direction, bands, snr_db, duration_s, seed,
                 playback=None, target_rms=0.03, noise_directions=64):
        if not duration_s > 0:
            raise CorpusError("duration_s must be positive, not %r" % duration_s)
        if np.isnan(snr_db) or snr_db == -np.inf:
            raise CorpusError("snr_db must be finite or +inf, not %r" % snr_db)
        self.class_id = int(class_id)
        self.target_direction = target_direction
        self.bands = list(bands)
        self.snr_db = float(snr_db)
        self.duration_s = float(duration_s)
        self.seed = seed
        self.playback = playback
        self.target_rms = float(target_rms)
        self.noise_directions = int(noise_directions)

    def __repr__(self):
        return "SyntheticScene(class %d from %r, %.1f dB, %s)" % (self.class_id,
                self.target_direction, self.snr_db, self.playback or "no playback")


class RenderedScene(object):
    """
    The separately rendered components of a scene, each (M, L), and the
    clipped mixture. mixture_raw is their exact sum.
    """
    def __init__(self, target, noise, playback, clip_count):
        self.target = target
        self.noise = noise
        self.playback = playback
        self.mixture_raw = target + noise + playback
        self.mixture = np.clip(self.mixture_raw, -1.0, 1.0)
        self.clip_count = clip_count

    @property
    def snr_db(self):
        """
        Oracle SNR of the target against everything else.
        """
        return oracle_snr(self.target, self.noise + self.playback)


def class_bands(class_id, classes, band_range_hz=(200.0, 6000.0)):
    """
    The (low, high) Hz bands of class_id: bands c and c + C of 2C equal
    mel-width bands.
    """
    if not 0 <= class_id < classes:
        raise CorpusError("class %d out of range for %d classes" % (class_id, classes))
    edges = mel_to_hz(np.linspace(hz_to_mel(band_range_hz[0]), hz_to_mel(band_range_hz[1]),
            2 * classes + 1))
    return [(edges[b], edges[b + 1]) for b in (class_id, class_id + classes)]


def band_limited_noise(rng, bands, length, sample_rate):
    """
    Gaussian noise of unit RMS (zero if bands cover no DFT bin) keeping only
    the frequencies inside bands.
    """
    spectrum = np.fft.rfft(rng.standard_normal(length))
    freqs = np.fft.rfftfreq(length, 1.0 / sample_rate)
    mask = np.zeros(freqs.shape, dtype=bool)
    for low, high in bands:
        mask |= (freqs >= low) & (freqs <= high)
    x = np.fft.irfft(spectrum * mask, n=length)
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def fractional_delay(x, delay, taps=DELAY_TAPS):
    """
    Delays x by delay samples (any real number) with a Hann-windowed sinc
    interpolator of the given length for the fractional part. The output
    has the length of x; samples shifted in from outside are zero.
    """
    whole = int(np.floor(delay))
    frac = delay - whole
    half = taps // 2
    n = np.arange(taps) - half - frac
    h = np.sinc(n) * (0.5 + 0.5 * np.cos(np.pi * np.clip(n / half, -1.0, 1.0)))
    y = np.convolve(x, h)[half:half + len(x)]
    out = np.zeros_like(y)
    if abs(whole) >= len(y):
        return out
    if whole >= 0:
        out[whole:] = y[:len(y) - whole]
    else:
        out[:whole] = y[-whole:]
    return out


def fibonacci_sphere(count):
    """
    count nearly uniformly spread unit vectors.
    """
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(1.0 - z ** 2)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def diffuse_noise(geometry, length, sample_rate, rng, directions=64):
    """
    A spherically isotropic noise field: independent white noise plane
    waves from directions points of a Fibonacci sphere, delayed exactly (in
    the frequency domain) at each microphone and summed. Returns (M, L) with
    unit expected power per channel.
    """
    omegas = 2 * np.pi * np.fft.rfftfreq(length, 1.0 / sample_rate)
    centered = geometry.centered()
    total = np.zeros((geometry.num_mics, omegas.size), dtype=np.complex128)
    for u in fibonacci_sphere(directions):
        tau = -centered.dot(u) / geometry.speed_of_sound
        source = np.fft.rfft(rng.standard_normal(length))
        total += source[np.newaxis, :] * np.exp(-1j * np.outer(tau, omegas))
    return np.fft.irfft(total, n=length, axis=1) / np.sqrt(directions)


def _power(x):
    return float(np.mean(x ** 2)) if x.size else 0.0


def render_target(scene, geometry, sample_rate, length, rng):
    source = band_limited_noise(rng, scene.bands, length, sample_rate) * scene.target_rms
    tau = delays(geometry, scene.target_direction) * sample_rate
    return np.stack([fractional_delay(source, t) for t in tau])


def render_playback(playback, geometry, sample_rate, length, rng):
    """
    The playback interferer before level scaling: spherical spreading
    (amplitude falls as 1/distance) and propagation delays relative to the
    closest microphone.
    """
    offset = geometry.positions[0] - geometry.centroid
    norm = np.sqrt(offset.dot(offset))
    outward = offset / norm if norm > 0 else np.array([1.0, 0.0, 0.0])
    position = geometry.positions[0] + playback.distance * outward
    distance = np.sqrt(np.sum((geometry.positions - position) ** 2, axis=1))
    nearest = distance.min()
    source = band_limited_noise(rng, playback.bands, length, sample_rate)
    return np.stack([fractional_delay(source, (d - nearest) / geometry.speed_of_sound
            * sample_rate) * (nearest / d) for d in distance])


def synthesize_scene(scene, geometry, cfg):
    """
    Renders scene on geometry at cfg's sample rate. The target keeps its
    RMS (averaged over channels); diffuse noise is scaled to scene.snr_db
    below it and the playback, if any, to playback.level_db above it.
    Mixture samples outside [-1, 1] are clipped and counted.
    """
    rate = cfg.sample_rate_hz
    length = int(round(scene.duration_s * rate))
    if length < 1:
        raise CorpusError("scene is shorter than one sample")
    rng = np.random.default_rng(scene.seed)
    target = render_target(scene, geometry, rate, length, rng)
    target_power = _power(target)
    noise = diffuse_noise(geometry, length, rate, rng, scene.noise_directions)
    if np.isinf(scene.snr_db):
        noise = np.zeros_like(noise)
    elif target_power == 0:
        raise CorpusError("unsatisfiable SNR: the target is silent, so no noise "
                "level gives %.1f dB" % scene.snr_db)
    else:
        noise *= np.sqrt(target_power / (_power(noise) * 10 ** (scene.snr_db / 10.0)))
    playback = np.zeros_like(target)
    if scene.playback is not None:
        playback = render_playback(scene.playback, geometry, rate, length, rng)
        playback_power = _power(playback)
        if playback_power > 0:
            playback *= np.sqrt(target_power * 10 ** (scene.playback.level_db / 10.0)
                    / playback_power)
    raw = target + noise + playback
    clip_count = int(np.sum(np.abs(raw) > 1.0))
    if clip_count:
        logger.warning("clipped %d samples of %r", clip_count, scene)
    return RenderedScene(target, noise, playback, clip_count)


def oracle_snr(target, noise):
    """
    10 log10 of the target energy over the noise energy; +inf when the
    noise is silent.
    """
    target = np.asarray(target, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if target.shape != noise.shape:
        raise CorpusError("target and noise tracks differ in shape: %s and %s"
                % (target.shape, noise.shape))
    noise_energy = np.sum(noise ** 2)
    if noise_energy == 0:
        return np.inf
    target_energy = np.sum(target ** 2)
    if target_energy == 0:
        return -np.inf
    return 10.0 * np.log10(target_energy / noise_energy)


def snr_bucket(snr_db):
    """
    >>> [snr_bucket(s) for s in (0.0, 5.0, 10.0, 20.0)]
    ['<=5dB', '<=5dB', '5-15dB', '>15dB']
    """
    if snr_db <= 5.0:
        return SNR_BUCKETS[0]
    if snr_db <= 15.0:
        return SNR_BUCKETS[1]
    return SNR_BUCKETS[2]


class PlannedUtterance(object):
    def __init__(self, index, partition, split, class_id, playback):
        self.index = index
        self.partition = partition
        self.split = split
        self.class_id = class_id
        self.playback = playback

    @property
    def path(self):
        return "%s/%s/utt_%05d.wav" % (self.partition, self.split, self.index)


def plan_corpus(recipe, seed):
    """
    Lists the utterances of recipe in render order. Classes cycle within
    each split; exactly round(fraction * count) utterances of each split
    get playback, chosen at random.
    """
    planned = []
    for p, partition in enumerate(recipe.partitions):
        for s, split in enumerate(SPLITS):
            count = partition.splits.get(split, 0)
            flags = np.zeros(count, dtype=bool)
            rng = np.random.default_rng([seed, p, s])
            flags[rng.permutation(count)[:partition.playback_count(split)]] = True
            for j in range(count):
                planned.append(PlannedUtterance(len(planned), partition.name, split,
                        j % recipe.classes, bool(flags[j])))
    return planned


def draw_scene(recipe, utterance, seed):
    """
    The scene for a planned utterance, drawn from the utterance's own
    random stream.
    """
    rng = np.random.default_rng([seed, utterance.index, 0])
    direction = LookDirection(rng.uniform(0, 2 * np.pi))
    snr = rng.uniform(*recipe.snr_db)
    playback = None
    if utterance.playback:
        other = utterance.class_id
        if recipe.classes > 1:
            other = (utterance.class_id + 1 + rng.integers(recipe.classes - 1)) % recipe.classes
        playback = Playback(other, class_bands(other, recipe.classes, recipe.band_range_hz),
                rng.uniform(*recipe.playback_level_db))
    return SyntheticScene(utterance.class_id, direction,
            class_bands(utterance.class_id, recipe.classes, recipe.band_range_hz),
            snr, recipe.duration_s, [seed, utterance.index, 1], playback,
            recipe.target_rms, recipe.noise_directions)


def build_corpus(recipe, out_dir, seed, geometry=None, threads=1):
    """
    Renders recipe into out_dir: one WAV per utterance at
    <partition>/<split>/utt_<index>.wav and a manifest.tsv listing them with
    their oracle SNR. Returns the manifest entries.
    """
    geometry = geometry or ArrayGeometry.default()
    cfg = recipe.frame_config()
    planned = plan_corpus(recipe, seed)

    def render(utterance):
        scene = draw_scene(recipe, utterance, seed)
        rendered = synthesize_scene(scene, geometry, cfg)
        path = os.path.join(out_dir, utterance.path)
        try:
            os.makedirs(os.path.dirname(path), exist_ok=True)
            formats.write_wav(path, rendered.mixture, cfg.sample_rate_hz)
        except (OSError, RuntimeError) as e:
            raise CorpusError("cannot write %s: %s" % (path, e))
        return ManifestEntry(utterance.path, utterance.class_id, rendered.snr_db,
                utterance.playback, utterance.split)

    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise CorpusError("cannot create %s: %s" % (out_dir, e))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        entries = list(executor.map(render, planned))
    try:
        formats.write_manifest(os.path.join(out_dir, MANIFEST_NAME), entries)
    except OSError as e:
        raise CorpusError("cannot write the manifest: %s" % e)
    for partition in recipe.partitions:
        logger.info("wrote partition %s: %d utterances", partition.name, partition.total)
    return entries


def bucket_counts(entries):
    """
    Counts entries per (partition, split, SNR bucket, playback flag), as a
    sorted list of (key, count) pairs.
    """
    counts = {}
    for entry in entries:
        key = (entry.partition, entry.split, snr_bucket(entry.snr_db), entry.playback)
        counts[key] = counts.get(key, 0) + 1
    return sorted(counts.items())
