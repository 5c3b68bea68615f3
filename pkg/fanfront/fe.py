"""
The feature-extraction layer: an affine map initialized with a mel
filterbank, followed by a ReLU and a floored logarithm. At initialization, fed
a power spectrum, it computes log filterbank energies (LFBEs).
"""

import logging

import numpy as np

from fanfront import static

logger = logging.getLogger(__name__)

DEFAULT_FILTERS = 64
DEFAULT_FMIN = 60.0
DEFAULT_FMAX = 7600.0
DEFAULT_LOG_FLOOR = 1e-7


class FeError(ValueError):
    pass


def hz_to_mel(f):
    """
    >>> round(float(hz_to_mel(700.0)), 2)
    781.17
    """
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def bin_frequencies(bins, sample_rate):
    """
    Center frequencies of front-end bins 1..K, where bin K + 1 is Nyquist.
    """
    return np.arange(1, bins + 1) * (sample_rate / 2.0) / (bins + 1)


def mel_filterbank_init(bins, filters, sample_rate, fmin=DEFAULT_FMIN, fmax=DEFAULT_FMAX):
    """
    An (F, K) matrix of triangular filters whose centers are equally spaced
    on the mel scale between fmin and fmax. Neighboring filters overlap by
    half; each triangle rises from 0 at the previous center to 1 at its own
    and falls back to 0 at the next, and is sampled at the bin centers.
    """
    if not (filters >= 1 and bins >= 1):
        raise FeError("need at least one filter and one bin")
    if not 0 <= fmin < fmax <= sample_rate / 2.0:
        raise FeError("band edges must satisfy 0 <= fmin < fmax <= %g, got %g and %g"
                % (sample_rate / 2.0, fmin, fmax))
    edges = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), filters + 2)
    mels = hz_to_mel(bin_frequencies(bins, sample_rate))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (mels[None, :] - lower) / (center - lower)
    falling = (upper - mels[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.max(axis=1) == 0)
    if empty.size:
        logger.warning("%d of %d mel filters cover no bin (first: filter %d); "
                "consider fewer filters or a wider band", empty.size, filters, empty[0])
    return weights


class FeLayer(object):
    """
    out = log(max(W z + b, 0) + log_floor), W of shape (F, K). Follows the
    layer protocol of fanfront.layers: forward returns (out, cache), backward
    returns (grad_z, grads).
    """
    name = "fe"

    def __init__(self, weights, biases=None, log_floor=DEFAULT_LOG_FLOOR):
        weights = np.array(weights, dtype=np.float64)
        if biases is None:
            biases = np.zeros(weights.shape[0])
        biases = np.array(biases, dtype=np.float64)
        static.check_shapes(weights=(weights, static.Array("f", ("F", "K"))),
                biases=(biases, static.Array("f", ("F",))))
        if not log_floor > 0:
            raise FeError("log_floor must be positive, not %r" % log_floor)
        self.log_floor = float(log_floor)
        self.params = {"weights": weights, "biases": biases}

    @classmethod
    def from_mel(cls, bins, sample_rate, filters=DEFAULT_FILTERS, fmin=DEFAULT_FMIN,
                 fmax=DEFAULT_FMAX, log_floor=DEFAULT_LOG_FLOOR):
        return cls(mel_filterbank_init(bins, filters, sample_rate, fmin, fmax),
                log_floor=log_floor)

    @property
    def dims(self):
        """
        (F, K)
        """
        return self.params["weights"].shape

    def parameter_counts(self):
        return dict((k, v.size) for k, v in self.params.items())

    def forward(self, z):
        F, K = self.dims
        static.check_matches(z, static.Array("f", (None, K)), "FE input")
        h = z.dot(self.params["weights"].T) + self.params["biases"]
        r = np.maximum(h, 0.0)
        return np.log(r + self.log_floor), (z, h, r)

    def backward(self, grad_y, cache):
        z, h, r = cache
        grad_h = grad_y / (r + self.log_floor) * (h > 0)
        grads = {"weights": grad_h.T.dot(z), "biases": grad_h.sum(axis=0)}
        return grad_h.dot(self.params["weights"]), grads

    def kink_signature(self, cache):
        """
        The ReLU activation pattern of a forward pass.
        """
        return cache[1] > 0

    def __repr__(self):
        return "FeLayer(F=%d, K=%d, log_floor=%g)" % (self.dims + (self.log_floor,))


def fe_forward(z, layer):
    """
    Runs layer on a single K-vector, returning the F outputs.
    """
    return layer.forward(np.asarray(z, dtype=np.float64)[np.newaxis])[0][0]


def log_filterbank_energies(power, weights, log_floor=DEFAULT_LOG_FLOOR):
    """
    LFBE features log(W p + log_floor) of power spectra p (..., K), with
    (F, K) filterbank weights. These are the oracle features the classifier
    is first trained on, and what an FeLayer fresh from from_mel computes.
    """
    energies = np.asarray(power, dtype=np.float64).dot(np.asarray(weights).T)
    return np.log(np.maximum(energies, 0.0) + log_floor)
