"""
The trainable multi-channel layers and the six multi-channel (MC) module
variants assembled from them.

Every layer works on a batch. forward(x) returns (y, cache) and
backward(grad_y, cache) returns (grad_x, grads) where grads maps each of the
layer's parameter names to its gradient. Gradients of complex tensors are
packed as dL/d(real part) + j dL/d(imaginary part); a complex parameter is
two independent real parameters as far as training is concerned.

Shapes, with B the batch size:

 * multi-channel spectrum: (B, M, K) complex
 * BAT output: (B, D, K) complex; after the power operation (B, D, K) real
 * FAN output: (B, K) real
 * affine: (B, in) -> (B, out)

Variant tags are the command-line names: raw1ch, raw2ch, fan-max, bat-at,
bat-fan-max and bat-fan-avg.
"""

import logging

import numpy as np

from fanfront import static
from fanfront.options import Options

logger = logging.getLogger(__name__)


class LayerError(ValueError):
    pass


VARIANTS = ("raw1ch", "raw2ch", "fan-max", "bat-at", "bat-fan-max", "bat-fan-avg")

DISPLAY_NAMES = {
    "raw1ch": "Raw1ch",
    "raw2ch": "Raw2ch",
    "fan-max": "FanMax",
    "bat-at": "BatAt",
    "bat-fan-max": "BatFanMax",
    "bat-fan-avg": "BatFanAvg",
}

POOLING = ("average", "max")


def parameter_size(array):
    """
    The number of trainable real scalars in a parameter tensor; complex
    entries count twice.
    """
    return array.size * (2 if np.iscomplexobj(array) else 1)


def uniform_init(rng, shape, fan_in):
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer(object):
    """
    Base class of the layers. Subclasses keep their parameters in
    self.params, a dict of numpy arrays that the optimizer updates in place.
    """
    name = None

    def __init__(self):
        self.params = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_y, cache):
        raise NotImplementedError

    def parameter_counts(self):
        """
        A dict mapping each parameter name to its number of real scalars.
        """
        return dict((k, parameter_size(v)) for k, v in self.params.items())

    def __repr__(self):
        return "%s(%s)" % (type(self).__name__, ", ".join(
                "%s=%s" % (k, v.shape) for k, v in sorted(self.params.items())))


class BatLayer(Layer):
    """
    Block affine transform: for each look direction d and bin k,
    out[d, k] = w[d, k]^H x[:, k] + b[d, k]. weights has shape (D, K, M) and
    biases (D, K), both complex. Bin k of the output only sees bin k of the
    input.
    """
    name = "bat"

    def __init__(self, weights, biases=None):
        Layer.__init__(self)
        weights = np.array(weights, dtype=np.complex128)
        if biases is None:
            biases = np.zeros(weights.shape[:2], dtype=np.complex128)
        biases = np.array(biases, dtype=np.complex128)
        static.check_shapes(weights=(weights, static.Array("c", ("D", "K", "M"))),
                biases=(biases, static.Array("c", ("D", "K"))))
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
            raise LayerError("BAT parameters must be finite")
        self.params = {"weights": weights, "biases": biases}

    @classmethod
    def from_superdirective(cls, design):
        return cls(design.weights)

    @classmethod
    def random(cls, rng, directions, bins, channels):
        shape = (directions, bins, channels)
        weights = uniform_init(rng, shape, channels) + 1j * uniform_init(rng, shape, channels)
        return cls(weights)

    @property
    def dims(self):
        """
        (D, K, M)
        """
        return self.params["weights"].shape

    def forward(self, x):
        D, K, M = self.dims
        static.check_matches(x, static.Array("c", (None, M, K)), "BAT input")
        w = self.params["weights"]
        y = np.einsum("dkm,bmk->bdk", np.conj(w), x) + self.params["biases"]
        return y, x

    def backward(self, grad_y, x):
        w = self.params["weights"]
        grads = {
            "weights": np.einsum("bdk,bmk->dkm", np.conj(grad_y), x),
            "biases": grad_y.sum(axis=0),
        }
        grad_x = np.einsum("bdk,dkm->bmk", grad_y, w)
        return grad_x, grads


def power_op(z):
    """
    Squared magnitude. A complex array gives |z|^2 elementwise; a real array
    is read as interleaved (real, imaginary) pairs along its last axis, so a
    254-value view becomes 127 powers.

    >>> power_op(np.array([3.0, 4.0])).tolist()
    [25.0]
    """
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return z.real ** 2 + z.imag ** 2
    if z.ndim == 0 or z.shape[-1] % 2:
        raise LayerError("the paired real view needs an even number of values, "
                "got shape %s" % (z.shape,))
    pairs = z.reshape(z.shape[:-1] + (z.shape[-1] // 2, 2))
    return pairs[..., 0] ** 2 + pairs[..., 1] ** 2


class Power(Layer):
    name = "power"

    def forward(self, z):
        static.check_matches(z, static.Array("c"), "power input")
        return power_op(z), z

    def backward(self, grad_y, z):
        return 2.0 * grad_y * z, {}


class SelectChannel(Layer):
    """
    Passes one channel of a (B, M, K) spectrum through as (B, K).
    """
    name = "select"

    def __init__(self, channel=0):
        Layer.__init__(self)
        self.channel = channel

    def forward(self, x):
        return x[:, self.channel, :], x.shape

    def backward(self, grad_y, shape):
        grad_x = np.zeros(shape, dtype=grad_y.dtype)
        grad_x[:, self.channel, :] = grad_y
        return grad_x, {}


class Flatten(Layer):
    """
    Flattens (B, R, K) to (B, R*K). order "row" keeps rows together
    (channel-major, for per-channel power spectra); order "bin" keeps bins
    together with the rows varying fastest (bin-major, direction-minor, for
    the BAT power map).
    """
    name = "flatten"

    def __init__(self, order):
        Layer.__init__(self)
        if order not in ("row", "bin"):
            raise LayerError("unknown flatten order %r" % order)
        self.order = order

    def forward(self, x):
        if self.order == "bin":
            x = np.transpose(x, (0, 2, 1))
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_y, shape):
        grad_x = grad_y.reshape(shape)
        if self.order == "bin":
            grad_x = np.transpose(grad_x, (0, 2, 1))
        return grad_x, {}


class FanLayer(Layer):
    """
    Frequency aligned network: N real filters of length D shared by every
    bin, A[n, k] = w_n . Y[:, k] + b_n, pooled over the filters by average
    or max. Bin k of the output only sees column k of the input.
    """
    name = "fan"

    def __init__(self, filters, biases=None, pooling="average"):
        Layer.__init__(self)
        filters = np.array(filters, dtype=np.float64)
        if biases is None:
            biases = np.zeros(filters.shape[0])
        biases = np.array(biases, dtype=np.float64)
        static.check_shapes(filters=(filters, static.Array("f", ("N", "D"))),
                biases=(biases, static.Array("f", ("N",))))
        if pooling not in POOLING:
            raise LayerError("pooling must be one of %s, not %r" % (", ".join(POOLING), pooling))
        self.pooling = pooling
        self.params = {"filters": filters, "biases": biases}

    @classmethod
    def random(cls, rng, filters, directions, pooling):
        return cls(uniform_init(rng, (filters, directions), directions), pooling=pooling)

    @property
    def dims(self):
        """
        (N, D)
        """
        return self.params["filters"].shape

    def forward(self, y):
        N, D = self.dims
        static.check_matches(y, static.Array("f", (None, D, None)), "FAN input")
        a = (np.einsum("nd,bdk->bnk", self.params["filters"], y)
             + self.params["biases"][np.newaxis, :, np.newaxis])
        if self.pooling == "average":
            return a.mean(axis=1), (y, None)
        winners = np.argmax(a, axis=1)
        return np.take_along_axis(a, winners[:, np.newaxis, :], axis=1)[:, 0, :], (y, winners)

    def backward(self, grad_z, cache):
        y, winners = cache
        N, D = self.dims
        if winners is None:
            grad_a = np.repeat(grad_z[:, np.newaxis, :] / N, N, axis=1)
        else:
            grad_a = np.zeros((grad_z.shape[0], N, grad_z.shape[1]))
            np.put_along_axis(grad_a, winners[:, np.newaxis, :], grad_z[:, np.newaxis, :], axis=1)
        grads = {
            "filters": np.einsum("bnk,bdk->nd", grad_a, y),
            "biases": grad_a.sum(axis=(0, 2)),
        }
        return np.einsum("nd,bnk->bdk", self.params["filters"], grad_a), grads


def fan_forward(y, layer):
    """
    Runs a FanLayer on one (D, K) power map, returning the K pooled values.
    """
    return layer.forward(np.asarray(y)[np.newaxis])[0][0]


class AffineLayer(Layer):
    """
    y = W x + b with W of shape (out, in).
    """
    name = "affine"

    def __init__(self, weights, biases=None, name="affine"):
        Layer.__init__(self)
        weights = np.array(weights, dtype=np.float64)
        if biases is None:
            biases = np.zeros(weights.shape[0])
        biases = np.array(biases, dtype=np.float64)
        static.check_shapes(weights=(weights, static.Array("f", ("out", "in"))),
                biases=(biases, static.Array("f", ("out",))))
        self.name = name
        self.params = {"weights": weights, "biases": biases}

    @classmethod
    def random(cls, rng, inputs, outputs, name="affine"):
        return cls(uniform_init(rng, (outputs, inputs), inputs), name=name)

    @property
    def dims(self):
        """
        (out, in)
        """
        return self.params["weights"].shape

    def forward(self, x):
        static.check_matches(x, static.Array("f", (None, self.dims[1])), self.name + " input")
        return x.dot(self.params["weights"].T) + self.params["biases"], x

    def backward(self, grad_y, x):
        grads = {"weights": grad_y.T.dot(x), "biases": grad_y.sum(axis=0)}
        return grad_y.dot(self.params["weights"]), grads


def affine_forward(x, weights, biases):
    """
    W x + b for a single vector x.
    """
    return AffineLayer(weights, biases).forward(np.asarray(x, dtype=np.float64)[np.newaxis])[0][0]


def bat_forward(x, layer):
    """
    Runs a BatLayer on one (M, K) frame, returning the (D, K) output.
    """
    return layer.forward(np.asarray(x, dtype=np.complex128)[np.newaxis])[0][0]


class LayerConfig(Options):
    """
    Sizes and initialization of an MC module. channels is the number of
    microphones fed to the module (the diagonal pair by default);
    directions is D, the number of BAT look directions; filters is N, the
    number of FAN filters. init is "superdirective" or "random" and only
    affects the BAT weights.
    """
    defaults = {
        "bins": 127,
        "channels": 2,
        "directions": 12,
        "filters": 24,
        "init": "superdirective",
        "sigma2": 1e-2,
        "seed": 0,
    }

    def check(self):
        for name in ("bins", "channels", "directions", "filters"):
            self.require(int(self[name]) >= 1, "%s must be at least 1" % name)
        self.require(self.init in ("superdirective", "random"),
                "init must be superdirective or random, not %r" % self.init)
        self.require(self.sigma2 >= 0, "sigma2 must be non-negative")


class McVariant(object):
    """
    An assembled MC module: a chain of layers ending in a K-dimensional real
    output per frame.
    """
    def __init__(self, tag, layers, bins):
        if tag not in VARIANTS:
            raise LayerError("unknown variant %r; expected one of %s" % (tag, ", ".join(VARIANTS)))
        self.tag = tag
        self.layers = list(layers)
        self.bins = bins

    @property
    def display_name(self):
        return DISPLAY_NAMES[self.tag]

    @property
    def output_dim(self):
        # every variant maps a frame to one value per bin
        return self.bins

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def trainable_layers(self):
        return [layer for layer in self.layers if layer.params]

    def parameters(self):
        """
        A dict of every parameter, keyed "<layer>.<parameter>".
        """
        result = {}
        for layer in self.trainable_layers():
            for name, value in layer.params.items():
                result[layer.name + "." + name] = value
        return result

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, grad_y, caches):
        grads = {}
        for layer, cache in reversed(list(zip(self.layers, caches))):
            grad_y, layer_grads = layer.backward(grad_y, cache)
            for name, value in layer_grads.items():
                grads[layer.name + "." + name] = value
        return grad_y, grads

    def __repr__(self):
        return "McVariant(%s: %s)" % (self.display_name, " -> ".join(
                layer.name for layer in self.layers))


def assemble_variant(tag, config=None, init=None):
    """
    Builds one of the six MC modules. config is a LayerConfig (defaults if
    None). For the bat-* tags the BAT weights come from init, a
    SuperdirectiveWeights, when given; otherwise config.init must be
    "random". Parameters not taken from init are drawn uniformly from
    [-a, a] with a = sqrt(1/fan_in) using config.seed; biases start at zero.
    """
    config = config or LayerConfig()
    if tag not in VARIANTS:
        raise LayerError("unknown variant %r; expected one of %s" % (tag, ", ".join(VARIANTS)))
    rng = np.random.default_rng(config.seed)
    K, M, D, N = config.bins, config.channels, config.directions, config.filters
    if tag.startswith("bat"):
        if init is not None:
            bat = BatLayer.from_superdirective(init)
            if bat.dims != (D, K, M):
                raise LayerError("superdirective weights have shape %s, expected %s"
                        % (bat.dims, (D, K, M)))
        elif config.init == "random":
            bat = BatLayer.random(rng, D, K, M)
        else:
            raise LayerError("variant %s needs superdirective weights or init=random" % tag)
    if tag == "raw1ch":
        layers = [SelectChannel(0), Power(), AffineLayer.random(rng, K, K)]
    elif tag == "raw2ch":
        layers = [Power(), Flatten("row"), AffineLayer.random(rng, M * K, K)]
    elif tag == "fan-max":
        layers = [Power(), FanLayer.random(rng, N, M, "max")]
    elif tag == "bat-at":
        layers = [bat, Power(), Flatten("bin"), AffineLayer.random(rng, D * K, K)]
    elif tag == "bat-fan-max":
        layers = [bat, Power(), FanLayer.random(rng, N, D, "max")]
    else:
        layers = [bat, Power(), FanLayer.random(rng, N, D, "average")]
    variant = McVariant(tag, layers, K)
    logger.debug("assembled %r", variant)
    return variant


def rebuild_variant(tag, parameters, bins):
    """
    The inverse of McVariant.parameters: builds the variant tag around the
    given "<layer>.<parameter>" arrays, as read back from a checkpoint.
    """
    def get(name):
        try:
            return parameters[name]
        except KeyError:
            raise LayerError("variant %s needs a parameter named %s" % (tag, name))
    if tag not in VARIANTS:
        raise LayerError("unknown variant %r; expected one of %s" % (tag, ", ".join(VARIANTS)))
    layers = []
    if tag.startswith("bat"):
        layers += [BatLayer(get("bat.weights"), get("bat.biases")), Power()]
    elif tag == "raw1ch":
        layers += [SelectChannel(0), Power()]
    else:
        layers += [Power()]
    if tag in ("raw1ch", "raw2ch", "bat-at"):
        if tag != "raw1ch":
            layers.append(Flatten("bin" if tag == "bat-at" else "row"))
        layers.append(AffineLayer(get("affine.weights"), get("affine.biases")))
    else:
        pooling = "average" if tag == "bat-fan-avg" else "max"
        layers.append(FanLayer(get("fan.filters"), get("fan.biases"), pooling))
    return McVariant(tag, layers, bins)


def parameter_breakdown(variant):
    """
    Per-layer parameter counts as a list of (layer name, weights, biases,
    total) rows, in layer order. Complex parameters count twice.
    """
    rows = []
    for layer in variant.trainable_layers():
        counts = layer.parameter_counts()
        biases = counts.get("biases", 0)
        weights = sum(counts.values()) - biases
        rows.append((layer.name, weights, biases, weights + biases))
    return rows


def parameter_count(variant):
    """
    The exact number of trainable real scalars in variant.
    """
    return sum(row[3] for row in parameter_breakdown(variant))


def cross_bin_jacobian(variant, x, step=1e-3):
    """
    Measures how much each output bin of variant responds to a perturbation
    of each input bin of the frame x (M, K). Returns a (K, K) array J where
    J[j, k] is the largest |change in output bin j| / step over perturbations
    of the real and imaginary part of every channel at input bin k. A
    frequency-aligned module gives an exactly diagonal J.
    """
    x = np.asarray(x, dtype=np.complex128)
    M, K = x.shape
    base = variant.forward(x[np.newaxis])[0][0]
    jacobian = np.zeros((base.shape[0], K))
    for k in range(K):
        for m in range(M):
            for delta in (step, 1j * step):
                perturbed = x.copy()
                perturbed[m, k] += delta
                out = variant.forward(perturbed[np.newaxis])[0][0]
                jacobian[:, k] = np.maximum(jacobian[:, k], np.abs(out - base) / step)
    return jacobian
