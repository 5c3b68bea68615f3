"""
The full network (MC module, FE layer and a small feed-forward classifier),
its loss and reverse-mode gradients, a finite-difference gradient check and
the Adam optimizer.

A batch holds LFR stacks of normalized spectra, shape (B, f, M, K). The f
frames of a stack run through the MC module and FE layer with shared
parameters as f parallel streams, and their FE outputs are concatenated into
one f*F vector per stack for the classifier.

Which parameters take part depends on the training stage:

 * classifier_only: the classifier sees oracle LFBE features of channel 0;
 * fe_plus_classifier: the FE layer sees the channel 0 power spectrum;
 * joint: the whole pipeline, MC module included.

Parameter names are "<part>.<layer>.<parameter>", for instance
"mc.bat.weights", "fe.weights" or "classifier.hidden1.biases".
"""

import logging

import numpy as np

from fanfront import static
from fanfront.fe import FeLayer, log_filterbank_energies
from fanfront.frontend import WINDOWS, FrameConfig, GmvnStats
from fanfront.layers import (AffineLayer, LayerConfig, assemble_variant, power_op,
                             rebuild_variant)
from fanfront.options import Options

logger = logging.getLogger(__name__)

STAGES = ("classifier_only", "fe_plus_classifier", "joint")


class NetworkError(ValueError):
    pass


class NumericError(ArithmeticError):
    """
    Raised when a loss or gradient stops being finite.
    """
    pass


class AdamConfig(Options):
    defaults = {
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
    }

    def check(self):
        self.require(self.learning_rate > 0, "learning_rate must be positive")
        self.require(0 < self.beta1 < 1, "beta1 must lie in (0, 1)")
        self.require(0 < self.beta2 < 1, "beta2 must lie in (0, 1)")
        self.require(self.eps > 0, "eps must be positive")


class ToyClassifier(object):
    """
    Two affine + ReLU hidden layers and a softmax output layer over C
    classes.
    """
    def __init__(self, hidden1, hidden2, output):
        self.layers = [hidden1, hidden2, output]

    @classmethod
    def random(cls, rng, inputs, classes, width=128):
        return cls(AffineLayer.random(rng, inputs, width, "hidden1"),
                   AffineLayer.random(rng, width, width, "hidden2"),
                   AffineLayer.random(rng, width, classes, "output"))

    @property
    def inputs(self):
        return self.layers[0].dims[1]

    @property
    def classes(self):
        return self.layers[-1].dims[0]

    def parameters(self):
        result = {}
        for layer in self.layers:
            for name, value in layer.params.items():
                result[layer.name + "." + name] = value
        return result

    def forward(self, x):
        caches = []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x)
            pre = x
            if i < len(self.layers) - 1:
                x = np.maximum(x, 0.0)
            caches.append((cache, pre))
        return x, caches

    def backward(self, grad_logits, caches):
        grads = {}
        grad = grad_logits
        for i in reversed(range(len(self.layers))):
            cache, pre = caches[i]
            if i < len(self.layers) - 1:
                grad = grad * (pre > 0)
            grad, layer_grads = self.layers[i].backward(grad, cache)
            for name, value in layer_grads.items():
                grads[self.layers[i].name + "." + name] = value
        return grad, grads

    def kink_signature(self, caches):
        return [pre > 0 for cache, pre in caches[:-1]]

    def activate(self, x, margin=1.0):
        """
        Shifts the hidden biases so that every hidden unit is active by at
        least margin on each row of x. A classifier with no live unit on a
        batch outputs a constant there. Returns self.
        """
        for layer in self.layers[:-1]:
            pre = layer.forward(x)[0]
            layer.params["biases"] += margin - pre.min(axis=0)
            x = layer.forward(x)[0]
        return self


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def cross_entropy(logits, labels):
    """
    Mean cross-entropy of integer labels under softmax(logits), and the
    gradient of that mean with respect to the logits.
    """
    log_p = log_softmax(logits)
    count = logits.shape[0]
    loss = -log_p[np.arange(count), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(count), labels] -= 1.0
    return loss, grad / count


class ForwardCache(object):
    """
    Everything backward needs from a forward pass.
    """
    def __init__(self, stage, shape, mc_caches, fe_cache, classifier_caches,
                 loss_grad):
        self.stage = stage
        self.shape = shape
        self.mc_caches = mc_caches
        self.fe_cache = fe_cache
        self.classifier_caches = classifier_caches
        self.loss_grad = loss_grad


class Pipeline(object):
    """
    An MC module (fanfront.layers.McVariant), an FeLayer and a
    ToyClassifier, plus the GMVN statistics and frame settings the inputs
    were prepared with. Checkpoints store all of it.
    """
    def __init__(self, mc, fe, classifier, stats=None, frame_config=None, pair=(0, 1),
                 stage="joint"):
        if stage not in STAGES:
            raise NetworkError("unknown stage %r" % stage)
        if fe.dims[1] != mc.output_dim:
            raise NetworkError("FE layer expects %d bins but the MC module "
                    "produces %d" % (fe.dims[1], mc.output_dim))
        if classifier.inputs % fe.dims[0]:
            raise NetworkError("classifier input size %d isn't a multiple of the "
                    "FE output size %d" % (classifier.inputs, fe.dims[0]))
        self.mc = mc
        self.fe = fe
        self.classifier = classifier
        self.stats = stats
        self.frame_config = frame_config
        self.pair = tuple(pair)
        # the last training stage run; inference uses the same path
        self.stage = stage

    @classmethod
    def create(cls, mc, classes, lfr_factor, sample_rate, filters=64, width=128,
               seed=0, **fe_options):
        """
        A fresh pipeline around the MC module mc: a mel-initialized FE layer
        and a randomly initialized classifier for lfr_factor stacked frames.
        """
        fe = FeLayer.from_mel(mc.output_dim, sample_rate, filters, **fe_options)
        rng = np.random.default_rng([seed, 1])
        classifier = ToyClassifier.random(rng, lfr_factor * filters, classes, width)
        return cls(mc, fe, classifier)

    @property
    def lfr_factor(self):
        return self.classifier.inputs // self.fe.dims[0]

    @property
    def classes(self):
        return self.classifier.classes

    def parameters(self, stage="joint"):
        """
        The parameters trained in stage, as a dict of live arrays.
        """
        if stage not in STAGES:
            raise NetworkError("unknown stage %r" % stage)
        result = {}
        if stage == "joint":
            for name, value in self.mc.parameters().items():
                result["mc." + name] = value
        if stage != "classifier_only":
            for name, value in self.fe.params.items():
                result["fe." + name] = value
        for name, value in self.classifier.parameters().items():
            result["classifier." + name] = value
        return result

    def features(self, stacks, stage="joint"):
        """
        The classifier inputs (B, f*F) for a batch of stacks, with the cache
        backward needs.
        """
        if stage not in STAGES:
            raise NetworkError("unknown stage %r" % stage)
        static.check_matches(stacks, static.Array("c", (None, self.lfr_factor, None,
                self.fe.dims[1])), "stacks")
        B, f, M, K = stacks.shape
        frames = stacks.reshape(B * f, M, K)
        mc_caches = fe_cache = None
        if stage == "classifier_only":
            feats = log_filterbank_energies(power_op(frames[:, 0, :]),
                    self.fe.params["weights"], self.fe.log_floor)
        else:
            if stage == "joint":
                z, mc_caches = self.mc.forward(frames)
            else:
                z = power_op(frames[:, 0, :])
            feats, fe_cache = self.fe.forward(z)
        return feats.reshape(B, f * feats.shape[1]), (stacks.shape, mc_caches, fe_cache)

    def logits(self, stacks, stage="joint"):
        feats = self.features(stacks, stage)[0]
        return self.classifier.forward(feats)[0]

    def log_posteriors(self, stacks, stage="joint"):
        return log_softmax(self.logits(stacks, stage))

    def forward_loss(self, stacks, labels, stage="joint"):
        """
        Mean cross-entropy of the batch and the cache for backward.
        """
        labels = np.asarray(labels)
        if labels.shape != (stacks.shape[0],):
            raise NetworkError("need one label per stack")
        if labels.size and (labels.min() < 0 or labels.max() >= self.classes):
            raise NetworkError("labels must lie in [0, %d)" % self.classes)
        feats, (shape, mc_caches, fe_cache) = self.features(stacks, stage)
        logits, classifier_caches = self.classifier.forward(feats)
        loss, loss_grad = cross_entropy(logits, labels)
        if not np.isfinite(loss):
            raise NumericError("loss is not finite (%r)" % loss)
        return loss, ForwardCache(stage, shape, mc_caches, fe_cache, classifier_caches,
                loss_grad)

    def backward(self, cache):
        """
        Gradients of the loss for every parameter of the cache's stage,
        keyed like parameters(stage).
        """
        grads = {}
        grad, classifier_grads = self.classifier.backward(cache.loss_grad,
                cache.classifier_caches)
        for name, value in classifier_grads.items():
            grads["classifier." + name] = value
        if cache.stage == "classifier_only":
            return grads
        B, f, M, K = cache.shape
        grad, fe_grads = self.fe.backward(grad.reshape(B * f, -1), cache.fe_cache)
        for name, value in fe_grads.items():
            grads["fe." + name] = value
        if cache.stage == "joint":
            grad, mc_grads = self.mc.backward(grad, cache.mc_caches)
            for name, value in mc_grads.items():
                grads["mc." + name] = value
        return grads

    def kink_signature(self, cache):
        """
        The on/off pattern of every ReLU and the winners of every max
        pooling in a forward pass. Finite differences are only meaningful
        while this stays the same.
        """
        parts = self.classifier.kink_signature(cache.classifier_caches)
        if cache.fe_cache is not None:
            parts.append(self.fe.kink_signature(cache.fe_cache))
        if cache.mc_caches is not None:
            for layer, layer_cache in zip(self.mc.layers, cache.mc_caches):
                if getattr(layer, "pooling", None) == "max":
                    parts.append(layer_cache[1])
        return parts


def signatures_equal(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


class GradientCheck(object):
    """
    The outcome of checking one parameter tensor. relative_error is
    |analytic - numeric| / max(|analytic| + |numeric|, 1e-8) over the
    entries that were compared; skipped counts entries left out because the
    step crossed a kink at every step size tried.
    """
    def __init__(self, name, relative_error, entries, skipped, tolerance):
        self.name = name
        self.relative_error = relative_error
        self.entries = entries
        self.skipped = skipped
        self.tolerance = tolerance

    @property
    def passed(self):
        return self.relative_error < self.tolerance

    def __repr__(self):
        return "GradientCheck(%s: %.3g over %d entries, %d skipped, %s)" % (
                self.name, self.relative_error, self.entries, self.skipped,
                "passed" if self.passed else "FAILED")


def _real_view(array):
    return array.view(np.float64) if np.iscomplexobj(array) else array


def gradient_check(pipeline, stacks, labels, stage="joint", step=1e-4, tolerance=1e-4,
                   shrink=(1e-6, 1e-8)):
    """
    Compares backward against central differences for every scalar of every
    parameter trained in stage. Each numeric derivative combines central
    differences at step and step/2 by Richardson extrapolation. When a step
    changes the kink signature (a ReLU flips or a max-pooling winner
    changes), smaller steps from shrink are tried and the entry is skipped
    if all of them cross the kink.
    """
    loss, cache = pipeline.forward_loss(stacks, labels, stage)
    signature = pipeline.kink_signature(cache)
    analytic = pipeline.backward(cache)
    results = []

    def central(flat, index, h):
        original = flat[index]
        values = []
        for sign in (1, -1):
            flat[index] = original + sign * h
            shifted_loss, shifted_cache = pipeline.forward_loss(stacks, labels, stage)
            if not signatures_equal(signature, pipeline.kink_signature(shifted_cache)):
                flat[index] = original
                return None
            values.append(shifted_loss)
        flat[index] = original
        return (values[0] - values[1]) / (2 * h)

    for name, value in sorted(pipeline.parameters(stage).items()):
        flat = _real_view(value).reshape(-1)
        expected = _real_view(np.ascontiguousarray(analytic[name])).reshape(-1)
        numeric = np.zeros_like(flat)
        keep = np.ones(flat.shape, dtype=bool)
        for index in range(flat.size):
            estimate = None
            for h in (step,) + tuple(shrink):
                coarse = central(flat, index, h)
                fine = central(flat, index, h / 2) if coarse is not None else None
                if fine is not None:
                    estimate = (4 * fine - coarse) / 3
                    break
            if estimate is None:
                keep[index] = False
            else:
                numeric[index] = estimate
        skipped = int(np.sum(~keep))
        if skipped:
            logger.warning("%s: skipped %d of %d entries at kinks", name, skipped, flat.size)
        a, n = expected[keep], numeric[keep]
        error = np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-8)
        results.append(GradientCheck(name, error, int(keep.sum()), skipped, tolerance))
    return results


def tiny_instance(tag, seed=0, batch=4, lfr_factor=2):
    """
    A small randomly initialized pipeline for variant tag (M=2, D=3, K=5,
    N=2, F=3, C=2, classifier width 6) with a batch of random stacks and
    labels: big enough to exercise every code path, small enough to
    gradient-check in well under a second. The classifier's hidden units
    start active on the batch.
    """
    config = LayerConfig(bins=5, channels=2, directions=3, filters=2, init="random",
            seed=seed)
    pipeline = Pipeline.create(assemble_variant(tag, config), 2, lfr_factor, 16000,
            filters=3, width=6, seed=seed)
    rng = np.random.default_rng([seed, 3])
    shape = (batch, lfr_factor, 2, 5)
    stacks = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    labels = rng.integers(0, 2, size=batch)
    pipeline.classifier.activate(pipeline.features(stacks)[0])
    return pipeline, stacks, labels


class AdamState(object):
    """
    First and second moment estimates and step counts, per parameter name.
    Moments of complex parameters are kept for their real view.
    """
    def __init__(self):
        self.m = {}
        self.v = {}
        self.steps = {}

    def copy(self):
        other = AdamState()
        other.m = dict((k, v.copy()) for k, v in self.m.items())
        other.v = dict((k, v.copy()) for k, v in self.v.items())
        other.steps = dict(self.steps)
        return other


def adam_step(params, grads, state, cfg, names=None):
    """
    One bias-corrected Adam update of params (a dict of arrays, updated in
    place) from grads. Only the parameters in names are touched (all of them
    by default); each keeps its own step count so that parameters unfrozen
    later still get the right bias correction. Returns (params, state).
    """
    for name in sorted(params if names is None else names):
        g = _real_view(np.ascontiguousarray(grads[name]))
        if not np.all(np.isfinite(g)):
            raise NumericError("gradient of %s is not finite" % name)
        p = _real_view(params[name])
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
            state.steps[name] = 0
        state.steps[name] += 1
        t = state.steps[name]
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return params, state


def pipeline_state(pipeline):
    """
    Flattens a pipeline into (name, array, trainable) entries in declaration
    order: MC module, FE layer and classifier parameters, then the
    non-trainable state (log floor, bin count, microphone pair, GMVN
    statistics and frame settings, the window stored as its index in
    WINDOWS). This is what a checkpoint stores.
    """
    entries = [(name, value, True) for name, value in pipeline.parameters("joint").items()]
    state = [
        ("fe.log_floor", [pipeline.fe.log_floor]),
        ("mc.bins", [pipeline.mc.bins]),
        ("pair", list(pipeline.pair)),
        ("stage", [STAGES.index(pipeline.stage)]),
    ]
    if pipeline.stats is not None:
        stats = pipeline.stats
        state += [
            ("gmvn.mean", stats.mean),
            ("gmvn.raw_variance", stats.raw_variance),
            ("gmvn.frame_count", [stats.frame_count]),
            ("gmvn.variance_floor", [stats.variance_floor]),
        ]
    if pipeline.frame_config is not None:
        for name, value in pipeline.frame_config:
            if name == "window":
                value = WINDOWS.index(value)
            state.append(("frame." + name, [value]))
    entries += [(name, np.asarray(value, dtype=np.float64), False) for name, value in state]
    return entries


def pipeline_from_state(tag, entries):
    """
    Rebuilds a pipeline from a dict of the arrays pipeline_state produced.
    """
    def scalar(name):
        return entries[name].reshape(-1)[0]
    try:
        mc = rebuild_variant(tag, dict((name[3:], value) for name, value in entries.items()
                if name.startswith("mc.") and name != "mc.bins"), int(scalar("mc.bins")))
        fe = FeLayer(entries["fe.weights"], entries["fe.biases"], float(scalar("fe.log_floor")))
        classifier = ToyClassifier(*[AffineLayer(entries["classifier.%s.weights" % layer],
                entries["classifier.%s.biases" % layer], layer)
                for layer in ("hidden1", "hidden2", "output")])
        pair = tuple(int(i) for i in entries["pair"])
    except KeyError as e:
        raise NetworkError("checkpoint has no entry named %s" % e)
    stats = frame_config = None
    if "gmvn.mean" in entries:
        stats = GmvnStats(entries["gmvn.mean"], entries["gmvn.raw_variance"],
                int(scalar("gmvn.frame_count")), float(scalar("gmvn.variance_floor")))
    frame_names = [name for name in entries if name.startswith("frame.")]
    if frame_names:
        values = {}
        for name in frame_names:
            key = name[len("frame."):]
            value = scalar(name)
            if key == "window":
                if value not in range(len(WINDOWS)):
                    raise NetworkError("checkpoint window index %r is not one of 0..%d"
                            % (value, len(WINDOWS) - 1))
                values[key] = WINDOWS[int(value)]
            else:
                values[key] = float(value) if key == "variance_floor" else int(value)
        frame_config = FrameConfig(values)
    stage = STAGES[int(scalar("stage"))] if "stage" in entries else "joint"
    return Pipeline(mc, fe, classifier, stats, frame_config, pair, stage)
