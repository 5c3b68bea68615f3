import logging

import numpy as np

from fanfront import fe
from fanfront.fe import FeError, FeLayer
from fanfront.frontend import FrameConfig
from fanfront.static import StaticTypeError
from fanfront.testframework import TestSuite, check_close, check_raises

test = TestSuite()


@test(fe.hz_to_mel)
def test_mel_scale():
    check_close(fe.hz_to_mel(700.0), 781.17, 0.005)
    check_close(fe.hz_to_mel(0.0), 0.0, 0)
    frequencies = np.array([60.0, 1000.0, 7600.0])
    check_close(fe.mel_to_hz(fe.hz_to_mel(frequencies)), frequencies, 1e-9)
    check_close(fe.bin_frequencies(127, 16000), FrameConfig().bin_frequencies(), 1e-12)


@test(fe.mel_filterbank_init)
def test_single_filter_peaks_at_the_mel_midpoint():
    weights = fe.mel_filterbank_init(127, 1, 16000, fmin=0.0, fmax=8000.0)
    assert weights.shape == (1, 127)
    midpoint = fe.mel_to_hz(fe.hz_to_mel(8000.0) / 2)
    check_close(midpoint, 1768.0, 1.0)
    peak = fe.bin_frequencies(127, 16000)[np.argmax(weights[0])]
    assert abs(peak - midpoint) <= 62.5
    assert np.all(weights >= 0) and np.all(weights <= 1)


@test(fe.mel_filterbank_init)
def test_default_filterbank_covers_the_band():
    weights = fe.mel_filterbank_init(127, 64, 16000)
    assert weights.shape == (64, 127)
    assert np.all(weights >= 0) and np.all(weights <= 1)
    frequencies = fe.bin_frequencies(127, 16000)
    inside = (frequencies > fe.DEFAULT_FMIN) & (frequencies < fe.DEFAULT_FMAX)
    assert np.all(weights[:, inside].sum(axis=0) > 0)
    assert not weights[:, frequencies >= fe.DEFAULT_FMAX].any()
    # filter centers rise with the filter index
    covered = weights.max(axis=1) > 0
    peaks = np.argmax(weights[covered], axis=1)
    assert np.all(np.diff(peaks) >= 0)


@test(fe.mel_filterbank_init)
def test_empty_filters_are_only_a_warning():
    records = []

    class Collect(logging.Handler):
        def emit(self, record):
            records.append(record)
    handler = Collect()
    logger = logging.getLogger("fanfront.fe")
    level = logger.level
    logger.addHandler(handler)
    logger.setLevel(logging.WARNING)
    try:
        weights = fe.mel_filterbank_init(15, 40, 16000)
    finally:
        logger.removeHandler(handler)
        logger.setLevel(level)
    assert weights.shape == (40, 15)
    assert (weights.max(axis=1) == 0).any()
    assert any(record.levelno == logging.WARNING for record in records)


@test(fe.mel_filterbank_init)
def test_bad_band_edges():
    check_raises(FeError, fe.mel_filterbank_init, 127, 64, 16000, 500.0, 400.0)
    check_raises(FeError, fe.mel_filterbank_init, 127, 64, 16000, 60.0, 9000.0)
    check_raises(FeError, fe.mel_filterbank_init, 127, 64, 16000, -1.0, 7600.0)
    check_raises(FeError, fe.mel_filterbank_init, 127, 0, 16000)


@test(FeLayer)
def test_fresh_layer_computes_lfbes():
    layer = FeLayer.from_mel(127, 16000)
    assert layer.dims == (64, 127)
    power = np.random.default_rng(0).uniform(0, 4, (5, 127))
    out = layer.forward(power)[0]
    check_close(out, fe.log_filterbank_energies(power, layer.params["weights"]), 1e-12)
    check_close(fe.fe_forward(power[3], layer), out[3], 1e-12)
    # empty filters and silence sit at the floor
    check_close(layer.forward(np.zeros((1, 127)))[0], np.full((1, 64), np.log(1e-7)), 1e-12)


@test(FeLayer)
def test_relu_and_floor():
    layer = FeLayer(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0.0, 0.5]), log_floor=1e-3)
    out, cache = layer.forward(np.array([[2.0, 7.0]]))
    check_close(out, [[np.log(2.001), np.log(1e-3)]], 1e-12)
    grad_z, grads = layer.backward(np.ones((1, 2)), cache)
    # the clipped unit passes no gradient
    check_close(grads["biases"], [1 / 2.001, 0.0], 1e-12)
    check_close(grads["weights"], [[2 / 2.001, 7 / 2.001], [0.0, 0.0]], 1e-12)
    check_close(grad_z, [[1 / 2.001, 0.0]], 1e-12)
    assert layer.kink_signature(cache).tolist() == [[True, False]]


@test(FeLayer)
def test_fe_gradients():
    rng = np.random.default_rng(1)
    layer = FeLayer(rng.uniform(0.1, 1.0, (4, 6)), rng.uniform(0.0, 0.1, 4))
    z = rng.uniform(0.5, 2.0, (3, 6))
    upstream = rng.standard_normal((3, 4))

    def loss():
        return np.sum(upstream * layer.forward(z)[0])
    grad_z, grads = layer.backward(upstream, layer.forward(z)[1])
    h = 1e-6
    for value, analytic in [(z, grad_z), (layer.params["weights"], grads["weights"]),
                            (layer.params["biases"], grads["biases"])]:
        flat, expected = value.reshape(-1), analytic.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + h
            up = loss()
            flat[index] = original - h
            down = loss()
            flat[index] = original
            check_close((up - down) / (2 * h), expected[index], 1e-6)


@test(FeLayer)
def test_fe_checks():
    check_raises(FeError, FeLayer, np.ones((2, 3)), None, 0.0)
    check_raises(StaticTypeError, FeLayer, np.ones((2, 3)), np.zeros(3))
    layer = FeLayer(np.ones((2, 3)))
    check_raises(StaticTypeError, layer.forward, np.ones((4, 2)))
    assert layer.parameter_counts() == {"weights": 6, "biases": 2}
