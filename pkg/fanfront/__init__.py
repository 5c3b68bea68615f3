"""
fanfront: trainable multi-channel acoustic front-ends.

The package models a small circular microphone array, turns multi-channel
audio into normalized DFT features, and builds the multi-channel (MC)
modules that map those features to one real value per frequency bin: block
affine transforms (BAT) initialized from superdirective beamformers, and
frequency aligned networks (FAN) that share a few real filters across every
bin so that no bin can influence another. A feature-extraction layer
initialized as a mel filterbank and a small classifier complete the network,
which is trained stage by stage with Adam on synthetic corpora.

Modules:

 * fanfront.frontend: framing, DFT features, GMVN and LFR stacking
 * fanfront.array: geometry, steering vectors, superdirective weights
 * fanfront.layers: BAT, FAN and the six MC variants
 * fanfront.fe: the mel-initialized feature-extraction layer
 * fanfront.network: the full pipeline, backward pass, gradient check, Adam
 * fanfront.training: datasets, stage-wise training, evaluation reports
 * fanfront.corpus: synthetic multi-channel corpora
 * fanfront.formats: feature, checkpoint, geometry, manifest and recipe files
 * fanfront.cli: the fanfront command

Here's the parameter budget that motivates FAN, at the default sizes (12
look directions, 127 bins, 24 filters):

>>> from fanfront.layers import LayerConfig, assemble_variant, parameter_count
>>> config = LayerConfig(init="random")
>>> assemble_variant("bat-fan-avg", config).layer("fan").parameter_counts()["filters"]
288
>>> sum(assemble_variant("bat-at", config).layer("affine").parameter_counts().values())
193675
"""

import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
