#!/usr/bin/env python

from setuptools import setup

setup(
    name="fanfront",
    version="0.1.0",
    description="Trainable multi-channel acoustic front-ends with frequency aligned networks.",
    long_description=
"""
**fanfront** models a small circular microphone array and the trainable
front-ends that turn its multi-channel DFT features into one real value per
frequency bin: block affine transforms (BAT) initialized from superdirective
beamformers, and frequency aligned networks (FAN) that share a handful of
real filters across every bin so that no bin can influence another.

A mel-initialized feature-extraction layer and a small classifier complete
the network, which is trained stage by stage with Adam. Since no public
multi-channel corpus fits in a test suite, fanfront also renders synthetic
ones: band-limited targets, spherically diffuse noise and an optional
playback interferer next to one microphone.

The command line covers the whole loop::

    fanfront simulate --out corpus
    fanfront train --manifest corpus/manifest.tsv --variant bat-fan-max --checkpoint fan.fanc
    fanfront train --manifest corpus/manifest.tsv --variant raw1ch --checkpoint raw.fanc
    fanfront eval --manifest corpus/manifest.tsv --checkpoint fan.fanc --baseline-checkpoint raw.fanc

and ``fanfront params --variant bat-fan-avg`` prints the parameter budget
that motivates FAN.
""",
    classifiers=[
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Multimedia :: Sound/Audio :: Speech",
        "Topic :: Scientific/Engineering"
    ],
    packages=["fanfront", "fanfront.tests"],
    python_requires=">=3.6",
    install_requires=["numpy>=1.17", "scipy>=1.2", "soundfile>=0.10"],
    entry_points={"console_scripts": ["fanfront=fanfront.cli:main"]}
)
