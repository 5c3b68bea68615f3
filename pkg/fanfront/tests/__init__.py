"""
fanfront's tests. Each module builds a TestSuite named test; run_tests runs
every suite, warns about public classes of the package that no test names as
its target and prints a summary. The same modules run under pytest.
"""

from __future__ import print_function

import importlib

from fanfront import (array, corpus, fe, formats, frontend, grammar, layers, network,
                      options, static, training)
from fanfront.testframework import subclasses_in_module

MODULES = ("test_static", "test_options", "test_grammar", "test_formats", "test_frontend",
           "test_array", "test_layers", "test_fe", "test_network", "test_training",
           "test_corpus", "test_cli")


def run_tests():
    suites = [importlib.import_module("fanfront.tests." + name).test for name in MODULES]
    targets = set()
    targets |= set(subclasses_in_module(grammar.Parser, ("fanfront.grammar",)))
    targets |= set(subclasses_in_module(static.StaticType, ("fanfront.static",)))
    targets |= set(subclasses_in_module(layers.Layer, ("fanfront.layers",)))
    targets |= set(subclasses_in_module(options.Options, (
            "fanfront.frontend", "fanfront.layers", "fanfront.network",
            "fanfront.training", "fanfront.corpus")))
    targets |= set([frontend.GmvnStats, array.ArrayGeometry, array.LookDirection,
                    array.SuperdirectiveWeights, fe.FeLayer, network.Pipeline,
                    network.ToyClassifier, network.AdamState, formats.ManifestEntry,
                    corpus.SyntheticScene, corpus.Partition, training.Dataset,
                    training.EvaluationReport, training.MetricLog])
    tested = set()
    for suite in suites:
        tested |= suite.targets
    missing = targets - tested
    if missing:
        print("WARNING: missing tests for " + str(sorted(t.__name__ for t in missing)))
        print("-" * 75)
    passed = failed = 0
    for suite in suites:
        p, f = suite.run_tests()
        passed += p
        failed += f
    print("-" * 75)
    print("%s tests passed" % passed)
    print("%s tests failed" % failed)
    print("-" * 75)
    print()
    if failed == 0:
        print("TESTING SUCCESSFUL")
    else:
        print("TESTING FAILED")
    return failed
