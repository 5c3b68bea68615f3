"""
The small test harness fanfront's own tests are written against. A TestSuite
collects test functions registered by using it as a decorator (each test
module names its suite test, so cases read @test(target)), where target is the
class or function under test; run_tests runs them all and prints one line per
test. Test functions are ordinary functions named test_* that use plain
asserts, so pytest collects the same modules without any of this.
"""

import traceback

import numpy as np


class TestException(Exception):
    __test__ = False


def check_raises(exception_type, function, *args, **kwargs):
    """
    Calls function(*args, **kwargs) and returns the exception it raised,
    which must be an instance of exception_type (a class or a tuple of
    classes). Raises TestException if nothing or something else was raised.
    """
    try:
        function(*args, **kwargs)
    except exception_type as e:
        return e
    except Exception as e:
        traceback.print_exc()
        raise TestException("%r raised %s, not the expected %r" %
                (function, type(e).__name__, exception_type))
    raise TestException("%r returned normally instead of raising %r" %
            (function, exception_type))


def check_close(actual, expected, tolerance, relative=False):
    """
    Checks that actual and expected (scalars or arrays, real or complex) agree
    within tolerance. With relative=True the largest absolute difference is
    divided by the largest magnitude in expected (or 1 if expected is all
    zero).
    """
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    if actual.shape != expected.shape:
        raise TestException("shape %s differs from expected shape %s" %
                (actual.shape, expected.shape))
    if actual.size == 0:
        return
    error = np.max(np.abs(actual - expected))
    if relative:
        scale = np.max(np.abs(expected))
        error = error / (scale if scale > 0 else 1.0)
    if not error <= tolerance:
        raise TestException("difference %g exceeds tolerance %g" % (error, tolerance))


def subclasses_in_module(cls, modules=None, include_self=True):
    """
    Returns cls and all of its transitive subclasses whose defining module is
    one of modules (any module if modules is None).
    """
    found = [cls] if include_self and (modules is None or cls.__module__ in modules) else []
    for sub in cls.__subclasses__():
        found.extend(subclasses_in_module(sub, modules))
    return found


def _describe(target):
    if target is None:
        return "(no target)"
    name = getattr(target, "__name__", str(target))
    module = getattr(target, "__module__", None)
    return name if module is None else "%s in module %s" % (name, module)


class TestSuite(object):
    __test__ = False

    def __init__(self):
        self.tests = []
        self.targets = set()

    def __call__(self, target):
        def register(function):
            function.testing_target = target
            self.targets.add(target)
            self.tests.append(function)
            return function
        return register

    def run_tests(self):
        """
        Runs every registered test, printing a PASSED or FAILED line for each
        and the traceback of each failure. Returns (passed, failed).
        """
        outcome = {True: 0, False: 0}
        for case in self.tests:
            where = "%s testing %s" % (case.__name__,
                    _describe(getattr(case, "testing_target", None)))
            try:
                case()
            except Exception:
                print("TEST FAILED: " + where)
                traceback.print_exc()
                outcome[False] += 1
            else:
                print("TEST PASSED: " + where)
                outcome[True] += 1
        return outcome[True], outcome[False]
