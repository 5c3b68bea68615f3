"""
A small library of type patterns used throughout fanfront to check the
arguments handed to the numerical operations. A type pattern is an object
with two methods, matches and check_matches. matches returns True if the value
passed to it matches the pattern; check_matches raises a StaticTypeError
describing the mismatch if it doesn't.

Besides the usual constructs for matching plain Python objects (Type, Or, All,
Positional), this module provides Array, which matches numpy arrays by dtype
kind and by shape. Shapes are written as tuples whose entries are either
an int, which must match exactly, None, which matches any extent, or a string,
which names an extent that must be the same everywhere that name appears in a
single match of the pattern. For example:

>>> import numpy as np
>>> pattern = Array("c", ("M", "K"))
>>> pattern.matches(np.zeros((2, 127), dtype=complex))
True
>>> pattern.matches(np.zeros((2, 127)))
False
>>> dims = pattern.bind(np.zeros((2, 127), dtype=complex))
>>> dims["M"], dims["K"]
(2, 127)

A short notation can be used for some constructs: any Python type is a
pattern matching instances of that type, a list containing one pattern matches
iterables whose items all match it and a tuple of patterns matches anything
matching at least one of them. These must be passed through compile before
use.
"""

import numpy as np


class StaticTypeError(ValueError):
    """
    Raised by check_matches when a value doesn't fit its pattern. Being a
    ValueError, it is caught by code that handles bad input generically.
    """


class TypeFormatError(Exception):
    """
    Raised by compile when handed something that can't be read as a pattern,
    such as the number 5 or a two-item list.
    """


class StaticType(object):
    """
    Base class of all patterns. Subclasses provide matches and, optionally, a
    more specific describe_mismatch.
    """
    def matches(self, value):
        raise NotImplementedError("%s must override matches" % type(self).__name__)

    def describe_mismatch(self, value):
        return "is not of type %s" % self

    def check_matches(self, value, what="value"):
        """
        Raises StaticTypeError unless value matches. what names the value in
        the message, usually an argument name.
        """
        if self.matches(value):
            return
        raise StaticTypeError("%s %s" % (what, self.describe_mismatch(value)))

    def __repr__(self):
        return str(self)


class Type(StaticType):
    """
    Matches instances of the Python class held in self.type.
    """
    def __init__(self, type):
        self.type = type

    def matches(self, value):
        return isinstance(value, self.type)

    def __str__(self):
        return "Type(%s)" % getattr(self.type, "__name__", self.type)


class Or(StaticType):
    """
    Matches a value accepted by at least one of its alternatives.
    """
    def __init__(self, *alternatives):
        self.alternatives = [compile(a) for a in alternatives]

    def matches(self, value):
        return any(a.matches(value) for a in self.alternatives)

    def __str__(self):
        return "Or(%s)" % ", ".join(map(str, self.alternatives))


class All(StaticType):
    """
    Matches an iterable whose every item matches item_type. Non-iterables
    never match; empty iterables always do.
    """
    def __init__(self, item_type):
        self.item_type = compile(item_type)

    def matches(self, value):
        try:
            items = iter(value)
        except TypeError:
            return False
        return all(self.item_type.matches(item) for item in items)

    def __str__(self):
        return "All(%s)" % self.item_type


class Positional(StaticType):
    """
    Matches a fixed-length sequence item by item, so Positional(int, float)
    accepts (3, 0.5) but rejects (3, 0.5, 1).
    """
    def __init__(self, *slots):
        self.slots = [compile(s) for s in slots]

    def matches(self, value):
        if not hasattr(value, "__len__") or len(value) != len(self.slots):
            return False
        return all(s.matches(v) for s, v in zip(self.slots, value))

    def __str__(self):
        return "Positional(%s)" % ", ".join(map(str, self.slots))


_KIND_NAMES = {"c": "complex", "f": "real", "i": "integer", "b": "boolean"}


class Array(StaticType):
    """
    A pattern matching numpy arrays. kind is a numpy dtype kind character
    ("c" complex, "f" real floating point, "i" integer) or None to accept any
    dtype; "f" also accepts integer arrays since those promote cleanly. shape
    is None to accept any shape, or a tuple of extents as described in the
    module documentation.
    """
    def __init__(self, kind=None, shape=None):
        self.kind = kind
        self.shape = None if shape is None else tuple(shape)

    def bind(self, value):
        """
        Matches value against this pattern and returns a dict mapping each
        named extent in the shape to the size it had in value. Returns None
        if value doesn't match.
        """
        if not isinstance(value, np.ndarray):
            return None
        if self.kind is not None:
            kind = value.dtype.kind
            if kind != self.kind and not (self.kind == "f" and kind in "iu"):
                return None
        names = {}
        if self.shape is None:
            return names
        if value.ndim != len(self.shape):
            return None
        for want, got in zip(self.shape, value.shape):
            if want is None:
                continue
            if isinstance(want, str):
                if names.setdefault(want, got) != got:
                    return None
            elif want != got:
                return None
        return names

    def matches(self, value):
        return self.bind(value) is not None

    def describe_mismatch(self, value):
        if not isinstance(value, np.ndarray):
            return "must be a numpy array, not " + type(value).__name__
        return "has dtype %s and shape %s; expected %s" % (
                value.dtype, value.shape, self)

    def __str__(self):
        kind = _KIND_NAMES.get(self.kind, "any")
        if self.shape is None:
            return "%s array" % kind
        return "%s array of shape (%s)" % (kind, ", ".join(
                "*" if s is None else str(s) for s in self.shape))


def compile(pattern):
    """
    Turns short notation into a StaticType: a class becomes Type, a tuple
    becomes Or and a one-item list becomes All. StaticType instances pass
    through unchanged.
    """
    if isinstance(pattern, StaticType):
        return pattern
    if isinstance(pattern, list):
        if len(pattern) == 1:
            return All(pattern[0])
        raise TypeFormatError("a list pattern holds exactly one item type, "
                "got %d in %r" % (len(pattern), pattern))
    if isinstance(pattern, tuple):
        return Or(*pattern)
    if isinstance(pattern, type):
        return Type(pattern)
    raise TypeFormatError("%r is not a pattern; use a class, a tuple, a "
            "one-item list or a StaticType" % (pattern,))


def matches(value, pattern):
    return compile(pattern).matches(value)


def check_matches(value, pattern, what="value"):
    compile(pattern).check_matches(value, what)


def check_shapes(**named):
    """
    Checks several arrays against Array patterns at once, making sure named
    extents agree across all of them. Each keyword argument is a pair of
    (array, Array pattern); the merged dict of named extents is returned.

    >>> import numpy as np
    >>> dims = check_shapes(x=(np.zeros((2, 5), complex), Array("c", ("M", "K"))),
    ...                     w=(np.zeros((3, 5, 2), complex), Array("c", ("D", "K", "M"))))
    >>> sorted(dims.items())
    [('D', 3), ('K', 5), ('M', 2)]
    """
    merged = {}
    for what in sorted(named):
        value, pattern = named[what]
        pattern = compile(pattern)
        pattern.check_matches(value, what)
        if isinstance(pattern, Array):
            for name, extent in pattern.bind(value).items():
                if merged.setdefault(name, extent) != extent:
                    raise StaticTypeError("%s has %s = %d but another argument "
                            "has %s = %d" % (what, name, extent, name,
                            merged[name]))
    return merged
