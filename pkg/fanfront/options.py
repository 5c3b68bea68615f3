"""
Layered option records. Every configuration object in fanfront (frame
settings, layer sizes, training hyperparameters, corpus recipes) is a subclass
of Options that declares its defaults in a class-level dict and validates
itself in check().

Values are layered the same way everywhere: class defaults first, then the
mapping passed positionally, then keyword arguments. A mapping value of None
means "not given" so that argparse namespaces can be passed straight through.

>>> class Example(Options):
...     defaults = {"size": 3, "name": "x"}
>>> Example({"size": 4}, name="y").size
4
>>> Example({"size": None}).size
3
"""


class OptionError(ValueError):
    """
    Raised when an option record is given an unknown option or a value that
    fails the record's check().
    """
    pass


class Options(object):
    defaults = {}

    def __init__(self, m=None, **overrides):
        values = dict(self.defaults)
        for source in (m or {}, overrides):
            for key, value in source.items():
                if key not in values:
                    raise OptionError("%s has no option named %r" %
                            (type(self).__name__, key))
                if value is not None:
                    values[key] = value
        object.__setattr__(self, "values", values)
        self.check()

    def check(self):
        """
        Validates the option values, raising OptionError (or a subclass) if
        any of them is unusable. Subclasses override this.
        """
        pass

    def require(self, condition, message):
        if not condition:
            raise OptionError("%s: %s" % (type(self).__name__, message))

    def replace(self, **changes):
        """
        Returns a copy of this record with some values changed.
        """
        values = dict(self.values)
        values.update(changes)
        return type(self)(values)

    def __getattr__(self, name):
        if name == "values":
            raise AttributeError(name)
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name)

    def __getitem__(self, name):
        return self.values[name]

    def __setattr__(self, name, value):
        raise AttributeError("%s is immutable; use replace()" %
                type(self).__name__)

    def __iter__(self):
        for k in sorted(self.values):
            yield k, self.values[k]

    def __eq__(self, other):
        return type(self) is type(other) and self.values == other.values

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self.values.items()))))

    def __repr__(self):
        return "%s(%s)" % (type(self).__name__, ", ".join(
                "%s=%r" % item for item in self))
