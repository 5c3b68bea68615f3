"""
A small parser combinator core used to read every file format fanfront
defines: the FANF feature files and FANM checkpoints (binary), and the
geometry files, corpus manifests and corpus recipes (text).

Grammars are Python expressions built from parser objects and these
operators:

 * a + b runs a, then b (Then).
 * a | b tries a, and b if a fails (First).
 * ~a runs a and drops its value (Discard).
 * a[n] and a[low:high] repeat a exactly n, or low to high, times (Repeat).
 * a[function] passes a's value through function (Translate).
 * a(expected="description") replaces a's error message (Expected).

Strings and byte strings next to a parser in + or | become Literal parsers.
A row of a microphone geometry file, for instance, is three reals:

>>> row = real + real + real
>>> row.parse_string("0.036 0 0")
(0.036, 0.0, 0.0)
>>> row.parse_string("0.036 0")
Traceback (most recent call last):
fanfront.grammar.ParseException: Parse failure: At position 7: expected real number

Binary input goes through the same machinery, using byte literals and the
struct-based parsers near the end of this module. Whitespace is never skipped
in byte strings:

>>> header = b"FANF" + u16 + u32
>>> header.parse_string(b"FANF\\x01\\x00\\x7f\\x00\\x00\\x00")
(1, 127)
"""

import itertools
import re
import struct

import numpy as np

from fanfront import static

WHITESPACE_CHARS = " \t\r\n"


class ParseException(Exception):
    """
    Raised by Parser.parse_string. expectations holds the (position,
    Expectation) pairs the message was built from.
    """
    def __init__(self, message, expectations=None):
        Exception.__init__(self, message)
        self.expectations = expectations


class Expectation(object):
    """
    Something a parser would have accepted at a position, described in words
    for error messages: a quoted literal, a regex, a set of characters or a
    free-form description such as "four bytes (unsigned integer)".
    """
    def __init__(self, description):
        self.description = description

    def format(self):
        return self.description

    def _key(self):
        return type(self), self.description

    def __repr__(self):
        return "%s(%s)" % (type(self).__name__, self.description)


class EndOfInput(Expectation):
    """
    Recorded where nothing more could have been consumed. These only show up
    in a message when no parser wanted anything else.
    """
    def __init__(self):
        Expectation.__init__(self, "EOF")


_expectation_pairs = static.compile([static.Positional(int, Expectation)])


class Result(object):
    """
    The outcome of one parse call. A failed result has end None. expected
    lists (position, Expectation) pairs either way: what would have made a
    failed parse succeed, or a successful one go further.
    """
    def __init__(self, end, value, expected):
        self.end = end
        self.value = value
        self.expected = expected if isinstance(expected, list) else [expected]

    def __bool__(self):
        return self.end is not None

    def __repr__(self):
        if self:
            return "<Result %r up to %d>" % (self.value, self.end)
        return "<Result failed: %r>" % (self.expected,)


def succeed(end, value, expected):
    return Result(end, value, expected)


def fail(expected):
    return Result(None, None, expected)


def furthest_expectations(expected):
    """
    Returns (position, expectations) for the furthest position in expected,
    without duplicates. EndOfInput entries are only kept when there is
    nothing else.
    """
    _expectation_pairs.check_matches(expected, "expectation list")
    if not expected:
        return 0, []
    informative = [pair for pair in expected if not isinstance(pair[1], EndOfInput)]
    if not informative:
        return max(pair[0] for pair in expected), [EndOfInput()]
    furthest = max(pair[0] for pair in informative)
    seen = set()
    found = []
    for position, expectation in informative:
        if position == furthest and expectation._key() not in seen:
            seen.add(expectation._key())
            found.append(expectation)
    return furthest, found


def describe_failure(expected):
    """
    "At position n: expected x", or "expected one of x, y" when several
    things would have worked.
    """
    position, found = furthest_expectations(expected)
    return "At position %d: expected %s%s" % (position, "one of " if len(found) > 1 else "",
            ", ".join(e.format() for e in found))


def as_parser(value):
    if isinstance(value, (str, bytes)):
        return Literal(value)
    return value


def _sequence(left, right):
    left, right = as_parser(left), as_parser(right)
    if not (isinstance(left, Parser) and isinstance(right, Parser)):
        return NotImplemented
    return Then(left, right)


def _alternatives(left, right):
    left, right = as_parser(left), as_parser(right)
    if not (isinstance(left, Parser) and isinstance(right, Parser)):
        return NotImplemented
    options = []
    for side in (left, right):
        options += side.parsers if isinstance(side, First) else [side]
    return First(*options)


class Parser(object):
    """
    Base class of every parser. Subclasses implement parse(text, position,
    end, space), which returns a Result; space is the parser skipped between
    tokens. Most callers only need parse_string.
    """
    def parse(self, text, position, end, space):
        raise NotImplementedError("%s doesn't implement parse" % type(self).__name__)

    def parse_string(self, string, all=True, whitespace=None):
        """
        Parses string (text or bytes) and returns the value, raising
        ParseException on failure. With all=True, only trailing whitespace
        may follow what the parser consumed. whitespace defaults to
        Whitespace() for text and Invalid(), which skips nothing, for bytes.
        """
        if whitespace is None:
            whitespace = Invalid() if isinstance(string, bytes) else Whitespace()
        result = self.parse(string, 0, len(string), whitespace)
        if result and (not all
                or whitespace.consume(string, result.end, len(string)) == len(string)):
            return result.value
        raise ParseException("Parse failure: " + describe_failure(result.expected),
                result.expected)

    def consume(self, text, position, end):
        """
        Applies this parser repeatedly, as whitespace, and returns the
        position it stopped at.
        """
        while True:
            result = self.parse(text, position, end, Invalid())
            if not result:
                return position
            position = result.end

    def __add__(self, other):
        return _sequence(self, other)

    def __radd__(self, other):
        return _sequence(other, self)

    def __or__(self, other):
        return _alternatives(self, other)

    def __ror__(self, other):
        return _alternatives(other, self)

    def __invert__(self):
        return Discard(self)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return Repeat(self, key.start, key.stop)
        if isinstance(key, int):
            return Repeat(self, key, key)
        if callable(key):
            return Translate(self, key)
        raise TypeError("parser[key] takes a slice, an int or a callable, not %r" % (key,))

    def __call__(self, expected):
        return Expected(self, expected)


class Invalid(Parser):
    """
    Never matches. As the whitespace parser it means "skip nothing".
    """
    def parse(self, text, position, end, space):
        return fail((position, EndOfInput()))

    def consume(self, text, position, end):
        return position

    def __repr__(self):
        return "Invalid()"


class Literal(Parser):
    """
    Matches exactly text (a str or bytes) and returns None.
    """
    def __init__(self, text):
        self.text = text

    def parse(self, text, position, end, space):
        start = space.consume(text, position, end)
        stop = start + len(self.text)
        if stop > end or text[start:stop] != self.text:
            return fail((start, Expectation(repr(self.text))))
        return succeed(stop, None, (stop, EndOfInput()))

    def __repr__(self):
        return "Literal(%r)" % (self.text,)


class CharIn(Parser):
    """
    Matches one character out of chars and returns it.
    """
    def __init__(self, chars):
        self.chars = chars

    def parse(self, text, position, end, space):
        start = space.consume(text, position, end)
        char = text[start:start + 1]
        if start >= end or char not in self.chars:
            return fail((start, Expectation('any char in "%s"' % "".join(self.chars))))
        return succeed(start + 1, char, (start + 1, EndOfInput()))

    def __repr__(self):
        return "CharIn(%r)" % (self.chars,)


class Whitespace(CharIn):
    """
    The default space parser for text. consume skips a whole run of chars
    with one regex match.
    """
    def __init__(self, chars=WHITESPACE_CHARS):
        CharIn.__init__(self, chars)
        self._run = re.compile("[%s]*" % re.escape(chars))

    def consume(self, text, position, end):
        return self._run.match(text, position, end).end()

    def __repr__(self):
        return "Whitespace(%r)" % (self.chars,)


def _join(a, b):
    # None disappears, tuples splice; named tuples stay whole
    if a is None:
        return b
    if b is None:
        return a
    left = a if type(a) is tuple else (a,)
    right = b if type(b) is tuple else (b,)
    return left + right


class Then(Parser):
    """
    Runs first, then second from where first stopped. The values are joined:
    None values are dropped, plain tuples are spliced together and anything
    else becomes one member of the resulting tuple.
    """
    def __init__(self, first, second):
        self.first = as_parser(first)
        self.second = as_parser(second)

    def parse(self, text, position, end, space):
        head = self.first.parse(text, position, end, space)
        if not head:
            return fail(head.expected)
        tail = self.second.parse(text, head.end, end, space)
        if not tail:
            return fail(head.expected + tail.expected)
        return succeed(tail.end, _join(head.value, tail.value), head.expected + tail.expected)

    def __repr__(self):
        return "Then(%r, %r)" % (self.first, self.second)


class Discard(Parser):
    def __init__(self, parser):
        self.parser = as_parser(parser)

    def parse(self, text, position, end, space):
        result = self.parser.parse(text, position, end, space)
        return succeed(result.end, None, result.expected) if result else fail(result.expected)

    def __repr__(self):
        return "Discard(%r)" % (self.parser,)


class First(Parser):
    """
    Tries its parsers in order; the first success wins. A failure reports
    what every alternative expected.
    """
    def __init__(self, *parsers):
        if len(parsers) == 1 and isinstance(parsers[0], (list, tuple)):
            parsers = parsers[0]
        self.parsers = [as_parser(p) for p in parsers]

    def parse(self, text, position, end, space):
        missed = []
        for option in self.parsers:
            result = option.parse(text, position, end, space)
            if result:
                return succeed(result.end, result.value, result.expected + missed)
            missed += result.expected
        return fail(missed)

    def __repr__(self):
        return "First(%s)" % ", ".join(map(repr, self.parsers))


class Translate(Parser):
    """
    Passes the value of parser through function. A ValueError raised by
    function turns into a parse failure whose expectation is the error
    message, so grammars can reject values (an unknown split name, say)
    right where they are parsed.
    """
    def __init__(self, parser, function):
        self.parser = as_parser(parser)
        self.function = function

    def parse(self, text, position, end, space):
        result = self.parser.parse(text, position, end, space)
        if not result:
            return fail(result.expected)
        try:
            value = self.function(result.value)
        except ValueError as e:
            return fail((space.consume(text, position, end), Expectation(str(e))))
        return succeed(result.end, value, result.expected)

    def __repr__(self):
        return "Translate(%r, %r)" % (self.parser, self.function)


class Exact(Parser):
    """
    Runs parser with inner as the space parser, so nothing is skipped inside
    it by default. Space before it is still skipped.
    """
    def __init__(self, parser, inner=Invalid()):
        self.parser = as_parser(parser)
        self.inner = inner

    def parse(self, text, position, end, space):
        return self.parser.parse(text, space.consume(text, position, end), end, self.inner)

    def __repr__(self):
        return "Exact(%r)" % (self.parser,)


class Repeat(Parser):
    """
    Runs parser at least low and at most high times (high None for no
    limit) and returns the list of values.
    """
    def __init__(self, parser, low, high):
        self.parser = as_parser(parser)
        self.low = low or 0
        self.high = high

    def parse(self, text, position, end, space):
        values = []
        last = succeed(position, None, (position, EndOfInput()))
        for _ in itertools.count() if self.high is None else range(self.high):
            last = self.parser.parse(text, position, end, space)
            if not last:
                break
            values.append(last.value)
            position = last.end
        if len(values) < self.low:
            return fail(last.expected)
        return succeed(position, values, last.expected)

    def __repr__(self):
        return "Repeat(%r, %r, %r)" % (self.parser, self.low, self.high)


class Bind(Parser):
    """
    Runs parser, hands its value to function and continues with the parser
    function returns; that second parser's value is the result. This is how
    length-prefixed blocks are read: the header gives the dimensions, and
    function builds a parser for a block of exactly that size.
    """
    def __init__(self, parser, function):
        self.parser = as_parser(parser)
        self.function = function

    def parse(self, text, position, end, space):
        head = self.parser.parse(text, position, end, space)
        if not head:
            return fail(head.expected)
        body = as_parser(self.function(head.value)).parse(text, head.end, end, space)
        if not body:
            return fail(body.expected + head.expected)
        return succeed(body.end, body.value, body.expected)

    def __repr__(self):
        return "Bind(%r, %r)" % (self.parser, self.function)


class Regex(Parser):
    """
    Matches a regular expression and returns the matched text.
    """
    def __init__(self, pattern):
        self.regex = re.compile(pattern)

    def parse(self, text, position, end, space):
        start = space.consume(text, position, end)
        found = self.regex.match(text, start, end)
        if found is None:
            return fail((start, Expectation('regex "%s"' % self.regex.pattern)))
        return succeed(found.end(), found.group(), (found.end(), EndOfInput()))

    def __repr__(self):
        return "Regex(%r)" % (self.regex.pattern,)


class Expected(Parser):
    """
    Reports description instead of whatever parser would have said when it
    fails ("expected real number" rather than a regex).
    """
    def __init__(self, parser, description):
        self.parser = as_parser(parser)
        self.description = description

    def parse(self, text, position, end, space):
        start = space.consume(text, position, end)
        result = self.parser.parse(text, start, end, space)
        return result if result else fail((start, Expectation(self.description)))

    def __repr__(self):
        return "Expected(%r, %r)" % (self.parser, self.description)


def keyword(name):
    """
    A bare keyword that may not run on into further word characters, so
    keyword("split") rejects "splits". The keyword's value is discarded.
    """
    return ~Regex(re.escape(name) + r"(?![A-Za-z0-9_\-])")(repr(name))


# Binary parsers; fanfront's formats are all little-endian.

class PyStruct(Parser):
    """
    Unpacks a struct format. Returns the single field, or a tuple when the
    format has several. description names what was wanted in error messages.
    """
    def __init__(self, format, description=None):
        self.format = format
        self.size = struct.calcsize(format)
        self.description = description or "struct %r" % format

    def parse(self, text, position, end, space):
        start = space.consume(text, position, end)
        stop = start + self.size
        if stop > end:
            return fail((start, Expectation(self.description)))
        fields = struct.unpack(self.format, text[start:stop])
        return succeed(stop, fields[0] if len(fields) == 1 else fields, (stop, EndOfInput()))

    def __repr__(self):
        return "PyStruct(%r)" % (self.format,)


class Block(Parser):
    """
    count values of a numpy dtype (little-endian float32 unless told
    otherwise), returned as a fresh 1-D array.
    """
    def __init__(self, count, dtype="<f4"):
        self.count = int(count)
        self.dtype = np.dtype(dtype)

    def parse(self, text, position, end, space):
        start = space.consume(text, position, end)
        stop = start + self.count * self.dtype.itemsize
        if stop > end:
            return fail((start, Expectation("%d bytes of %d %s values"
                    % (stop - start, self.count, self.dtype))))
        return succeed(stop, np.frombuffer(text[start:stop], dtype=self.dtype).copy(),
                (stop, EndOfInput()))

    def __repr__(self):
        return "Block(%d, %r)" % (self.count, str(self.dtype))


def Chars(count):
    """
    Exactly count raw bytes.
    """
    return PyStruct("%ds" % count, "%d bytes" % count)


u8 = PyStruct("<B", "one byte (unsigned byte)")
u16 = PyStruct("<H", "two bytes (unsigned short)")
u32 = PyStruct("<I", "four bytes (unsigned integer)")


integer = Regex(r"[+-]?\d+")[int]("integer")
real = Regex(r"[+-]?(?:(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf(?:inity)?|nan)")[float](
        "real number")
