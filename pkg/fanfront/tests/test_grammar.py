import struct

import numpy as np

from fanfront import grammar
from fanfront.grammar import (Bind, Block, Discard, Exact, First, Literal, ParseException,
                              Regex, Repeat, Translate, integer, keyword, real, u16, u32)
from fanfront.testframework import TestSuite, check_raises

test = TestSuite()

letters = Regex("[a-z]+")


@test(Literal)
def test_literal():
    x = Literal("hello")
    assert x.parse_string("hello") is None
    assert (x + letters).parse_string("hello world") == "world"
    check_raises(ParseException, x.parse_string, "bogus")


@test(Translate)
def test_translate():
    x = Translate(Regex("5"), int)
    assert x.parse_string("5") == 5
    assert Regex("5")[int].parse_string("5") == 5


@test(Translate)
def test_translate_value_error_becomes_expectation():
    def positive(value):
        if value <= 0:
            raise ValueError("a positive count")
        return value
    x = integer[positive]
    assert x.parse_string("3") == 3
    e = check_raises(ParseException, x.parse_string, "-1")
    assert "a positive count" in str(e)


@test(Regex)
def test_terminals():
    assert integer.parse_string(" 42 ") == 42
    assert real.parse_string("1.5e3") == 1500.0
    assert real.parse_string("-.25") == -0.25
    assert real.parse_string("inf") == np.inf
    assert np.isnan(real.parse_string("nan"))
    e = check_raises(ParseException, real.parse_string, "x")
    assert "expected real number" in str(e)


@test(grammar.Then)
def test_then_flattens():
    row = real + real + real
    assert row.parse_string("0.036 0 0") == (0.036, 0.0, 0.0)
    e = check_raises(ParseException, row.parse_string, "0.036 0")
    assert "At position 7" in str(e)
    assert "expected real number" in str(e)


@test(keyword)
def test_keyword():
    x = keyword("split") + letters
    assert x.parse_string("split train") == "train"
    check_raises(ParseException, keyword("split").parse_string, "splits")
    check_raises(ParseException, keyword("snr").parse_string, "snr-level")


@test(Discard)
def test_discard():
    x = ~Regex("#+") + integer
    assert x.parse_string("## 7") == 7


@test(First)
def test_first():
    x = First(Regex("a"), Regex("b"))
    assert x.parse_string("b") == "b"
    assert (Regex("a") | "b").parse_string("a") == "a"
    e = check_raises(ParseException, x.parse_string, "c")
    assert "expected one of" in str(e)


@test(Repeat)
def test_repeat():
    assert integer[2].parse_string("1 2") == [1, 2]
    assert integer[1:3].parse_string("4 5 6") == [4, 5, 6]
    check_raises(ParseException, integer[2].parse_string, "1")
    check_raises(ParseException, integer[1:3].parse_string, "1 2 3 4")
    assert Repeat(integer, 0, 0).parse_string("") == []


@test(Exact)
def test_exact():
    x = Exact(Regex("a") + Regex("b"))
    assert x.parse_string("ab") == ("a", "b")
    check_raises(ParseException, x.parse_string, "a b")


@test(grammar.PyStruct)
def test_binary_header():
    header = b"FANF" + u16 + u32
    assert header.parse_string(b"FANF\x01\x00\x7f\x00\x00\x00") == (1, 127)
    check_raises(ParseException, header.parse_string, b"FANF\x01\x00")
    check_raises(ParseException, header.parse_string, b"FANX\x01\x00\x7f\x00\x00\x00")
    # no whitespace is skipped in binary input
    check_raises(ParseException, header.parse_string, b"FANF \x01\x00\x7f\x00\x00\x00")


@test(Bind)
def test_length_prefixed_block():
    parser = Bind(u32, lambda n: Block(n, "<f4"))
    data = struct.pack("<I3f", 3, 1.0, 2.0, 3.0)
    assert parser.parse_string(data).tolist() == [1.0, 2.0, 3.0]
    check_raises(ParseException, parser.parse_string, data[:-1])
    check_raises(ParseException, parser.parse_string, data + b"\x00")


@test(grammar.Parser)
def test_parse_string_whitespace():
    row = integer + integer
    assert row.parse_string("1 2") == (1, 2)
    assert row.parse_string("1\t2\n") == (1, 2)
    check_raises(ParseException, row.parse_string, "1 2", whitespace=grammar.Invalid())
    assert integer.parse_string("3 4", all=False) == 3


@test(grammar.Invalid)
def test_invalid_never_matches():
    check_raises(ParseException, grammar.Invalid().parse_string, "")
    assert Exact(integer + "," + integer).parse_string("1,2") == (1, 2)


@test(grammar.Whitespace)
def test_whitespace():
    assert integer.parse_string("__7__", whitespace=grammar.Whitespace("_")) == 7
    assert grammar.CharIn("ab").parse_string("b") == "b"


@test(grammar.CharIn)
def test_char_in_expectation():
    e = check_raises(ParseException, grammar.CharIn("ab").parse_string, "c")
    assert 'any char in "ab"' in str(e)


@test(grammar.Expected)
def test_expected_replaces_the_message():
    parser = Regex("[0-9]+")(expected="a digit string")
    e = check_raises(ParseException, parser.parse_string, "x")
    assert "At position 0: expected a digit string" in str(e)


@test(Block)
def test_block():
    data = np.array([1.5, -2.0], dtype="<f4").tobytes()
    assert Block(2).parse_string(data).tolist() == [1.5, -2.0]
    assert Block(1, "<u2").parse_string(b"\x02\x01").tolist() == [0x0102]
    e = check_raises(ParseException, Block(3).parse_string, data)
    assert "12 bytes" in str(e)
