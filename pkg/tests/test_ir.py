"""Frontend tests: type sizing, line grammar, structure, and round-tripping."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malgraph import ir
from malgraph.errors import EmptyUnit, MalformedLine
from malgraph.ir import (
    FLOAT32,
    FLOAT64,
    INT1,
    INT32,
    INT64,
    OPAQUE,
    POINTER,
    VOID,
    Register,
    ValueType,
    format_unit,
    parse_ll,
    parse_trace,
    parse_type_token,
    sizeof_type,
)


def test_basic_sub_line():
    unit = parse_trace("%3 = sub i32 %1, %2", "t")
    (inst,) = unit.instructions
    assert inst.opcode == "sub"
    assert inst.dest == Register("3")
    assert inst.sources == (Register("1"), Register("2"))
    assert inst.result_type == INT32
    assert inst.mem_addr is None


@pytest.mark.parametrize("ty,size", [
    (INT1, 1),
    (ValueType("int", bits=8), 1),
    (ValueType("int", bits=16), 2),
    (INT32, 4),
    (INT64, 8),
    (FLOAT32, 4),
    (FLOAT64, 8),
    (POINTER, 8),
    (VOID, 1),
    (OPAQUE, 1),
    (ValueType("vector", count=4, elem=INT32), 16),
    (ValueType("vector", count=2, elem=FLOAT64), 16),
    (ValueType("vector", count=3, elem=ValueType("int", bits=8)), 3),
])
def test_sizeof(ty, size):
    assert sizeof_type(ty) == size


@pytest.mark.parametrize("token,expected", [
    ("i32", INT32),
    ("i64", INT64),
    ("i1", INT1),
    ("float", FLOAT32),
    ("double", FLOAT64),
    ("i32*", POINTER),
    ("double**", POINTER),
    ("ptr", POINTER),
    ("void", VOID),
    ("i7", OPAQUE),       # unsupported width
    ("banana", OPAQUE),
    ("<4 x i32>", ValueType("vector", count=4, elem=INT32)),
    ("<2 x double>", ValueType("vector", count=2, elem=FLOAT64)),
])
def test_parse_type_token(token, expected):
    assert parse_type_token(token) == expected


def test_format_type_inverts_parse():
    for tok in ["i1", "i8", "i16", "i32", "i64", "float", "double", "ptr",
                "void", "opaque", "<4 x i32>", "<2 x <2 x double>>"]:
        assert ir.format_type(parse_type_token(tok)) == tok


def test_empty_input_rejected():
    with pytest.raises(EmptyUnit):
        parse_trace("", "t")
    with pytest.raises(EmptyUnit):
        parse_ll("; only a comment\n\n", "t")


GOLDEN = """\
define i32 @main(i32 %argc) {
  %p = alloca i32
  store i32 %argc, i32* %p ; addr=0x10
  %v = load i32, i32* %p ; addr=0x10
  %one = add i32 %v, %v
  %cmp = icmp sgt i32 %one, %argc
  br i1 %cmp, label %then, label %done
then:
  %q = getelementptr i32, i32* %p, i64 %v
  %r = call double @helper(i32 %one, i32* %q)
  br label %done
done:
  ret i32 %one
}
"""


def test_golden_structure():
    unit = parse_ll(GOLDEN, "golden.ll")
    ops = [i.opcode for i in unit.instructions]
    assert ops == ["alloca", "store", "load", "add", "icmp", "br",
                   "getelementptr", "call", "br", "ret"]
    assert [i.index for i in unit.instructions] == list(range(10))

    alloca, store, load, add, icmp, br1, gep, call, br2, ret = unit.instructions
    assert alloca.dest == Register("p", "main") and alloca.result_type == POINTER
    assert store.dest is None
    assert store.sources == (Register("argc", "main"), Register("p", "main"))
    assert store.result_type == INT32        # the stored value's type
    assert store.mem_addr == 0x10
    assert load.mem_addr == 0x10 and load.sources == (Register("p", "main"),)
    assert add.mem_addr is None
    assert icmp.result_type == INT1
    assert icmp.sources == (Register("one", "main"), Register("argc", "main"))
    assert br1.sources == (Register("cmp", "main"), Register("then", "main"),
                           Register("done", "main"))
    assert gep.result_type == POINTER
    assert gep.sources == (Register("p", "main"), Register("v", "main"))
    assert call.dest == Register("r", "main") and call.result_type == FLOAT64
    assert call.sources == (Register("one", "main"), Register("q", "main"))
    assert ret.sources == (Register("one", "main"),)
    assert ret.result_type == INT32

    # block / function attribution
    assert all(i.function == "main" for i in unit.instructions)
    assert [i.block for i in unit.instructions] == (
        ["entry"] * 6 + ["then"] * 3 + ["done"])

    assert unit.args == frozenset({Register("argc", "main")})
    # branch targets are never defined, so they surface as externals
    assert unit.externals == frozenset({Register("then", "main"), Register("done", "main")})


def test_golden_roundtrip():
    unit = parse_ll(GOLDEN, "golden.ll")
    again = parse_ll(format_unit(unit), "golden.ll")
    assert again == unit


def test_trace_allows_redefinition():
    text = "\n".join([
        "%a = add i32 %x, %y",
        "%b = mul i32 %a, %a",
        "%a = sub i32 %b, %x",   # shadows the first %a
        "%c = add i32 %a, %b",
    ])
    unit = parse_trace(text, "t")
    assert len(unit.instructions) == 4
    assert unit.instructions[0].dest == unit.instructions[2].dest == Register("a")
    assert unit.externals == frozenset({Register("x"), Register("y")})
    assert unit.format == ir.DYNAMIC_TRACE


def test_skipped_preamble_lines():
    text = """\
; ModuleID = 'demo'
source_filename = "demo.c"
target datalayout = "e-m:e"
declare i32 @puts(i8*)
@.str = constant [4 x i8] c"hey\\00"
!0 = !{i32 1}
%x = add i32 %a, %b
"""
    unit = parse_ll(text, "t")
    assert len(unit.instructions) == 1
    assert unit.instructions[0].opcode == "add"


@pytest.mark.parametrize("line,fragment", [
    ("%a", "without '='"),
    ("%a =", "right-hand side"),
    ("%a = 123", "opcode"),
    ("%a = store i32 %b, i32* %c", "store"),
    ("load i32, i32* %p", "destination"),
    ("%x = call void @f()", "void"),
    ("call i32 @f()", "destination"),
    ("%a = br label %next", "br"),
])
def test_malformed_lines(line, fragment):
    with pytest.raises(MalformedLine) as exc:
        parse_trace(line, "t")
    assert fragment in str(exc.value)


def test_malformed_line_number():
    text = "%a = add i32 %x, %y\n\n%bad\n"
    with pytest.raises(MalformedLine) as exc:
        parse_trace(text, "t")
    assert exc.value.line_no == 3


def test_unknown_opcode_keeps_registers():
    unit = parse_trace("%d = frobnicate i32 %a, [ %b, %c ]", "t")
    (inst,) = unit.instructions
    assert inst.opcode == "frobnicate"
    assert inst.dest == Register("d")
    assert inst.sources == (Register("a"), Register("b"), Register("c"))
    assert inst.result_type == OPAQUE


def test_llvm_style_zext_falls_back():
    # the canonical form is 'zext i64 %a'; the 'to' form degrades gracefully
    unit = parse_trace("%d = zext i32 %a to i64", "t")
    (inst,) = unit.instructions
    assert inst.opcode == "zext"
    assert inst.sources == (Register("a"),)
    assert inst.result_type == OPAQUE
    assert parse_trace("%d = zext i64 %a", "t").instructions[0].result_type == INT64


def test_addr_only_on_memory_ops():
    unit = parse_trace("%x = add i32 %a, %b ; addr=0xff", "t")
    assert unit.instructions[0].mem_addr is None
    unit = parse_trace("store i64 %a, i64* %p ; addr=0xff", "t")
    assert unit.instructions[0].mem_addr == 0xFF


def test_branch_forms():
    u = parse_trace("br label %loop", "t")
    assert u.instructions[0].sources == (Register("loop"),)
    u = parse_trace("br i1 %c, label %a, label %b", "t")
    assert len(u.instructions[0].sources) == 3
    u = parse_trace("ret void", "t")
    assert u.instructions[0].sources == () and u.instructions[0].result_type == VOID


# --- property tests -------------------------------------------------------

_name = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789", min_size=1, max_size=3)
_tyname = st.sampled_from(["i1", "i8", "i16", "i32", "i64", "float", "double"])
_binop = st.sampled_from(sorted(ir.BINARY_OPCODES - {"icmp", "fcmp"}))


@st.composite
def _line(draw):
    kind = draw(st.integers(0, 8))
    a, b, c = (draw(_name) for _ in range(3))
    d = draw(_name)
    ty = draw(_tyname)
    if kind == 0:
        n = draw(st.integers(1, 3))
        srcs = ", ".join(f"%{draw(_name)}" for _ in range(n))
        return f"%{d} = {draw(_binop)} {ty} %{a}" + ("" if n == 0 else f", {srcs}")
    if kind == 1:
        pred = draw(st.sampled_from(sorted(ir.ICMP_PREDICATES)))
        return f"%{d} = icmp {pred} {ty} %{a}, %{b}"
    if kind == 2:
        addr = draw(st.integers(0, 2**16))
        return f"%{d} = load {ty}, {ty}* %{a} ; addr=0x{addr:x}"
    if kind == 3:
        return f"store {ty} %{a}, {ty}* %{b}"
    if kind == 4:
        return f"%{d} = getelementptr {ty}, {ty}* %{a}, i64 %{b}"
    if kind == 5:
        return f"%{d} = alloca {ty}"
    if kind == 6:
        return f"%{d} = call {ty} @fn({ty} %{a}, {ty} %{b})"
    if kind == 7:
        return f"br i1 %{a}, label %{b}, label %{c}"
    return f"%{d} = mystery.op %{a}, %{b}"


@given(st.lists(_line(), min_size=1, max_size=20))
@settings(max_examples=150)
def test_parse_format_parse_is_stable(lines):
    text = "\n".join(lines)
    first = parse_trace(text, "prop")
    second = parse_trace(format_unit(first), "prop")
    assert second == first


@given(st.lists(_line(), min_size=1, max_size=20))
@settings(max_examples=100)
def test_indices_are_dense(lines):
    unit = parse_trace("\n".join(lines), "prop")
    assert [i.index for i in unit.instructions] == list(range(len(unit.instructions)))


@given(st.lists(_name, min_size=1, max_size=6, unique=True), _name)
def test_fallback_accounts_for_every_register(tokens, dest):
    line = f"%{dest} = weird.op " + ", ".join(f"%{t}" for t in tokens)
    (inst,) = parse_trace(line, "prop").instructions
    assert [r.name for r in inst.sources] == tokens


@given(st.lists(_line(), min_size=1, max_size=15))
@settings(max_examples=100)
def test_externals_are_exactly_undefined_uses(lines):
    unit = parse_trace("\n".join(lines), "prop")
    defined = set()
    undefined_uses = set()
    for inst in unit.instructions:
        for s in inst.sources:
            if s not in defined:
                undefined_uses.add(s)
        if inst.dest is not None:
            defined.add(inst.dest)
    assert unit.externals == frozenset(undefined_uses)
