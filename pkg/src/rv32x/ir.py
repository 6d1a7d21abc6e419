"""SSA IR subset: types, text parser, printer and verifier.

The IR is deliberately tiny: i32/ptr scalars, single-basic-block functions,
flat getelementptr with a constant byte offset, bitwise/arith ops, loads and
stores, and the fshl/fshr intrinsics. NOT has no opcode of its own; it is
always spelled xor with -1. The parser accepts the surface syntax of typical
.ll listings (struct types, attribute groups, lifetime intrinsics, align
annotations) and normalizes everything into this canonical core.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

I32 = "i32"
PTR = "ptr"
VOID = "void"

BINOPS = ("add", "sub", "mul", "and", "or", "xor", "shl", "lshr", "ashr")
COMMUTATIVE = ("add", "mul", "and", "or", "xor")
INTRINSICS = ("fshl", "fshr")
OPCODES = BINOPS + INTRINSICS + ("alloca", "load", "store", "getelementptr", "ret")

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


class IrError(Exception):
    """Parse or structural error, carrying a source position."""

    def __init__(self, msg, line=0, col=0, source=""):
        super().__init__(msg)
        self.msg = msg
        self.line = line
        self.col = col
        self.source = source

    def __str__(self):
        prefix = f"{self.source}:" if self.source else ""
        if self.line:
            return f"{prefix}{self.line}:{self.col}: {self.msg}"
        return f"{prefix} {self.msg}" if prefix else self.msg


@dataclass(frozen=True)
class Value:
    """An operand: instruction result, argument, global ref, constant or undef."""

    kind: str  # "temp" | "arg" | "global" | "const" | "undef"
    name: str = ""
    const: int = 0
    ty: str = I32

    def __repr__(self):
        if self.kind == "const":
            return f"{self.const}"
        if self.kind == "undef":
            return "undef"
        return self.name


def const(v: int, ty: str = I32) -> Value:
    return Value("const", const=v, ty=ty)


UNDEF = Value("undef", ty=I32)


@dataclass(frozen=True)
class Inst:
    """One SSA instruction. `result` is None for store/ret.

    Operand conventions:
      binops/fshl/fshr  all-i32 operands, i32 result
      load              (ptr)
      store             (value, ptr) - value may be i32 or ptr
      getelementptr     (ptr base, const byte offset) -> ptr
      alloca            () -> ptr, `alloc_ty` records the slot type
      ret               (value)? per function return type
    """

    opcode: str
    result: str | None
    operands: tuple[Value, ...]
    ty: str = I32
    alloc_ty: str = I32

    def operand(self, i: int) -> Value:
        return self.operands[i]


@dataclass(frozen=True)
class BasicBlock:
    label: str
    insts: tuple[Inst, ...]


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[tuple[str, str], ...]  # (name, ty)
    return_type: str
    blocks: tuple[BasicBlock, ...]
    attributes: frozenset[str] = frozenset()

    @property
    def body(self) -> tuple[Inst, ...]:
        return self.blocks[0].insts

    def with_body(self, insts) -> "Function":
        return Function(self.name, self.params, self.return_type,
                        (BasicBlock(self.blocks[0].label, tuple(insts)),),
                        self.attributes)

    def with_attributes(self, attrs) -> "Function":
        return Function(self.name, self.params, self.return_type, self.blocks,
                        frozenset(attrs))


@dataclass(frozen=True)
class GlobalVar:
    name: str
    value_type: str = I32
    initializer: int = 0


@dataclass(frozen=True)
class Module:
    source_name: str
    globals: tuple[GlobalVar, ...]
    functions: tuple[Function, ...]

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def with_functions(self, funcs) -> "Module":
        return Module(self.source_name, self.globals, tuple(funcs))


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

# Known inert attribute tags; anything else on the define line is kept as
# free-form passthrough.
KNOWN_ATTRS = {
    "mustprogress", "norecurse", "nofree", "nosync", "nounwind", "willreturn",
    "local_unnamed_addr", "dso_local", "noinline", "optnone", "uwtable",
    "memory(argmem: readwrite)",
}

_NAME = r"[-A-Za-z$._0-9]+"
_RE_GLOBAL = re.compile(
    rf"@({_NAME})\s*=\s*(?:[\w]+\s+)*global\s+(\w+)\s+(-?\d+|zeroinitializer)")
_RE_STRUCT = re.compile(rf"%({_NAME})\s*=\s*type\s*{{(.*)}}")
_RE_DEFINE = re.compile(rf"define\s+(.*?)(\w+)\s+@({_NAME})\s*\((.*)\)\s*(.*){{\s*$")
_RE_LABEL = re.compile(rf"^({_NAME}):\s*(?:;.*)?$")
_RE_ATTRGROUP = re.compile(r"attributes\s+#(\d+)\s*=\s*{(.*)}")
_RE_RESULT = re.compile(rf"^%({_NAME})\s*=\s*(.*)$")
_SKIP_PREFIXES = ("source_filename", "target datalayout", "target triple",
                  "declare ", "!", ";")


def _strip_comment(line: str) -> str:
    # ';' starts a comment; the IR never contains string literals with ';'
    # except inside attribute strings, which we do not need to preserve.
    pos = line.find(";")
    if pos >= 0:
        return line[:pos]
    return line


def _split_inline_defines(text: str) -> list[str]:
    """Allow whole functions written on one line: define ... { inst }"""
    lines = []
    for raw in text.splitlines():
        s = _strip_comment(raw).strip()
        if s.startswith("define") and "{" in s and not s.endswith("{"):
            head, rest = s.split("{", 1)
            lines.append(head + "{")
            rest = rest.strip()
            if rest.endswith("}"):
                body = rest[:-1].strip()
                if body:
                    lines.append(body)
                lines.append("}")
            elif rest:
                lines.append(rest)
        else:
            lines.append(raw)
    return lines


class _Parser:
    def __init__(self, text: str, source_name: str):
        self.lines = _split_inline_defines(text)
        self.source_name = source_name
        self.globals: list[GlobalVar] = []
        self.functions: list[Function] = []
        self.structs: dict[str, int] = {}  # name -> member count (all i32)
        self.attr_groups: dict[str, set[str]] = {}
        self.pending_groups: dict[str, set[str]] = {}  # func name -> group ids

    def err(self, msg, lineno, col=1):
        raise IrError(msg, lineno, col, self.source_name)

    def parse(self) -> Module:
        i = 0
        n = len(self.lines)
        while i < n:
            raw = self.lines[i]
            line = _strip_comment(raw).strip()
            i += 1
            if not line or line.startswith(_SKIP_PREFIXES):
                continue
            if line.startswith("attributes"):
                m = _RE_ATTRGROUP.match(line)
                if not m:
                    self.err("malformed attributes line", i)
                self.attr_groups[m.group(1)] = self._attr_tokens(m.group(2))
                continue
            if line.startswith("@"):
                self._parse_global(line, i)
                continue
            m = _RE_STRUCT.match(line)
            if m:
                self._parse_struct(m, i)
                continue
            if line.startswith("define"):
                i = self._parse_function(line, i)
                continue
            self.err(f"unrecognized top-level construct: {line!r}", i)
        self._apply_attr_groups()
        return Module(self.source_name, tuple(self.globals), tuple(self.functions))

    def _attr_tokens(self, body: str) -> set[str]:
        toks = set()
        for t in re.findall(r'"[^"]*"(?:="[^"]*")?|[\w().:]+(?:\([^)]*\))?', body):
            toks.add(t.strip('"'))
        return toks

    def _parse_global(self, line, lineno):
        m = _RE_GLOBAL.match(line)
        if not m:
            self.err(f"malformed global: {line!r}", lineno)
        name, ty, init = m.group(1), m.group(2), m.group(3)
        if ty == "i64":
            self.err("i64 unsupported", lineno)
        if ty != I32:
            self.err(f"global {name}: only i32 globals are supported", lineno)
        value = 0 if init == "zeroinitializer" else int(init)
        self._check_const(value, lineno)
        self.globals.append(GlobalVar(name, I32, value))

    def _parse_struct(self, m, lineno):
        name, body = m.group(1), m.group(2)
        members = [t.strip() for t in body.split(",") if t.strip()]
        if any(t != I32 for t in members):
            if "i64" in members:
                self.err("i64 unsupported", lineno)
            self.err(f"struct %{name}: only i32 members are supported", lineno)
        self.structs[name] = len(members)

    def _check_const(self, v, lineno):
        if not (INT32_MIN <= v <= INT32_MAX):
            self.err(f"integer constant {v} does not fit in 32 signed bits", lineno)

    def _parse_type(self, tok, lineno):
        if tok == "i64":
            self.err("i64 unsupported", lineno)
        if tok not in (I32, PTR, VOID):
            self.err(f"unknown type {tok!r}", lineno)
        return tok

    def _parse_function(self, header, start) -> int:
        m = _RE_DEFINE.match(header)
        if not m:
            self.err(f"malformed define line: {header!r}", start)
        pre, rett, name, paramstr, post = m.groups()
        if rett == "i64":
            self.err("i64 unsupported", start)
        return_type = self._parse_type(rett, start)
        attrs = set()
        groups = set()
        for tok in pre.split() + post.split():
            if tok.startswith("#"):
                groups.add(tok[1:])
            else:
                attrs.add(tok)
        params = []
        if paramstr.strip():
            for p in paramstr.split(","):
                toks = p.split()
                pty = self._parse_type(toks[0], start)
                pname = toks[-1]
                if not pname.startswith("%"):
                    self.err(f"unnamed parameter in @{name}", start)
                params.append((pname[1:], pty))
        insts, label, end = self._parse_body(name, start)
        fn = Function(name, tuple(params), return_type,
                      (BasicBlock(label, tuple(insts)),), frozenset(attrs))
        self.functions.append(fn)
        self.pending_groups[name] = groups
        return end

    def _apply_attr_groups(self):
        out = []
        for fn in self.functions:
            tags = set(fn.attributes)
            for g in self.pending_groups.get(fn.name, ()):
                tags |= self.attr_groups.get(g, set())
            out.append(fn.with_attributes(tags))
        self.functions = out

    def _parse_body(self, fname, start):
        insts = []
        label = "entry"
        saw_label = False
        i = start
        n = len(self.lines)
        while i < n:
            raw = self.lines[i]
            line = _strip_comment(raw).strip()
            i += 1
            if not line:
                continue
            if line == "}":
                return insts, label, i
            m = _RE_LABEL.match(line)
            if m:
                if saw_label or insts:
                    self.err("multi-block functions are not supported "
                             "(single basic block only)", i)
                label = m.group(1)
                saw_label = True
                continue
            insts.append(self._parse_inst(line, i))
        self.err(f"unterminated function @{fname}", start)

    def _value(self, tok, ty, lineno) -> Value:
        tok = tok.strip()
        if tok.startswith("%"):
            return Value("temp", tok[1:], ty=ty)  # may be an arg; resolved later
        if tok.startswith("@"):
            return Value("global", tok[1:], ty=PTR)
        if tok == "undef":
            return Value("undef", ty=ty)
        try:
            v = int(tok)
        except ValueError:
            self.err(f"bad operand {tok!r}", lineno)
        self._check_const(v, lineno)
        return const(v, ty)

    def _typed_value(self, text, lineno) -> Value:
        toks = text.strip().split(None, 1)
        if len(toks) != 2:
            self.err(f"expected typed operand, got {text!r}", lineno)
        ty = self._parse_type(toks[0], lineno)
        return self._value(toks[1], ty, lineno)

    def _parse_inst(self, line, lineno) -> Inst:
        if "i64" in line.split() or re.search(r"\bi64\b", line):
            # lifetime intrinsics carry an i64 size and are discarded wholesale
            if "llvm.lifetime" not in line:
                self.err("i64 unsupported", lineno)
        result = None
        rest = line
        m = _RE_RESULT.match(line)
        if m:
            result, rest = m.group(1), m.group(2).strip()
        op = rest.split(None, 1)[0]

        if "llvm.lifetime" in rest:
            return Inst("lifetime", None, (), VOID)
        if op in ("tail", "call") or rest.startswith("call"):
            return self._parse_call(result, rest, lineno)
        if op in BINOPS:
            return self._parse_binop(op, result, rest, lineno)
        if op == "load":
            m = re.match(r"load\s+(\w+)\s*,\s*ptr\s+(\S+)", rest)
            if not m:
                self.err(f"malformed load: {rest!r}", lineno)
            ty = self._parse_type(m.group(1), lineno)
            if ty == VOID:
                self.err("load of void", lineno)
            addr = self._value(m.group(2).rstrip(","), PTR, lineno)
            return Inst("load", result, (addr,), ty)
        if op == "store":
            m = re.match(r"store\s+(\w+)\s+([^,]+),\s*ptr\s+(\S+)", rest)
            if not m:
                self.err(f"malformed store: {rest!r}", lineno)
            ty = self._parse_type(m.group(1), lineno)
            val = self._value(m.group(2), ty, lineno)
            addr = self._value(m.group(3).rstrip(","), PTR, lineno)
            return Inst("store", None, (val, addr), VOID)
        if op == "getelementptr":
            return self._parse_gep(result, rest, lineno)
        if op == "alloca":
            m = re.match(r"alloca\s+(\w+)", rest)
            if not m:
                self.err(f"malformed alloca: {rest!r}", lineno)
            ty = self._parse_type(m.group(1), lineno)
            return Inst("alloca", result, (), PTR, alloc_ty=ty)
        if op == "ret":
            if rest.strip() == "ret void":
                return Inst("ret", None, (), VOID)
            m = re.match(r"ret\s+(\w+)\s+(\S+)", rest)
            if not m:
                self.err(f"malformed ret: {rest!r}", lineno)
            ty = self._parse_type(m.group(1), lineno)
            return Inst("ret", None, (self._value(m.group(2), ty, lineno),), ty)
        self.err(f"unknown opcode {op!r}", lineno)

    def _parse_binop(self, op, result, rest, lineno) -> Inst:
        body = rest[len(op):].strip()
        while body.split(None, 1)[0] in ("nsw", "nuw", "exact") and " " in body:
            body = body.split(None, 1)[1]
        m = re.match(r"(\w+)\s+([^,]+),\s*(\S+)$", body)
        if not m:
            self.err(f"malformed {op}: {rest!r}", lineno)
        ty = self._parse_type(m.group(1), lineno)
        if ty != I32:
            self.err(f"{op} requires i32 operands", lineno)
        a = self._value(m.group(2), ty, lineno)
        b = self._value(m.group(3), ty, lineno)
        return Inst(op, result, (a, b), ty)

    def _parse_gep(self, result, rest, lineno) -> Inst:
        m = re.match(r"getelementptr\s+(?:inbounds\s+)?(%?[\w.]+)\s*,\s*ptr\s+([^,]+),\s*(.*)$",
                     rest)
        if not m:
            self.err(f"malformed getelementptr: {rest!r}", lineno)
        elem, basetok, idxstr = m.groups()
        base = self._value(basetok.strip(), PTR, lineno)
        indices = []
        for part in idxstr.split(","):
            t = part.split()
            if len(t) != 2 or not re.fullmatch(r"-?\d+", t[1]):
                self.err("getelementptr indices must be integer constants", lineno)
            if t[0] == "i64":
                self.err("i64 unsupported", lineno)
            indices.append(int(t[1]))
        offset = self._gep_offset(elem, indices, lineno)
        return Inst("getelementptr", result, (base, const(offset, I32)), PTR)

    def _gep_offset(self, elem, indices, lineno) -> int:
        if elem.startswith("%"):
            sname = elem[1:]
            if sname not in self.structs:
                self.err(f"unknown struct type {elem}", lineno)
            nmembers = self.structs[sname]
            if len(indices) != 2:
                self.err("struct getelementptr needs exactly two indices", lineno)
            first, member = indices
            if member < 0 or member >= nmembers:
                self.err(f"struct member index {member} out of range", lineno)
            return first * nmembers * 4 + member * 4
        if len(indices) != 1:
            self.err("scalar getelementptr needs exactly one index", lineno)
        scale = {"i8": 1, "i32": 4}.get(elem)
        if scale is None:
            self.err(f"unsupported getelementptr element type {elem}", lineno)
        return indices[0] * scale

    def _parse_call(self, result, rest, lineno) -> Inst:
        m = re.match(r"(?:tail\s+)?call\s+(\w+)\s+@([\w.]+)\((.*)\)", rest)
        if not m:
            self.err(f"malformed call: {rest!r}", lineno)
        rett, callee, argstr = m.groups()
        if callee.startswith("llvm.lifetime"):
            return Inst("lifetime", None, (), VOID)
        fsh = re.fullmatch(r"llvm\.(fshl|fshr)\.i32", callee)
        if not fsh:
            self.err(f"only fshl/fshr/lifetime intrinsic calls are supported, "
                     f"got @{callee}", lineno)
        ty = self._parse_type(rett, lineno)
        args = tuple(self._typed_value(a, lineno) for a in argstr.split(","))
        if len(args) != 3:
            self.err(f"{callee} takes three operands", lineno)
        return Inst(fsh.group(1), result, args, ty)


def _resolve_args(fn: Function) -> Function:
    """Fix up Value.kind for names that are function parameters."""
    argnames = {n for n, _ in fn.params}
    argty = dict(fn.params)

    def fix(v: Value) -> Value:
        if v.kind == "temp" and v.name in argnames:
            return Value("arg", v.name, ty=argty[v.name])
        return v

    out = []
    for inst in fn.body:
        out.append(Inst(inst.opcode, inst.result,
                        tuple(fix(o) for o in inst.operands),
                        inst.ty, inst.alloc_ty))
    return fn.with_body(out)


def parse_ir(text: str, source_name: str = "<stdin>") -> Module:
    """Parse IR text into a verified Module. Raises IrError with position."""
    p = _Parser(text, source_name)
    mod = p.parse()
    funcs = []
    for fn in mod.functions:
        fn = fn.with_body([i for i in fn.body if i.opcode != "lifetime"])
        funcs.append(_resolve_args(fn))
    mod = mod.with_functions(funcs)
    bad = verify(mod)
    if bad:
        raise IrError("verification failed: " + "; ".join(bad))
    return mod


# --------------------------------------------------------------------------
# Printer
# --------------------------------------------------------------------------

def _fmt_value(v: Value) -> str:
    if v.kind == "const":
        return str(v.const)
    if v.kind == "global":
        return "@" + v.name
    if v.kind == "undef":
        return "undef"
    return "%" + v.name


def _fmt_inst(inst: Inst) -> str:
    op = inst.opcode
    ops = inst.operands
    if op in BINOPS:
        return f"%{inst.result} = {op} {inst.ty} {_fmt_value(ops[0])}, {_fmt_value(ops[1])}"
    if op in INTRINSICS:
        args = ", ".join(f"{o.ty} {_fmt_value(o)}" for o in ops)
        return f"%{inst.result} = call {inst.ty} @llvm.{op}.i32({args})"
    if op == "load":
        return f"%{inst.result} = load {inst.ty}, ptr {_fmt_value(ops[0])}"
    if op == "store":
        return f"store {ops[0].ty} {_fmt_value(ops[0])}, ptr {_fmt_value(ops[1])}"
    if op == "getelementptr":
        return (f"%{inst.result} = getelementptr i8, ptr {_fmt_value(ops[0])}, "
                f"i32 {ops[1].const}")
    if op == "alloca":
        return f"%{inst.result} = alloca {inst.alloc_ty}"
    if op == "ret":
        if not ops:
            return "ret void"
        return f"ret {ops[0].ty} {_fmt_value(ops[0])}"
    raise IrError(f"cannot print opcode {op!r}")


def print_ir(mod: Module) -> str:
    """Render a module in canonical form; parse_ir(print_ir(m)) == m."""
    out = [f"; module: {mod.source_name}"]
    for g in mod.globals:
        out.append(f"@{g.name} = global i32 {g.initializer}")
    for fn in mod.functions:
        out.append("")
        params = ", ".join(f"{t} %{n}" for n, t in fn.params)
        attrs = " ".join(sorted(fn.attributes))
        attrs = (" " + attrs) if attrs else ""
        out.append(f"define {fn.return_type} @{fn.name}({params}){attrs} {{")
        if fn.blocks[0].label != "entry":
            out.append(f"{fn.blocks[0].label}:")
        for inst in fn.body:
            out.append("  " + _fmt_inst(inst))
        out.append("}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# Verifier
# --------------------------------------------------------------------------

def verify(mod: Module) -> list[str]:
    """Check structural and type invariants. Returns violations as strings."""
    bad = []
    seen = set()
    gnames = set()
    for g in mod.globals:
        if g.name in seen:
            bad.append(f"duplicate global @{g.name}")
        seen.add(g.name)
        gnames.add(g.name)
        if g.value_type != I32:
            bad.append(f"global @{g.name}: value type must be i32")
    for fn in mod.functions:
        if fn.name in seen:
            bad.append(f"duplicate symbol @{fn.name}")
        seen.add(fn.name)
        bad.extend(_verify_function(fn, gnames))
    return bad


def _verify_function(fn: Function, gnames) -> list[str]:
    bad = []

    def note(idx, msg):
        bad.append(f"@{fn.name}:{idx}: {msg}")

    if len(fn.blocks) != 1:
        return [f"@{fn.name}: exactly one basic block required"]
    defined = {}
    for i, (pname, pty) in enumerate(fn.params):
        if pname in defined:
            note(-1, f"duplicate parameter %{pname}")
        defined[pname] = pty
    body = fn.body
    if not body or body[-1].opcode != "ret":
        note(len(body), "function must end with ret")
    types = dict(defined)

    def check_use(idx, v: Value):
        if v.kind == "temp":
            if v.name not in types:
                note(idx, f"use before def: %{v.name}")
            elif types[v.name] != v.ty:
                note(idx, f"%{v.name} used as {v.ty} but defined as {types[v.name]}")
        elif v.kind == "arg":
            if v.name not in dict(fn.params):
                note(idx, f"unknown argument %{v.name}")
        elif v.kind == "global":
            if v.name not in gnames:
                note(idx, f"unknown global @{v.name}")
        elif v.kind == "undef":
            note(idx, "undefined value read (poison from read-before-write)")
        elif v.kind == "const":
            if not (INT32_MIN <= v.const <= INT32_MAX):
                note(idx, f"constant {v.const} out of 32-bit signed range")

    for idx, inst in enumerate(body):
        for v in inst.operands:
            check_use(idx, v)
        op = inst.opcode
        if op in BINOPS or op in INTRINSICS:
            want = 2 if op in BINOPS else 3
            if len(inst.operands) != want:
                note(idx, f"{op} expects {want} operands")
            elif any(o.ty != I32 for o in inst.operands) or inst.ty != I32:
                note(idx, f"{op} operates on i32 only")
        elif op == "load":
            if len(inst.operands) != 1 or inst.operands[0].ty != PTR:
                note(idx, "load takes one ptr operand")
            if inst.ty not in (I32, PTR):
                note(idx, "load result must be i32 or ptr")
        elif op == "store":
            if (len(inst.operands) != 2 or inst.operands[1].ty != PTR
                    or inst.operands[0].ty not in (I32, PTR)):
                note(idx, "store takes (i32|ptr value, ptr address)")
        elif op == "getelementptr":
            if (len(inst.operands) != 2 or inst.operands[0].ty != PTR
                    or inst.operands[1].kind != "const"):
                note(idx, "getelementptr takes (ptr base, constant byte offset)")
        elif op == "alloca":
            if inst.alloc_ty not in (I32, PTR):
                note(idx, "alloca slot must be i32 or ptr")
        elif op == "ret":
            if idx != len(body) - 1:
                note(idx, "ret must be the final instruction")
            if fn.return_type == VOID:
                if inst.operands:
                    note(idx, "ret void must not carry a value")
            elif len(inst.operands) != 1 or inst.operands[0].ty != fn.return_type:
                note(idx, f"ret must return {fn.return_type}")
        else:
            note(idx, f"unknown opcode {op!r}")
        if inst.result is not None:
            if inst.result in types or inst.result in gnames:
                note(idx, f"redefinition of %{inst.result}")
            types[inst.result] = inst.ty
    return bad
