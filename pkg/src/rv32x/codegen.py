"""Register allocation, prologue/epilogue, assembly and object emission.

Allocation is a linear scan over def/last-use intervals with the fixed
preference order a0-a7, t0-t6, s1-s11. Function arguments arrive pinned in
a0.., the return value is steered into a0. On pressure overflow the interval
with the furthest next use is spilled to an sp-relative slot and the scan is
redone with three scratch registers reserved for reload sequences.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import target as tgt
from .mir import (MOp, MachineInstr, MachineFunction, REG_INDEX,
                  parse_reg, reg_name, X0, RA, SP, A0)

ALLOC_ORDER = (
    [REG_INDEX[f"a{i}"] for i in range(8)]
    + [REG_INDEX[f"t{i}"] for i in range(7)]
    + [REG_INDEX[f"s{i}"] for i in range(1, 12)]
)
SCRATCH_REGS = (REG_INDEX["s9"], REG_INDEX["s10"], REG_INDEX["s11"])


class CodegenError(Exception):
    pass


def _inst_def_slot(desc: tgt.TargetDesc, mi: MachineInstr) -> int | None:
    d = desc.instr(mi.mnemonic)
    return 0 if d.ops and d.ops[0] == "rd" else None


# --------------------------------------------------------------------------
# Linear-scan register allocation
# --------------------------------------------------------------------------

@dataclass
class _Interval:
    vreg: int
    born: int
    dies: int
    uses: list[int]

    def next_use(self, after: int) -> int:
        for u in self.uses:
            if u > after:
                return u
        return 1 << 30


def _intervals(mf: MachineFunction, desc: tgt.TargetDesc):
    born: dict[int, int] = {}
    uses: dict[int, list[int]] = {}
    n = len(mf.instrs)
    for i, mi in enumerate(mf.instrs):
        dslot = _inst_def_slot(desc, mi)
        for s, op in enumerate(mi.ops):
            if op.kind != "vreg":
                continue
            if s == dslot:
                born[op.val] = i
            else:
                uses.setdefault(op.val, []).append(i)
    out = []
    for v, b in born.items():
        us = sorted(uses.get(v, []))
        dies = us[-1] if us else b
        if v == mf.ret_vreg:
            dies = n  # must survive into the return
        out.append(_Interval(v, b, dies, us))
    out.sort(key=lambda iv: (iv.born, iv.vreg))
    return out


def _preg_windows(mf: MachineFunction, desc: tgt.TargetDesc):
    """Conservative liveness window per physical register already present."""
    windows: dict[int, list[int, int]] = {}
    n = len(mf.instrs)
    for i, mi in enumerate(mf.instrs):
        dslot = _inst_def_slot(desc, mi)
        for s, op in enumerate(mi.ops):
            if op.kind != "preg" or op.val in (X0, RA, SP):
                continue
            is_def = s == dslot
            w = windows.get(op.val)
            if w is None:
                windows[op.val] = [i if is_def else -1, i]
            else:
                w[1] = i
    ret_like = any(mi.is_ret for mi in mf.instrs)
    if ret_like and mf.ret_vreg is None and A0 in windows:
        # a0 already carries the return value; keep it live to the end
        windows[A0][1] = n
    return windows


def allocate_registers(mf: MachineFunction, desc: tgt.TargetDesc
                       ) -> MachineFunction:
    """Assign physical registers; spill on overflow. Always succeeds."""
    out = _allocate(mf, desc, reserve_scratch=False)
    if out is None:
        out = _allocate(mf, desc, reserve_scratch=True)
        if out is None:
            raise CodegenError("register allocation failed even with spilling")
    return out


def _allocate(mf: MachineFunction, desc: tgt.TargetDesc, reserve_scratch: bool
              ) -> MachineFunction | None:
    pool = [r for r in ALLOC_ORDER
            if not (reserve_scratch and r in SCRATCH_REGS)]
    intervals = _intervals(mf, desc)
    pwin = _preg_windows(mf, desc)
    assign: dict[int, int] = {}
    spilled: dict[int, int] = {}
    active: list[_Interval] = []

    def overlaps_preg(iv: _Interval, reg: int) -> bool:
        w = pwin.get(reg)
        return w is not None and not (iv.dies <= w[0] or w[1] <= iv.born)

    for iv in intervals:
        active = [a for a in active if a.dies > iv.born]
        taken = {assign[a.vreg] for a in active if a.vreg in assign}
        choices = pool
        if iv.vreg == mf.ret_vreg and A0 not in taken \
                and not overlaps_preg(iv, A0):
            choices = [A0] + pool
        reg = None
        for r in choices:
            if r not in taken and not overlaps_preg(iv, r):
                reg = r
                break
        if reg is None:
            if not reserve_scratch:
                return None
            # spill the interval whose next use is furthest away
            cands = [a for a in active if a.vreg in assign] + [iv]
            victim = max(cands, key=lambda a: (a.next_use(iv.born), a.vreg))
            if victim is iv:
                spilled[iv.vreg] = len(spilled)
                continue
            reg = assign.pop(victim.vreg)
            spilled[victim.vreg] = len(spilled)
            active = [a for a in active if a is not victim]
        assign[iv.vreg] = reg
        active.append(iv)

    if spilled and not reserve_scratch:
        return None
    return _rewrite(mf, desc, assign, spilled)


def _rewrite(mf: MachineFunction, desc: tgt.TargetDesc,
             assign: dict[int, int], spilled: dict[int, int]
             ) -> MachineFunction:
    out = MachineFunction(mf.name, frame_size=0, is_leaf=mf.is_leaf)
    nslots = len(spilled)
    if nslots:
        out.frame_size = (nslots * 4 + 15) & ~15

    def slot_off(v: int) -> int:
        return spilled[v] * 4

    ret_reg = assign.get(mf.ret_vreg) if mf.ret_vreg is not None else None
    for mi in mf.instrs:
        dslot = _inst_def_slot(desc, mi)
        pre: list[MachineInstr] = []
        post: list[MachineInstr] = []
        ops: list[MOp] = []
        scratch_iter = iter(SCRATCH_REGS)
        for s, op in enumerate(mi.ops):
            if op.kind != "vreg":
                ops.append(op)
                continue
            if op.val in spilled:
                if s == dslot:
                    r = SCRATCH_REGS[0]
                    post.append(MachineInstr("SW", [
                        MOp.preg(r), MOp.preg(SP), MOp.imm(slot_off(op.val))]))
                else:
                    r = next(scratch_iter)
                    pre.append(MachineInstr("LW", [
                        MOp.preg(r), MOp.preg(SP), MOp.imm(slot_off(op.val))]))
                ops.append(MOp.preg(r))
            else:
                ops.append(MOp.preg(assign[op.val]))
        new = MachineInstr(mi.mnemonic, ops, mi.is_ret)
        if mi.is_ret and ret_reg is not None and ret_reg != A0:
            pre.append(MachineInstr("ADDI", [MOp.preg(A0), MOp.preg(ret_reg),
                                             MOp.imm(0)]))
        if mi.is_ret and mf.ret_vreg is not None and mf.ret_vreg in spilled:
            pre.append(MachineInstr("LW", [MOp.preg(A0), MOp.preg(SP),
                                           MOp.imm(slot_off(mf.ret_vreg))]))
        out.instrs.extend(pre)
        out.instrs.append(new)
        out.instrs.extend(post)
    return out


def insert_prologue_epilogue(mf: MachineFunction) -> MachineFunction:
    """Leaf functions with no frame get nothing; otherwise a 16-byte aligned
    sp adjustment pair brackets the body."""
    if mf.frame_size == 0:
        return mf
    n = (mf.frame_size + 15) & ~15
    out = MachineFunction(mf.name, frame_size=n, is_leaf=mf.is_leaf)
    out.instrs.append(MachineInstr("ADDI", [MOp.preg(SP), MOp.preg(SP),
                                            MOp.imm(-n)]))
    for mi in mf.instrs:
        if mi.is_ret:
            out.instrs.append(MachineInstr("ADDI", [MOp.preg(SP), MOp.preg(SP),
                                                    MOp.imm(n)]))
        out.instrs.append(mi)
    return out


# --------------------------------------------------------------------------
# Assembly printing
# --------------------------------------------------------------------------

def _fmt_operand(op: MOp) -> str:
    if op.kind == "preg":
        return reg_name(op.val)
    if op.kind == "imm":
        return str(op.val)
    if op.kind == "sym":
        return f"%{'hi' if op.reloc == 'hi20' else 'lo'}({op.val})"
    return f"v{op.val}"


def format_instr(mi: MachineInstr, desc: tgt.TargetDesc,
                 aliases: bool = True) -> str:
    d = desc.instr(mi.mnemonic)
    ops = mi.ops
    if aliases:
        if mi.is_ret and mi.mnemonic == "JALR":
            return "ret"
        if mi.mnemonic == "ADDI" and ops[1].kind == "preg":
            if ops[1].val == X0 and ops[2].kind == "imm":
                return f"li\t{_fmt_operand(ops[0])}, {ops[2].val}"
            if ops[2].kind == "imm" and ops[2].val == 0:
                return f"mv\t{_fmt_operand(ops[0])}, {_fmt_operand(ops[1])}"
        if mi.mnemonic == "XORI" and ops[2].kind == "imm" and ops[2].val == -1:
            return f"not\t{_fmt_operand(ops[0])}, {_fmt_operand(ops[1])}"
    if d.may_load or d.may_store or mi.mnemonic == "JALR":
        if d.mnemonic == "LXR":
            pass  # register-register form, falls through
        else:
            # memory-style spelling: op rd/rs2, imm(rs1)
            head, base, off = ops[0], ops[1], ops[2]
            return (f"{d.asm}\t{_fmt_operand(head)}, "
                    f"{_fmt_operand(off)}({_fmt_operand(base)})")
    return f"{d.asm}\t" + ", ".join(_fmt_operand(op) for op in ops)


def print_asm(mf: MachineFunction, desc: tgt.TargetDesc) -> str:
    lines = [f"{mf.name}:"]
    for mi in mf.instrs:
        lines.append("\t" + format_instr(mi, desc))
    return "\n".join(lines) + "\n"


def mnemonic_histogram(asm: str) -> dict[str, int]:
    hist: dict[str, int] = {}
    for line in asm.splitlines():
        line = line.strip()
        if not line or line.endswith(":") or line.startswith(("#", ";", ".")):
            continue
        mn = line.split()[0]
        hist[mn] = hist.get(mn, 0) + 1
    return hist


# --------------------------------------------------------------------------
# Assembly parsing (the `mc --assemble` front half)
# --------------------------------------------------------------------------

_MEM_RE = re.compile(r"^(-?\d+|%(?:hi|lo)\([-\w.$]+\))\((\w+)\)$")
_SYM_RE = re.compile(r"^%(hi|lo)\(([-\w.$]+)\)$")


class AsmError(Exception):
    pass


def _parse_operand_token(tok: str):
    tok = tok.strip()
    m = _SYM_RE.match(tok)
    if m:
        return MOp.sym(m.group(2), "hi20" if m.group(1) == "hi" else "lo12")
    try:
        return MOp.imm(int(tok, 0))
    except ValueError:
        pass
    try:
        return MOp.preg(parse_reg(tok))
    except ValueError:
        raise AsmError(f"bad operand {tok!r}") from None


def parse_asm_line(line: str, desc: tgt.TargetDesc) -> MachineInstr | None:
    """One instruction or None for blank/label/directive lines."""
    line = line.split("#")[0].split(";")[0].strip()
    if not line or line.endswith(":") or line.startswith("."):
        return None
    parts = line.split(None, 1)
    mn = parts[0].lower()
    rest = parts[1] if len(parts) > 1 else ""
    toks = [t.strip() for t in rest.split(",")] if rest.strip() else []

    if mn == "ret":
        return MachineInstr("JALR", [MOp.preg(X0), MOp.preg(RA), MOp.imm(0)],
                            is_ret=True)
    if mn == "li":
        return MachineInstr("ADDI", [_parse_operand_token(toks[0]),
                                     MOp.preg(X0), _parse_operand_token(toks[1])])
    if mn == "mv":
        return MachineInstr("ADDI", [_parse_operand_token(toks[0]),
                                     _parse_operand_token(toks[1]), MOp.imm(0)])
    if mn == "not":
        return MachineInstr("XORI", [_parse_operand_token(toks[0]),
                                     _parse_operand_token(toks[1]), MOp.imm(-1)])

    d = desc.by_asm(mn)
    if d is None:
        raise AsmError(f"unknown mnemonic {mn!r}")
    mem_style = (d.may_load or d.may_store or d.mnemonic == "JALR") \
        and d.mnemonic != "LXR"
    ops: list[MOp] = []
    if mem_style:
        if len(toks) != 2:
            raise AsmError(f"{mn}: expected 'reg, imm(base)'")
        m = _MEM_RE.match(toks[1].replace(" ", ""))
        if not m:
            raise AsmError(f"{mn}: bad memory operand {toks[1]!r}")
        ops.append(_parse_operand_token(toks[0]))
        ops.append(MOp.preg(parse_reg(m.group(2))))
        ops.append(_parse_operand_token(m.group(1)))
    else:
        ops = [_parse_operand_token(t) for t in toks]
    if len(ops) != len(d.ops):
        raise AsmError(f"{mn}: expected {len(d.ops)} operands, got {len(ops)}")
    return MachineInstr(d.mnemonic, ops)


def parse_asm(text: str, desc: tgt.TargetDesc) -> list[MachineInstr]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        try:
            mi = parse_asm_line(line, desc)
        except AsmError as e:
            raise AsmError(f"line {lineno}: {e}") from None
        if mi is not None:
            out.append(mi)
    return out


# --------------------------------------------------------------------------
# Object emission
# --------------------------------------------------------------------------

def emit_words(mf: MachineFunction, desc: tgt.TargetDesc,
               symbol_base_map: dict[str, int]) -> list[int]:
    """One resolved word per instruction; HI20/LO12 use the carry-rounded
    split. Raises on symbols missing from the map."""
    words = []
    for mi in mf.instrs:
        mi2, _ = _resolve_instr(mi, symbol_base_map)
        words.append(tgt.encode(mi2, desc).word)
    return words


def _resolve_instr(mi: MachineInstr, symbols: dict[str, int]):
    ops = []
    had_sym = False
    for op in mi.ops:
        if op.kind == "sym":
            had_sym = True
            if op.val not in symbols:
                raise CodegenError(f"unresolved symbol {op.val!r}")
            hi, lo = tgt.split_hi_lo(symbols[op.val])
            ops.append(MOp.imm(hi if op.reloc == "hi20" else lo))
        else:
            ops.append(op)
    return MachineInstr(mi.mnemonic, ops, mi.is_ret), had_sym


def obj_text(mf: MachineFunction, desc: tgt.TargetDesc) -> str:
    """Unlinked object rendering: one 0xXXXXXXXX word per line plus a
    relocation table."""
    lines = []
    relocs = []
    for i, mi in enumerate(mf.instrs):
        w = tgt.encode(mi, desc)
        lines.append(f"0x{w.word:08x}")
        if w.reloc is not None:
            kind, sym = w.reloc
            relocs.append(f"# reloc {i} {kind.upper()} {sym}")
    return "\n".join(lines + relocs) + "\n"


def parse_obj_text(text: str) -> tuple[list[int], list[tuple[int, str, str]]]:
    words = []
    relocs = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("# reloc"):
            _, _, idx, kind, sym = line.split()
            relocs.append((int(idx), kind.lower(), sym))
        elif line.startswith("#"):
            continue
        else:
            words.append(int(line, 16))
    return words, relocs


def resolve_words(words: list[int], relocs, desc: tgt.TargetDesc,
                  symbols: dict[str, int],
                  ext: frozenset[str] = frozenset(tgt.ALL_EXTENSIONS)
                  ) -> list[int]:
    """Patch relocation fields into already-encoded words."""
    out = list(words)
    for idx, kind, sym in relocs:
        if sym not in symbols:
            raise CodegenError(f"unresolved symbol {sym!r}")
        hi, lo = tgt.split_hi_lo(symbols[sym])
        mi = tgt.decode(out[idx], desc, ext)
        if mi is None:
            raise CodegenError(f"cannot decode word {idx} to relocate")
        value = hi if kind == "hi20" else lo
        d = desc.instr(mi.mnemonic)
        imm_role = "imm20" if kind == "hi20" else "imm12"
        new_ops = [MOp.imm(value) if role == imm_role else op
                   for role, op in zip(d.ops, mi.ops)]
        out[idx] = tgt.encode(MachineInstr(mi.mnemonic, new_ops), desc).word
    return out


def disassemble_text(words: list[int], desc: tgt.TargetDesc,
                     ext: frozenset[str]) -> str:
    """Objdump-style listing; unknown encodings become .word placeholders."""
    lines = []
    for i, w in enumerate(words):
        mi = tgt.decode(w, desc, ext)
        byte_str = " ".join(f"{b:02x}" for b in w.to_bytes(4, "little"))
        if mi is None:
            text = f".word 0x{w:08x}"
        else:
            text = format_instr(mi, desc, aliases=False)
        lines.append(f"{4 * i:8x}: {byte_str}\t{text}")
    return "\n".join(lines) + "\n"
