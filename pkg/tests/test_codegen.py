import random

import pytest

from rv32x import codegen, ir, sim
from rv32x import target as tgt
from rv32x.mir import MOp, MachineInstr, MachineFunction, REG_INDEX

from conftest import compile_corpus, compile_fn, corpus_module


def used_regs(asm: str) -> set[str]:
    regs = set()
    for line in asm.splitlines():
        for tok in line.replace(",", " ").replace("(", " ").replace(")", " ").split():
            if tok in REG_INDEX:
                regs.add(tok)
    return regs


def test_sbox_allocates_within_a_and_t_registers(desc):
    _, _, mf, asm = compile_corpus("sbox.ll", desc, None)
    assert mf.frame_size == 0
    assert all(r.startswith(("a", "t")) or r == "zero"
               for r in used_regs(asm)), used_regs(asm)


def test_identity_in_and_out_through_a0(desc):
    _, _, mf, asm = compile_corpus("identity.ll", desc, None)
    assert asm == "ident:\n\tret\n"
    assert mf.frame_size == 0


def test_lxr_demo_exact_output(desc):
    _, _, _, asm = compile_corpus("lxr.ll", desc, "+xcrypt")
    assert asm == "foo:\n\tlxr\ta0, a0, a1\n\tret\n"


def test_returned_second_argument_moves_to_a0(desc):
    mod = ir.parse_ir("define i32 @f(i32 %a, i32 %b) {\n  ret i32 %b\n}")
    mf, _ = compile_fn(mod.functions[0], mod, desc, None)
    asm = codegen.print_asm(mf, desc)
    assert "mv\ta0, a1" in asm
    words = codegen.emit_words(mf, desc, {})
    got, _, _ = sim.run_function(words, [5, 9], {})
    assert got == 9


def _many_live_values_fn(n: int) -> ir.Module:
    """n loads all live simultaneously, then folded down with xors."""
    lines = [f"define i32 @wide(ptr %p) {{"]
    for i in range(n):
        lines.append(f"  %g{i} = getelementptr i8, ptr %p, i32 {4 * i}")
        lines.append(f"  %v{i} = load i32, ptr %g{i}")
    acc = "%v0"
    for i in range(1, n):
        lines.append(f"  %acc{i} = xor i32 {acc}, %v{i}")
        acc = f"%acc{i}"
    # keep every load live past the last load by using them again
    for i in range(n):
        lines.append(f"  %re{i} = xor i32 {acc}, %v{i}")
        acc = f"%re{i}"
    lines.append(f"  ret i32 {acc}")
    lines.append("}")
    return ir.parse_ir("\n".join(lines))


def test_spilling_preserves_semantics(desc):
    mod = _many_live_values_fn(40)
    fn = mod.functions[0]
    mf, _ = compile_fn(fn, mod, desc, None)
    assert mf.frame_size > 0  # 40 simultaneously-live values must spill
    asm = codegen.print_asm(mf, desc)
    assert "addi\tsp, sp, -" in asm
    words = codegen.emit_words(mf, desc, {})
    rng = random.Random(55)
    for _ in range(32):
        mem = {}
        base = 0x4000
        for i in range(40):
            sim.mem_write32(mem, base + 4 * i, rng.getrandbits(32))
        want, _ = sim.ir_interpret(fn, [base], mem)
        got, _, _ = sim.run_function(words, [base], mem)
        assert got == want


def test_random_synthetic_blocks_survive_allocation(desc):
    """Pressure fuzz: random-width xor trees, simulator equivalence."""
    rng = random.Random(56)
    for trial in range(25):
        n = rng.randrange(2, 34)
        mod = _many_live_values_fn(n)
        fn = mod.functions[0]
        mf, _ = compile_fn(fn, mod, desc, None)
        words = codegen.emit_words(mf, desc, {})
        mem = {}
        for i in range(n):
            sim.mem_write32(mem, 0x4000 + 4 * i, rng.getrandbits(32))
        want, _ = sim.ir_interpret(fn, [0x4000], mem)
        got, _, _ = sim.run_function(words, [0x4000], mem)
        assert got == want, trial


def test_x0_never_written_meaningfully(desc):
    for name, mattr in (("sbox.ll", "+xcrypt"), ("madd.ll", "+xcrypt"),
                        ("mul6.ll", "+zba")):
        _, _, mf, _ = compile_corpus(name, desc, mattr)
        for mi in mf.instrs:
            d = desc.instr(mi.mnemonic)
            if d.ops and d.ops[0] == "rd" and not mi.is_ret:
                assert mi.ops[0].val != 0, mi


def test_prologue_epilogue_rules(desc):
    _, _, mf, asm = compile_corpus("rori.ll", desc, "+zbb")
    assert "sp" not in asm  # leaf with no frame gets nothing
    mf = MachineFunction("f", [MachineInstr(
        "JALR", [MOp.preg(0), MOp.preg(1), MOp.imm(0)], is_ret=True)],
        frame_size=4)
    out = codegen.insert_prologue_epilogue(mf)
    assert out.frame_size == 16  # 16-byte alignment
    asm = codegen.print_asm(out, desc)
    assert "addi\tsp, sp, -16" in asm and "addi\tsp, sp, 16" in asm
    assert asm.index("-16") < asm.index("sp, 16")


def test_global_store_uses_lo_relocation(desc):
    _, _, _, asm = compile_corpus("madd.ll", desc, "+xcrypt")
    assert "%lo(" in asm and "%hi(" in asm


def test_ret_prints_as_alias(desc):
    _, _, _, asm = compile_corpus("identity.ll", desc, None)
    assert "jalr" not in asm and asm.rstrip().endswith("ret")


def test_empty_void_function_is_label_plus_ret(desc):
    mod = ir.parse_ir("define void @nop() {\n  ret void\n}")
    mf, _ = compile_fn(mod.functions[0], mod, desc, None)
    assert codegen.print_asm(mf, desc) == "nop:\n\tret\n"


def test_asm_obj_agreement(desc):
    # decode(emit_words(f)) printed through the same printer equals
    # print_asm(f) for functions without relocations
    for name, mattr in (("sbox.ll", "+xcrypt"), ("rori.ll", "+zbb"),
                        ("mul6.ll", "+zba"), ("lxr.ll", "+xcrypt")):
        _, _, mf, asm = compile_corpus(name, desc, mattr)
        words = codegen.emit_words(mf, desc, {})
        redecoded = [tgt.decode(w, desc, frozenset(tgt.ALL_EXTENSIONS))
                     for w in words]
        lines = [asm.splitlines()[0]]
        for mi, orig in zip(redecoded, mf.instrs):
            mi.is_ret = orig.is_ret
            lines.append("\t" + codegen.format_instr(mi, desc))
        assert "\n".join(lines) + "\n" == asm, name


def test_emit_words_resolves_hi_lo(desc):
    mod = corpus_module("madd.ll")
    _, _, mf, _ = compile_corpus("madd.ll", desc, "+xcrypt")
    symbols = {"a": 0x1000, "b": 0x2000, "c": 0x3000}
    words = codegen.emit_words(mf, desc, symbols)
    ext = frozenset(tgt.ALL_EXTENSIONS)
    luis = [tgt.decode(w, desc, ext) for w in words
            if tgt.decode(w, desc, ext).mnemonic == "LUI"]
    assert {mi.ops[1].val for mi in luis} == {1, 2, 3}
    sws = [tgt.decode(w, desc, ext) for w in words
           if tgt.decode(w, desc, ext).mnemonic == "SW"]
    assert all(mi.ops[2].val == 0 for mi in sws)


def test_emit_words_unresolved_symbol(desc):
    _, _, mf, _ = compile_corpus("madd.ll", desc, "+xcrypt")
    with pytest.raises(codegen.CodegenError, match="unresolved symbol 'a'"):
        codegen.emit_words(mf, desc, {"b": 0x2000, "c": 0x3000})


def test_hi_lo_split_round_trips_through_encoding(desc):
    # lui+lw pair against an address: hi field 0x1, lo field 0x000
    mf = MachineFunction("f", [
        MachineInstr("LUI", [MOp.preg(10), MOp.sym("a", "hi20")]),
        MachineInstr("LW", [MOp.preg(11), MOp.preg(10), MOp.sym("a", "lo12")]),
    ])
    words = codegen.emit_words(mf, desc, {"a": 0x1000})
    ext = frozenset(tgt.ALL_EXTENSIONS)
    lui = tgt.decode(words[0], desc, ext)
    lw = tgt.decode(words[1], desc, ext)
    assert lui.ops[1].val == 0x1 and lw.ops[2].val == 0x000


def test_obj_text_roundtrip(desc):
    _, _, mf, _ = compile_corpus("madd.ll", desc, "+xcrypt")
    text = codegen.obj_text(mf, desc)
    words, relocs = codegen.parse_obj_text(text)
    assert len(words) == len(mf.instrs)
    assert any(k == "hi20" for _, k, _ in relocs)
    resolved = codegen.resolve_words(words, relocs, desc,
                                     {"a": 0x2000, "b": 0x2004, "c": 0x2008})
    assert resolved != words


def test_parse_asm_aliases_and_mem_operands(desc):
    text = """
    # a comment
label:
    li a0, 42
    mv a1, a0
    not a2, a1
    lw a3, 8(a1)
    sw a3, %lo(g)(a1)
    ret
"""
    instrs = codegen.parse_asm(text, desc)
    assert [mi.mnemonic for mi in instrs] == \
        ["ADDI", "ADDI", "XORI", "LW", "SW", "JALR"]
    assert instrs[0].ops[1].val == 0  # li reads x0
    assert instrs[3].ops[2].val == 8
    assert instrs[4].ops[2] == MOp.sym("g", "lo12")


def test_parse_asm_unknown_mnemonic(desc):
    with pytest.raises(codegen.AsmError, match="unknown mnemonic"):
        codegen.parse_asm("frobnicate a0, a1\n", desc)


def test_disassemble_unknown_word_placeholder(desc):
    out = codegen.disassemble_text([0xFFFFFFFF], desc,
                                   frozenset(tgt.ALL_EXTENSIONS))
    assert ".word 0xffffffff" in out


def test_assembler_printer_roundtrip_whole_catalog(desc):
    # print (no aliases) -> parse -> encode -> decode -> print again
    from test_target import _random_operands
    rng = random.Random(77)
    for d in sorted(desc.instrs.values(), key=lambda x: x.mnemonic):
        for _ in range(25):
            mi = MachineInstr(d.mnemonic, _random_operands(rng, d))
            text = codegen.format_instr(mi, desc, aliases=False)
            back = codegen.parse_asm_line(text, desc)
            assert back.mnemonic == mi.mnemonic, text
            w = tgt.encode(back, desc).word
            again = tgt.decode(w, desc, frozenset(tgt.ALL_EXTENSIONS))
            assert codegen.format_instr(again, desc, aliases=False) == text


def test_print_parse_compile_composition(desc):
    # compiling re-parsed printed IR is byte-identical to compiling directly
    from rv32x import midend
    from conftest import CORPUS_SHAPES, corpus_module
    for name in sorted(CORPUS_SHAPES):
        for mattr in (None, "+zba,+zbb,+xcrypt"):
            opt, _ = midend.run_pipeline(corpus_module(name),
                                         midend.DEFAULT_PIPELINE)
            reparsed = ir.parse_ir(ir.print_ir(opt), name)
            for fn in opt.functions:
                mf1, _ = compile_fn(fn, opt, desc, mattr)
                mf2, _ = compile_fn(reparsed.function(fn.name), reparsed,
                                    desc, mattr)
                assert codegen.print_asm(mf1, desc) == \
                    codegen.print_asm(mf2, desc), (name, mattr)


def test_allocation_order_preference(desc):
    # with arguments pinned in a0/a1, fresh values prefer the remaining
    # argument registers before temporaries
    mod = ir.parse_ir("""
define i32 @f(i32 %a, i32 %b) {
  %x = add i32 %a, %b
  %y = xor i32 %x, %a
  %z = and i32 %y, %b
  ret i32 %z
}
""")
    mf, _ = compile_fn(mod.functions[0], mod, desc, None)
    asm = codegen.print_asm(mf, desc)
    assert not any(r.startswith("s") for r in used_regs(asm))
