"""Randomized whole-pipeline fuzz: generated IR through -O2, selection under
every extension set, then simulator-vs-interpreter comparison. Catches
interactions the hand-written corpus cannot: patterns nested inside each
other, canonicalization flips feeding the matchers, materialized constants as
pattern operands."""

import random

import pytest

from rv32x import codegen, ir, midend, sim

from conftest import ALL_MATTRS, compile_fn

BINOPS = ["add", "sub", "mul", "and", "or", "xor", "shl", "lshr", "ashr"]
CONST_POOL = [-1, 0, 1, 2, 3, 6, 10, 16, 30, 31, 127, 2047, -2048,
              4097, 12291, 0x7FFFFFFF, -0x80000000]


def gen_arith_fn(rng: random.Random, idx: int) -> str:
    nargs = rng.randrange(1, 4)
    params = ", ".join(f"i32 %a{i}" for i in range(nargs))
    vals = [f"%a{i}" for i in range(nargs)]
    lines = [f"define i32 @fz{idx}({params}) {{"]
    for n in range(rng.randrange(1, 13)):
        op = rng.choice(BINOPS)

        def operand():
            if rng.random() < 0.3:
                return str(rng.choice(CONST_POOL))
            return rng.choice(vals)

        a, b = operand(), operand()
        if a.lstrip("-").isdigit() and b.lstrip("-").isdigit():
            a = rng.choice(vals)  # keep at least one register operand
        lines.append(f"  %v{n} = {op} i32 {a}, {b}")
        vals.append(f"%v{n}")
    lines.append(f"  ret i32 {vals[-1]}")
    lines.append("}")
    return "\n".join(lines)


def gen_memory_fn(rng: random.Random, idx: int) -> str:
    """Loads from struct-style offsets, a bitwise mixing body, then stores."""
    ncells = rng.randrange(2, 6)
    lines = [f"define void @fm{idx}(ptr %p) {{"]
    vals = []
    for i in range(ncells):
        lines.append(f"  %g{i} = getelementptr i8, ptr %p, i32 {4 * i}")
        lines.append(f"  %l{i} = load i32, ptr %g{i}")
        vals.append(f"%l{i}")
    for n in range(rng.randrange(1, 9)):
        op = rng.choice(["and", "or", "xor", "add", "shl", "lshr"])
        a = rng.choice(vals)
        b = rng.choice(vals + [str(rng.choice([1, 2, -1, 16, 30]))])
        lines.append(f"  %m{n} = {op} i32 {a}, {b}")
        vals.append(f"%m{n}")
    for i in rng.sample(range(ncells), rng.randrange(1, ncells + 1)):
        lines.append(f"  store i32 {rng.choice(vals)}, ptr %g{i}")
    lines.append("  ret void")
    lines.append("}")
    return "\n".join(lines)


@pytest.mark.parametrize("seed", range(8))
def test_fuzz_arith_functions(seed, desc):
    rng = random.Random(1000 + seed)
    for idx in range(12):
        text = gen_arith_fn(rng, idx)
        mod = ir.parse_ir(text, f"fuzz{seed}_{idx}")
        opt, _ = midend.run_pipeline(mod, midend.DEFAULT_PIPELINE)
        fn0 = mod.functions[0]
        nargs = len(fn0.params)
        inputs = [[rng.getrandbits(32) for _ in range(nargs)]
                  for _ in range(8)]
        for mattr in ALL_MATTRS:
            mf, _ = compile_fn(opt.functions[0], opt, desc, mattr)
            words = codegen.emit_words(mf, desc, {})
            for args in inputs:
                want, _ = sim.ir_interpret(fn0, args)
                got, _, _ = sim.run_function(words, args, {})
                assert got == want, (text, mattr, args)


@pytest.mark.parametrize("seed", range(8))
def test_fuzz_memory_functions(seed, desc):
    rng = random.Random(2000 + seed)
    for idx in range(8):
        text = gen_memory_fn(rng, idx)
        mod = ir.parse_ir(text, f"fuzzm{seed}_{idx}")
        opt, _ = midend.run_pipeline(mod, midend.DEFAULT_PIPELINE)
        fn0 = mod.functions[0]
        for mattr in (None, "+zba,+zbb,+xcrypt"):
            mf, _ = compile_fn(opt.functions[0], opt, desc, mattr)
            words = codegen.emit_words(mf, desc, {})
            for _ in range(6):
                mem = {}
                for i in range(8):
                    sim.mem_write32(mem, 0x4000 + 4 * i, rng.getrandbits(32))
                _, m1 = sim.ir_interpret(fn0, [0x4000], dict(mem))
                _, m2, _ = sim.run_function(words, [0x4000], dict(mem))
                assert m1 == m2, (text, mattr)
