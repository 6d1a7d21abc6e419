import pathlib
import random
import re

import pytest

from rv32x import codegen, ir, isel, midend, sim
from rv32x import target as tgt

# ---------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per criterion at session end
# ---------------------------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}
_CRIT_RE = re.compile(r"test_criterion_(\d+)")
_CRIT_TITLES = {
    1: "NAXOR fusion opcode histograms",
    2: "LXR two-instruction form",
    3: "MLA selection and simulated result 436",
    4: "SHLXOR selection and shipped LLC test",
    5: "RORI vs shift expansion, rotation oracle",
    6: "SH1ADD multiply patterns, one-use predicate",
    7: "dependent-load hook vs declarative LXR",
    8: "midend statistics and final S-box shape",
    9: "and/xor rewrite, 8-bit exhaustive",
    10: "encode/decode bijectivity and disjointness",
    11: "end-to-end differential oracle",
    12: "immediate materialization thresholds",
    13: "lit harness self-check and update idempotence",
}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    m = _CRIT_RE.search(report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    outcome = "PASS" if report.passed else "FAIL"
    if _ACCEPTANCE.get(num) == "FAIL":
        outcome = "FAIL"
    _ACCEPTANCE[num] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        title = _CRIT_TITLES.get(num, "")
        terminalreporter.write_line(
            f"criterion {num:2d}: {_ACCEPTANCE[num]}  {title}")

PKG_ROOT = pathlib.Path(__file__).resolve().parent.parent / "src" / "rv32x"
CORPUS = PKG_ROOT / "corpus"
LIT_TESTS = PKG_ROOT / "tests"

ALL_MATTRS = [None, "+zba", "+zbb", "+xcrypt", "+zba,+zbb,+xcrypt"]


@pytest.fixture(scope="session")
def desc():
    return tgt.load_default_desc()


def corpus_text(name: str) -> str:
    return (CORPUS / name).read_text()


def corpus_module(name: str) -> ir.Module:
    return ir.parse_ir(corpus_text(name), name)


def optimized(name: str) -> ir.Module:
    mod, _ = midend.run_pipeline(corpus_module(name), midend.DEFAULT_PIPELINE)
    return mod


def compile_fn(fn, mod, desc, mattr=None, opt=False, zba_threshold=2):
    ext = tgt.parse_mattr(mattr)
    if opt:
        mod, _ = midend.run_pipeline(mod, midend.DEFAULT_PIPELINE)
        fn = mod.function(fn.name)
    dag = isel.build_dag(fn, mod)
    isel.combine(dag, "pre-legalize")
    isel.legalize(dag, ext)
    isel.combine(dag, "post-legalize")
    dag, debug = isel.select(dag, desc, ext, zba_threshold=zba_threshold)
    mf = isel.schedule(dag)
    mf = codegen.allocate_registers(mf, desc)
    mf = codegen.insert_prologue_epilogue(mf)
    return mf, debug


def compile_corpus(name: str, desc, mattr=None, fname=None, opt=True,
                   zba_threshold=2):
    """Returns (module, function name, MachineFunction, asm text)."""
    mod = corpus_module(name)
    fname = fname or mod.functions[0].name
    mf, _ = compile_fn(mod.function(fname), mod, desc, mattr, opt,
                       zba_threshold)
    return mod, fname, mf, codegen.print_asm(mf, desc)


def histogram(asm: str) -> dict[str, int]:
    return codegen.mnemonic_histogram(asm)


def make_ptr_args(rng: random.Random, n_ptrs: int, words_each: int = 5):
    mem = {}
    args = []
    for i in range(n_ptrs):
        base = 0x4000 + 0x100 * i
        args.append(base)
        for j in range(words_each):
            sim.mem_write32(mem, base + 4 * j, rng.getrandbits(32))
    return args, mem


# signature-aware argument synthesis for differential runs
CORPUS_SHAPES = {
    "sbox.ll": ("sbox", 1, 0),
    "sbox_unopt.ll": ("sbox", 1, 0),
    "lxr.ll": ("foo", 2, 0),
    "lxr_dep16.ll": ("xor_first_fifth", 1, 0),
    "lxr_dep8.ll": ("xor_first_third", 1, 0),
    "rori.ll": ("rotimm", 0, 1),
    "shlxor.ll": ("shlxor", 0, 2),
    "mul6.ll": ("mul6", 0, 2),
    "mul6_reuse.ll": ("mul6_reuse", 0, 2),
    "madd.ll": ("maddFunc", 0, 0),
    "identity.ll": ("ident", 0, 1),
}


def synth_args(rng: random.Random, n_ptrs: int, n_ints: int):
    args, mem = make_ptr_args(rng, n_ptrs)
    args += [rng.getrandbits(32) for _ in range(n_ints)]
    return args, mem


def differential_run(name: str, desc, mattr, trials: int, seed: int = 7
                     ) -> int:
    """Compare ir_interpret against the simulator on the compiled function.
    Returns the number of trials executed; raises AssertionError on any
    divergence."""
    fname, n_ptrs, n_ints = CORPUS_SHAPES[name]
    mod0 = corpus_module(name)
    fn0 = mod0.function(fname)
    gaddrs = sim.assign_global_addrs(mod0)
    _, _, mf, _ = compile_corpus(name, desc, mattr, fname)
    words = codegen.emit_words(mf, desc, gaddrs)
    rng = random.Random(seed)
    for t in range(trials):
        args, mem = synth_args(rng, n_ptrs, n_ints)
        mem.update(sim.seed_globals(mod0, gaddrs))
        r1, m1 = sim.ir_interpret(fn0, args, dict(mem), gaddrs)
        r2, m2, _ = sim.run_function(words, args, dict(mem))
        if fn0.return_type != "void":
            assert r1 == r2, f"{name} {mattr} trial {t}: ret {r1} != {r2}"
        assert m1 == m2, f"{name} {mattr} trial {t}: memory diverged"
    return trials
