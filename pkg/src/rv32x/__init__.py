"""rv32x - a miniature RV32 compiler backend with custom crypto instructions.

The pipeline mirrors a production backend end to end: an SSA IR with parser,
printer and verifier (ir), an optimization pass pipeline (midend), a
data-driven instruction catalog with bit-exact encoding (target), per-block
selection DAGs with declarative and imperative pattern matching (isel),
register allocation and assembly/object emission (codegen), an RV32 simulator
used as the semantic oracle (sim), and a lit/FileCheck-style regression
harness (testkit). The `rv32x` CLI multiplexes all of it (driver).
"""

__version__ = "0.1.0"
