"""Per-block selection DAG: build, combine, legalize, select, schedule.

The DAG starts target-independent (one node per IR instruction, memory ops
threaded on a linear chain from EntryToken), is legalized for the enabled
extensions (global addresses become ADD_LO(HI(g), g), rotates are kept legal
or expanded into shifts), then covered by machine nodes. Selection consults
imperative hooks at their root node kinds first, then declarative patterns
from the target description by descending priority, then per-kind fallbacks.
Scheduling is a deterministic Kahn linearization ordered by node creation.
"""

from __future__ import annotations

from dataclasses import dataclass
import heapq

from . import ir
from . import target as tgt
from .mir import MOp, MachineInstr, MachineFunction, X0, RA

COMM_KINDS = {"add", "mul", "and", "or", "xor"}
GENERIC_BINOPS = {"add", "sub", "mul", "and", "or", "xor", "shl", "srl", "sra"}
_IR_TO_DAG = {"lshr": "srl", "ashr": "sra"}

# generic kinds that legally remain after selection (they emit no instruction)
NON_INSTR_KINDS = {"EntryToken", "Register"}


class IselError(Exception):
    pass


class DagNode:
    """One DAG node. Value results are index "val", chain results "ch".

    Machine nodes (is_machine) reference an InstrDef mnemonic in `kind`; their
    ops list may contain DagValue register operands or ("imm", v) /
    ("sym", name, reloc) inline operands, in role order with rd omitted.
    """

    __slots__ = ("kind", "ops", "chain", "vt", "value", "uid",
                 "is_machine", "is_ret", "ret_value")

    def __init__(self, kind, ops=(), chain=None, vt="i32", value=None, uid=0,
                 is_machine=False):
        self.kind = kind
        self.ops = list(ops)
        self.chain = chain
        self.vt = vt
        self.value = value
        self.uid = uid
        self.is_machine = is_machine
        self.is_ret = False
        self.ret_value = None  # DagValue carried by the return

    def __repr__(self):
        return f"<{self.kind}#{self.uid}>"


@dataclass(frozen=True, eq=False)
class DagValue:
    node: DagNode
    res: str = "val"  # "val" | "ch"

    def __eq__(self, other):
        return (isinstance(other, DagValue) and self.node is other.node
                and self.res == other.res)

    def __hash__(self):
        return hash((id(self.node), self.res))


def ch(node: DagNode) -> DagValue:
    return DagValue(node, "ch")


def val(node: DagNode) -> DagValue:
    return DagValue(node, "val")


class SelDag:
    def __init__(self, name: str):
        self.name = name
        self.nodes: list[DagNode] = []
        self._uid = 0
        self.entry = self.new("EntryToken", vt="none")
        self.root: DagNode | None = None

    def new(self, kind, ops=(), chain=None, vt="i32", value=None,
            is_machine=False) -> DagNode:
        n = DagNode(kind, ops, chain, vt, value, self._uid, is_machine)
        self._uid += 1
        self.nodes.append(n)
        return n

    def live_nodes(self) -> list[DagNode]:
        """Nodes reachable from the root, in creation order."""
        if self.root is None:
            return list(self.nodes)
        seen: set[int] = set()
        stack = [self.root]
        while stack:
            n = stack.pop()
            if id(n) in seen:
                continue
            seen.add(id(n))
            for op in n.ops:
                if isinstance(op, DagValue):
                    stack.append(op.node)
            if n.chain is not None:
                stack.append(n.chain.node)
            if n.ret_value is not None:
                stack.append(n.ret_value.node)
        return [n for n in self.nodes if id(n) in seen]

    def uses(self) -> dict[int, list[tuple[DagNode, object]]]:
        """Map id(node) -> [(user, slot)] over value, chain and ret edges."""
        out: dict[int, list] = {}
        for n in self.live_nodes():
            for i, op in enumerate(n.ops):
                if isinstance(op, DagValue):
                    out.setdefault(id(op.node), []).append((n, ("op", i)))
            if n.chain is not None:
                out.setdefault(id(n.chain.node), []).append((n, ("chain",)))
            if n.ret_value is not None:
                out.setdefault(id(n.ret_value.node), []).append((n, ("ret",)))
        return out

    def value_use_count(self, node: DagNode) -> int:
        cnt = 0
        for n in self.live_nodes():
            for op in n.ops:
                if isinstance(op, DagValue) and op.node is node and op.res == "val":
                    cnt += 1
            if n.ret_value is not None and n.ret_value.node is node:
                cnt += 1
        return cnt

    def replace_value_uses(self, old: DagNode, new: DagValue):
        for n in self.nodes:
            n.ops = [new if isinstance(op, DagValue) and op.node is old
                     and op.res == "val" else op for op in n.ops]
            if n.ret_value is not None and n.ret_value.node is old:
                n.ret_value = new

    def replace_chain_uses(self, old: DagNode, new: DagValue):
        for n in self.nodes:
            if n.chain is not None and n.chain.node is old:
                n.chain = new
            n.ops = [new if isinstance(op, DagValue) and op.node is old
                     and op.res == "ch" else op for op in n.ops]

    def prune(self):
        live = {id(n) for n in self.live_nodes()}
        self.nodes = [n for n in self.nodes if id(n) in live]


# --------------------------------------------------------------------------
# Build
# --------------------------------------------------------------------------

def build_dag(fn: ir.Function, mod: ir.Module) -> SelDag:
    """One node per IR instruction; loads/stores on a linear chain."""
    dag = SelDag(fn.name)
    chain = ch(dag.entry)
    env: dict[str, DagValue] = {}
    consts: dict[int, DagNode] = {}
    globs: dict[str, DagNode] = {}

    def constant(v: int) -> DagValue:
        v = v & 0xFFFFFFFF
        if v not in consts:
            consts[v] = dag.new("Constant", value=v)
        return val(consts[v])

    for i, (pname, pty) in enumerate(fn.params):
        env[pname] = val(dag.new("Register", value=("arg", i), vt=pty))

    def operand(v: ir.Value) -> DagValue:
        if v.kind == "const":
            return constant(v.const)
        if v.kind == "global":
            if v.name not in globs:
                globs[v.name] = dag.new("GlobalAddress", value=v.name, vt="ptr")
            return val(globs[v.name])
        if v.kind == "undef":
            raise IselError("undef value reached instruction selection")
        return env[v.name]

    for inst in fn.body:
        op = inst.opcode
        if op in ir.BINOPS:
            kind = _IR_TO_DAG.get(op, op)
            n = dag.new(kind, [operand(inst.operands[0]), operand(inst.operands[1])])
            env[inst.result] = val(n)
        elif op in ir.INTRINSICS:
            n = dag.new(op, [operand(o) for o in inst.operands])
            env[inst.result] = val(n)
        elif op == "getelementptr":
            n = dag.new("add", [operand(inst.operands[0]),
                                constant(inst.operands[1].const)], vt="ptr")
            env[inst.result] = val(n)
        elif op == "load":
            n = dag.new("Load", [operand(inst.operands[0])], chain=chain,
                        vt=inst.ty)
            env[inst.result] = val(n)
            chain = ch(n)
        elif op == "store":
            n = dag.new("Store", [operand(inst.operands[0]),
                                  operand(inst.operands[1])],
                        chain=chain, vt="none")
            chain = ch(n)
        elif op == "ret":
            n = dag.new("ret", [], chain=chain, vt="none")
            if inst.operands:
                n.ret_value = operand(inst.operands[0])
            dag.root = n
        elif op == "alloca":
            raise IselError("alloca reached instruction selection; "
                            "run the optimization pipeline first")
        else:
            raise IselError(f"cannot build DAG node for opcode {op!r}")
    if dag.root is None:
        raise IselError(f"@{fn.name}: no return")
    return dag


# --------------------------------------------------------------------------
# Combine
# --------------------------------------------------------------------------

def combine(dag: SelDag, stage: str = "pre-legalize") -> SelDag:
    """Merge identical Constant/GlobalAddress nodes, drop unreachable nodes.
    Often a no-op post-legalize."""
    canon: dict = {}
    for n in dag.live_nodes():
        if n.kind in ("Constant", "GlobalAddress"):
            key = (n.kind, n.value)
            if key in canon and canon[key] is not n:
                dag.replace_value_uses(n, val(canon[key]))
            else:
                canon[key] = n
    dag.prune()
    return dag


# --------------------------------------------------------------------------
# Legalize
# --------------------------------------------------------------------------

def _rotates_legal(ext: frozenset[str]) -> bool:
    return "Zbb" in ext or "Xcrypt" in ext


def legalize(dag: SelDag, ext: frozenset[str]) -> SelDag:
    """Funnel shifts with equal inputs become rotates; rotates stay legal
    under Zbb/Xcrypt and expand to shifts otherwise; global addresses become
    ADD_LO(HI(g), g)."""
    for n in list(dag.live_nodes()):
        if n.kind in ("fshl", "fshr"):
            x, y, amt = n.ops
            if not (isinstance(x, DagValue) and isinstance(y, DagValue)
                    and x == y):
                raise IselError(
                    "funnel shift with distinct inputs is unsupported "
                    "(no funnel-shift instruction in any enabled extension)")
            if n.kind == "fshl":
                # rotl(x, c) == rotr(x, 32 - c)
                if amt.node.kind == "Constant":
                    c = (32 - amt.node.value) & 31
                    camt = val(dag.new("Constant", value=c))
                else:
                    sub = dag.new("sub", [val(dag.new("Constant", value=32)), amt])
                    camt = val(dag.new("and", [val(sub),
                                               val(dag.new("Constant", value=31))]))
            elif amt.node.kind == "Constant" and amt.node.value > 31:
                camt = val(dag.new("Constant", value=amt.node.value & 31))
            else:
                camt = amt
            rot = dag.new("rotr", [x, camt])
            dag.replace_value_uses(n, val(rot))

    if not _rotates_legal(ext):
        for n in list(dag.live_nodes()):
            if n.kind != "rotr":
                continue
            x, amt = n.ops
            if amt.node.kind == "Constant":
                c = amt.node.value & 31
                if c == 0:
                    dag.replace_value_uses(n, x)
                    continue
                shl = dag.new("shl", [x, val(dag.new("Constant", value=32 - c))])
                srl = dag.new("srl", [x, val(dag.new("Constant", value=c))])
            else:
                sub = dag.new("sub", [val(dag.new("Constant", value=32)), amt])
                left = dag.new("and", [val(sub), val(dag.new("Constant", value=31))])
                shl = dag.new("shl", [x, val(left)])
                srl = dag.new("srl", [x, amt])
            orn = dag.new("or", [val(shl), val(srl)])
            dag.replace_value_uses(n, val(orn))

    for n in list(dag.live_nodes()):
        if n.kind == "GlobalAddress":
            users = [(u, slot) for u, slot in dag.uses().get(id(n), ())
                     if u.kind not in ("HI", "ADD_LO")]
            if not users:
                continue
            hi = dag.new("HI", [val(n)], vt="ptr")
            addlo = dag.new("ADD_LO", [val(hi), val(n)], vt="ptr")
            for u, slot in users:
                if slot[0] == "op":
                    u.ops[slot[1]] = val(addlo)
                elif slot[0] == "ret":
                    u.ret_value = val(addlo)
    dag.prune()
    return dag


# --------------------------------------------------------------------------
# Selection
# --------------------------------------------------------------------------

@dataclass
class Hook:
    root_kind: str
    fn: object  # callable(ctx, node) -> DagNode | None


class HookRegistry:
    """Imperative matchers consulted before declarative patterns."""

    def __init__(self, hooks=()):
        self.hooks = list(hooks)

    def for_kind(self, kind: str):
        return [h for h in self.hooks if h.root_kind == kind]


class SelectCtx:
    def __init__(self, dag: SelDag, desc: tgt.TargetDesc, ext: frozenset[str],
                 zba_threshold: int = 2):
        self.dag = dag
        self.desc = desc
        self.ext = ext
        self.zba_threshold = zba_threshold
        self.debug_lines: list[str] = []
        self._materialized: dict[int, DagNode] = {}

    def debug(self, msg: str):
        self.debug_lines.append(msg)

    def make_machine(self, mnemonic: str, ops, chain=None) -> DagNode:
        d = self.desc.instr(mnemonic)
        if d.ext not in self.ext:
            raise IselError(f"{mnemonic} requires extension {d.ext}")
        has_chain = d.may_load or d.may_store
        n = self.dag.new(mnemonic, ops, chain=chain if has_chain else None,
                         vt="i32" if "rd" in d.ops else "none",
                         is_machine=True)
        return n

    def reg_operand(self, v: DagValue) -> DagValue:
        """Constants used as register operands are materialized here."""
        if v.node.kind != "Constant":
            return v
        node = self._materialized.get(id(v.node))
        if node is None:
            seq = tgt.materialize_imm(v.node.value, self.ext,
                                      self.zba_threshold)
            node = None
            for i, (mn, imm) in enumerate(seq):
                if mn == "LUI":
                    node = self.make_machine("LUI", [("imm", imm)])
                elif mn == "ADDI":
                    src = val(node) if node is not None else None
                    if src is None:
                        src = val(self.dag.new("Register", value=("phys", X0),
                                               vt="i32"))
                    node = self.make_machine("ADDI", [src, ("imm", imm)])
                else:
                    node = self.make_machine(mn, [val(node), val(node)])
            self._materialized[id(v.node)] = node
        return val(node)


def hook_xor_dependent_loads(ctx: SelectCtx, node: DagNode) -> DagNode | None:
    """Match xor of a load and a load at (same base + 16) and emit ADDI+LXR.

    Five progressive checks; any failure falls through to the declarative
    patterns.
    """
    if "Xcrypt" not in ctx.ext:
        return None
    dag = ctx.dag
    say = ctx.debug
    say(f"xor-loads hook: inspecting {node!r}")
    if len(node.ops) != 2:
        return None
    a, b = node.ops[0].node, node.ops[1].node
    if not (a.kind == "Load" and b.kind == "Load"):
        say("  [1] both operands are loads: no")
        return None
    say("  [1] both operands are loads: yes")
    addr2 = b.ops[0].node
    if addr2.kind != "add":
        say("  [2] second load address is an add: no")
        return None
    say("  [2] second load address is an add: yes")
    if not (isinstance(addr2.ops[0], DagValue) and addr2.ops[0] == a.ops[0]):
        say("  [3] add base equals first load address: no")
        return None
    say("  [3] add base equals first load address: yes")
    addend = addr2.ops[1].node
    if addend.kind != "Constant":
        say("  [4] second addend is a constant: no")
        return None
    say("  [4] second addend is a constant: yes")
    if (addend.value & 0xFFFFFFFF) != 16:
        say(f"  [5] constant equals 16: no ({addend.value})")
        return None
    say("  [5] constant equals 16: yes")
    if dag.value_use_count(a) != 1 or dag.value_use_count(b) != 1:
        say("  loads have other uses, not folding")
        return None
    if not _chain_adjacent(dag, [a, b]):
        say("  loads are not adjacent on the chain, not folding")
        return None
    base = a.ops[0]
    addi = ctx.make_machine("ADDI", [ctx.reg_operand(base), ("imm", 16)])
    lxr = ctx.make_machine("LXR", [ctx.reg_operand(base), val(addi)],
                           chain=a.chain)
    _splice_chains(dag, [a, b], lxr)
    say("  -> emitting ADDI + LXR")
    return lxr


DEFAULT_HOOKS = HookRegistry([Hook("xor", hook_xor_dependent_loads)])


def _chain_order(nodes: list[DagNode]) -> list[DagNode]:
    return sorted(nodes, key=lambda n: n.uid)


def _chain_adjacent(dag: SelDag, mems: list[DagNode]) -> bool:
    """Covered memory nodes must form a consecutive run on the linear chain."""
    mems = _chain_order(mems)
    for earlier, later in zip(mems, mems[1:]):
        if later.chain is None or later.chain.node is not earlier:
            return False
    return True


def _splice_chains(dag: SelDag, mems: list[DagNode], machine: DagNode):
    mems = _chain_order(mems)
    machine.chain = mems[0].chain
    dag.replace_chain_uses(mems[-1], ch(machine))


def _match(ctx: SelectCtx, pat: tgt.PatNode, v, binds: dict, covered: list,
           is_root: bool) -> bool:
    if not isinstance(v, DagValue):
        return False
    node = v.node
    if pat.kind == "capture":
        if pat.name in binds:
            return binds[pat.name] == v
        binds[pat.name] = v
        return True
    if pat.kind == "const":
        return node.kind == "Constant" and \
            tgt.sext(node.value, 32) == pat.value
    if pat.kind == "uimm5":
        if node.kind == "Constant" and 0 <= node.value <= 31:
            binds[pat.name] = ("imm", node.value)
            return True
        return False
    want = "Load" if pat.kind == "load" else pat.kind
    if node.kind != want or node.is_machine:
        return False
    if len(node.ops) != len(pat.children):
        return False
    if not is_root:
        if node.kind == "Load" or pat.oneuse:
            if ctx.dag.value_use_count(node) != 1:
                return False
    if node.kind == "Load":
        covered.append(node)

    orders = [tuple(range(len(pat.children)))]
    if node.kind in COMM_KINDS and len(pat.children) == 2:
        orders.append((1, 0))
    for order in orders:
        trial = dict(binds)
        cov = list(covered)
        ok = True
        for pi, oi in enumerate(order):
            if not _match(ctx, pat.children[pi], node.ops[oi], trial, cov, False):
                ok = False
                break
        if ok:
            binds.clear()
            binds.update(trial)
            covered[:] = cov
            return True
    if node.kind == "Load":
        covered.pop()
    return False


def _emit_target(ctx: SelectCtx, pat: tgt.PatNode, binds: dict,
                 chain_in) -> DagNode:
    ops = []
    for c in pat.children:
        if c.kind == "capture":
            b = binds[c.name]
            if isinstance(b, DagValue):
                ops.append(ctx.reg_operand(b))
            else:
                ops.append(b)  # ("imm", v)
        elif c.kind == "const":
            ops.append(("imm", c.value))
        else:
            ops.append(val(_emit_target(ctx, c, binds, None)))
    return ctx.make_machine(pat.kind, ops, chain=chain_in)


def _try_patterns(ctx: SelectCtx, node: DagNode) -> DagNode | None:
    for pat in ctx.desc.enabled_patterns(ctx.ext):
        root_kind = "Load" if pat.source.kind == "load" else pat.source.kind
        if root_kind != node.kind:
            continue
        binds: dict = {}
        covered: list[DagNode] = []
        if node.kind == "Load":
            covered.append(node)
        if not _match(ctx, pat.source, val(node), binds, covered, True):
            continue
        chain_in = None
        if covered:
            if not _chain_adjacent(ctx.dag, covered):
                continue
            chain_in = _chain_order(covered)[0].chain
        # register-operand binds: loads bound to address captures stay as
        # address values; nothing else to adjust
        new = _emit_target(ctx, pat.target, binds, chain_in)
        if covered:
            _splice_chains(ctx.dag, covered, new)
        ctx.debug(f"pattern {pat.source.kind} -> {pat.target.kind} "
                  f"matched at {node!r}")
        return new
    return None


def _fold_addr(ctx: SelectCtx, addr: DagValue):
    """Addressing-mode selection: returns (base operand, offset operand)."""
    node = addr.node
    if node.kind == "ADD_LO":
        hi, g = node.ops
        lui = _select_node(ctx, hi.node)
        return val(lui), ("sym", g.node.value, "lo12")
    if node.kind == "add":
        base, off = node.ops
        if off.node.kind == "Constant":
            imm = tgt.sext(off.node.value, 32)
            if -2048 <= imm <= 2047 and base.node.kind != "Constant":
                return ctx.reg_operand(base), ("imm", imm)
    return ctx.reg_operand(addr), ("imm", 0)


_BIN_FALLBACK = {
    "add": ("ADD", "ADDI"), "and": ("AND", "ANDI"), "or": ("OR", "ORI"),
    "xor": ("XOR", "XORI"), "sub": ("SUB", None), "mul": ("MUL", None),
    "shl": ("SLL", "SLLI"), "srl": ("SRL", "SRLI"), "sra": ("SRA", "SRAI"),
}
_SHIFTS = {"shl", "srl", "sra"}


def _select_fallback(ctx: SelectCtx, node: DagNode) -> DagNode:
    kind = node.kind
    if kind in GENERIC_BINOPS:
        rr, ri = _BIN_FALLBACK[kind]
        a, b = node.ops
        if ri is not None and b.node.kind == "Constant":
            imm = tgt.sext(b.node.value, 32)
            if kind in _SHIFTS:
                if 0 <= imm <= 31:
                    return ctx.make_machine(ri, [ctx.reg_operand(a), ("imm", imm)])
            elif -2048 <= imm <= 2047:
                return ctx.make_machine(ri, [ctx.reg_operand(a), ("imm", imm)])
        if ri is not None and a.node.kind == "Constant" and kind in COMM_KINDS:
            imm = tgt.sext(a.node.value, 32)
            if -2048 <= imm <= 2047:
                return ctx.make_machine(ri, [ctx.reg_operand(b), ("imm", imm)])
        return ctx.make_machine(rr, [ctx.reg_operand(a), ctx.reg_operand(b)])
    if kind == "Load":
        base, off = _fold_addr(ctx, node.ops[0])
        lw = ctx.make_machine("LW", [base, off], chain=node.chain)
        dag = ctx.dag
        dag.replace_chain_uses(node, ch(lw))
        return lw
    if kind == "Store":
        value, addr = node.ops
        base, off = _fold_addr(ctx, addr)
        sw = ctx.make_machine("SW", [ctx.reg_operand(value), base, off],
                              chain=node.chain)
        ctx.dag.replace_chain_uses(node, ch(sw))
        return sw
    if kind == "HI":
        g = node.ops[0].node
        return ctx.make_machine("LUI", [("sym", g.value, "hi20")])
    if kind == "ADD_LO":
        hi, g = node.ops
        return ctx.make_machine("ADDI", [ctx.reg_operand(hi),
                                         ("sym", g.node.value, "lo12")])
    if kind == "rotr":
        amt = node.ops[1].node
        if amt.kind == "Constant" and "Zbb" not in ctx.ext:
            raise IselError("rotr has no immediate form in the enabled "
                            "extensions")
        raise IselError(f"uncovered node kind 'rotr' "
                        f"(variable rotate requires Zbb)")
    raise IselError(f"uncovered node kind {node.kind!r}")



def _select_node(ctx: SelectCtx, node: DagNode) -> DagNode:
    """Select one generic node; returns its machine replacement."""
    if node.is_machine:
        return node
    replacement = _try_patterns(ctx, node)
    if replacement is None:
        replacement = _select_fallback(ctx, node)
    ctx.dag.replace_value_uses(node, val(replacement))
    return replacement


def select(dag: SelDag, desc: tgt.TargetDesc, ext: frozenset[str],
           hooks: HookRegistry | None = None, zba_threshold: int = 2
           ) -> tuple[SelDag, list[str]]:
    """Cover every generic node with machine nodes. Hooks first, then
    declarative patterns by priority, then fallbacks."""
    ctx = SelectCtx(dag, desc, ext, zba_threshold)
    hooks = hooks if hooks is not None else DEFAULT_HOOKS

    root = dag.root
    root.is_ret = True

    # consumers before producers: reverse postorder from the root
    order: list[DagNode] = []
    seen: set[int] = set()

    def visit(n: DagNode):
        if id(n) in seen:
            return
        seen.add(id(n))
        for op in n.ops:
            if isinstance(op, DagValue):
                visit(op.node)
        if n.chain is not None:
            visit(n.chain.node)
        if n.ret_value is not None:
            visit(n.ret_value.node)
        order.append(n)

    visit(root)
    for node in reversed(order):
        if node.is_machine or node.kind in NON_INSTR_KINDS:
            continue
        live = {id(n) for n in dag.live_nodes()}
        if id(node) not in live:
            continue
        if node.kind == "ret":
            jalr = ctx.make_machine("JALR", [("preg", X0), ("preg", RA),
                                             ("imm", 0)])
            jalr.vt = "none"  # rd is pinned to x0, no result to allocate
            jalr.chain = node.chain
            jalr.is_ret = True
            if node.ret_value is not None:
                jalr.ret_value = node.ret_value
            dag.root = jalr
            continue
        if node.kind in ("Constant", "GlobalAddress"):
            continue  # consumed by users; materialized on demand
        matched = None
        for hook in hooks.for_kind(node.kind):
            matched = hook.fn(ctx, node)
            if matched is not None:
                dag.replace_value_uses(node, val(matched))
                break
        if matched is None:
            _select_node(ctx, node)

    # ret value may be a bare constant: materialize it now
    if dag.root.ret_value is not None:
        dag.root.ret_value = ctx.reg_operand(dag.root.ret_value)
    dag.prune()
    for n in dag.live_nodes():
        if not n.is_machine and n.kind not in NON_INSTR_KINDS:
            raise IselError(f"selection left generic node {n!r}")
    return dag, ctx.debug_lines


# --------------------------------------------------------------------------
# Schedule
# --------------------------------------------------------------------------

def schedule(dag: SelDag) -> MachineFunction:
    """Deterministic Kahn topological linearization (ready set ordered by
    node creation index), then one MachineInstr per machine node over fresh
    virtual registers."""
    nodes = dag.live_nodes()
    index = {id(n): n for n in nodes}
    indeg = {id(n): 0 for n in nodes}
    succs: dict[int, list[DagNode]] = {id(n): [] for n in nodes}

    def edge(src: DagNode, dst: DagNode):
        succs[id(src)].append(dst)
        indeg[id(dst)] += 1

    for n in nodes:
        for op in n.ops:
            if isinstance(op, DagValue):
                edge(op.node, n)
        if n.chain is not None:
            edge(n.chain.node, n)
        if n.ret_value is not None:
            edge(n.ret_value.node, n)

    ready = [n.uid for n in nodes if indeg[id(n)] == 0]
    heapq.heapify(ready)
    by_uid = {n.uid: n for n in nodes}
    linear: list[DagNode] = []
    while ready:
        n = by_uid[heapq.heappop(ready)]
        linear.append(n)
        for s in succs[id(n)]:
            indeg[id(s)] -= 1
            if indeg[id(s)] == 0:
                heapq.heappush(ready, s.uid)
    if len(linear) != len(nodes):
        raise IselError("cycle in selection DAG")

    mf = MachineFunction(dag.name)
    vreg_of: dict[int, int] = {}
    nvreg = 0

    def operand_mop(op) -> MOp:
        nonlocal nvreg
        if isinstance(op, DagValue):
            src = op.node
            if src.kind == "Register":
                rkind, ridx = src.value
                return MOp.preg(10 + ridx if rkind == "arg" else ridx)
            return MOp.vreg(vreg_of[id(src)])
        tag = op[0]
        if tag == "imm":
            return MOp.imm(op[1])
        if tag == "preg":
            return MOp.preg(op[1])
        return MOp.sym(op[1], op[2])

    for n in linear:
        if not n.is_machine:
            continue
        if n.is_ret:
            if n.ret_value is not None:
                rv = operand_mop(n.ret_value)
                if rv.kind == "vreg":
                    mf.ret_vreg = rv.val
                elif rv.kind == "preg" and rv.val != 10:
                    # returned argument lives elsewhere: mv a0, <reg>
                    mf.instrs.append(MachineInstr(
                        "ADDI", [MOp.preg(10), rv, MOp.imm(0)]))
            mf.instrs.append(MachineInstr(
                "JALR", [operand_mop(op) for op in n.ops], is_ret=True))
            continue
        ops: list[MOp] = []
        if n.vt != "none":
            vreg_of[id(n)] = nvreg
            ops.append(MOp.vreg(nvreg))
            nvreg += 1
        for op in n.ops:
            ops.append(operand_mop(op))
        mf.instrs.append(MachineInstr(n.kind, ops))
    mf.num_vregs = nvreg
    return mf


# --------------------------------------------------------------------------
# Dot export
# --------------------------------------------------------------------------

def emit_dot(dag: SelDag, stage_label: str = "") -> str:
    """Graphviz rendering: solid value edges, dashed chain edges."""
    lines = [f'digraph "{dag.name}{":" + stage_label if stage_label else ""}" {{']
    nodes = dag.live_nodes()
    names = {id(n): f"n{n.uid}" for n in nodes}

    def label(n: DagNode) -> str:
        extra = ""
        if n.kind == "Constant":
            extra = f"<{tgt.sext(n.value, 32)}>"
        elif n.kind == "GlobalAddress":
            extra = f"<@{n.value}>"
        elif n.kind == "Register":
            extra = f"<{n.value[0]}{n.value[1]}>"
        return f"{n.kind}{extra}:{n.vt}"

    for n in nodes:
        lines.append(f'  {names[id(n)]} [label="{label(n)}"];')
    for n in nodes:
        for op in n.ops:
            if isinstance(op, DagValue):
                lines.append(f"  {names[id(op.node)]} -> {names[id(n)]};")
        if n.chain is not None:
            lines.append(f"  {names[id(n.chain.node)]} -> {names[id(n)]} "
                         f"[style=dashed];")
        if n.ret_value is not None:
            lines.append(f"  {names[id(n.ret_value.node)]} -> {names[id(n)]};")
    lines.append("}")
    return "\n".join(lines) + "\n"
