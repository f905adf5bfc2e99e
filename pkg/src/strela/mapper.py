"""Kernel front end: DFG + placement manifests, legality checks, BFS routing
on the mesh, unrolling, shot expansion and configuration image emission.

Placement is manual (it comes from the manifest); only edge routing is
automated.
"""
import ast
import json
import math
import operator
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .elastic import JoinMergeMode, MASK32
from .errors import (DimensionMismatch, InvalidConfig, ParseError, UnboundStream,
                     Unroutable, UnrollIllegal)
from .memory import StreamDescriptor
from .pe import (D_CTRL, D_FUA, D_FUB, D_P1, DELTA, FB1, FB2, OPPOSITE, SIDES, AluOp,
                 CmpOp, DpMux, FuIn, OutSel, PEConfig, alu_eval, cmp_eval, others, pack_config)

KINDS = {
    # kind: (input ports, output ports)
    "InputStream": ((), ("out",)),
    "OutputStream": (("in",), ()),
    "Const": ((), ("out",)),
    "Alu": (("a", "b"), ("out", "out_d")),
    "Compare": (("a", "b"), ("out",)),
    "Branch": (("a", "b", "ctrl"), ("t", "f", "out")),
    "Merge": (("a", "b"), ("out",)),
    "Select": (("a", "b", "ctrl"), ("out",)),
}
COMPUTE = ("Alu", "Compare", "Branch", "Merge", "Select")
OUT_KIND = {"out": OutSel.FU, "out_d": OutSel.FU_delayed, "t": OutSel.B1, "f": OutSel.B2}
MAX_UNROLL = 4


@dataclass
class Node:
    id: str
    kind: str
    op: Optional[str] = None
    value: int = 0              # Const
    feedback: bool = False      # immediate feedback (reduction)
    delay: int = 0
    delay_expr: Optional[str] = None  # delay given as a parameter expression
    init: int = 0               # initial data register / reduction seed
    init_valid: bool = False    # emit one bootstrap token from `init`
    wire: Tuple[str, ...] = ()  # operands whose FU-in buffer is bypassed

    @property
    def ins(self):
        return KINDS[self.kind][0]

    @property
    def outs(self):
        return KINDS[self.kind][1]


@dataclass
class Edge:
    src: str
    src_port: str
    dst: str
    dst_port: str
    cls: str = "data"

    @property
    def name(self):
        return f"{self.src}.{self.src_port}->{self.dst}.{self.dst_port}"


@dataclass
class DFG:
    nodes: Dict[str, Node] = field(default_factory=dict)
    edges: List[Edge] = field(default_factory=list)

    def add(self, node: Node):
        if node.id in self.nodes:
            raise ParseError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        return node

    def connect(self, src, dst, cls="data"):
        s, sp = (src.split(".") + ["out"])[:2]
        d, dp = (dst.split(".") + ["in"])[:2]
        self.edges.append(Edge(s, sp, d, dp, cls))

    def inputs_of(self, nid) -> Dict[str, Edge]:
        return {e.dst_port: e for e in self.edges if e.dst == nid}

    def streams(self, kind):
        return [n.id for n in self.nodes.values() if n.kind == kind]

    def is_stateful(self) -> bool:
        if any(n.feedback or n.init_valid for n in self.nodes.values()):
            return True
        if any(e.src == e.dst for e in self.edges):
            return True
        return bool(_cycles(self))


@dataclass
class Placement:
    pes: Dict[str, Tuple[int, int]] = field(default_factory=dict)     # compute node -> (r, c)
    streams: Dict[str, Tuple[str, int]] = field(default_factory=dict)  # stream node -> (side, col)


@dataclass
class Shot:
    loops: List[Tuple[str, str]] = field(default_factory=list)  # (var, "range expr")
    streams: Dict[str, dict] = field(default_factory=dict)      # stream -> {base,size,stride}
    consts: Dict[str, str] = field(default_factory=dict)        # node -> value expr (partial reconfig)
    reconfigure: bool = False


@dataclass
class KernelManifest:
    name: str
    grid: Tuple[int, int]
    dfg: DFG
    placement: Placement
    streams: Dict[str, dict]
    shots: List[Shot]
    params: Dict[str, int] = field(default_factory=dict)
    host_overhead: Optional[int] = None
    routes: Optional[dict] = None
    doc: str = ""


# -- parsing -----------------------------------------------------------

def _node_from_json(d) -> Node:
    if "id" not in d or "kind" not in d:
        raise ParseError(f"node needs id and kind: {d}")
    if d["kind"] not in KINDS:
        raise ParseError(f"unknown node kind {d['kind']!r}")
    n = Node(id=str(d["id"]), kind=d["kind"], op=d.get("op"),
             value=int(d.get("value", 0)) & MASK32, feedback=bool(d.get("feedback", False)),
             delay=d["delay"] if isinstance(d.get("delay"), int) else 0,
             delay_expr=d["delay"] if isinstance(d.get("delay"), str) else None, init=int(d.get("init", 0)) & MASK32,
             init_valid=bool(d.get("init_valid", False)), wire=tuple(d.get("wire", ())))
    if n.kind == "Alu":
        n.op = n.op or "Add"
        if n.op not in AluOp.__members__:
            raise ParseError(f"node {n.id}: unknown ALU op {n.op!r}")
    if n.kind == "Branch":
        n.op = n.op or "Add"
        if n.op not in AluOp.__members__:
            raise ParseError(f"node {n.id}: unknown ALU op {n.op!r}")
    if n.kind == "Compare":
        if n.op not in ("EqZero", "GtZero"):
            raise ParseError(f"node {n.id}: compare op must be EqZero or GtZero")
    return n


def _split(ref, default):
    parts = str(ref).split(".")
    if len(parts) == 1:
        return parts[0], default
    if len(parts) == 2:
        return parts[0], parts[1]
    raise ParseError(f"bad endpoint {ref!r}")


def dfg_from_json(nodes, edges) -> DFG:
    g = DFG()
    for d in nodes:
        g.add(_node_from_json(d))
    for e in edges:
        if "src" not in e or "dst" not in e:
            raise ParseError(f"edge needs src and dst: {e}")
        s, sp = _split(e["src"], "out")
        t, tp = _split(e["dst"], "in")
        g.edges.append(Edge(s, sp, t, tp, e.get("class", "control" if tp == "ctrl" else "data")))
    return g


def parse_manifest(text: str) -> KernelManifest:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(d, dict):
        raise ParseError("manifest must be a JSON object")
    for key in ("name", "nodes", "edges", "placement", "streams", "shots"):
        if key not in d:
            raise ParseError(f"missing key {key!r}")
    grid = tuple(d.get("grid", (4, 4)))
    dfg = dfg_from_json(d["nodes"], d["edges"])
    k = int(d.get("unroll", 1))
    if k != 1:
        dfg = unroll(dfg, k)
    pl = Placement()
    for nid, where in d["placement"].items():
        if isinstance(where, (list, tuple)) and len(where) == 2 and where[0] in ("N", "S", "E", "W"):
            pl.streams[nid] = (where[0], int(where[1]))
        elif isinstance(where, (list, tuple)) and len(where) == 2:
            pl.pes[nid] = (int(where[0]), int(where[1]))
        else:
            raise ParseError(f"placement of {nid!r} must be [row, col] or [side, col]")
    for nid in list(pl.pes) + list(pl.streams):
        if nid not in dfg.nodes:
            raise ParseError(f"placement names unknown node {nid!r}")
    for n in dfg.nodes.values():
        if n.kind in ("InputStream", "OutputStream") and n.id not in pl.streams:
            raise UnboundStream(f"{n.kind} {n.id!r} has no memory node binding")
        if n.kind in ("InputStream", "OutputStream") and n.id not in d["streams"]:
            raise UnboundStream(f"{n.kind} {n.id!r} has no stream descriptor")
    shots = []
    for s in d["shots"]:
        loops = [(k2, str(v)) for k2, v in s.get("loops", {}).items()] if isinstance(s.get("loops"), dict) \
            else [tuple(x) for x in s.get("loops", [])]
        shots.append(Shot(loops, s.get("streams", {}), s.get("consts", {}), bool(s.get("reconfigure", False))))
    if not shots:
        raise ParseError("shot schedule is empty")
    m = KernelManifest(
        name=d["name"], grid=grid, dfg=dfg, placement=pl, streams=d["streams"], shots=shots,
        params={k2: int(v) for k2, v in d.get("params", {}).items()},
        host_overhead=d.get("host_overhead"), doc=d.get("doc", ""))
    _bind_delays(m)
    return m


def _bind_delays(m: KernelManifest):
    for n in m.dfg.nodes.values():
        if n.delay_expr is not None:
            n.delay = eval_expr(n.delay_expr, m.params)


def specialize(m: KernelManifest, dims: Optional[dict] = None) -> KernelManifest:
    """Copy of `m` with problem dimensions overridden (re-evaluates delay expressions)."""
    import copy
    out = copy.deepcopy(m)
    for key, v in (dims or {}).items():
        if key not in out.params:
            raise DimensionMismatch(f"{m.name}: unknown dimension {key!r}")
        out.params[key] = int(v)
    _bind_delays(out)
    return out


def load_manifest(path) -> KernelManifest:
    from pathlib import Path
    return parse_manifest(Path(path).read_text())


# -- validation -----------------------------------------------------------

def _cycles(dfg: DFG):
    """Strongly connected components with more than one node."""
    adj = {n: [] for n in dfg.nodes}
    for e in dfg.edges:
        if e.src != e.dst and e.src in adj and e.dst in adj:
            adj[e.src].append(e.dst)
    index, low, stack, on, out = {}, {}, [], set(), []
    counter = [0]

    def strong(v):
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on.add(v)
        for w in adj[v]:
            if w not in index:
                strong(w)
                low[v] = min(low[v], low[w])
            elif w in on:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on.discard(w)
                comp.append(w)
                if w == v:
                    break
            if len(comp) > 1:
                out.append(sorted(comp))

    for v in adj:
        if v not in index:
            strong(v)
    return out


def validate(dfg: DFG, placement: Placement, dims=(4, 4)) -> List[str]:
    rows, cols = dims
    diags = []
    nodes = dfg.nodes
    for e in dfg.edges:
        for nid, port, side in ((e.src, e.src_port, 1), (e.dst, e.dst_port, 0)):
            if nid not in nodes:
                diags.append(f"edge {e.name}: unknown node {nid!r}")
            elif port not in KINDS[nodes[nid].kind][side]:
                diags.append(f"edge {e.name}: {nodes[nid].kind} has no {'output' if side else 'input'} {port!r}")
        if e.dst_port == "ctrl" and e.cls != "control":
            diags.append(f"edge {e.name}: ctrl input needs a control edge")
        if e.src == e.dst:
            n = nodes.get(e.src)
            if e.dst_port == "ctrl":
                diags.append(f"edge {e.name}: feedback is not allowed on control inputs")
            elif n is not None and (n.kind not in ("Alu", "Select") or e.src_port != "out"):
                diags.append(f"edge {e.name}: only ALU/Select 'out' may feed back into its own operands")
    if diags:
        return diags

    seen_in = {}
    for e in dfg.edges:
        key = (e.dst, e.dst_port)
        if key in seen_in:
            diags.append(f"{e.dst}.{e.dst_port} has two drivers")
        seen_in[key] = e
    for n in nodes.values():
        ins = dfg.inputs_of(n.id)
        required = {"Alu": ("a",) if n.feedback else ("a", "b"), "Compare": ("a", "b"),
                    "Branch": ("a", "ctrl"), "Merge": ("a", "b"), "Select": ("a", "b", "ctrl"),
                    "OutputStream": ("in",)}.get(n.kind, ())
        for port in required:
            if port not in ins:
                diags.append(f"{n.kind} {n.id}: input {port!r} is unconnected")
        if n.kind == "Alu" and n.feedback:
            if "b" in ins:
                diags.append(f"Alu {n.id}: immediate feedback replaces operand b")
            if n.delay < 1:
                diags.append(f"Alu {n.id}: immediate feedback needs delay >= 1")
        consts = [p for p, e in ins.items() if nodes[e.src].kind == "Const"]
        if len(consts) > 1:
            diags.append(f"{n.kind} {n.id}: more than one constant operand")
        if "ctrl" in consts or (n.kind == "OutputStream" and consts):
            diags.append(f"{n.kind} {n.id}: constants cannot drive control or outputs")
        if n.kind == "Branch" and "b" not in ins and n.feedback:
            diags.append(f"Branch {n.id}: no feedback on branches")
        if n.delay and n.kind != "Alu":
            diags.append(f"{n.kind} {n.id}: delayed valid is only supported on ALU nodes")
        if n.kind == "Merge" and n.wire:
            diags.append(f"Merge {n.id}: merge operands must be buffered")
    for e in dfg.edges:
        if e.src_port == "out_d" and nodes[e.src].delay < 1:
            diags.append(f"edge {e.name}: delayed output without a delay")
    for comp in _cycles(dfg):
        if not any(nodes[x].init_valid for x in comp):
            diags.append(f"cycle {comp} has no bootstrap token (init_valid)")

    # placement rules
    occupied = {}
    for n in nodes.values():
        if n.kind in COMPUTE:
            if n.id not in placement.pes:
                diags.append(f"{n.kind} {n.id} is not placed")
                continue
            r, c = placement.pes[n.id]
            if not (0 <= r < rows and 0 <= c < cols):
                diags.append(f"{n.id} placed outside the {rows}x{cols} grid")
            occupied.setdefault((r, c), []).append(n)
        elif n.kind in ("InputStream", "OutputStream"):
            if n.id not in placement.streams:
                diags.append(f"{n.kind} {n.id} is not bound to a memory node")
                continue
            side, col = placement.streams[n.id]
            want = "N" if n.kind == "InputStream" else "S"
            if side != want:
                diags.append(f"{n.kind} {n.id} bound to the {side} border; "
                             f"{'inputs' if want == 'N' else 'outputs'} use the {want} border")
            if not 0 <= col < cols:
                diags.append(f"{n.id} bound to column {col} outside the grid")
    for where, ns in occupied.items():
        if len(ns) > 1:
            names = ", ".join(x.id for x in ns)
            if any(x.kind == "Compare" for x in ns):
                diags.append(f"PE{where}: comparator must sit in an isolated PE (shares with {names})")
            else:
                diags.append(f"PE{where}: more than one compute node ({names})")
    for side in ("N", "S"):
        cols_used = {}
        for nid, (s, c) in placement.streams.items():
            if s == side:
                if c in cols_used:
                    diags.append(f"{nid} and {cols_used[c]} share memory node {side}{c}")
                cols_used[c] = nid
    return diags


# -- routing ---------------------------------------------------------------

@dataclass
class Routing:
    rows: int
    cols: int
    in_net: dict = field(default_factory=dict)     # (pe, side) -> net
    out_net: dict = field(default_factory=dict)    # (pe, side) -> net
    in_dest: dict = field(default_factory=dict)    # (pe, side) -> set of ('fua'|'fub'|'ctrl'|'out', side)
    fu_out: dict = field(default_factory=dict)     # (pe, side) -> OutSel kind (FU outputs)
    operand_port: dict = field(default_factory=dict)  # (node, slot) -> side
    paths: dict = field(default_factory=dict)      # edge name -> list of hops (r, c, in, out)

    def used_pes(self):
        pes = {pe for pe, _ in self.in_net} | {pe for pe, _ in self.out_net}
        return pes


def _pe_of(placement: Placement, nid):
    return placement.pes[nid]


def route(dfg: DFG, placement: Placement, dims=(4, 4)) -> Routing:
    rows, cols = dims
    rt = Routing(rows, cols)
    nodes = dfg.nodes
    for e in dfg.edges:
        src, dst = nodes[e.src], nodes[e.dst]
        if src.kind == "Const" or e.src == e.dst:
            continue
        net = (e.src, e.src_port)
        if src.kind == "InputStream":
            side, col = placement.streams[e.src]
            start = ((0, col), 0)
            owner = rt.in_net.get(start)
            if owner not in (None, net):
                raise Unroutable(e.name, f"IMN{col} port already carries {owner}")
            rt.in_net[start] = net
            rt.in_dest.setdefault(start, set())
        if dst.kind == "OutputStream":
            target = ("omn", placement.streams[e.dst][1])
        else:
            target = ("fu", placement.pes[e.dst], e.dst_port)
        path = _bfs(rt, net, src, placement, target, e)
        rt.paths[e.name] = path
    return rt


def _bfs(rt: Routing, net, src: Node, placement, target, edge):
    rows, cols = rt.rows, rt.cols
    starts = []
    if src.kind != "InputStream":
        starts.append(("fu", placement.pes[src.id]))
    starts += sorted((("in", pe, p) for (pe, p), n in rt.in_net.items() if n == net),
                     key=lambda s: (s[1][0] * cols + s[1][1], s[2]))
    parent = {s: None for s in starts}
    q = deque(starts)
    found = None
    while q and found is None:
        s = q.popleft()
        pe = s[1]
        if s[0] == "in" and target[0] == "fu" and pe == target[1]:
            found = (s, None)
            break
        for o in range(4):
            if s[0] == "in" and o == s[2]:
                continue
            owner = rt.out_net.get((pe, o))
            if owner not in (None, net):
                continue
            r, c = pe
            dr, dc = DELTA[o]
            nr, nc = r + dr, c + dc
            if nr == rows and o == 2:
                if target == ("omn", nc) and owner is None:
                    found = (s, o)
                    break
                continue
            if not (0 <= nr < rows and 0 <= nc < cols):
                continue
            nxt = ("in", (nr, nc), OPPOSITE[o])
            if nxt in parent:
                continue
            if rt.in_net.get(nxt[1:]) not in (None, net):
                continue
            parent[nxt] = (s, o)
            q.append(nxt)
    if found is None:
        raise Unroutable(edge.name, "no free path on the mesh")

    # claim resources from the sink back to the tree
    s, o_last = found
    hops = []
    if target[0] == "omn":
        _claim_out(rt, net, s, o_last)
    else:
        slot = {"a": "fua", "b": "fub", "ctrl": "ctrl"}[target[2]]
        rt.in_dest.setdefault(s[1:], set()).add((slot, -1))
        rt.operand_port[(edge.dst, edge.dst_port)] = s[2]
    cur = s
    out_side = o_last if target[0] == "omn" else None
    while cur is not None:
        prev = parent[cur]
        if cur[0] == "in":
            hops.append((cur[1][0], cur[1][1], SIDES[cur[2]], SIDES[out_side] if out_side is not None else "FU"))
            rt.in_net[cur[1:]] = net
            rt.in_dest.setdefault(cur[1:], set())
        if prev is None:
            break
        ps, o = prev
        _claim_out(rt, net, ps, o)
        out_side = o
        cur = ps
    return list(reversed(hops))


def _claim_out(rt: Routing, net, s, o):
    pe = s[1]
    rt.out_net[(pe, o)] = net
    if s[0] == "fu":
        rt.fu_out[(pe, o)] = OUT_KIND[net[1]]
    else:
        rt.in_dest.setdefault(s[1:], set()).add(("out", o))


# -- configuration assembly ----------------------------------------------------

def build_configs(m: KernelManifest, rt: Optional[Routing] = None, consts=None) -> Dict[int, PEConfig]:
    """PE index (row-major) -> PEConfig for every PE the kernel uses."""
    rows, cols = m.grid
    dfg, pl = m.dfg, m.placement
    if rt is None:
        diags = validate(dfg, pl, m.grid)
        if diags:
            raise InvalidConfig("; ".join(diags))
        rt = route(dfg, pl, m.grid)
    consts = consts or {}
    fields_by_pe: Dict[Tuple[int, int], dict] = {}

    def f(pe):
        return fields_by_pe.setdefault(pe, {
            "pe_id": pe[0] * cols + pe[1], "eb_gate_mask": 0,
            "out_mux_sel": [OutSel.Disabled] * 4, "in_fork_mask": [0, 0, 0, 0]})

    for (pe, p), dests in rt.in_dest.items():
        d = f(pe)
        d["eb_gate_mask"] |= 1 << p
        for kind, o in dests:
            if kind == "out":
                k = others(p).index(o)
                d["in_fork_mask"][p] |= D_P1 << k
                d["out_mux_sel"][o] = OutSel(OutSel.in_P1 + others(o).index(p))
            else:
                d["in_fork_mask"][p] |= {"fua": D_FUA, "fub": D_FUB, "ctrl": D_CTRL}[kind]
    for (pe, o), sel in rt.fu_out.items():
        d = f(pe)
        d["out_mux_sel"][o] = sel
        d["fu_fork_mask"] = d.get("fu_fork_mask", 0) | (1 << o)

    for n in dfg.nodes.values():
        if n.kind not in COMPUTE:
            continue
        pe = pl.pes[n.id]
        d = f(pe)
        ins = dfg.inputs_of(n.id)
        d["join_mode"] = {"Branch": JoinMergeMode.JoinWithControl, "Select": JoinMergeMode.JoinWithControl,
                          "Merge": JoinMergeMode.Merge}.get(n.kind, JoinMergeMode.JoinNoControl)
        d["dp_mux_sel"] = {"Compare": DpMux.Cmp, "Select": DpMux.Mux, "Merge": DpMux.Mux}.get(n.kind, DpMux.Alu)
        if n.kind in ("Alu", "Branch"):
            d["alu_op"] = AluOp[n.op]
        if n.kind == "Compare":
            d["cmp_op"] = CmpOp[n.op]
        d["alu_fb_sel"] = int(n.feedback)
        d["delay_d"] = n.delay
        d["init_data_reg"] = n.init & MASK32
        d["init_valids"] = 1 if n.init_valid else 0
        # A port that feeds a coupled destination (ctrl or a wire operand) only
        # forks when the join fires, so any other operand taken from that same
        # port must be coupled too, or the join waits on a buffer that can
        # never fill.
        wired = set(n.wire)
        coupled = {rt.operand_port[(n.id, "ctrl")]} if "ctrl" in ins else set()
        coupled |= {rt.operand_port[(n.id, s)] for s in n.wire
                    if s in ins and (n.id, s) in rt.operand_port}
        for s in ("a", "b"):
            if (n.id, s) in rt.operand_port and rt.operand_port[(n.id, s)] in coupled:
                wired.add(s)
        for slot, gate_bit, sel_key, fb in (("a", 4, "fu_in_a_sel", FB1), ("b", 5, "fu_in_b_sel", FB2)):
            e = ins.get(slot)
            if e is None:
                d[sel_key] = FuIn.Const
                continue
            srcn = dfg.nodes[e.src]
            if srcn.kind == "Const":
                d[sel_key] = FuIn.Const
                d["constant"] = int(consts.get(srcn.id, srcn.value)) & MASK32
            elif e.src == n.id:
                d[sel_key] = FuIn.Feedback
                d["fu_fork_mask"] = d.get("fu_fork_mask", 0) | fb
                if slot not in wired:
                    d["eb_gate_mask"] |= 1 << gate_bit
            else:
                d[sel_key] = FuIn(rt.operand_port[(n.id, slot)])
                if slot not in wired:
                    d["eb_gate_mask"] |= 1 << gate_bit
        if "ctrl" in ins:
            d["fu_ctrl_sel"] = rt.operand_port[(n.id, "ctrl")]
        if not d.get("fu_fork_mask"):
            # results nobody consumes still need a sink so the FU can fire
            raise InvalidConfig(f"{n.kind} {n.id} has no routed consumer")
    out = {}
    for pe, d in fields_by_pe.items():
        d["out_mux_sel"] = tuple(d["out_mux_sel"])
        d["in_fork_mask"] = tuple(d["in_fork_mask"])
        cfg = PEConfig(**d)
        out[cfg.pe_id] = cfg.check()
    return dict(sorted(out.items()))


def emit_image(m: KernelManifest, consts=None) -> List[int]:
    """Config word stream: 5 words per used PE, row-major PE order."""
    words = []
    for _, cfg in build_configs(m, consts=consts).items():
        words.extend(pack_config(cfg))
    return words


# -- unrolling -----------------------------------------------------------

def unroll(dfg: DFG, k: int) -> DFG:
    if not 1 <= k <= MAX_UNROLL:
        raise UnrollIllegal(f"unroll factor {k} outside 1..{MAX_UNROLL}")
    if k == 1:
        return dfg
    if dfg.is_stateful():
        raise UnrollIllegal("DFG carries state across iterations (feedback or bootstrap tokens)")
    g = DFG()
    for i in range(k):
        for n in dfg.nodes.values():
            g.add(replace(n, id=f"{n.id}@{i}"))
        for e in dfg.edges:
            g.edges.append(replace(e, src=f"{e.src}@{i}", dst=f"{e.dst}@{i}"))
    return g


# -- shot expansion ------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.FloorDiv: operator.floordiv, ast.Mod: operator.mod, ast.Pow: operator.pow}


def eval_expr(expr, env: dict) -> int:
    """Integer arithmetic over manifest parameters (no names beyond env)."""
    if isinstance(expr, int):
        return expr
    try:
        tree = ast.parse(str(expr), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"bad expression {expr!r}: {exc.msg}") from None

    def ev(nd):
        if isinstance(nd, ast.Expression):
            return ev(nd.body)
        if isinstance(nd, ast.Constant) and isinstance(nd.value, int):
            return nd.value
        if isinstance(nd, ast.Name):
            if nd.id not in env:
                raise DimensionMismatch(f"unbound name {nd.id!r} in {expr!r}")
            return env[nd.id]
        if isinstance(nd, ast.BinOp) and type(nd.op) in _BINOPS:
            return _BINOPS[type(nd.op)](ev(nd.left), ev(nd.right))
        if isinstance(nd, ast.UnaryOp) and isinstance(nd.op, ast.USub):
            return -ev(nd.operand)
        if isinstance(nd, ast.Call) and isinstance(nd.func, ast.Name) and nd.func.id in ("min", "max", "ceildiv"):
            args = [ev(a) for a in nd.args]
            if nd.func.id == "ceildiv":
                return -(-args[0] // args[1])
            return min(args) if nd.func.id == "min" else max(args)
        raise ParseError(f"unsupported expression {expr!r}")
    return int(ev(tree))


@dataclass
class Launch:
    imn: List[Optional[StreamDescriptor]]
    omn: List[Optional[StreamDescriptor]]
    reconfigure: bool = False          # full configuration fetch before this launch
    consts: Dict[str, int] = field(default_factory=dict)   # partial reconfiguration
    env: Dict[str, int] = field(default_factory=dict)


def _range_of(spec, env):
    parts = [eval_expr(x, env) for x in str(spec).split(":")]
    if len(parts) == 1:
        return range(parts[0])
    return range(*parts)


def expand_shots(m: KernelManifest, dims: Optional[dict] = None) -> List[Launch]:
    env = dict(m.params)
    for key, v in (dims or {}).items():
        if key not in env:
            raise DimensionMismatch(f"{m.name}: unknown dimension {key!r}")
        env[key] = int(v)
    cols = m.grid[1]
    launches = []
    first = True
    for shot in m.shots:
        for binding in _iter_loops(shot.loops, env):
            e = dict(env, **binding)
            imn: List[Optional[StreamDescriptor]] = [None] * cols
            omn: List[Optional[StreamDescriptor]] = [None] * cols
            for sid, base_desc in m.streams.items():
                desc = dict(base_desc, **shot.streams.get(sid, {}))
                side, col = m.placement.streams[sid]
                try:
                    sd = StreamDescriptor(eval_expr(desc.get("base", 0), e),
                                          eval_expr(desc.get("size", 0), e),
                                          eval_expr(desc.get("stride", 4), e))
                except (ValueError, ZeroDivisionError) as exc:
                    raise DimensionMismatch(f"{m.name}: {exc}") from None
                (imn if side == "N" else omn)[col] = sd
            consts = {nid: eval_expr(x, e) & MASK32 for nid, x in shot.consts.items()}
            launches.append(Launch(imn, omn, first or shot.reconfigure, consts, e))
            first = False
    if not launches:
        raise DimensionMismatch(f"{m.name}: shot schedule expands to nothing")
    return launches


def _iter_loops(loops, env):
    if not loops:
        yield {}
        return
    (var, spec), rest = loops[0], loops[1:]
    for v in _range_of(spec, env):
        for tail in _iter_loops(rest, dict(env, **{var: v})):
            yield dict({var: v}, **tail)


# -- DFG interpreter ------------------------------------------------------------

def interpret(dfg: DFG, inputs: Dict[str, List[int]], consts=None, max_steps=10_000_000) -> Dict[str, List[int]]:
    """Kahn-network evaluation of a DFG; the reference for routed designs.

    Tokens carry an arrival tag (the largest input index that produced them);
    Merge emits whichever pending input has the smaller tag first.
    """
    consts = consts or {}
    nodes = dfg.nodes
    chans: Dict[Tuple[str, str], deque] = {}
    readers: Dict[Tuple[str, str], List[Tuple[str, str]]] = {}
    for e in dfg.edges:
        if nodes[e.src].kind == "Const":
            continue
        chans[(e.dst, e.dst_port)] = deque()
        readers.setdefault((e.src, e.src_port), []).append((e.dst, e.dst_port))
    const_in = {}
    for e in dfg.edges:
        if nodes[e.src].kind == "Const":
            const_in[(e.dst, e.dst_port)] = consts.get(e.src, nodes[e.src].value) & MASK32
    outputs = {n.id: [] for n in nodes.values() if n.kind == "OutputStream"}
    state = {n.id: {"reg": n.init, "count": 0} for n in nodes.values()}

    def emit(nid, port, val, tag):
        for dst in readers.get((nid, port), ()):
            chans[dst].append((val & MASK32, tag))

    for n in nodes.values():
        if n.kind == "InputStream":
            for i, v in enumerate(inputs.get(n.id, [])):
                emit(n.id, "out", v, i)
        elif n.init_valid:
            emit(n.id, "out", n.init, -1)

    def avail(nid, port):
        if (nid, port) in const_in:
            return True
        q = chans.get((nid, port))
        return bool(q)

    def take(nid, port):
        if (nid, port) in const_in:
            return const_in[(nid, port)], -1
        return chans[(nid, port)].popleft()

    order = [n for n in nodes.values() if n.kind in COMPUTE or n.kind == "OutputStream"]
    steps = 0
    progress = True
    while progress:
        progress = False
        for n in order:
            nid = n.id
            while True:
                steps += 1
                if steps > max_steps:
                    raise RuntimeError("interpreter step bound exceeded")
                if n.kind == "OutputStream":
                    if not avail(nid, "in"):
                        break
                    outputs[nid].append(take(nid, "in")[0])
                    progress = True
                    continue
                if n.kind == "Merge":
                    qa, qb = chans.get((nid, "a")), chans.get((nid, "b"))
                    if not (qa or qb):
                        break
                    if qa and (not qb or qa[0][1] <= qb[0][1]):
                        v, t = qa.popleft()
                    else:
                        v, t = qb.popleft()
                    emit(nid, "out", v, t)
                    progress = True
                    continue
                need = ["a"] if n.kind == "Alu" and n.feedback else ["a", "b"]
                if n.kind in ("Branch", "Select"):
                    need = ["a", "ctrl"] + (["b"] if (nid, "b") in chans or (nid, "b") in const_in else [])
                if not all(avail(nid, p) for p in need):
                    break
                vals, tags = {}, []
                for p in need:
                    v, t = take(nid, p)
                    vals[p] = v
                    tags.append(t)
                tag = max(tags)
                a = vals["a"]
                b = vals.get("b", 0)
                st = state[nid]
                if n.kind == "Alu":
                    if n.feedback:
                        b = n.init if st["count"] == 0 else st["reg"]
                    res = alu_eval(AluOp[n.op], a, b)
                elif n.kind == "Compare":
                    res = cmp_eval(CmpOp[n.op], a, b)
                elif n.kind == "Select":
                    res = a if vals["ctrl"] else b
                else:   # Branch
                    res = alu_eval(AluOp[n.op], a, b)
                st["reg"] = res
                emit(nid, "out", res, tag)
                if n.kind == "Branch":
                    emit(nid, "t" if vals["ctrl"] else "f", res, tag)
                if n.delay:
                    st["count"] += 1
                    if st["count"] == n.delay:
                        st["count"] = 0
                        emit(nid, "out_d", res, tag)
                progress = True
    return outputs
