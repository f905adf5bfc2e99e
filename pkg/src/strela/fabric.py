"""Mesh engine: wiring, the two-phase settle/commit cycle loop, deadlock
detection, tracing and activity counting.

This module holds the reference engine, built directly on ``pe_settle`` /
``pe_commit``. ``compiled.py`` generates a specialised step function with the
same cycle semantics; ``run`` uses it unless asked otherwise.
"""
from dataclasses import dataclass, field
from typing import List, Optional

from .errors import Deadlock, InvalidConfig, InvalidDimensions, PreconditionViolation, Timeout
from .memory import (IMN, OMN, Arbiter, MemNode, MemoryImage, NUM_BANKS,
                     DEFAULT_FIFO_DEPTH, DEFAULT_ISSUE_INTERVAL, StreamDescriptor, imn_step, omn_step)
from .pe import DELTA, OPPOSITE, SIDES, PEConfig, PEState, pe_commit, pe_settle, wiring

STALL_WINDOW = 64


@dataclass
class PerfCounters:
    total_cycles: int = 0
    config_cycles: int = 0
    exec_cycles: int = 0
    overhead_cycles: int = 0
    active_cycles: list = field(default_factory=list)   # per PE
    conflict_cycles: list = field(default_factory=lambda: [0] * NUM_BANKS)
    node_transfers: list = field(default_factory=list)  # IMN0.., OMN0..
    port_firings: list = field(default_factory=list)    # per PE, per output side
    join_firings: list = field(default_factory=list)    # per PE
    outputs_total: int = 0
    launches: int = 0
    max_interleaved_grants: int = 0
    merge_collisions: int = 0

    @property
    def outputs_per_cycle(self) -> float:
        return self.outputs_total / self.exec_cycles if self.exec_cycles else 0.0

    def merge(self, other: "PerfCounters"):
        for name in ("total_cycles", "config_cycles", "exec_cycles", "overhead_cycles",
                     "outputs_total", "launches", "merge_collisions"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.max_interleaved_grants = max(self.max_interleaved_grants, other.max_interleaved_grants)
        for name in ("active_cycles", "conflict_cycles", "node_transfers", "join_firings"):
            a, b = getattr(self, name), getattr(other, name)
            if len(a) < len(b):
                a.extend([0] * (len(b) - len(a)))
            for i, v in enumerate(b):
                a[i] += v
        if len(self.port_firings) < len(other.port_firings):
            self.port_firings.extend([0, 0, 0, 0] for _ in range(len(other.port_firings) - len(self.port_firings)))
        for i, row in enumerate(other.port_firings):
            for o in range(4):
                self.port_firings[i][o] += row[o]

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "total_cycles", "config_cycles", "exec_cycles", "overhead_cycles", "outputs_total",
            "launches", "active_cycles", "conflict_cycles", "node_transfers", "join_firings",
            "port_firings", "max_interleaved_grants", "merge_collisions")}
        d["outputs_per_cycle"] = self.outputs_per_cycle
        return d


@dataclass
class RunResult:
    exec_cycles: int
    counters: PerfCounters
    input_fire_cycles: list          # per IMN: cycles its token entered the fabric
    warnings: list = field(default_factory=list)


@dataclass
class TraceEvent:
    cycle: int
    site: str
    kind: str
    value: int

    def csv(self) -> str:
        return f"{self.cycle},{self.site},{self.kind},{self.value}"


TRACE_HEADER = "cycle,site,kind,value"


def pe_site(r, c, port=None):
    return f"r{r}c{c}" if port is None else f"r{r}c{c}.{port}"


@dataclass
class CyclePlan:
    pe_plans: list
    imn_fire: list          # per column: token delivered to PE(0,c).N
    omn_in: list            # per column: token accepted from PE(R-1,c).S
    requests: list          # (node_id, bank, is_write, addr)
    grants: set
    cycle: int
    fired: bool


class Fabric:
    """PE grid plus its memory nodes and the memory they stream from."""

    def __init__(self, rows=4, cols=4, mem: Optional[MemoryImage] = None,
                 fifo_depth=DEFAULT_FIFO_DEPTH, issue_interval=DEFAULT_ISSUE_INTERVAL):
        if rows < 2 or cols < 1:
            raise InvalidDimensions(f"{rows}x{cols}: need at least 2 rows and 1 column")
        self.rows, self.cols = rows, cols
        self.cfg: List[Optional[PEConfig]] = [None] * (rows * cols)
        self.st: List[PEState] = [PEState() for _ in range(rows * cols)]
        self.mem = mem if mem is not None else MemoryImage()
        self.imns = [MemNode(IMN, c, depth=fifo_depth, issue_interval=issue_interval, ncols=cols)
                     for c in range(cols)]
        self.omns = [MemNode(OMN, c, depth=fifo_depth, issue_interval=issue_interval, ncols=cols)
                     for c in range(cols)]
        self.arbiter = Arbiter(2 * cols, NUM_BANKS)
        self.cycle = 0
        self.trace: Optional[list] = None
        self.warnings: list = []
        self._compiled = None
        self.reset_counters()

    # -- configuration -------------------------------------------------
    @property
    def n_pes(self):
        return self.rows * self.cols

    def pe_index(self, r, c):
        return r * self.cols + c

    def configure(self, records):
        """Apply (pe_id, PEConfig) records; pe_id is the row-major index."""
        for pe_id, cfg in records:
            if not 0 <= pe_id < self.n_pes:
                raise InvalidConfig(f"pe_id {pe_id} outside a {self.rows}x{self.cols} fabric")
            self.cfg[pe_id] = cfg.check()
        self._check_borders()
        self._compiled = None
        self.reset_state()

    def unconfigure(self):
        self.cfg = [None] * self.n_pes
        self._compiled = None
        self.reset_state()

    def _check_borders(self):
        for i, cfg in enumerate(self.cfg):
            if cfg is None:
                continue
            r, c = divmod(i, self.cols)
            for o in range(4):
                sel_used = cfg.out_mux_sel[o] != 7
                if not sel_used:
                    continue
                dr, dc = DELTA[o]
                nr, nc = r + dr, c + dc
                if nr == self.rows and 0 <= nc < self.cols:
                    continue    # south border -> OMN
                if not (0 <= nr < self.rows and 0 <= nc < self.cols):
                    raise InvalidConfig(f"PE({r},{c}) drives border output {SIDES[o]}")
                ncfg = self.cfg[self.pe_index(nr, nc)]
                if ncfg is None or not ncfg.eb_gate_mask >> OPPOSITE[o] & 1:
                    raise InvalidConfig(f"PE({r},{c}) output {SIDES[o]} drives a gated input")

    def reset_state(self):
        self.st = [PEState.initial(c) for c in self.cfg]

    def reset_counters(self):
        self.counters = PerfCounters(
            active_cycles=[0] * self.n_pes,
            node_transfers=[0] * (2 * self.cols),
            port_firings=[[0, 0, 0, 0] for _ in range(self.n_pes)],
            join_firings=[0] * self.n_pes)
        self.arbiter = Arbiter(2 * self.cols, NUM_BANKS)

    def launch(self, imn_desc, omn_desc):
        """Load descriptors (lists indexed by column, None = idle) and reset
        elastic state to the configured initial values."""
        for nodes, descs in ((self.imns, imn_desc), (self.omns, omn_desc)):
            for c, node in enumerate(nodes):
                d = descs[c] if c < len(descs) and descs[c] is not None else StreamDescriptor()
                node.launch(d)
        self.reset_state()

    @property
    def done(self) -> bool:
        return all(n.done for n in self.omns)

    def emit(self, site, kind, value):
        if self.trace is not None:
            self.trace.append(TraceEvent(self.cycle, site, kind, value))

    def dump(self) -> dict:
        """Snapshot of all elastic state, for deadlock reports."""
        pes = {}
        for i, cfg in enumerate(self.cfg):
            if cfg is None:
                continue
            st = self.st[i]
            r, c = divmod(i, self.cols)
            pes[f"PE({r},{c})"] = {
                "inputs": {SIDES[p]: list(st.in_bufs[p]) for p in range(4) if st.in_bufs[p]},
                "fu_in_a": list(st.fu.in_buf_a), "fu_in_b": list(st.fu.in_buf_b),
                "fu_out_valid": st.fu.kinds, "data_reg": st.fu.data_reg,
                "fire_count": st.fu.fire_count}
        nodes = {}
        for n in self.imns + self.omns:
            if n.desc.size:
                nodes[f"{n.kind}{n.index}"] = {"index": n.next_index if n.kind == IMN else n.transfers,
                                              "size": n.desc.size, "fifo": list(n.fifo)}
        return {"cycle": self.cycle, "pes": pes, "nodes": nodes}


def build_fabric(rows=4, cols=4, **kw) -> Fabric:
    return Fabric(rows, cols, **kw)


# -- reference settle / commit ------------------------------------------

def _sink_ready(fab: Fabric, r, c, o) -> bool:
    dr, dc = DELTA[o]
    nr, nc = r + dr, c + dc
    if nr == fab.rows and 0 <= nc < fab.cols:
        omn = fab.omns[nc]
        return len(omn.fifo) < omn.depth and omn.fabric_transfers < omn.desc.size
    if not (0 <= nr < fab.rows and 0 <= nc < fab.cols):
        return False
    i = fab.pe_index(nr, nc)
    cfg = fab.cfg[i]
    p = OPPOSITE[o]
    if cfg is None or not cfg.eb_gate_mask >> p & 1:
        return False
    return len(fab.st[i].in_bufs[p]) < 2


def settle_cycle(fab: Fabric) -> CyclePlan:
    plans = []
    fired = False
    for i, cfg in enumerate(fab.cfg):
        r, c = divmod(i, fab.cols)
        readies = [_sink_ready(fab, r, c, o) for o in range(4)] if cfg is not None else [False] * 4
        plan = pe_settle(cfg, fab.st[i], readies)
        plans.append(plan)
        if cfg is not None:
            fp = plan.fu
            fired = fired or any(plan.in_fire) or fp.fire or fp.drain
    imn_fire = [None] * fab.cols
    for c, node in enumerate(fab.imns):
        cfg = fab.cfg[fab.pe_index(0, c)]
        if node.fifo and cfg is not None and cfg.eb_gate_mask & 1 and len(fab.st[fab.pe_index(0, c)].in_bufs[0]) < 2:
            imn_fire[c] = node.fifo[0]
            fired = True
    omn_in = [None] * fab.cols
    for i, plan in enumerate(plans):
        r, c = divmod(i, fab.cols)
        if r == fab.rows - 1 and plan.out_tokens[2] is not None:
            omn_in[c] = plan.out_tokens[2]
    requests = []
    for node in fab.imns + fab.omns:
        req = node.request(fab.mem)
        if req is not None:
            requests.append(req)
    grants = fab.arbiter.arbitrate([q[:3] for q in requests],
                                   range(NUM_BANKS - fab.mem.num_interleaved, NUM_BANKS))
    fired = fired or bool(grants)
    return CyclePlan(plans, imn_fire, omn_in, requests, grants, fab.cycle, fired)


def commit_cycle(fab: Fabric, plan: CyclePlan) -> Fabric:
    if plan.cycle != fab.cycle:
        raise PreconditionViolation(f"plan for cycle {plan.cycle} applied at cycle {fab.cycle}")
    rows, cols = fab.rows, fab.cols
    incoming = [[None] * 4 for _ in range(fab.n_pes)]
    cnt = fab.counters
    tracing = fab.trace is not None
    for i, pp in enumerate(plan.pe_plans):
        if fab.cfg[i] is None:
            continue
        r, c = divmod(i, cols)
        for o, tok in enumerate(pp.out_tokens):
            if tok is None:
                continue
            cnt.port_firings[i][o] += 1
            if tracing:
                fab.emit(pe_site(r, c, SIDES[o]), "fire", tok)
            dr, dc = DELTA[o]
            nr, nc = r + dr, c + dc
            if nr < rows:
                incoming[fab.pe_index(nr, nc)][OPPOSITE[o]] = tok
        fp = pp.fu
        if fp.fire:
            cnt.join_firings[i] += 1
            if tracing:
                fab.emit(pe_site(r, c, "FU"), "fire", fp.result)
        if fp.collision:
            cnt.merge_collisions += 1
            fab.warnings.append((fab.cycle, pe_site(r, c), "MergeCollision"))
            if tracing:
                fab.emit(pe_site(r, c, "FU"), "warning", 1)
    for c, tok in enumerate(plan.imn_fire):
        if tok is not None:
            incoming[fab.pe_index(0, c)][0] = tok
    for i, cfg in enumerate(fab.cfg):
        if cfg is not None:
            pe_commit(cfg, fab.st[i], plan.pe_plans[i], incoming[i])
            cnt.active_cycles[i] += 1
        elif any(t is not None for t in incoming[i]):
            raise PreconditionViolation(f"token delivered to unconfigured PE {i}")
    addr_of = {q[0]: q[3] for q in plan.requests}
    for q in plan.requests:
        if q[0] not in plan.grants:
            if tracing:
                fab.emit(f"bank{q[1]}", "stall", q[0])
    for c, node in enumerate(fab.imns):
        g = node.node_id in plan.grants
        if tracing and plan.imn_fire[c] is not None:
            fab.emit(f"imn{c}", "fire", plan.imn_fire[c])
        imn_step(node, fab.mem, g, addr_of.get(node.node_id, 0), plan.imn_fire[c] is not None)
        if g:
            cnt.node_transfers[c] += 1
    for c, node in enumerate(fab.omns):
        g = node.node_id in plan.grants
        if tracing and g:
            fab.emit(f"omn{c}", "fire", node.fifo[0])
        omn_step(node, fab.mem, g, addr_of.get(node.node_id, 0), plan.omn_in[c])
        if g:
            cnt.node_transfers[cols + c] += 1
            cnt.outputs_total += 1
    fab.cycle += 1
    return fab


def run_reference(fab: Fabric, max_cycles=1_000_000, stall_window=STALL_WINDOW) -> RunResult:
    """Cycle loop over settle_cycle/commit_cycle (slow, for cross-checking)."""
    for cfg in fab.cfg:
        if cfg is not None:
            wiring(cfg)     # raises CombinationalLoop before the first cycle
    start = fab.cycle
    idle = 0
    fire_log = [[] for _ in range(fab.cols)]
    while not fab.done:
        if fab.cycle - start >= max_cycles:
            raise Timeout(f"no completion within {max_cycles} cycles", fab.dump())
        plan = settle_cycle(fab)
        for c, tok in enumerate(plan.imn_fire):
            if tok is not None:
                fire_log[c].append(fab.cycle - start)
        commit_cycle(fab, plan)
        idle = 0 if plan.fired else idle + 1
        if idle >= stall_window:
            raise Deadlock(f"no handshake fired for {stall_window} cycles", fab.dump())
    n = fab.cycle - start
    cnt = fab.counters
    cnt.exec_cycles += n
    cnt.conflict_cycles = list(fab.arbiter.conflict_cycles)
    cnt.max_interleaved_grants = max(cnt.max_interleaved_grants, fab.arbiter.max_interleaved_grants)
    return RunResult(n, fab.counters, fire_log, list(fab.warnings))


def run(fab: Fabric, max_cycles=1_000_000, stall_window=STALL_WINDOW, engine="compiled") -> RunResult:
    """Run the current launch to completion (all OMNs done)."""
    if engine == "reference":
        return run_reference(fab, max_cycles, stall_window)
    from .compiled import run_compiled
    for cfg in fab.cfg:
        if cfg is not None:
            wiring(cfg)
    n, fire_log = run_compiled(fab, max_cycles, stall_window)
    return RunResult(n, fab.counters, fire_log, list(fab.warnings))
