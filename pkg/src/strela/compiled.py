"""Specialised cycle loop for one fabric configuration.

The reference engine re-derives every routing decision each cycle. Here the
configuration is turned into straight-line Python once (per configuration and
set of active memory nodes) and exec'd; elastic state lives in local
variables for the duration of a launch. The cycle semantics are identical to
``fabric.settle_cycle``/``commit_cycle``; the test suite checks trace
equality between the two.
"""
from .elastic import JoinMergeMode
from .errors import Deadlock, Timeout
from .memory import BANK_BYTES, NUM_BANKS, interleave_base
from .pe import (DELTA, FB1, FB2, K_B1, K_B2, K_DELAY, K_PLAIN, OPPOSITE, SIDES, AluOp,
                 CmpOp, DpMux, wiring)

M = 0xFFFF_FFFF


def _alu_expr(op, a, b):
    if op == AluOp.Add:
        return f"({a} + {b}) & {M}"
    if op == AluOp.Sub:
        return f"({a} - {b}) & {M}"
    if op == AluOp.Mult:
        return f"({a} * {b}) & {M}"
    if op == AluOp.Shl:
        return f"({a} << ({b} & 31)) & {M}"
    if op == AluOp.Shr:
        return f"{a} >> ({b} & 31)"
    if op == AluOp.And:
        return f"{a} & {b}"
    if op == AluOp.Or:
        return f"{a} | {b}"
    if op == AluOp.Xor:
        return f"{a} ^ {b}"
    if op == AluOp.Sra:
        return f"(({a} - (({a} & 0x80000000) << 1)) >> ({b} & 31)) & {M}"
    raise ValueError(op)


class _Gen:
    def __init__(self, fab, active_imn, active_omn, tracing):
        self.fab = fab
        self.rows, self.cols = fab.rows, fab.cols
        self.ai = active_imn
        self.ao = active_omn
        self.tracing = tracing
        self.lines = []
        self.ind = 0

    def w(self, s=""):
        self.lines.append("    " * self.ind + s)

    def cfg(self, i):
        return self.fab.cfg[i]

    def eb(self, i, p):
        return f"b{i}_{p}"

    def sink(self, i, o):
        """(kind, name) of what output o of PE i drives."""
        r, c = divmod(i, self.cols)
        dr, dc = DELTA[o]
        nr, nc = r + dr, c + dc
        if nr == self.rows and 0 <= nc < self.cols and o == 2:
            return ("omn", nc) if nc in self.ao else (None, None)
        if 0 <= nr < self.rows and 0 <= nc < self.cols:
            j = nr * self.cols + nc
            cj = self.cfg(j)
            q = OPPOSITE[o]
            if cj is not None and cj.eb_gate_mask >> q & 1:
                return ("eb", self.eb(j, q))
        return (None, None)

    def ready(self, i, o):
        kind, name = self.sink(i, o)
        if kind == "eb":
            return f"len({name}) < 2"
        if kind == "omn":
            return f"(len(of{name}) < DEPTH and oa{name} < osz{name})"
        return "False"

    def deliver(self, i, o, tok):
        kind, name = self.sink(i, o)
        r, c = divmod(i, self.cols)
        out = []
        if self.tracing:
            out.append(f"T.append((cyc, 'r{r}c{c}.{SIDES[o]}', 'fire', {tok}))")
        out.append(f"pc[{i * 4 + o}] += 1")
        if kind == "eb":
            out.append(f"{name}.append({tok})")
        elif kind == "omn":
            out.append(f"of{name}.append({tok}); oa{name} += 1")
        return out

    # -- code generation ---------------------------------------------------
    def build(self):
        fab = self.fab
        pes = [i for i, c in enumerate(fab.cfg) if c is not None]
        self.pes = pes
        w = self.w
        w("def _run(st, imn, omn, W, arb, max_cycles, stall_window, T, fl, pc, jc, warn):")
        self.ind = 1
        # bind state
        for i in pes:
            cfg = self.cfg(i)
            wr = wiring(cfg)
            for p in range(4):
                if cfg.eb_gate_mask >> p & 1:
                    w(f"{self.eb(i, p)} = st[{i}].in_bufs[{p}]")
            if cfg.fu_enabled:
                w(f"fa{i} = st[{i}].fu.in_buf_a; fb{i} = st[{i}].fu.in_buf_b")
                w(f"d{i} = st[{i}].fu.data_reg; k{i} = st[{i}].fu.kinds; n{i} = st[{i}].fu.fire_count")
        for c in self.ai:
            w(f"n_ = imn[{c}]; if{c} = n_.fifo; ii{c} = n_.next_index; ic{c} = n_.cooldown; "
              f"ib{c} = n_.desc.base; isz{c} = n_.desc.size; is{c} = n_.desc.stride; fl{c} = fl[{c}]")
        for c in self.ao:
            w(f"n_ = omn[{c}]; of{c} = n_.fifo; ot{c} = n_.transfers; oa{c} = n_.fabric_transfers; "
              f"oc{c} = n_.cooldown; ob{c} = n_.desc.base; osz{c} = n_.desc.size; os{c} = n_.desc.stride")
        node0 = (fab.imns + fab.omns)[0]
        w(f"DEPTH = {node0.depth}; IV = {node0.issue_interval - 1}")
        ni = fab.mem.num_interleaved
        w(f"NI = {ni}; OFF = {NUM_BANKS - ni}; IBASE = {interleave_base(ni)}")
        w("cyc = 0; last = 0")
        w("try:")
        self.ind += 1
        done = " and ".join(f"ot{c} >= osz{c}" for c in self.ao) or "True"
        w(f"while not ({done}):")
        self.ind += 1
        w("if cyc >= max_cycles: raise _Timeout(cyc)")
        self.settle()
        self.memory_settle()
        self.commit()
        self.memory_commit()
        w("cyc += 1")
        w("if cyc - last >= stall_window: raise _Deadlock(cyc)")
        self.ind -= 1
        self.ind -= 1
        w("finally:")
        self.ind += 1
        for i in pes:
            if self.cfg(i).fu_enabled:
                w(f"s_ = st[{i}].fu; s_.data_reg = d{i}; s_.kinds = k{i}; s_.fire_count = n{i}")
        for c in self.ai:
            w(f"n_ = imn[{c}]; n_.next_index = ii{c}; n_.cooldown = ic{c}")
        for c in self.ao:
            w(f"n_ = omn[{c}]; n_.transfers = ot{c}; n_.fabric_transfers = oa{c}; n_.cooldown = oc{c}")
        w("_res[0] = cyc")
        self.ind -= 1
        w("return cyc")
        return "\n".join(self.lines)

    def settle(self):
        w = self.w
        fires = []
        for i in self.pes:
            cfg = self.cfg(i)
            wr = wiring(cfg)
            w(f"# PE {divmod(i, self.cols)}")
            ok = {}
            if cfg.fu_enabled:
                # drain condition grouped by valid kind
                terms = []
                by_kind = {}
                for d in range(6):
                    kd = wr.fu_dest_kinds[d]
                    if not kd:
                        continue
                    if d < 4:
                        rexp = self.ready(i, d)
                    else:
                        rexp = f"len(fa{i}) < 2" if d == 4 else f"len(fb{i}) < 2"
                    by_kind.setdefault(kd, []).append(rexp)
                for kd, rs in sorted(by_kind.items()):
                    terms.append(f"(not k{i} & {kd} or ({' and '.join(rs)}))")
                w(f"dr{i} = k{i} != 0" + "".join(f" and {t}" for t in terms))
                fires.append(f"dr{i}")
            for p in range(4):
                dests = wr.in_dests[p]
                if not dests:
                    continue
                conds = [f"len({self.eb(i, p)}) > 0"]
                for kind, o in dests:
                    if kind == "fua" and wr.a_src == "eb":
                        conds.append(f"len(fa{i}) < 2")
                    elif kind == "fub" and wr.b_src == "eb":
                        conds.append(f"len(fb{i}) < 2")
                    elif kind == "out":
                        conds.append(self.ready(i, o))
                w(f"ok{i}_{p} = " + " and ".join(f"({x})" if " " in x else x for x in conds))
                ok[p] = f"ok{i}_{p}"
            if cfg.fu_enabled:
                def opv(src, sel, buf):
                    if src == "eb":
                        return f"len({buf}) > 0"
                    if src == "const":
                        return "True"
                    if src == "wire":
                        return f"ok{i}_{int(sel)}"
                    return "False"
                va = opv(wr.a_src, cfg.fu_in_a_sel, f"fa{i}")
                vb = opv(wr.b_src, cfg.fu_in_b_sel, f"fb{i}")
                rd = f"(k{i} == 0 or dr{i})"
                if cfg.join_mode == JoinMergeMode.Merge:
                    w(f"j{i} = {rd} and ({va} or {vb})")
                    w(f"if {va} and {vb}: warn.append((cyc, {i}))")
                elif cfg.join_mode == JoinMergeMode.JoinWithControl:
                    w(f"j{i} = {rd} and {va} and {vb} and ok{i}_{cfg.fu_ctrl_sel}")
                else:
                    w(f"j{i} = {rd} and {va} and {vb}")
                fires.append(f"j{i}")
            for p in ok:
                if wr.coupled[p]:
                    w(f"f{i}_{p} = ok{i}_{p} and j{i}")
                else:
                    w(f"f{i}_{p} = ok{i}_{p}")
                fires.append(f"f{i}_{p}")
        self.fires = fires

    def memory_settle(self):
        w = self.w
        fab = self.fab
        for c in self.ai:
            i = c     # PE (0, c)
            cfg = self.cfg(i)
            if cfg is not None and cfg.eb_gate_mask & 1:
                w(f"iv{c} = len(if{c}) > 0 and len({self.eb(i, 0)}) < 2")
            else:
                w(f"iv{c} = False")
        w("R = []")
        for c in self.ai:
            w(f"if not ic{c} and ii{c} < isz{c} and len(if{c}) < DEPTH:")
            w(f"    a_ = ib{c} + ii{c} * is{c}")
            w(f"    if a_ < 0 or a_ > {4 * len(fab.mem.words) - 4}: raise _OOB(a_)")
            w(f"    R.append(({c}, (a_ >> 2) % NI + OFF if a_ >= IBASE else a_ // {BANK_BYTES}, a_))")
        for c in self.ao:
            w(f"if not oc{c} and of{c}:")
            w(f"    a_ = ob{c} + ot{c} * os{c}")
            w(f"    if a_ < 0 or a_ > {4 * len(fab.mem.words) - 4}: raise _OOB(a_)")
            w(f"    R.append(({self.cols + c}, (a_ >> 2) % NI + OFF if a_ >= IBASE else a_ // {BANK_BYTES}, a_))")
        w("G = arb(R, cyc) if R else _EMPTY")
        anyf = " or ".join(self.fires + [f"iv{c}" for c in self.ai] + ["R"])
        w(f"if {anyf}: last = cyc + 1")

    def commit(self):
        w = self.w
        for i in self.pes:
            cfg = self.cfg(i)
            wr = wiring(cfg)
            r, c = divmod(i, self.cols)
            # 1. join result from cycle-start operand heads
            if cfg.fu_enabled:
                w(f"if j{i}:")
                self.ind += 1
                self.join_result(i, cfg, wr)
                self.ind -= 1
            # 2. output ports in N,E,S,W order (tokens from input forks or FU drain)
            emitted = []
            for o in range(4):
                src = wr.out_src[o]
                if src is None:
                    continue
                if src[0] == "in":
                    p = src[1]
                    w(f"if f{i}_{p}:")
                    self.ind += 1
                    for line in self.deliver(i, o, f"{self.eb(i, p)}[0]"):
                        w(line)
                    self.ind -= 1
                else:
                    kd = src[1]
                    w(f"if dr{i} and k{i} & {kd}:")
                    self.ind += 1
                    for line in self.deliver(i, o, f"d{i}"):
                        w(line)
                    self.ind -= 1
            if cfg.fu_enabled:
                # feedback pushes
                for d, buf in ((4, f"fa{i}"), (5, f"fb{i}")):
                    if wr.fu_dest_kinds[d]:
                        w(f"if dr{i} and k{i} & {wr.fu_dest_kinds[d]}: {buf}.append(d{i})")
                w(f"if dr{i}: k{i} = 0")
            # 3. input fork pushes into FU buffers, then pops
            for p in range(4):
                dests = wr.in_dests[p]
                if not dests:
                    continue
                pushes = []
                for kind, o in dests:
                    if kind == "fua" and wr.a_src == "eb":
                        pushes.append(f"fa{i}.append(t_)")
                    elif kind == "fub" and wr.b_src == "eb":
                        pushes.append(f"fb{i}.append(t_)")
                if pushes:
                    w(f"if f{i}_{p}: t_ = {self.eb(i, p)}.pop(0); " + "; ".join(pushes))
                else:
                    w(f"if f{i}_{p}: del {self.eb(i, p)}[0]")
            # 4. join state update
            if cfg.fu_enabled:
                w(f"if j{i}:")
                self.ind += 1
                if self.tracing:
                    w(f"T.append((cyc, 'r{r}c{c}.FU', 'fire', res_))")
                w(f"jc[{i}] += 1; d{i} = res_; k{i} = kn_")
                if cfg.delay_d:
                    w(f"n{i} += 1")
                    w(f"if n{i} == {cfg.delay_d}: k{i} |= {K_DELAY}; n{i} = 0")
                self.ind -= 1
            if cfg.fu_enabled and cfg.join_mode == JoinMergeMode.Merge and self.tracing:
                va, vb = f"fa{i}", f"fb{i}"
                # collision = both valid at cycle start; recorded in warn during settle
                w(f"if warn and warn[-1] == (cyc, {i}): T.append((cyc, 'r{r}c{c}.FU', 'warning', 1))")

    def join_result(self, i, cfg, wr):
        w = self.w

        def val(src, sel, buf):
            if src == "eb":
                return f"{buf}[0]"
            if src == "const":
                return str(cfg.constant)
            return f"{self.eb(i, int(sel))}[0]"
        a = val(wr.a_src, cfg.fu_in_a_sel, f"fa{i}")
        b = val(wr.b_src, cfg.fu_in_b_sel, f"fb{i}")
        ctrl = f"{self.eb(i, cfg.fu_ctrl_sel)}[0]" if cfg.join_mode == JoinMergeMode.JoinWithControl else None
        pops = []
        if cfg.join_mode == JoinMergeMode.Merge:
            w(f"if fa{i}: res_ = fa{i}.pop(0)")
            w(f"else: res_ = fb{i}.pop(0)")
        else:
            if cfg.dp_mux_sel == DpMux.Mux:
                w(f"res_ = {a} if {ctrl} else {b}")
            elif cfg.dp_mux_sel == DpMux.Cmp:
                if cfg.cmp_op == CmpOp.EqZero:
                    w(f"res_ = 1 if {a} == {b} else 0")
                else:
                    w(f"res_ = 1 if ({a} ^ 0x80000000) > ({b} ^ 0x80000000) else 0")
            else:
                bb = b
                if cfg.alu_fb_sel:
                    bb = f"b_"
                    w(f"b_ = {cfg.init_data_reg} if n{i} == 0 else d{i}")
                w(f"res_ = {_alu_expr(cfg.alu_op, a, bb)}")
            if wr.a_src == "eb":
                pops.append(f"del fa{i}[0]")
            if wr.b_src == "eb":
                pops.append(f"del fb{i}[0]")
        if cfg.join_mode == JoinMergeMode.JoinWithControl:
            w(f"kn_ = {K_PLAIN | K_B1} if {ctrl} else {K_PLAIN | K_B2}")
        else:
            w(f"kn_ = {K_PLAIN}")
        for p in pops:
            w(p)

    def memory_commit(self):
        w = self.w
        fab = self.fab
        if self.tracing:
            w("if len(G) < len(R):")
            w("    for q_ in R:")
            w("        if q_[0] not in G: T.append((cyc, 'bank%d' % q_[1], 'stall', q_[0]))")
        for c in self.ai:
            pe0 = c
            if self.tracing:
                w(f"if iv{c}: T.append((cyc, 'imn{c}', 'fire', if{c}[0]))")
            w(f"if iv{c}: {self.eb(pe0, 0)}.append(if{c}.pop(0)); fl{c}.append(cyc)")
            w(f"if {c} in G: if{c}.append(W[G[{c}] >> 2]); ii{c} += 1; ic{c} = IV")
            w(f"elif ic{c}: ic{c} -= 1")
        for c in self.ao:
            nid = self.cols + c
            if self.tracing:
                w(f"if {nid} in G: T.append((cyc, 'omn{c}', 'fire', of{c}[0]))")
            w(f"if {nid} in G: W[G[{nid}] >> 2] = of{c}.pop(0); ot{c} += 1; oc{c} = IV")
            w(f"elif oc{c}: oc{c} -= 1")


class _StopTimeout(Exception):
    pass


class _StopDeadlock(Exception):
    pass


class _OOBError(Exception):
    pass


_EMPTY = {}


def compile_fabric(fab, active_imn, active_omn, tracing=False):
    gen = _Gen(fab, tuple(active_imn), tuple(active_omn), tracing)
    src = gen.build()
    res = [0]

    def _t(cyc):
        return _StopTimeout(cyc)

    def _d(cyc):
        return _StopDeadlock(cyc)

    def _oob(a):
        from .errors import OutOfBounds
        return OutOfBounds(f"stream address 0x{a:x} outside memory")
    ns = {"_Timeout": _t, "_Deadlock": _d, "_OOB": _oob, "_EMPTY": _EMPTY, "_res": res}
    exec(compile(src, f"<strela fabric {fab.rows}x{fab.cols}>", "exec"), ns)
    fn = ns["_run"]
    fn.source = src
    fn.result = res
    return fn


def make_arbiter(arbiter, n_requesters, interleaved_banks):
    """Closure over an Arbiter: R is [(node_id, bank, addr)], returns {node: addr}."""
    rr = arbiter.rr
    conflicts = arbiter.conflict_cycles
    grants = arbiter.grants
    inter = set(interleaved_banks)

    def arb(R, cyc):
        if len(R) == 1:
            nid, bank, addr = R[0]
            rr[bank] = (nid + 1) % n_requesters
            grants[bank] += 1
            if bank in inter and arbiter.max_interleaved_grants < 1:
                arbiter.max_interleaved_grants = 1
            return {nid: addr}
        by_bank = {}
        for q in R:
            by_bank.setdefault(q[1], []).append(q)
        G = {}
        ni = 0
        for bank, qs in by_bank.items():
            if len(qs) == 1:
                nid, _, addr = qs[0]
            else:
                ptr = rr[bank]
                nid, _, addr = min(qs, key=lambda q: (q[0] - ptr) % n_requesters)
                conflicts[bank] += 1
            rr[bank] = (nid + 1) % n_requesters
            grants[bank] += 1
            G[nid] = addr
            if bank in inter:
                ni += 1
        if ni > arbiter.max_interleaved_grants:
            arbiter.max_interleaved_grants = ni
        return G
    return arb


def run_compiled(fab, max_cycles, stall_window):
    """Run one launch; returns (exec_cycles, input fire log)."""
    active_imn = [c for c, n in enumerate(fab.imns) if n.desc.size > 0]
    active_omn = [c for c, n in enumerate(fab.omns) if n.desc.size > 0]
    tracing = fab.trace is not None
    key = (tuple(active_imn), tuple(active_omn), tracing, fab.mem.num_interleaved)
    if fab._compiled is None or fab._compiled[0] != key:
        fab._compiled = (key, compile_fabric(fab, active_imn, active_omn, tracing))
    fn = fab._compiled[1]
    cnt = fab.counters
    pc = [0] * (4 * fab.n_pes)
    jc = [0] * fab.n_pes
    warn = []
    fl = [[] for _ in range(fab.cols)]
    T = [] if tracing else None
    arb = make_arbiter(fab.arbiter, 2 * fab.cols,
                       range(NUM_BANKS - fab.mem.num_interleaved, NUM_BANKS))
    before = [n.transfers for n in fab.imns] + [n.transfers for n in fab.omns]
    err = None
    try:
        fn(fab.st, fab.imns, fab.omns, fab.mem.words, arb, max_cycles, stall_window, T, fl, pc, jc, warn)
    except _StopTimeout:
        err = "timeout"
    except _StopDeadlock:
        err = "deadlock"
    cycles = fn.result[0]
    start = fab.cycle
    fab.cycle += cycles
    for c in active_imn:
        n = fab.imns[c]
        n.transfers = n.next_index
        n.fabric_transfers += len(fl[c])
    for i in range(fab.n_pes):
        for o in range(4):
            cnt.port_firings[i][o] += pc[4 * i + o]
        cnt.join_firings[i] += jc[i]
        if fab.cfg[i] is not None:
            cnt.active_cycles[i] += cycles
            fab.st[i].active_cycles += cycles
    cnt.conflict_cycles = list(fab.arbiter.conflict_cycles)
    cnt.max_interleaved_grants = max(cnt.max_interleaved_grants, fab.arbiter.max_interleaved_grants)
    for k, n in enumerate(fab.imns + fab.omns):
        cnt.node_transfers[k] += n.transfers - before[k]
    cnt.outputs_total += sum(n.transfers for n in fab.omns) - sum(before[fab.cols:])
    cnt.merge_collisions += len(warn)
    for cyc, i in warn:
        r, c = divmod(i, fab.cols)
        fab.warnings.append((start + cyc, f"r{r}c{c}", "MergeCollision"))
    if T is not None:
        from .fabric import TraceEvent
        fab.trace.extend(TraceEvent(start + t[0], t[1], t[2], t[3]) for t in T)
    if err == "timeout":
        raise Timeout(f"no completion within {max_cycles} cycles", fab.dump())
    if err == "deadlock":
        raise Deadlock(f"no handshake fired for {stall_window} cycles", fab.dump())
    cnt.exec_cycles += cycles
    return cycles, fl
