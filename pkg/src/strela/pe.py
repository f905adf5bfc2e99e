"""Processing element: FU datapath, FU inputs/outputs, routed I/O ports, and
the five-word configuration encoding.

Port/destination conventions used everywhere:

* sides are indexed N=0, E=1, S=2, W=3;
* for a port on side s, "P1..P3" are the other three sides in N,E,S,W order;
* an input-port fork mask has bits FU_A, FU_B, FU_ctrl, outP1, outP2, outP3;
* the FU fork mask has bits N, E, S, W, FB1 (into input A), FB2 (into input B);
* eb_gate_mask has bits N, E, S, W, FU-in A, FU-in B (1 = buffer clocked).
"""
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from functools import lru_cache
from graphlib import CycleError, TopologicalSorter
from typing import List, Optional

from .elastic import JoinMergeMode, MASK32, join_eval, signed, word
from .errors import CombinationalLoop, InvalidConfig

N, E, S, W = range(4)
SIDES = "NESW"
OPPOSITE = (S, W, N, E)
DELTA = ((-1, 0), (0, 1), (1, 0), (0, -1))


def others(side: int):
    return tuple(s for s in range(4) if s != side)


class AluOp(IntEnum):
    Add = 0
    Sub = 1
    Mult = 2
    Shl = 3
    Shr = 4
    And = 5
    Or = 6
    Xor = 7
    Sra = 8


class CmpOp(IntEnum):
    Disabled = 0
    EqZero = 1
    GtZero = 2


class DpMux(IntEnum):
    Alu = 0
    Cmp = 1
    Mux = 2


class FuIn(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3
    Const = 4
    Feedback = 5


class OutSel(IntEnum):
    in_P1 = 0
    in_P2 = 1
    in_P3 = 2
    FU = 3
    FU_delayed = 4
    B1 = 5
    B2 = 6
    Disabled = 7


# input fork destination bits
D_FUA, D_FUB, D_CTRL, D_P1, D_P2, D_P3 = (1 << i for i in range(6))
# FU fork destination bits
FB1, FB2 = 1 << 4, 1 << 5
# FU valid kinds
K_PLAIN, K_B1, K_B2, K_DELAY = 1, 2, 4, 8
KIND_OF_SEL = {OutSel.FU: K_PLAIN, OutSel.FU_delayed: K_DELAY, OutSel.B1: K_B1, OutSel.B2: K_B2}


def alu_eval(op: AluOp, a: int, b: int) -> int:
    a &= MASK32
    b &= MASK32
    sh = b & 31
    if op == AluOp.Add:
        r = a + b
    elif op == AluOp.Sub:
        r = a - b
    elif op == AluOp.Mult:
        r = a * b
    elif op == AluOp.Shl:
        r = a << sh
    elif op == AluOp.Shr:
        r = a >> sh
    elif op == AluOp.And:
        r = a & b
    elif op == AluOp.Or:
        r = a | b
    elif op == AluOp.Xor:
        r = a ^ b
    elif op == AluOp.Sra:
        r = signed(a) >> sh
    else:
        raise InvalidConfig(f"unknown ALU op {op!r}")
    return r & MASK32


def cmp_eval(op: CmpOp, a: int, b: int) -> int:
    if op == CmpOp.EqZero:
        return int(signed(a) == signed(b))
    if op == CmpOp.GtZero:
        return int(signed(a) > signed(b))
    raise InvalidConfig("comparator evaluated while disabled")


@dataclass(frozen=True)
class PEConfig:
    pe_id: int = 0
    eb_gate_mask: int = 0
    alu_op: AluOp = AluOp.Add
    alu_fb_sel: int = 0
    cmp_op: CmpOp = CmpOp.Disabled
    join_mode: JoinMergeMode = JoinMergeMode.JoinNoControl
    dp_mux_sel: DpMux = DpMux.Alu
    fu_in_a_sel: FuIn = FuIn.N
    fu_in_b_sel: FuIn = FuIn.N
    fu_ctrl_sel: int = 0
    constant: int = 0
    init_data_reg: int = 0
    init_valids: int = 0
    fu_fork_mask: int = 0
    delay_d: int = 0
    out_mux_sel: tuple = (OutSel.Disabled,) * 4
    in_fork_mask: tuple = (0, 0, 0, 0)

    @property
    def fu_enabled(self) -> bool:
        return self.fu_fork_mask != 0

    def check(self) -> "PEConfig":
        """Raise InvalidConfig unless every field is in range and consistent."""
        _range("pe_id", self.pe_id, 63)
        _range("eb_gate_mask", self.eb_gate_mask, 0x3F)
        _range("alu_fb_sel", self.alu_fb_sel, 1)
        _range("fu_ctrl_sel", self.fu_ctrl_sel, 3)
        _range("constant", self.constant, MASK32)
        _range("init_data_reg", self.init_data_reg, MASK32)
        _range("init_valids", self.init_valids, 7)
        _range("fu_fork_mask", self.fu_fork_mask, 0x3F)
        _range("delay_d", self.delay_d, 255)
        for enum, name in ((AluOp, "alu_op"), (CmpOp, "cmp_op"), (JoinMergeMode, "join_mode"),
                           (DpMux, "dp_mux_sel"), (FuIn, "fu_in_a_sel"), (FuIn, "fu_in_b_sel")):
            _enum(enum, name, getattr(self, name))
        if len(self.out_mux_sel) != 4 or len(self.in_fork_mask) != 4:
            raise InvalidConfig("out_mux_sel and in_fork_mask need 4 entries")
        for o, sel in enumerate(self.out_mux_sel):
            _enum(OutSel, f"out_mux_sel[{SIDES[o]}]", sel)
        for p, m in enumerate(self.in_fork_mask):
            _range(f"in_fork_mask[{SIDES[p]}]", m, 0x3F)

        if self.cmp_op != CmpOp.Disabled and (self.dp_mux_sel != DpMux.Cmp
                                              or self.join_mode == JoinMergeMode.Merge):
            raise InvalidConfig("comparator PEs must select Cmp and not merge")
        if self.dp_mux_sel == DpMux.Cmp and self.cmp_op == CmpOp.Disabled and self.fu_enabled:
            raise InvalidConfig("datapath selects a disabled comparator")
        if self.join_mode == JoinMergeMode.Merge and self.dp_mux_sel != DpMux.Mux:
            raise InvalidConfig("merge mode drives the datapath multiplexer")
        if self.alu_fb_sel and self.delay_d < 1:
            raise InvalidConfig("immediate feedback needs delay_d >= 1")
        if self.alu_fb_sel and self.fu_in_b_sel != FuIn.Const:
            raise InvalidConfig("immediate feedback replaces operand B (select Const)")

        gate = self.eb_gate_mask
        for p, m in enumerate(self.in_fork_mask):
            if m and not gate >> p & 1:
                raise InvalidConfig(f"input {SIDES[p]} is routed but its buffer is gated")
            if m & D_FUA and self.fu_in_a_sel != p:
                raise InvalidConfig(f"input {SIDES[p]} feeds FU_A but FU_A selects {self.fu_in_a_sel!r}")
            if m & D_FUB and self.fu_in_b_sel != p:
                raise InvalidConfig(f"input {SIDES[p]} feeds FU_B but FU_B selects {self.fu_in_b_sel!r}")
            if m & D_CTRL and not (self.join_mode == JoinMergeMode.JoinWithControl
                                   and self.fu_ctrl_sel == p):
                raise InvalidConfig(f"input {SIDES[p]} feeds FU_ctrl but control is not selected")
            if m & (D_FUA | D_FUB | D_CTRL) and not self.fu_enabled:
                raise InvalidConfig(f"input {SIDES[p]} feeds a disabled FU")
            for k, o in enumerate(others(p)):
                want = self.out_mux_sel[o] == OutSel.in_P1 + others(o).index(p)
                if bool(m & (D_P1 << k)) != want:
                    raise InvalidConfig(f"input {SIDES[p]} to output {SIDES[o]}: fork bit and mux disagree")
        if self.fu_enabled:
            for sel, bit, fb, name in ((self.fu_in_a_sel, D_FUA, FB1, "A"),
                                       (self.fu_in_b_sel, D_FUB, FB2, "B")):
                if name == "B" and self.alu_fb_sel:
                    continue
                if sel <= FuIn.W and not self.in_fork_mask[sel] & bit:
                    raise InvalidConfig(f"FU_{name} selects an input whose fork does not feed it")
                if (sel == FuIn.Feedback) != bool(self.fu_fork_mask & fb):
                    raise InvalidConfig(f"FU_{name} feedback select and fork bit disagree")
            if self.join_mode == JoinMergeMode.JoinWithControl and \
                    not self.in_fork_mask[self.fu_ctrl_sel] & D_CTRL:
                raise InvalidConfig("control input selected but its fork does not feed it")
            if self.join_mode == JoinMergeMode.Merge:
                if not (self.eb_gate_mask >> 4 & 3) == 3:
                    raise InvalidConfig("merge needs both FU input buffers")
        for o, sel in enumerate(self.out_mux_sel):
            is_fu = sel in KIND_OF_SEL
            if is_fu != bool(self.fu_fork_mask >> o & 1):
                raise InvalidConfig(f"output {SIDES[o]}: FU fork bit and mux disagree")
            if sel in (OutSel.B1, OutSel.B2) and self.join_mode != JoinMergeMode.JoinWithControl:
                raise InvalidConfig("branch valid routed but join mode has no control")
            if sel == OutSel.FU_delayed and self.delay_d == 0:
                raise InvalidConfig("delayed valid routed with delay_d = 0")
        return self


def _range(name, v, hi):
    if not isinstance(v, int) or v < 0 or v > hi:
        raise InvalidConfig(f"{name}={v!r} out of range 0..{hi}")


def _enum(enum, name, v):
    try:
        enum(v)
    except ValueError:
        raise InvalidConfig(f"{name}={v!r} is not a valid {enum.__name__}") from None


# -- configuration words ----------------------------------------------------

# (field, word, lsb, width)
_LAYOUT = (
    ("pe_id", 0, 0, 6), ("eb_gate_mask", 0, 6, 6), ("alu_op", 0, 12, 4),
    ("alu_fb_sel", 0, 16, 1), ("cmp_op", 0, 17, 2), ("join_mode", 0, 19, 2),
    ("dp_mux_sel", 0, 21, 2), ("fu_in_a_sel", 0, 23, 3), ("fu_in_b_sel", 0, 26, 3),
    ("fu_ctrl_sel", 0, 29, 2),
    ("constant", 1, 0, 32), ("init_data_reg", 2, 0, 32),
    ("init_valids", 3, 0, 3), ("fu_fork_mask", 3, 3, 6), ("delay_d", 3, 9, 8),
)
_RESERVED = (1 << 31, 0, 0, 0b111 << 29, 0xFF << 24)
_ENUMS = {"alu_op": AluOp, "cmp_op": CmpOp, "join_mode": JoinMergeMode,
          "dp_mux_sel": DpMux, "fu_in_a_sel": FuIn, "fu_in_b_sel": FuIn}


def pack_config(cfg: PEConfig) -> List[int]:
    cfg.check()
    w = [0] * 5
    for name, i, lsb, width in _LAYOUT:
        w[i] |= (int(getattr(cfg, name)) & ((1 << width) - 1)) << lsb
    for o, sel in enumerate(cfg.out_mux_sel):
        w[3] |= int(sel) << (17 + 3 * o)
    for p, m in enumerate(cfg.in_fork_mask):
        w[4] |= m << (6 * p)
    return w


def decode_config(words) -> PEConfig:
    words = list(words)
    if len(words) != 5:
        raise InvalidConfig(f"expected 5 words, got {len(words)}")
    for i, (x, rsv) in enumerate(zip(words, _RESERVED)):
        if not 0 <= x <= MASK32:
            raise InvalidConfig(f"word{i} is not a 32-bit value")
        if x & rsv:
            raise InvalidConfig(f"word{i} has reserved bits set")
    kw = {}
    for name, i, lsb, width in _LAYOUT:
        v = words[i] >> lsb & ((1 << width) - 1)
        if name in _ENUMS:
            try:
                v = _ENUMS[name](v)
            except ValueError:
                raise InvalidConfig(f"{name} encoding {v} is undefined") from None
        kw[name] = v
    kw["out_mux_sel"] = tuple(OutSel(words[3] >> (17 + 3 * o) & 7) for o in range(4))
    kw["in_fork_mask"] = tuple(words[4] >> (6 * p) & 0x3F for p in range(4))
    return PEConfig(**kw).check()


def route_config(pe_id: int, **kw) -> PEConfig:
    """Convenience constructor that also fills in eb gates for routed inputs."""
    cfg = PEConfig(pe_id=pe_id, **kw)
    gate = cfg.eb_gate_mask
    for p, m in enumerate(cfg.in_fork_mask):
        if m:
            gate |= 1 << p
    return replace(cfg, eb_gate_mask=gate)


# -- state ------------------------------------------------------------------

@dataclass
class FUState:
    data_reg: int = 0
    kinds: int = 0          # pending valid kinds (K_* bits)
    fire_count: int = 0
    in_buf_a: list = field(default_factory=list)
    in_buf_b: list = field(default_factory=list)

    @classmethod
    def initial(cls, cfg: PEConfig) -> "FUState":
        iv = cfg.init_valids
        kinds = (K_PLAIN if iv & 1 else 0) | (K_B1 if iv & 2 else 0) | (K_B2 if iv & 4 else 0)
        return cls(data_reg=cfg.init_data_reg, kinds=kinds)

    @property
    def valid_regs(self):
        return (bool(self.kinds & K_PLAIN), bool(self.kinds & K_B1), bool(self.kinds & K_B2))


@dataclass
class PEState:
    in_bufs: list = field(default_factory=lambda: [[], [], [], []])
    fu: FUState = field(default_factory=FUState)
    active_cycles: int = 0

    @classmethod
    def initial(cls, cfg: Optional[PEConfig]) -> "PEState":
        return cls(fu=FUState.initial(cfg) if cfg is not None else FUState())


# -- static wiring --------------------------------------------------------

@dataclass(frozen=True)
class Wiring:
    """Precomputed routing facts for one configuration."""
    fu_dest_kinds: tuple     # per FU fork bit (N,E,S,W,FB1,FB2): valid kind or 0
    in_dests: tuple          # per input port: tuple of ('fua'|'fub'|'ctrl'|'out', out side)
    coupled: tuple           # per input port: True if it feeds a wire operand or ctrl
    a_src: str               # 'eb' | 'wire' | 'const' | 'none'
    b_src: str
    out_src: tuple           # per output: ('in', p) | ('fu', kind) | None
    order: tuple             # static evaluation order of combinational signals


def _operand_src(cfg, sel, gate_bit):
    if sel == FuIn.Const or (cfg.alu_fb_sel and gate_bit == 5):
        return "const"
    return "eb" if cfg.eb_gate_mask >> gate_bit & 1 else "wire"


@lru_cache(maxsize=4096)
def wiring(cfg: PEConfig) -> Wiring:
    kinds = []
    for o in range(4):
        if cfg.fu_fork_mask >> o & 1:
            kinds.append(KIND_OF_SEL[cfg.out_mux_sel[o]])
        else:
            kinds.append(0)
    kinds.append(K_PLAIN if cfg.fu_fork_mask & FB1 else 0)
    kinds.append(K_PLAIN if cfg.fu_fork_mask & FB2 else 0)
    a_src = _operand_src(cfg, cfg.fu_in_a_sel, 4) if cfg.fu_enabled else "none"
    b_src = _operand_src(cfg, cfg.fu_in_b_sel, 5) if cfg.fu_enabled else "none"

    in_dests, coupled = [], []
    for p, m in enumerate(cfg.in_fork_mask):
        d = []
        cp = False
        if m & D_FUA:
            d.append(("fua", -1))
            cp |= a_src == "wire"
        if m & D_FUB:
            d.append(("fub", -1))
            cp |= b_src == "wire"
        if m & D_CTRL:
            d.append(("ctrl", -1))
            cp = True
        for k, o in enumerate(others(p)):
            if m & (D_P1 << k):
                d.append(("out", o))
        in_dests.append(tuple(d))
        coupled.append(cp)

    out_src = []
    for o, sel in enumerate(cfg.out_mux_sel):
        if sel <= OutSel.in_P3:
            out_src.append(("in", others(o)[sel]))
        elif sel in KIND_OF_SEL:
            out_src.append(("fu", KIND_OF_SEL[sel]))
        else:
            out_src.append(None)

    # combinational dependency graph (node -> predecessors); buffers cut edges
    g = {"drain": set(), "ready_down": {"drain"}, "join": {"ready_down"}}
    for name, src, fb in (("a", a_src, FB1), ("b", b_src, FB2)):
        if src == "wire":
            g[f"ready_{name}"] = {"ready_down"}
            if cfg.fu_fork_mask & fb:
                g["drain"].add(f"ready_{name}")
    for p in range(4):
        if coupled[p]:
            g[f"fork_{p}"] = {"join"}
            g["join"].add(f"valid_{p}")
            g[f"valid_{p}"] = set()
        elif in_dests[p]:
            g[f"fork_{p}"] = set()
    try:
        order = tuple(TopologicalSorter(g).static_order())
    except CycleError as exc:
        cyc = " -> ".join(exc.args[1])
        raise CombinationalLoop(f"PE {cfg.pe_id}: ready/valid cycle not broken by a buffer: {cyc}")
    return Wiring(tuple(kinds), tuple(in_dests), tuple(coupled), a_src, b_src, tuple(out_src), order)


# -- settle / commit (reference semantics) ---------------------------------

@dataclass
class FiringPlan:
    drain: bool = False
    join: object = None
    fire: bool = False
    result: int = 0
    kinds_next: int = 0
    fire_count_next: int = 0
    fb_tokens: tuple = (None, None)   # pushes into FU-in A/B from feedback
    collision: bool = False


def fu_settle(cfg: PEConfig, st: FUState, in_offers, downstream_readies) -> FiringPlan:
    """FU decision for one cycle.

    in_offers: (a, b, ctrl) as (valid, data) pairs, already conditioned on the
    upstream fork being able to fire. downstream_readies: 6 booleans in FU
    fork-bit order.
    """
    wr = wiring(cfg)
    plan = FiringPlan(kinds_next=st.kinds, fire_count_next=st.fire_count)
    if not cfg.fu_enabled:
        return plan
    if st.kinds:
        plan.drain = all(downstream_readies[d] for d in range(6)
                         if wr.fu_dest_kinds[d] & st.kinds)
    ready_down = not st.kinds or plan.drain
    (va, da), (vb, db), (vc, dc) = in_offers
    j = join_eval(cfg.join_mode, va, vb, vc, ready_down)
    plan.join = j
    plan.collision = j.collision
    kinds = 0 if plan.drain else st.kinds
    if plan.drain:
        fb = []
        for d, bit in ((4, FB1), (5, FB2)):
            fb.append(st.data_reg if wr.fu_dest_kinds[d] & st.kinds else None)
        plan.fb_tokens = tuple(fb)
    if j.fire:
        plan.fire = True
        if cfg.dp_mux_sel == DpMux.Mux:
            if cfg.join_mode == JoinMergeMode.Merge:
                res = da if j.merge_sel == 0 else db
            else:
                res = da if dc else db
        elif cfg.dp_mux_sel == DpMux.Cmp:
            res = cmp_eval(cfg.cmp_op, da, db)
        else:
            b = db
            if cfg.alu_fb_sel:
                b = cfg.init_data_reg if st.fire_count == 0 else st.data_reg
            res = alu_eval(cfg.alu_op, da, b)
        new = K_PLAIN
        if cfg.join_mode == JoinMergeMode.JoinWithControl:
            new |= K_B1 if dc else K_B2
        fc = st.fire_count
        if cfg.delay_d:
            fc += 1
            if fc == cfg.delay_d:
                new |= K_DELAY
                fc = 0
        plan.result = word(res)
        kinds = new
        plan.fire_count_next = fc
    plan.kinds_next = kinds
    return plan


def fu_commit(cfg: PEConfig, st: FUState, plan: FiringPlan, push_a=None, push_b=None) -> FUState:
    j = plan.join
    if j is not None and j.fire:
        if j.consume_a and wiring(cfg).a_src == "eb":
            st.in_buf_a.pop(0)
        if j.consume_b and wiring(cfg).b_src == "eb":
            st.in_buf_b.pop(0)
        st.data_reg = plan.result
    for buf, tok, fb in ((st.in_buf_a, push_a, plan.fb_tokens[0]), (st.in_buf_b, push_b, plan.fb_tokens[1])):
        for t in (tok, fb):
            if t is not None:
                buf.append(t)
    st.kinds = plan.kinds_next
    st.fire_count = plan.fire_count_next
    return st


@dataclass
class PEPlan:
    in_fire: list            # per input port
    out_tokens: list         # per output port: token sent or None
    fu: FiringPlan
    push_a: Optional[int] = None
    push_b: Optional[int] = None


def pe_settle(cfg: Optional[PEConfig], st: PEState, out_readies) -> PEPlan:
    """One PE's handshake decisions from cycle-start state.

    out_readies[o] is the (cycle-start) ready of whatever sits behind output o.
    Incoming valids need no argument: inputs land in this PE's own buffers.
    """
    if cfg is None:
        return PEPlan([False] * 4, [None] * 4, FiringPlan())
    wr = wiring(cfg)
    fu = st.fu
    bufs = st.in_bufs
    a_ready = len(fu.in_buf_a) < 2
    b_ready = len(fu.in_buf_b) < 2

    # FU output fork readiness: cardinal outputs or FU-in buffers (feedback)
    fu_ready = list(out_readies) + [a_ready, b_ready]

    # ready of each non-coupled destination, per input port
    def dest_ready(kind, o):
        if kind == "fua":
            return a_ready if wr.a_src == "eb" else True
        if kind == "fub":
            return b_ready if wr.b_src == "eb" else True
        if kind == "ctrl":
            return True
        return out_readies[o]

    others_ok = [bool(bufs[p]) and all(dest_ready(k, o) for k, o in wr.in_dests[p])
                 if wr.in_dests[p] else False for p in range(4)]

    def operand(src, sel, buf):
        if src == "eb":
            return (bool(buf), buf[0] if buf else 0)
        if src == "const":
            return (True, cfg.constant)
        if src == "wire":
            return (others_ok[sel], bufs[sel][0] if bufs[sel] else 0)
        return (False, 0)

    a_off = operand(wr.a_src, cfg.fu_in_a_sel, fu.in_buf_a)
    b_off = operand(wr.b_src, cfg.fu_in_b_sel, fu.in_buf_b)
    if cfg.join_mode == JoinMergeMode.JoinWithControl:
        p = cfg.fu_ctrl_sel
        c_off = (others_ok[p], bufs[p][0] if bufs[p] else 0)
    else:
        c_off = (False, 0)
    fplan = fu_settle(cfg, fu, (a_off, b_off, c_off), fu_ready)
    joined = fplan.fire

    in_fire = [others_ok[p] and (joined or not wr.coupled[p]) for p in range(4)]
    out_tokens = [None] * 4
    push_a = push_b = None
    for p in range(4):
        if not in_fire[p]:
            continue
        tok = bufs[p][0]
        for k, o in wr.in_dests[p]:
            if k == "out":
                out_tokens[o] = tok
            elif k == "fua" and wr.a_src == "eb":
                push_a = tok
            elif k == "fub" and wr.b_src == "eb":
                push_b = tok
    if fplan.drain:
        for o in range(4):
            if wr.fu_dest_kinds[o] & fu.kinds:
                out_tokens[o] = fu.data_reg
    return PEPlan(in_fire, out_tokens, fplan, push_a, push_b)


def pe_commit(cfg: Optional[PEConfig], st: PEState, plan: PEPlan, incoming) -> PEState:
    """Apply this cycle's firings. incoming[p] is the token pushed into input p."""
    for p in range(4):
        if plan.in_fire[p]:
            st.in_bufs[p].pop(0)
        if incoming[p] is not None:
            if cfg is None or not cfg.eb_gate_mask >> p & 1:
                raise InvalidConfig(f"token delivered into gated input {SIDES[p]}")
            st.in_bufs[p].append(incoming[p])
    if cfg is not None:
        fu_commit(cfg, st.fu, plan.fu, plan.push_a, plan.push_b)
        st.active_cycles += 1
    return st


CONFIG_FIELDS = tuple(f.name for f in fields(PEConfig))
