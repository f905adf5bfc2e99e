"""Random generators shared by the property tests."""
import json
import random

from strela.elastic import ElasticBufferState, JoinMergeMode, eb_commit, eb_offer
from strela.errors import Unroutable
from strela.mapper import parse_manifest, route, validate
from strela.pe import (AluOp, CmpOp, D_CTRL, D_FUA, D_FUB, D_P1, DpMux, FB1, FB2, FuIn, OutSel,
                       PEConfig, others)


def random_pe_config(rnd: random.Random) -> PEConfig:
    """A legal PEConfig built field by field (every draw passes check())."""
    cats = [rnd.choice(("off", "pass", "fu")) for _ in range(4)]
    fu = "fu" in cats
    join = rnd.choice(list(JoinMergeMode)) if fu else JoinMergeMode.JoinNoControl
    if join == JoinMergeMode.Merge:
        dp, cmp = DpMux.Mux, CmpOp.Disabled
    elif fu:
        dp = rnd.choice(list(DpMux))
        cmp = rnd.choice((CmpOp.EqZero, CmpOp.GtZero)) if dp == DpMux.Cmp else CmpOp.Disabled
    else:
        dp, cmp = DpMux.Alu, CmpOp.Disabled
    alu_fb = int(fu and dp == DpMux.Alu and rnd.random() < 0.2)
    delay = rnd.randrange(1, 256) if alu_fb or (fu and rnd.random() < 0.3) else 0
    a_sel = rnd.choice(list(FuIn)) if fu else FuIn.N
    b_sel = FuIn.Const if alu_fb else (rnd.choice(list(FuIn)) if fu else FuIn.N)
    ctrl_sel = rnd.randrange(4)
    fork = [0] * 4
    fu_fork = 0
    if fu:
        if a_sel <= FuIn.W:
            fork[a_sel] |= D_FUA
        if b_sel <= FuIn.W:
            fork[b_sel] |= D_FUB
        if join == JoinMergeMode.JoinWithControl:
            fork[ctrl_sel] |= D_CTRL
        fu_fork |= (FB1 if a_sel == FuIn.Feedback else 0) | (FB2 if b_sel == FuIn.Feedback else 0)
    outs = []
    for o, cat in enumerate(cats):
        if cat == "pass":
            k = rnd.randrange(3)
            p = others(o)[k]
            fork[p] |= D_P1 << others(p).index(o)
            outs.append(OutSel(k))
        elif cat == "fu":
            kinds = [OutSel.FU] + ([OutSel.FU_delayed] if delay else []) + \
                    ([OutSel.B1, OutSel.B2] if join == JoinMergeMode.JoinWithControl else [])
            outs.append(rnd.choice(kinds))
            fu_fork |= 1 << o
        else:
            outs.append(OutSel.Disabled)
    gate = sum(1 << p for p in range(4) if fork[p] or rnd.random() < 0.2)
    gate |= rnd.randrange(4) << 4
    if join == JoinMergeMode.Merge:
        gate |= 0b110000
    return PEConfig(
        pe_id=rnd.randrange(64), eb_gate_mask=gate, alu_op=rnd.choice(list(AluOp)), alu_fb_sel=alu_fb,
        cmp_op=cmp, join_mode=join, dp_mux_sel=dp, fu_in_a_sel=a_sel, fu_in_b_sel=b_sel,
        fu_ctrl_sel=ctrl_sel, constant=rnd.getrandbits(32), init_data_reg=rnd.getrandbits(32),
        init_valids=rnd.randrange(8), fu_fork_mask=fu_fork, delay_d=delay,
        out_mux_sel=tuple(outs), in_fork_mask=tuple(fork)).check()


def check_eb_schedule(schedule):
    """Drive one 2-slot buffer through (want_push, value, want_pop) cycles.

    A push happens when the producer wants it and the buffer is ready; a pop
    when the consumer wants it and the buffer is valid (both from cycle-start
    state). Returns (pushed, popped, final occupancy) after asserting FIFO
    order and bounded occupancy every cycle."""
    st = ElasticBufferState()
    pushed, popped = [], []
    for want_push, value, want_pop in schedule:
        offer, demand = eb_offer(st)
        assert demand.ready == (len(st.slots) < 2)
        assert offer.valid == (len(st.slots) > 0)
        push = value if want_push and demand.ready else None
        pop = want_pop and offer.valid
        if pop:
            popped.append(offer.data)
        if push is not None:
            pushed.append(value & 0xFFFFFFFF)
        st = eb_commit(st, push, pop)
        assert len(st.slots) <= 2
        assert popped == pushed[:len(popped)]
        assert list(st.slots) == pushed[len(popped):]
    return pushed, popped, len(st.slots)


def random_eb_schedule(rnd: random.Random, length=None):
    length = rnd.randint(1, 40) if length is None else length
    p_push, p_pop = rnd.random(), rnd.random()
    return [(rnd.random() < p_push, rnd.getrandbits(32), rnd.random() < p_pop) for _ in range(length)]


ALU_OPS = [op.name for op in AluOp]


def random_dfg(rnd: random.Random, max_nodes=6):
    """(nodes, edges) of a small stateless-or-reduction DFG. Constants do not
    count as nodes (they live inside a PE). Rate-reducing ports (t, f, out_d)
    feed output streams only, so finite buffers never change the result."""
    nodes, edges = [], []
    n_in = rnd.randint(1, 2)
    for k in range(n_in):
        nodes.append({"id": f"i{k}", "kind": "InputStream"})
    n_comp = rnd.randint(1, max_nodes - n_in - 1)
    full = [(f"i{k}", "out") for k in range(n_in)]      # full-rate sources
    reduced = []                                         # sources for outputs only
    consumers = {}
    nconst = 0

    def src(port_dst, stream=False):
        nonlocal nconst
        if not stream and rnd.random() < 0.25:
            cid = f"k{nconst}"
            nconst += 1
            nodes.append({"id": cid, "kind": "Const", "value": rnd.randrange(-8, 9)})
            edges.append({"src": cid, "dst": port_dst})
            return
        s, p = rnd.choice(full)
        edges.append({"src": s if p == "out" else f"{s}.{p}", "dst": port_dst})
        consumers[s] = consumers.get(s, 0) + 1

    comp = []
    for c in range(n_comp):
        nid = f"n{c}"
        kind = rnd.choice(("Alu", "Alu", "Compare", "Select", "Branch", "Acc"))
        if kind == "Alu":
            nodes.append({"id": nid, "kind": "Alu", "op": rnd.choice(ALU_OPS)})
            src(f"{nid}.a", True), src(f"{nid}.b")
            full.append((nid, "out"))
        elif kind == "Compare":
            nodes.append({"id": nid, "kind": "Compare", "op": rnd.choice(("EqZero", "GtZero"))})
            src(f"{nid}.a", True), src(f"{nid}.b")
            full.append((nid, "out"))
        elif kind == "Select":
            nodes.append({"id": nid, "kind": "Select"})
            src(f"{nid}.a", True), src(f"{nid}.b"), src(f"{nid}.ctrl")
            full.append((nid, "out"))
        elif kind == "Branch":
            nodes.append({"id": nid, "kind": "Branch", "op": rnd.choice(("Add", "Sub", "Xor"))})
            src(f"{nid}.a", True), src(f"{nid}.b"), src(f"{nid}.ctrl")
            reduced += [(nid, "t"), (nid, "f")]
        else:
            nodes.append({"id": nid, "kind": "Alu", "op": rnd.choice(("Add", "Xor", "Mult")), "feedback": True,
                          "delay": rnd.randint(1, 4), "init": rnd.randrange(0, 5)})
            src(f"{nid}.a", True)
            full.append((nid, "out"))
            reduced.append((nid, "out_d"))
        comp.append(nid)
    outs = []
    budget = max_nodes - n_in - n_comp
    # every compute node needs a consumer, or its FU would never be enabled
    for nid in comp:
        if consumers.get(nid):
            continue
        if budget == 0:
            return None
        ports = [p for s, p in full + reduced if s == nid]
        outs.append((nid, rnd.choice(ports)))
        consumers[nid] = 1
        budget -= 1
    if not outs:
        outs.append(rnd.choice([s for s in full if s[0].startswith("n")] + reduced))
    for k, (s, p) in enumerate(outs):
        oid = f"o{k}"
        nodes.append({"id": oid, "kind": "OutputStream"})
        edges.append({"src": s if p == "out" else f"{s}.{p}", "dst": oid})
    return nodes, edges


def random_placed_manifest(rnd: random.Random, length=12, tries=40):
    """A routable manifest around random_dfg, or None."""
    g = random_dfg(rnd)
    if g is None:
        return None
    nodes, edges = g
    comp = [n["id"] for n in nodes if n["kind"] not in ("InputStream", "OutputStream", "Const")]
    ins = [n["id"] for n in nodes if n["kind"] == "InputStream"]
    outs = [n["id"] for n in nodes if n["kind"] == "OutputStream"]
    cells = [(r, c) for r in range(4) for c in range(4)]
    for _ in range(tries):
        pl = {nid: list(xy) for nid, xy in zip(comp, rnd.sample(cells, len(comp)))}
        for nid, c in zip(ins, rnd.sample(range(4), len(ins))):
            pl[nid] = ["N", c]
        for nid, c in zip(outs, rnd.sample(range(4), len(outs))):
            pl[nid] = ["S", c]
        streams = {nid: {"base": 0x20000 + 0x400 * k, "size": length, "stride": 4} for k, nid in enumerate(ins)}
        for k, nid in enumerate(outs):
            streams[nid] = {"base": 0x30000 + 0x400 * k, "size": 0, "stride": 4}
        d = {"name": "rand", "grid": [4, 4], "nodes": nodes, "edges": edges, "placement": pl,
             "streams": streams, "shots": [{}]}
        m = parse_manifest(json.dumps(d))
        if validate(m.dfg, m.placement, m.grid):
            continue
        try:
            route(m.dfg, m.placement, m.grid)
        except Unroutable:
            continue
        return d
    return None


def random_case(seed: int, length=12):
    """(manifest text, inputs, expected outputs) for one random routed DFG, or None.
    Output stream sizes come from the interpreter."""
    from strela.mapper import interpret
    rnd = random.Random(seed)
    d = random_placed_manifest(rnd, length)
    if d is None:
        return None
    m = parse_manifest(json.dumps(d))
    ins = {sid: [rnd.randrange(-50, 50) & 0xFFFFFFFF for _ in range(length)]
           for sid, (side, _) in m.placement.streams.items() if side == "N"}
    exp = interpret(m.dfg, ins)
    for sid, (side, _) in m.placement.streams.items():
        if side == "S":
            d["streams"][sid]["size"] = len(exp[sid])
    return json.dumps(d), ins, exp


def run_case(text, ins, engine="compiled", max_cycles=20000):
    """Run a manifest whose streams are all in its first shot; returns (fabric, outputs)."""
    from strela.fabric import Fabric, run
    from strela.mapper import build_configs, expand_shots
    from strela.memory import MemoryImage
    m = parse_manifest(text)
    rt = route(m.dfg, m.placement, m.grid)
    ln = expand_shots(m)[0]
    fab = Fabric(*m.grid, mem=MemoryImage())
    fab.configure(build_configs(m, rt).items())
    for sid, vals in ins.items():
        d = ln.imn[m.placement.streams[sid][1]]
        for k, v in enumerate(vals):
            fab.mem.write(d.base + d.stride * k, v)
    fab.launch(ln.imn, ln.omn)
    run(fab, max_cycles=max_cycles, engine=engine)
    outs = {}
    for sid, (side, col) in m.placement.streams.items():
        if side == "S":
            d = ln.omn[col]
            outs[sid] = fab.mem.dump(d.base, d.size, d.stride)
    return fab, outs
