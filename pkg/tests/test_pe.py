import random
from dataclasses import replace

import pytest

from gen import random_pe_config
from strela.elastic import JoinMergeMode
from strela.errors import CombinationalLoop, InvalidConfig
from strela.pe import (AluOp, CmpOp, D_FUA, DpMux, FB1, FuIn, OutSel, PEConfig, S, alu_eval, cmp_eval,
                       decode_config, pack_config, route_config, wiring)

M = 0xFFFFFFFF


@pytest.mark.parametrize("op,a,b,want", [
    (AluOp.Add, M, 1, 0),
    (AluOp.Sub, 0, 1, M),
    (AluOp.Mult, 0x10000, 0x10000, 0),
    (AluOp.Mult, M, M, 1),
    (AluOp.Shl, 1, 33, 2),          # shift amount is taken mod 32
    (AluOp.Shr, 0x80000000, 31, 1),
    (AluOp.Sra, 0x80000000, 31, M),
    (AluOp.Sra, 0x40000000, 30, 1),
    (AluOp.And, 0b1100, 0b1010, 0b1000),
    (AluOp.Or, 0b1100, 0b1010, 0b1110),
    (AluOp.Xor, 0b1100, 0b1010, 0b0110),
])
def test_alu(op, a, b, want):
    assert alu_eval(op, a, b) == want


def test_cmp_is_signed():
    assert cmp_eval(CmpOp.GtZero, 1, M) == 1          # 1 > -1
    assert cmp_eval(CmpOp.GtZero, M, 0) == 0
    assert cmp_eval(CmpOp.EqZero, 5, 5) == 1
    assert cmp_eval(CmpOp.EqZero, 5, 6) == 0
    with pytest.raises(InvalidConfig):
        cmp_eval(CmpOp.Disabled, 0, 0)


def test_pack_decode_round_trip():
    rnd = random.Random(7)
    for _ in range(1000):
        cfg = random_pe_config(rnd)
        words = pack_config(cfg)
        assert len(words) == 5 and all(0 <= w <= M for w in words)
        assert decode_config(words) == cfg


def test_pack_field_positions():
    cfg = route_config(63, alu_op=AluOp.Sra, constant=0xDEADBEEF, init_data_reg=0x12345678,
                       in_fork_mask=(0, 0, 0, 0b010000), out_mux_sel=(OutSel.Disabled, OutSel.in_P3,
                                                                       OutSel.Disabled, OutSel.Disabled))
    w = pack_config(cfg)
    assert w[0] & 0x3F == 63
    assert w[0] >> 12 & 0xF == AluOp.Sra
    assert w[1] == 0xDEADBEEF and w[2] == 0x12345678
    assert w[4] >> 18 & 0x3F == 0b010000


@pytest.mark.parametrize("word,bit", [(0, 31), (3, 29), (3, 31), (4, 24), (4, 31)])
def test_decode_rejects_reserved_bits(word, bit):
    words = pack_config(PEConfig())
    words[word] |= 1 << bit
    with pytest.raises(InvalidConfig):
        decode_config(words)


def test_decode_rejects_bad_length_and_enums():
    with pytest.raises(InvalidConfig):
        decode_config([0] * 4)
    words = pack_config(PEConfig())
    words[0] |= 0xF << 12       # alu_op 15
    with pytest.raises(InvalidConfig):
        decode_config(words)


@pytest.mark.parametrize("kw", [
    dict(pe_id=64),
    dict(delay_d=256),
    dict(alu_fb_sel=1, fu_fork_mask=1, out_mux_sel=(OutSel.FU,) + (OutSel.Disabled,) * 3),  # delay 0
    dict(cmp_op=CmpOp.GtZero, dp_mux_sel=DpMux.Alu),
    dict(join_mode=JoinMergeMode.Merge, dp_mux_sel=DpMux.Alu),
    dict(in_fork_mask=(D_FUA, 0, 0, 0)),                            # feeds FU, but input is gated
    dict(out_mux_sel=(OutSel.FU_delayed,) + (OutSel.Disabled,) * 3, fu_fork_mask=1),
    dict(out_mux_sel=(OutSel.B1,) + (OutSel.Disabled,) * 3, fu_fork_mask=1),
])
def test_check_rejects(kw):
    with pytest.raises(InvalidConfig):
        PEConfig(**kw).check()


def loop_config(pe_id=12):
    """FU operand A fed back from the FU through an unbuffered (wire) input."""
    return PEConfig(pe_id=pe_id, eb_gate_mask=0, fu_in_a_sel=FuIn.Feedback, fu_in_b_sel=FuIn.Const,
                    fu_fork_mask=FB1 | 1 << S, init_valids=1,
                    out_mux_sel=(OutSel.Disabled, OutSel.Disabled, OutSel.FU, OutSel.Disabled)).check()


def test_combinational_loop_detected():
    with pytest.raises(CombinationalLoop):
        wiring(loop_config())
    # the same PE with the A buffer clocked is fine
    w = wiring(replace(loop_config(), eb_gate_mask=1 << 4))
    assert w.a_src == "eb"


def test_random_configs_have_static_order_or_loop():
    rnd = random.Random(3)
    for _ in range(500):
        cfg = random_pe_config(rnd)
        try:
            w = wiring(cfg)
        except CombinationalLoop:
            continue
        assert "join" in w.order
