import itertools

import pytest
from hypothesis import given, settings, strategies as st

from gen import check_eb_schedule
from strela.elastic import (ElasticBufferState, JoinMergeMode, eb_commit, eb_offer, fork_eval, join_eval,
                            signed, word)
from strela.errors import InvalidConfig, PreconditionViolation

schedules = st.lists(st.tuples(st.booleans(), st.integers(0, 2**32 - 1), st.booleans()), max_size=60)


@settings(max_examples=300, deadline=None)
@given(schedules)
def test_eb_conserves_tokens_in_order(schedule):
    pushed, popped, left = check_eb_schedule(schedule)
    assert len(pushed) == len(popped) + left


def test_eb_empty_and_full_offers():
    offer, demand = eb_offer(ElasticBufferState())
    assert not offer.valid and demand.ready
    offer, demand = eb_offer(ElasticBufferState((7, 8)))
    assert offer.valid and offer.data == 7 and not demand.ready


def test_eb_full_throughput_with_both_sides_active():
    # one slot occupied: push and pop in the same cycle keep it at one
    st_ = ElasticBufferState((1,))
    for v in range(2, 10):
        offer, demand = eb_offer(st_)
        assert offer.valid and demand.ready
        st_ = eb_commit(st_, v, True)
        assert st_.slots == (v,)


def test_eb_ready_does_not_depend_on_downstream():
    # full buffer stays not-ready even if the consumer pops this cycle
    st_ = ElasticBufferState((1, 2))
    _, demand = eb_offer(st_)
    assert not demand.ready
    assert eb_commit(st_, None, True).slots == (2,)


def test_eb_preconditions():
    with pytest.raises(PreconditionViolation):
        eb_commit(ElasticBufferState((1, 2)), 3, False)
    with pytest.raises(PreconditionViolation):
        eb_commit(ElasticBufferState(), None, True)
    with pytest.raises(PreconditionViolation):
        ElasticBufferState((1, 2, 3))


def test_eb_truncates_to_32_bits():
    assert eb_commit(ElasticBufferState(), -1, False).slots == (0xFFFFFFFF,)
    assert word(1 << 32) == 0 and signed(0xFFFFFFFF) == -1


def test_fork_exhaustive_width6():
    for valid, mask, readies in itertools.product((False, True), range(64), range(64)):
        if mask == 0 and valid:
            with pytest.raises(InvalidConfig):
                fork_eval(valid, mask, readies)
            continue
        r = fork_eval(valid, mask, readies)
        assert r.fire == (valid and mask != 0 and readies & mask == mask)
        assert r.valids_out in (0, mask)
        assert r.valids_out == (mask if r.fire else 0)


def test_fork_rejects_wide_vectors():
    with pytest.raises(InvalidConfig):
        fork_eval(True, 1 << 6, 0)


@pytest.mark.parametrize("va,vb,vc,rd", list(itertools.product((False, True), repeat=4)))
def test_join_truth_tables(va, vb, vc, rd):
    j = join_eval(JoinMergeMode.JoinNoControl, va, vb, vc, rd)
    assert j.fire == (va and vb and rd)
    assert (j.consume_a, j.consume_b, j.consume_ctrl) == (j.fire, j.fire, False)
    j = join_eval(JoinMergeMode.JoinWithControl, va, vb, vc, rd)
    assert j.fire == (va and vb and vc and rd)
    assert (j.consume_a, j.consume_b, j.consume_ctrl) == (j.fire,) * 3


@pytest.mark.parametrize("va,vb,rd", list(itertools.product((False, True), repeat=3)))
def test_merge(va, vb, rd):
    j = join_eval(JoinMergeMode.Merge, va, vb, False, rd)
    assert j.fire == ((va or vb) and rd)
    assert j.collision == (va and vb)
    if j.fire:
        assert j.merge_sel == (0 if va else 1)
        assert j.consume_a == va and j.consume_b == (not va)
    else:
        assert not (j.consume_a or j.consume_b)
