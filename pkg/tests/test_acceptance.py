"""Acceptance criteria 1-10. Each test is named test_cNN[part]_...; the
conftest prints one PASS/FAIL line per criterion at the end of the run.

Run alone with:  pytest tests/test_acceptance.py -v
"""
import itertools
import random

import pytest

from gen import check_eb_schedule, random_case, random_eb_schedule, random_pe_config, run_case
from strela import bench
from strela.controller import CONFIG_WORDS, Controller, Host, write_config_image
from strela.elastic import fork_eval
from strela.errors import CombinationalLoop, Deadlock
from strela.fabric import Fabric, run
from strela.mapper import build_configs, emit_image, load_manifest
from strela.memory import Arbiter, StreamDescriptor
from strela.pe import decode_config, pack_config
from test_pe import loop_config

ONE_SHOT_CYCLES = {"fft": 523, "relu": 697, "dither": 4617, "find2min": 7175}
MULTI_SHOT_TOTALS = {"mm 16x16": 12105, "conv2d 64x64": 13931}
SHIPPED = ["fft", "relu", "dither", "find2min", "mm", "conv2d", "matmul", "axpby", "outer"]


@pytest.fixture(scope="module")
def suite(suite_run):
    return {r.label: r for r in suite_run[0]}


def rel(got, want):
    return (got - want) / want


# 1 -------------------------------------------------------------------------

def test_c01_oracle_equivalence(suite_run, note):
    results, _, secs = suite_run
    labels = [r.label for r in results]
    assert labels == ["fft", "relu", "dither", "find2min", "mm 16x16", "mm 64x64", "conv2d 64x64", "gemm",
                      "gemver", "gesummv", "2mm", "3mm"]
    bad = [f"{r.label}: {r.mismatch}" for r in results if r.oracle != "pass"]
    note(f"{len(results) - len(bad)}/{len(results)} bit-exact in {secs:.1f}s")
    assert not bad
    assert secs < 300


# 2 -------------------------------------------------------------------------

def fetch(name):
    fab = Fabric()
    ctrl = Controller(fab)
    m = load_manifest(bench.manifest_path(name))
    words = emit_image(m)
    write_config_image(fab, words)
    ctrl.write(CONFIG_WORDS, len(words))
    return ctrl.fetch_configuration(), len(build_configs(m))


def test_c02_configuration_cycles(suite, note):
    got = {name: fetch(name) for name in ("fft", "find2min", "relu", "dither")}
    note(", ".join(f"{k} {pes} PEs -> {c}" for k, (c, pes) in got.items()))
    for name, (cycles, pes) in got.items():
        assert cycles == {16: 84, 14: 74}[pes]
        assert suite[name].config_cycles == cycles
    assert got["fft"][1] == 16 and got["relu"][1] == 14


# 3 -------------------------------------------------------------------------

def test_c03_fft_bandwidth(suite, note):
    opc = suite["fft"].outputs_per_cycle
    sweep = bench.bank_sweep()
    note(f"fft {opc:.3f} out/cycle; banks " + ", ".join(f"{b}:{v:.2f}" for b, v in sweep.items()))
    assert 1.85 <= opc <= 2.00
    assert sweep[4] == pytest.approx(opc)
    vals = [sweep[b] for b in (1, 2, 4, 8)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert sweep[4] < sweep[8] <= 4


# 4 -------------------------------------------------------------------------

def test_c04_relu_throughput(suite, note):
    m = load_manifest(bench.manifest_path("relu"))
    copies = sum(n.kind == "Select" for n in m.dfg.nodes.values())
    opc = suite["relu"].outputs_per_cycle
    note(f"relu {opc:.3f} out/cycle, unroll {copies}")
    assert copies == 3
    assert 1.35 <= opc <= 1.55


# 5 -------------------------------------------------------------------------

@pytest.mark.parametrize("kernel,want", [("dither", 4), ("find2min", 6)])
def test_c05_initiation_interval(suite, note, kernel, want):
    r = suite[kernel]
    note(f"{kernel} II {sorted(set(r.ii.values()))} (want {want}+-1), constant {all(r.ii_constant.values())}")
    assert r.ii
    for sid, ii in r.ii.items():
        assert r.ii_constant[sid], f"{kernel}.{sid} II not constant"
        assert abs(ii - want) <= 1, f"{kernel}.{sid}: II {ii}, expected {want}+-1"


# 6 -------------------------------------------------------------------------

@pytest.mark.parametrize("kernel", list(ONE_SHOT_CYCLES))
def test_c06_one_shot_cycles(suite, note, kernel):
    got, want = suite[kernel].exec_cycles, ONE_SHOT_CYCLES[kernel]
    note(f"{kernel} {got} vs {want} ({rel(got, want):+.1%})")
    assert abs(rel(got, want)) <= 0.10


# 7 -------------------------------------------------------------------------

def test_c07_operation_counts(suite, note):
    note(f"mm16 {bench.count_ops('mm', {'n': 16})}, mm64 {bench.count_ops('mm', {'n': 64})}, "
         f"fft {bench.count_ops('fft', {})}")
    assert bench.count_ops("mm", {"n": 16}) == 7936
    assert bench.count_ops("mm", {"n": 64}) == 520192
    assert bench.count_ops("fft", {"n": 256}) == 2560
    assert suite["fft"].outputs == 1024 and suite["fft"].ops == 2560
    assert suite["mm 16x16"].ops == 7936 and suite["mm 64x64"].ops == 520192


# 8 -------------------------------------------------------------------------

def test_c08_multi_shot_totals(suite, note):
    # one host-overhead value for every kernel: none of the manifests carries its own
    for name in SHIPPED:
        assert load_manifest(bench.manifest_path(name)).host_overhead is None
    parts = []
    for label, want in MULTI_SHOT_TOTALS.items():
        got = suite[label].total_cycles
        parts.append(f"{label} {got} vs {want} ({rel(got, want):+.1%})")
    note(f"host overhead {bench.HOST_OVERHEAD}; " + ", ".join(parts))
    for label, want in MULTI_SHOT_TOTALS.items():
        assert abs(rel(suite[label].total_cycles, want)) <= 0.15


# 9 -------------------------------------------------------------------------

def test_c09a_elastic_buffer_schedules(note):
    rnd = random.Random(2024)
    moved = 0
    for _ in range(10_000):
        pushed, popped, left = check_eb_schedule(random_eb_schedule(rnd))
        assert len(pushed) == len(popped) + left
        moved += len(popped)
    note(f"10000 schedules, {moved} tokens")


def test_c09b_fork_atomicity(note):
    n = 0
    for valid, mask, readies in itertools.product((False, True), range(1, 64), range(64)):
        r = fork_eval(valid, mask, readies)
        assert r.valids_out in (0, mask)
        assert r.fire == (valid and readies & mask == mask)
        n += 1
    note(f"{n} patterns")


def test_c09c_config_round_trip(note):
    rnd = random.Random(99)
    for _ in range(1000):
        cfg = random_pe_config(rnd)
        assert decode_config(pack_config(cfg)) == cfg
    note("1000 configs")


def test_c09d_routed_soundness(note):
    done, seed, mism = 0, 0, []
    while done < 100:
        case = random_case(seed)
        seed += 1
        if case is None:
            continue
        done += 1
        _, outs = run_case(*case[:2])
        if outs != case[2]:
            mism.append(seed - 1)
    note(f"{done - len(mism)}/{done} DFGs match the interpreter")
    assert not mism, f"mismatching seeds {mism}"


def test_c09e_determinism(suite_run, tmp_path, note):
    results, traces, _ = suite_run
    again_traces = {}
    again = bench.run_suite(traces=again_traces)
    a = bench.write_report(results, tmp_path / "a", traces=traces)
    b = bench.write_report(again, tmp_path / "b", traces=again_traces)
    assert [p.name for p in a] == [p.name for p in b]
    diff = [p.name for p, q in zip(a, b) if p.read_bytes() != q.read_bytes()]
    note(f"{len(a)} files compared, {len(diff)} differ")
    assert not diff


def test_c09f_bandwidth_ceiling(suite, note):
    peak = max(r.max_interleaved_grants for r in suite.values())
    arb, rnd = Arbiter(8), random.Random(5)
    for _ in range(5000):
        reqs = [(n, rnd.randrange(8), False) for n in range(8) if rnd.random() < 0.8]
        arb.arbitrate(reqs, {4, 5, 6, 7})
    note(f"suite peak {peak} interleaved grants/cycle; arbiter stress peak {arb.max_interleaved_grants}")
    assert peak <= 4 and arb.max_interleaved_grants <= 4
    assert suite["fft"].max_interleaved_grants == 4


# 10 ------------------------------------------------------------------------

def test_c10_negative_paths(note):
    m = load_manifest(bench.manifest_path("deadlock"))
    found = {}
    for window in (16, 64):
        with pytest.raises(Deadlock) as ei:
            Host(Controller(Fabric(), stall_window=window)).run_manifest(m)
        dump = ei.value.dump
        assert dump["pes"] and dump["nodes"]
        found[window] = dump["cycle"]
    # the fabric goes quiet at the same cycle q either way; detection lands at q + window
    quiet = found[64] - 64
    assert quiet == found[16] - 16 and quiet >= 0
    for engine in ("compiled", "reference"):
        fab = Fabric()
        fab.configure([(12, loop_config(12))])
        fab.launch([None] * 4, [StreamDescriptor(0x30000, 4, 4)] + [None] * 3)
        with pytest.raises(CombinationalLoop):
            run(fab, max_cycles=10, engine=engine)
        assert fab.cycle == 0
    note(f"quiet at cycle {quiet}, Deadlock raised at {found[64]} (window 64) / {found[16]} (window 16); "
         f"CombinationalLoop before cycle 0")
