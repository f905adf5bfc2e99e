import pytest

from strela import bench
from strela.controller import (CMD_ABORT, CMD_RECONFIGURE_AND_START, CMD_START, COMMAND, CONFIG_ADDR_REG,
                               CONFIG_OVERHEAD, CONFIG_WORDS, COUNTER_BASE, COUNTER_NAMES, IMN_BASE, OMN_BASE,
                               STATUS, Controller, GateState, Host, write_config_image)
from strela.errors import BusyWrite, UnknownRegister
from strela.fabric import Fabric
from strela.mapper import build_configs, emit_image, load_manifest, route, specialize
from strela.memory import StreamDescriptor


def manifest(name):
    return load_manifest(bench.manifest_path(name))


def test_register_reset_values_and_round_trip():
    ctrl = Controller(Fabric())
    assert ctrl.read(STATUS) == 0
    assert ctrl.read(IMN_BASE + 8) == 4 and ctrl.read(OMN_BASE + 0x30 + 8) == 4
    ctrl.write(IMN_BASE + 0x10, 0x20000)
    ctrl.write(IMN_BASE + 0x14, 99)
    assert ctrl.descriptors(IMN_BASE)[1] == StreamDescriptor(0x20000, 99, 4)
    ctrl.write(CONFIG_ADDR_REG, 0x1_0000_0040)       # truncated to 32 bits
    assert ctrl.read(CONFIG_ADDR_REG) == 0x40


@pytest.mark.parametrize("off", [0x02, 0x91, 0x200, COUNTER_BASE + 4 * len(COUNTER_NAMES)])
def test_unknown_register(off):
    ctrl = Controller(Fabric())
    with pytest.raises(UnknownRegister):
        ctrl.read(off)
    with pytest.raises(UnknownRegister):
        ctrl.write(off, 1)


def test_counter_registers_are_read_only():
    ctrl = Controller(Fabric())
    with pytest.raises(UnknownRegister):
        ctrl.write(COUNTER_BASE, 1)


def test_busy_protocol():
    ctrl = Controller(Fabric())
    with pytest.raises(UnknownRegister):
        ctrl.write(COMMAND, 7)
    with pytest.raises(UnknownRegister):
        ctrl.step()                      # nothing pending
    ctrl.write(COMMAND, CMD_START)
    assert ctrl.read(STATUS) == 1 and ctrl.read(COMMAND) == CMD_START
    with pytest.raises(BusyWrite):
        ctrl.write(IMN_BASE, 0x20000)
    with pytest.raises(BusyWrite):
        ctrl.write(COMMAND, CMD_START)
    ctrl.write(COMMAND, CMD_ABORT)
    assert ctrl.read(STATUS) == 0
    ctrl.write(COMMAND, CMD_START)
    ctrl.step()                          # all descriptors idle: done at once
    assert ctrl.read(STATUS) == 2
    assert ctrl.read(COUNTER_BASE + 4 * COUNTER_NAMES.index("launches")) == 1
    assert ctrl.read(COUNTER_BASE + 4 * COUNTER_NAMES.index("exec_cycles")) == 0


def fetch_cycles(name):
    m = manifest(name)
    fab = Fabric()
    ctrl = Controller(fab)
    words = emit_image(m)
    write_config_image(fab, words)
    ctrl.write(CONFIG_ADDR_REG, 0)
    ctrl.write(CONFIG_WORDS, len(words))
    return ctrl.fetch_configuration(), len(build_configs(m)), fab


@pytest.mark.parametrize("name,want", [("fft", 84), ("find2min", 84), ("relu", 74), ("dither", 74),
                                       ("empty", 0)])
def test_configuration_cycles(name, want):
    cycles, pes, _ = fetch_cycles(name)
    assert cycles == want


@pytest.mark.parametrize("name", ["fft", "relu", "dither", "find2min", "mm", "conv2d", "matmul", "axpby",
                                  "outer"])
def test_configuration_law(name):
    cycles, pes, fab = fetch_cycles(name)
    assert cycles == 5 * pes + CONFIG_OVERHEAD
    # the fetched image lands exactly where the mapper put it
    assert {i: c for i, c in enumerate(fab.cfg) if c is not None} == build_configs(manifest(name))


def test_size_zero_launch_completes_immediately():
    m = manifest("relu")
    fab = Fabric()
    ctrl = Controller(fab)
    Host(ctrl).run_manifest(m, launches=[])
    ctrl.set_descriptors([StreamDescriptor()] * 4, [StreamDescriptor()] * 4)
    words = emit_image(m)
    write_config_image(fab, words)
    ctrl.write(CONFIG_WORDS, len(words))
    ctrl.write(COMMAND, CMD_RECONFIGURE_AND_START)
    res = ctrl.step()
    assert res.exec_cycles == 0 and res.counters.config_cycles == 74
    gate = GateState(fab)
    assert not any(gate.imns) and not any(gate.omns) and sum(gate.pes) == 14


def test_host_overhead_between_launches():
    fab = Fabric()
    ctrl = Controller(fab)
    host = Host(ctrl, host_overhead=50)
    m = specialize(manifest("mm"), {"n": 4})
    log = host.run_manifest(m, route(m.dfg, m.placement, m.grid))
    c = ctrl.counters
    assert c.launches == len(log.exec_cycles) > 1
    assert c.overhead_cycles == 50 * (c.launches - 1)
    assert c.total_cycles == c.config_cycles + c.exec_cycles + c.overhead_cycles
    assert c.config_cycles == sum(log.config_cycles) == 5 * 13 + 4      # configured once


def test_reconfiguring_shots_pay_config_each_time():
    res, _ = bench.run_kernel("conv2d", {"n": 6})
    assert res.launches == 3 and res.config_cycles == 3 * (5 * 12 + 4)
