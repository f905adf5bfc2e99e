"""Memory-mapped control registers and the scripted host that drives them.

The host writes descriptors and the config image address, pulses the command
register, and waits for done. Cycle accounting per launch:
config (words + CONFIG_OVERHEAD, only when reconfiguring) + execution, plus a
fixed host overhead between consecutive launches.
"""
from dataclasses import dataclass, field
from typing import List, Optional

from .errors import BusyWrite, UnknownRegister
from .fabric import Fabric, PerfCounters, RunResult, STALL_WINDOW, run
from .mapper import KernelManifest, Launch, Routing, build_configs, expand_shots, route
from .memory import MEM_BYTES, StreamDescriptor, deserialize_config
from .pe import pack_config

CONFIG_OVERHEAD = 4
# Host cycles between launches (descriptor writes, polling, loop control).
# One value for the whole suite, least-squares fit over the multi-shot kernels
# (see bench.fit_host_overhead).
HOST_OVERHEAD = 93
CONFIG_ADDR = 0x0

# register map (byte offsets of 32-bit words), shown for 4 columns; with C
# columns the OMN block starts at 0x10 + 0x10*C and the counters follow it
STATUS, COMMAND, CONFIG_ADDR_REG, CONFIG_WORDS = 0x00, 0x04, 0x08, 0x0C
IMN_BASE, OMN_BASE, NODE_STRIDE = 0x10, 0x50, 0x10
COUNTER_BASE = 0x90
CMD_START, CMD_RECONFIGURE_AND_START, CMD_ABORT = 1, 2, 3
ST_BUSY, ST_DONE = 1, 2
COUNTER_NAMES = ("total_cycles", "config_cycles", "exec_cycles", "overhead_cycles",
                 "outputs_total", "launches", "merge_collisions", "max_interleaved_grants")
DESC_FIELDS = ("base", "size", "stride", "reserved")


class GateState:
    """Which PEs and memory nodes a launch activates (clock-gating view)."""

    def __init__(self, fab: Fabric):
        self.pes = [c is not None for c in fab.cfg]
        self.imns = [n.desc.size > 0 for n in fab.imns]
        self.omns = [n.desc.size > 0 for n in fab.omns]

    def as_dict(self):
        return {"pes": self.pes, "imns": self.imns, "omns": self.omns}


class Controller:
    def __init__(self, fab: Fabric, max_cycles=1_000_000, stall_window=STALL_WINDOW, engine="compiled"):
        self.fab = fab
        self.cols = fab.cols
        self.imn_base = IMN_BASE
        self.omn_base = IMN_BASE + NODE_STRIDE * self.cols
        self.counter_base = self.omn_base + NODE_STRIDE * self.cols
        self.regs = {CONFIG_ADDR_REG: 0, CONFIG_WORDS: 0}
        for i in range(self.cols):
            for k in range(4):
                self.regs[self.imn_base + i * NODE_STRIDE + 4 * k] = 4 if k == 2 else 0
                self.regs[self.omn_base + i * NODE_STRIDE + 4 * k] = 4 if k == 2 else 0
        self.busy = False
        self.done = False
        self.pending: Optional[int] = None
        self.counters = PerfCounters()
        self.last: Optional[RunResult] = None
        self.max_cycles = max_cycles
        self.stall_window = stall_window
        self.engine = engine

    # -- register file ----------------------------------------------------
    def read(self, off: int) -> int:
        if off == STATUS:
            return (ST_BUSY if self.busy else 0) | (ST_DONE if self.done else 0)
        if off == COMMAND:
            return self.pending or 0
        cb = self.counter_base
        if cb <= off < cb + 4 * len(COUNTER_NAMES) and off % 4 == 0:
            return getattr(self.counters, COUNTER_NAMES[(off - cb) // 4]) & 0xFFFFFFFF
        if off in self.regs:
            return self.regs[off]
        raise UnknownRegister(f"no register at offset 0x{off:02x}")

    def write(self, off: int, value: int):
        value &= 0xFFFFFFFF
        if off == COMMAND:
            if value == CMD_ABORT:
                self.busy, self.pending = False, None
                return
            if self.busy:
                raise BusyWrite("command written while busy")
            if value not in (CMD_START, CMD_RECONFIGURE_AND_START):
                raise UnknownRegister(f"unknown command {value}")
            self.busy, self.done, self.pending = True, False, value
            return
        if off not in self.regs:
            raise UnknownRegister(f"no writable register at offset 0x{off:02x}")
        if self.busy:
            raise BusyWrite(f"write to 0x{off:02x} while busy")
        self.regs[off] = value

    def set_descriptors(self, imn: List[Optional[StreamDescriptor]], omn: List[Optional[StreamDescriptor]]):
        for base, descs in ((self.imn_base, imn), (self.omn_base, omn)):
            for i in range(self.cols):
                d = descs[i] if i < len(descs) and descs[i] is not None else StreamDescriptor()
                for k, name in enumerate(DESC_FIELDS[:3]):
                    self.write(base + i * NODE_STRIDE + 4 * k, getattr(d, name))

    def descriptors(self, base) -> List[StreamDescriptor]:
        r = self.regs
        return [StreamDescriptor(r[base + i * NODE_STRIDE], r[base + i * NODE_STRIDE + 4],
                                 r[base + i * NODE_STRIDE + 8]) for i in range(self.cols)]

    # -- operations -------------------------------------------------------
    def fetch_configuration(self) -> int:
        """Stream config_words words from config_addr into the PEs."""
        n = self.regs[CONFIG_WORDS]
        if n == 0:
            return 0
        addr = self.regs[CONFIG_ADDR_REG]
        words = self.fab.mem.dump(addr, n, 4)
        records = deserialize_config(words)
        self.fab.unconfigure()
        self.fab.configure(records)
        return n + CONFIG_OVERHEAD

    def step(self) -> RunResult:
        """Carry out the pending command: the fabric runs to completion."""
        if not self.busy:
            raise UnknownRegister("no command pending")
        cfg_cycles = self.fetch_configuration() if self.pending == CMD_RECONFIGURE_AND_START else 0
        self.fab.launch(self.descriptors(self.imn_base), self.descriptors(self.omn_base))
        self.fab.reset_counters()
        self.fab.warnings = []
        try:
            res = run(self.fab, self.max_cycles, self.stall_window, self.engine)
        finally:
            self.busy, self.pending = False, None
        self.done = True
        c = res.counters
        c.config_cycles = cfg_cycles
        c.total_cycles = cfg_cycles + res.exec_cycles
        c.launches = 1
        self.counters.merge(c)
        self.last = res
        return res

    def snapshot_counters(self) -> PerfCounters:
        snap = PerfCounters()
        snap.merge(self.counters)
        return snap


def write_config_image(fab: Fabric, words: List[int], addr: int = CONFIG_ADDR):
    if addr + 4 * len(words) > MEM_BYTES:
        raise ValueError("config image does not fit in memory")
    for k, w in enumerate(words):
        fab.mem.write(addr + 4 * k, w)


@dataclass
class ShotLog:
    exec_cycles: List[int] = field(default_factory=list)
    config_cycles: List[int] = field(default_factory=list)
    input_fire_cycles: list = field(default_factory=list)    # of the first launch
    warnings: list = field(default_factory=list)


class Host:
    """Runs a manifest's shot schedule through the control registers."""

    def __init__(self, ctrl: Controller, host_overhead: int = HOST_OVERHEAD, config_addr: int = CONFIG_ADDR):
        self.ctrl = ctrl
        self.host_overhead = host_overhead
        self.config_addr = config_addr
        self.launches = 0
        self.trace: Optional[list] = None    # receives CSV lines of the first launch

    def run_manifest(self, m: KernelManifest, rt: Optional[Routing] = None, dims=None,
                     launches: Optional[List[Launch]] = None) -> ShotLog:
        ctrl, fab = self.ctrl, self.ctrl.fab
        if rt is None:
            rt = route(m.dfg, m.placement, m.grid)
        launches = launches if launches is not None else expand_shots(m, dims)
        log = ShotLog()
        for ln in launches:
            if self.launches:
                ctrl.counters.overhead_cycles += self.host_overhead
                ctrl.counters.total_cycles += self.host_overhead
            self.launches += 1
            ctrl.set_descriptors(ln.imn, ln.omn)
            if ln.reconfigure:
                words = []
                for cfg in build_configs(m, rt, ln.consts).values():
                    words.extend(pack_config(cfg))
                write_config_image(fab, words, self.config_addr)
                ctrl.write(CONFIG_ADDR_REG, self.config_addr)
                ctrl.write(CONFIG_WORDS, len(words))
                ctrl.write(COMMAND, CMD_RECONFIGURE_AND_START)
            else:
                ctrl.write(COMMAND, CMD_START)
            tracing = self.trace is not None and self.launches == 1
            if tracing:
                fab.trace = []
            try:
                res = ctrl.step()
            finally:
                if tracing:
                    self.trace.extend(e.csv() for e in fab.trace)
                    fab.trace = None
            log.exec_cycles.append(res.exec_cycles)
            log.config_cycles.append(res.counters.config_cycles)
            log.warnings.extend(res.warnings)
            if not log.input_fire_cycles:
                log.input_fire_cycles = res.input_fire_cycles
        return log
