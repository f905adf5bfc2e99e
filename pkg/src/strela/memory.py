"""Memory side of the accelerator: banked main memory, round-robin bank
arbitration, stream descriptors and the IMN/OMN stream engines.

Banks 0..7 are 32 KiB each. The lowest (8 - n) banks are contiguous; the top n
banks are word-interleaved, so the low word-address bits pick the bank.
"""
import sys
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from .errors import MalformedConfigStream, NotInterleavedRegion, OutOfBounds
from .pe import decode_config

MEM_BYTES = 256 * 1024
NUM_BANKS = 8
BANK_BYTES = MEM_BYTES // NUM_BANKS
DEFAULT_INTERLEAVED = 4
DEFAULT_FIFO_DEPTH = 4
DEFAULT_ISSUE_INTERVAL = 1


@dataclass(frozen=True)
class StreamDescriptor:
    base: int = 0
    size: int = 0
    stride: int = 4

    def __post_init__(self):
        if self.base % 4 or self.stride % 4:
            raise OutOfBounds(f"descriptor not word aligned: {self}")
        if self.size < 0:
            raise OutOfBounds(f"negative stream size: {self}")


def next_address(desc: StreamDescriptor, index: int, capacity: int = MEM_BYTES) -> int:
    addr = desc.base + index * desc.stride
    if not 0 <= addr <= capacity - 4:
        raise OutOfBounds(f"address 0x{addr:x} (element {index}) outside {capacity} B memory")
    return addr


def interleave_base(num_interleaved: int = DEFAULT_INTERLEAVED) -> int:
    return (NUM_BANKS - num_interleaved) * BANK_BYTES


def bank_of(addr: int, num_interleaved: int = DEFAULT_INTERLEAVED) -> int:
    """Bank of an address inside the interleaved region."""
    if not interleave_base(num_interleaved) <= addr < MEM_BYTES:
        raise NotInterleavedRegion(f"0x{addr:x} is not in the interleaved region")
    return (addr >> 2) % num_interleaved + (NUM_BANKS - num_interleaved)


class MemoryImage:
    """Flat 256 KiB word memory with a configurable interleaved region."""

    def __init__(self, num_interleaved: int = DEFAULT_INTERLEAVED, words=None):
        if num_interleaved not in (1, 2, 4, 8):
            raise ValueError("interleaved bank count must be 1, 2, 4 or 8")
        self.num_interleaved = num_interleaved
        self.words = array("I", bytes(MEM_BYTES))
        if words is not None:
            self.words[:len(words)] = array("I", words)
        self._ibase = interleave_base(num_interleaved)

    def bank(self, addr: int) -> int:
        if addr >= self._ibase:
            return (addr >> 2) % self.num_interleaved + (NUM_BANKS - self.num_interleaved)
        return addr // BANK_BYTES

    def read(self, addr: int) -> int:
        self._check(addr)
        return self.words[addr >> 2]

    def write(self, addr: int, value: int):
        self._check(addr)
        self.words[addr >> 2] = value & 0xFFFF_FFFF

    def _check(self, addr):
        if addr % 4 or not 0 <= addr < MEM_BYTES:
            raise OutOfBounds(f"bad word address 0x{addr:x}")

    def load(self, base: int, values: Iterable[int]):
        vals = [v & 0xFFFF_FFFF for v in values]
        i = base >> 2
        if base % 4 or i + len(vals) > len(self.words):
            raise OutOfBounds(f"block at 0x{base:x} does not fit")
        self.words[i:i + len(vals)] = array("I", vals)

    def dump(self, base: int, count: int, stride: int = 4) -> List[int]:
        if stride == 4:
            i = base >> 2
            return list(self.words[i:i + count])
        return [self.read(base + k * stride) for k in range(count)]

    def to_bytes(self) -> bytes:
        a = array("I", self.words)
        if a.itemsize != 4:
            raise RuntimeError("platform array('I') is not 32-bit")
        if sys.byteorder != "little":
            a.byteswap()
        return a.tobytes()

    def copy(self) -> "MemoryImage":
        m = MemoryImage(self.num_interleaved)
        m.words = array("I", self.words)
        return m

    @classmethod
    def from_bytes(cls, data: bytes, num_interleaved: int = DEFAULT_INTERLEAVED) -> "MemoryImage":
        if len(data) > MEM_BYTES or len(data) % 4:
            raise OutOfBounds(f"memory image of {len(data)} bytes is not a word multiple <= 256 KiB")
        a = array("I")
        a.frombytes(data)
        if sys.byteorder != "little":
            a.byteswap()
        return cls(num_interleaved, a)


def save_image(mem: MemoryImage, path):
    Path(path).write_bytes(mem.to_bytes())


def load_image(path, num_interleaved: int = DEFAULT_INTERLEAVED) -> MemoryImage:
    return MemoryImage.from_bytes(Path(path).read_bytes(), num_interleaved)


class Arbiter:
    """Per-bank round-robin arbitration; one grant per bank per cycle."""

    def __init__(self, num_requesters: int = 8, num_banks: int = NUM_BANKS):
        self.n = num_requesters
        self.rr = [0] * num_banks
        self.conflict_cycles = [0] * num_banks
        self.grants = [0] * num_banks
        self.max_interleaved_grants = 0

    def arbitrate(self, requests, interleaved_banks=None) -> set:
        """requests: iterable of (node_id, bank, is_write). Returns granted ids."""
        by_bank: Dict[int, list] = {}
        for node, bank, _rw in requests:
            by_bank.setdefault(bank, []).append(node)
        granted = set()
        inter = 0
        for bank, nodes in by_bank.items():
            if len(nodes) == 1:
                win = nodes[0]
            else:
                ptr = self.rr[bank]
                win = min(nodes, key=lambda x: (x - ptr) % self.n)
                self.conflict_cycles[bank] += 1
            self.rr[bank] = (win + 1) % self.n
            self.grants[bank] += 1
            granted.add(win)
            if interleaved_banks is not None and bank in interleaved_banks:
                inter += 1
        if inter > self.max_interleaved_grants:
            self.max_interleaved_grants = inter
        return granted


def arbitrate(requests, rr_pointers=None, num_requesters: int = 8):
    """Stateless form: returns (grants, new rr pointers)."""
    arb = Arbiter(num_requesters)
    if rr_pointers is not None:
        arb.rr = list(rr_pointers)
    g = arb.arbitrate(requests)
    return g, arb.rr


IMN, OMN = "IMN", "OMN"


@dataclass
class MemNode:
    kind: str
    index: int                      # column / node number 0..3
    desc: StreamDescriptor = field(default_factory=StreamDescriptor)
    depth: int = DEFAULT_FIFO_DEPTH
    issue_interval: int = DEFAULT_ISSUE_INTERVAL
    next_index: int = 0
    fifo: list = field(default_factory=list)
    cooldown: int = 0
    transfers: int = 0              # memory accesses completed
    fabric_transfers: int = 0       # tokens exchanged with the fabric
    stall_cycles: int = 0           # cycles a request was denied
    ncols: int = 4

    @property
    def node_id(self) -> int:
        return self.index if self.kind == IMN else self.ncols + self.index

    @property
    def done(self) -> bool:
        if self.kind == IMN:
            return self.next_index >= self.desc.size and not self.fifo
        return self.transfers >= self.desc.size

    def launch(self, desc: StreamDescriptor):
        self.desc = desc
        self.next_index = 0
        self.fifo = []
        self.cooldown = 0
        self.transfers = 0
        self.fabric_transfers = 0
        self.stall_cycles = 0

    def request(self, mem: MemoryImage):
        """Cycle-start request (node_id, bank, is_write, addr) or None."""
        if self.cooldown:
            return None
        if self.kind == IMN:
            if self.next_index >= self.desc.size or len(self.fifo) >= self.depth:
                return None
        elif not self.fifo:
            return None
        idx = self.next_index if self.kind == IMN else self.transfers
        addr = next_address(self.desc, idx)
        return (self.node_id, mem.bank(addr), self.kind == OMN, addr)


def imn_step(node: MemNode, mem: MemoryImage, granted: bool, addr: int, fabric_took: bool):
    """Commit one IMN cycle: pop what the fabric took, load on grant."""
    if fabric_took:
        node.fifo.pop(0)
        node.fabric_transfers += 1
    if granted:
        node.fifo.append(mem.words[addr >> 2])
        node.next_index += 1
        node.transfers += 1
        node.cooldown = node.issue_interval - 1
    elif node.cooldown:
        node.cooldown -= 1
    return node


def omn_step(node: MemNode, mem: MemoryImage, granted: bool, addr: int, incoming: Optional[int]):
    """Commit one OMN cycle: write the head on grant, accept the fabric token."""
    if granted:
        mem.words[addr >> 2] = node.fifo.pop(0)
        node.transfers += 1
        node.cooldown = node.issue_interval - 1
    elif node.cooldown:
        node.cooldown -= 1
    if incoming is not None:
        if len(node.fifo) >= node.depth:
            raise OutOfBounds("OMN fifo overflow")
        node.fifo.append(incoming)
        node.fabric_transfers += 1
    return node


def deserialize_config(words) -> list:
    """Group a config word stream into (pe_id, PEConfig) records."""
    words = list(words)
    if len(words) % 5:
        raise MalformedConfigStream(f"{len(words)} words is not a multiple of 5")
    out, seen = [], set()
    for i in range(0, len(words), 5):
        cfg = decode_config(words[i:i + 5])
        if cfg.pe_id in seen:
            raise MalformedConfigStream(f"duplicate pe_id {cfg.pe_id}")
        seen.add(cfg.pe_id)
        out.append((cfg.pe_id, cfg))
    return out
