"""Benchmark kernels: deterministic inputs, sequential oracles, operation
counts, end-to-end runs through the controller, and report rendering."""
import json
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from . import __version__
from .controller import Controller, HOST_OVERHEAD, Host
from .errors import OracleMismatch
from .fabric import Fabric, TRACE_HEADER
from .mapper import KernelManifest, expand_shots, load_manifest, route, specialize, build_configs
from .memory import MEM_BYTES, MemoryImage, interleave_base
from .pe import MASK32, alu_eval, AluOp

FREQ_MHZ = 250
DEFAULT_SEED = 1
# Reference totals of the multi-shot kernels; the host-overhead knob is fit to these.
CALIBRATION = {"mm": ({"n": 16}, 12105), "conv2d": ({"n": 64}, 13931)}
ALPHA, BETA = 3, 2      # integer stand-ins for the Polybench scalars


def manifest_path(name: str) -> Path:
    return Path(str(resources.files("strela") / "manifests" / f"{name}.json"))


# -- inputs ----------------------------------------------------------------

class Lcg:
    """32-bit LCG, x' = 1664525*x + 1013904223 mod 2^32; draws use the top bits."""
    A, C = 1664525, 1013904223

    def __init__(self, seed: int):
        self.state = seed & MASK32

    def next32(self) -> int:
        self.state = (self.A * self.state + self.C) & MASK32
        return self.state

    def randint(self, lo: int, hi: int) -> int:
        """Uniform-ish integer in [lo, hi)."""
        return lo + (self.next32() >> 8) % (hi - lo)

    def vector(self, n, lo, hi) -> List[int]:
        return [self.randint(lo, hi) for _ in range(n)]


def w32(v: int) -> int:
    return v & MASK32


def s32(v: int) -> int:
    v &= MASK32
    return v - (1 << 32) if v >> 31 else v


class Layout:
    """Bump allocator over the interleaved region."""

    def __init__(self, base: Optional[int] = None):
        self.next = interleave_base() if base is None else base
        self.arrays: Dict[str, Tuple[int, int]] = {}

    def alloc(self, name: str, nwords: int) -> int:
        addr = self.next
        if addr + 4 * nwords > MEM_BYTES:
            raise ValueError(f"{name}: {nwords} words do not fit in memory")
        self.next += 4 * nwords
        self.arrays[name] = (addr, nwords)
        return addr


# -- kernel plans ------------------------------------------------------------

@dataclass
class Phase:
    manifest: str
    params: dict = field(default_factory=dict)


@dataclass
class Plan:
    phases: List[Phase]
    memory: Dict[int, int]                       # address -> initial word
    checks: Dict[str, Tuple[List[int], List[int]]]   # name -> (addresses, expected words)
    outputs: int                                 # result words counted for outputs/cycle
    ops: int
    multishot: bool
    results: dict = field(default_factory=dict)  # decoded values for the report


def _array(mem, base, vals):
    for k, v in enumerate(vals):
        mem[base + 4 * k] = w32(v)


def _check(base, vals, pitch=None, cols=None):
    if pitch is None:
        return [base + 4 * k for k in range(len(vals))], [w32(v) for v in vals]
    addrs = [base + 4 * (pitch * (k // cols) + k % cols) for k in range(len(vals))]
    return addrs, [w32(v) for v in vals]


def fft_oracle(xr, yr, yi, xi, c=23170):
    out = []
    for a, b, d, e in zip(xr, yr, yi, xi):
        tr = s32(alu_eval(AluOp.Sra, alu_eval(AluOp.Mult, w32(b + d), c), 15))
        ti = s32(alu_eval(AluOp.Sra, alu_eval(AluOp.Mult, w32(d - b), c), 15))
        out.append((a + tr, a - tr, e + ti, e - ti))
    return out


def plan_fft(dims, rng):
    n = dims["n"]
    q = [rng.vector(n, -(1 << 15), 1 << 15) for _ in range(4)]     # xr, yr, yi, xi
    mem = {}
    for k in range(n):
        for j in range(4):
            mem[0x20000 + 16 * k + 4 * j] = w32(q[j][k])
    res = fft_oracle(*q)
    checks = {}
    for j, name in enumerate(("ar", "br", "ai", "bi")):
        checks[name] = ([0x30000 + 16 * k + 4 * j for k in range(n)], [w32(r[j]) for r in res])
    return Plan([Phase("fft", {"n": n})], mem, checks, 4 * n, count_ops("fft", dims), False)


def relu_oracle(xs):
    return [x if s32(x) > 0 else 0 for x in xs]


def plan_relu(dims, rng):
    n = 3 * dims["n"]
    xs = [w32(v) for v in rng.vector(n, -(1 << 31), 1 << 31)]
    mem = {}
    _array(mem, 0x20000, xs)
    return Plan([Phase("relu", {"n": dims["n"]})], mem, {"y": _check(0x30000, relu_oracle(xs))},
                n, count_ops("relu", dims), False)


def dither_oracle(row):
    err, out = 0, []
    for x in row:
        v = x + err
        o = 255 if v > 127 else 0
        err = v - o
        out.append(o)
    return out


def plan_dither(dims, rng):
    n = dims["n"]
    rows = [rng.vector(n, 0, 256), rng.vector(n, 0, 256)]
    mem = {}
    for r in range(2):
        for k, v in enumerate(rows[r]):
            mem[0x20000 + 8 * k + 4 * r] = v
    checks = {}
    for r in range(2):
        checks[f"row{r}"] = ([0x30000 + 8 * k + 4 * r for k in range(n)], dither_oracle(rows[r]))
    return Plan([Phase("dither", {"n": n})], mem, checks, 2 * n, count_ops("dither", dims), False)


INDEX_BITS = 10


def find2min_oracle(xs):
    """(value, index) of the two smallest entries; ties keep the earlier index."""
    best = [((1 << 31) - 1 >> INDEX_BITS, (1 << INDEX_BITS) - 1)] * 2
    for i, x in enumerate(xs):
        if x < best[0][0]:
            best = [(x, i), best[0]]
        elif x < best[1][0]:
            best[1] = (x, i)
    return best


def plan_find2min(dims, rng):
    n = dims["n"]
    if n > 1 << INDEX_BITS:
        raise ValueError(f"find2min packs indexes in {INDEX_BITS} bits (n <= {1 << INDEX_BITS})")
    xs = rng.vector(n, 0, 1 << 20)
    mem = {}
    _array(mem, 0x20000, xs)
    (v1, i1), (v2, i2) = find2min_oracle(xs)
    checks = {"min1": ([0x30000], [v1 << INDEX_BITS | i1]), "min2": ([0x30004], [v2 << INDEX_BITS | i2])}
    return Plan([Phase("find2min", {"n": n})], mem, checks, 4, count_ops("find2min", dims), False,
                {"min1": [v1, i1], "min2": [v2, i2]})


def matmul_oracle(a, b, ni, nj, nk, s=1):
    return [[w32(sum(s * a[i * nk + k] * b[k * nj + j] for k in range(nk))) for j in range(nj)]
            for i in range(ni)]


def plan_mm(dims, rng):
    n = dims["n"]
    a, b = rng.vector(n * n, -128, 128), rng.vector(n * n, -128, 128)
    mem = {}
    _array(mem, 0x20000, a)
    _array(mem, 0x28000, b)
    c = [v for row in matmul_oracle(a, b, n, n, n) for v in row]
    return Plan([Phase("mm", {"n": n})], mem, {"C": _check(0x30000, c)}, n * n,
                count_ops("mm", dims), True)


CONV_WEIGHTS = [[1, 2, 1], [2, 4, 2], [1, 2, 1]]


def conv2d_oracle(img, n, w=CONV_WEIGHTS):
    m = n - 2
    return [sum(w[r][c] * img[(i + r) * n + j + c] for r in range(3) for c in range(3))
            for i in range(m) for j in range(m)]


def plan_conv2d(dims, rng):
    n = dims["n"]
    img = rng.vector(n * n, 0, 256)
    mem = {}
    _array(mem, 0x20000, img)
    m = n - 2
    return Plan([Phase("conv2d", {"n": n})], mem, {"out": _check(0x30000, conv2d_oracle(img, n), n, m)},
                m * m, count_ops("conv2d", dims), True)


def _matmul_phase(ni, nj, nk, a, asi, ask, b, bsk, bsj, c, csi, csj, s=1):
    return Phase("matmul", dict(ni=ni, nj=nj, nk=nk, a=a, asi=asi, ask=ask, b=b, bsk=bsk, bsj=bsj,
                                c=c, csi=csi, csj=csj, s=s))


def _axpby_phase(n, x, z, y, alpha=1, beta=1):
    return Phase("axpby", dict(n=n, x=x, z=z, y=y, alpha=alpha, beta=beta))


def plan_gemm(dims, rng):
    ni, nj, nk = dims["ni"], dims["nj"], dims["nk"]
    L, mem = Layout(), {}
    A, B, C = rng.vector(ni * nk, -128, 128), rng.vector(nk * nj, -128, 128), rng.vector(ni * nj, -128, 128)
    pa, pb, pc, pt = L.alloc("A", ni * nk), L.alloc("B", nk * nj), L.alloc("C", ni * nj), L.alloc("T", ni * nj)
    _array(mem, pa, A), _array(mem, pb, B), _array(mem, pc, C)
    # reference loop nest: C *= beta; C += alpha * A * B
    out = [w32(BETA * C[i * nj + j] + sum(ALPHA * A[i * nk + k] * B[k * nj + j] for k in range(nk)))
           for i in range(ni) for j in range(nj)]
    phases = [_matmul_phase(ni, nj, nk, pa, nk, 1, pb, nj, 1, pt, nj, 1, ALPHA),
              _axpby_phase(ni * nj, pt, pc, pc, 1, BETA)]
    return Plan(phases, mem, {"C": _check(pc, out)}, ni * nj, count_ops("gemm", dims), True)


def plan_2mm(dims, rng):
    ni, nj, nk, nl = dims["ni"], dims["nj"], dims["nk"], dims["nl"]
    L, mem = Layout(), {}
    A, B = rng.vector(ni * nk, -128, 128), rng.vector(nk * nj, -128, 128)
    C, D = rng.vector(nj * nl, -128, 128), rng.vector(ni * nl, -128, 128)
    pa, pb, pc, pd = L.alloc("A", ni * nk), L.alloc("B", nk * nj), L.alloc("C", nj * nl), L.alloc("D", ni * nl)
    ptmp, pt = L.alloc("tmp", ni * nj), L.alloc("T", ni * nl)
    for p, v in ((pa, A), (pb, B), (pc, C), (pd, D)):
        _array(mem, p, v)
    tmp = [v for row in matmul_oracle(A, B, ni, nj, nk, ALPHA) for v in row]
    d = [w32(BETA * D[i * nl + j] + sum(tmp[i * nj + k] * C[k * nl + j] for k in range(nj)))
         for i in range(ni) for j in range(nl)]
    phases = [_matmul_phase(ni, nj, nk, pa, nk, 1, pb, nj, 1, ptmp, nj, 1, ALPHA),
              _matmul_phase(ni, nl, nj, ptmp, nj, 1, pc, nl, 1, pt, nl, 1),
              _axpby_phase(ni * nl, pt, pd, pd, 1, BETA)]
    return Plan(phases, mem, {"tmp": _check(ptmp, tmp), "D": _check(pd, d)}, ni * nl,
                count_ops("2mm", dims), True)


def plan_3mm(dims, rng):
    ni, nj, nk, nl, nm = dims["ni"], dims["nj"], dims["nk"], dims["nl"], dims["nm"]
    L, mem = Layout(), {}
    A, B = rng.vector(ni * nk, -128, 128), rng.vector(nk * nj, -128, 128)
    C, D = rng.vector(nj * nm, -128, 128), rng.vector(nm * nl, -128, 128)
    pa, pb, pc, pd = L.alloc("A", ni * nk), L.alloc("B", nk * nj), L.alloc("C", nj * nm), L.alloc("D", nm * nl)
    pe, pf, pg = L.alloc("E", ni * nj), L.alloc("F", nj * nl), L.alloc("G", ni * nl)
    for p, v in ((pa, A), (pb, B), (pc, C), (pd, D)):
        _array(mem, p, v)
    e = [v for row in matmul_oracle(A, B, ni, nj, nk) for v in row]
    f = [v for row in matmul_oracle(C, D, nj, nl, nm) for v in row]
    g = [v for row in matmul_oracle(e, f, ni, nl, nj) for v in row]
    phases = [_matmul_phase(ni, nj, nk, pa, nk, 1, pb, nj, 1, pe, nj, 1),
              _matmul_phase(nj, nl, nm, pc, nm, 1, pd, nl, 1, pf, nl, 1),
              _matmul_phase(ni, nl, nj, pe, nj, 1, pf, nl, 1, pg, nl, 1)]
    return Plan(phases, mem, {"E": _check(pe, e), "F": _check(pf, f), "G": _check(pg, g)}, ni * nl,
                count_ops("3mm", dims), True)


def plan_gemver(dims, rng):
    n = dims["n"]
    L, mem = Layout(), {}
    A = rng.vector(n * n, -128, 128)
    vecs = {k: rng.vector(n, -128, 128) for k in ("u1", "v1", "u2", "v2", "w", "x", "y", "z")}
    pa = L.alloc("A", n * n)
    p = {k: L.alloc(k, n) for k in vecs}
    pt, pt2 = L.alloc("T", n), L.alloc("T2", n)
    _array(mem, pa, A)
    for k, v in vecs.items():
        _array(mem, p[k], v)
    # reference loop nest
    u1, v1, u2, v2 = vecs["u1"], vecs["v1"], vecs["u2"], vecs["v2"]
    a2 = [w32(A[i * n + j] + u1[i] * v1[j] + u2[i] * v2[j]) for i in range(n) for j in range(n)]
    x = [w32(vecs["x"][i] + sum(BETA * a2[j * n + i] * vecs["y"][j] for j in range(n))) for i in range(n)]
    x = [w32(x[i] + vecs["z"][i]) for i in range(n)]
    w = [w32(vecs["w"][i] + sum(ALPHA * a2[i * n + j] * x[j] for j in range(n))) for i in range(n)]
    phases = [Phase("outer", dict(n=n, m=n, a=pa, u=p["u1"], v=p["v1"], o=pa)),
              Phase("outer", dict(n=n, m=n, a=pa, u=p["u2"], v=p["v2"], o=pa)),
              # T[i] = sum_j (beta*y[j]) * A[j][i]
              _matmul_phase(1, n, n, p["y"], 0, 1, pa, n, 1, pt, 0, 1, BETA),
              _axpby_phase(n, p["x"], pt, p["x"]),
              _axpby_phase(n, p["x"], p["z"], p["x"]),
              # T2[i] = sum_j (alpha*x[j]) * A[i][j]
              _matmul_phase(1, n, n, p["x"], 0, 1, pa, 1, n, pt2, 0, 1, ALPHA),
              _axpby_phase(n, p["w"], pt2, p["w"])]
    return Plan(phases, mem, {"A": _check(pa, a2), "x": _check(p["x"], x), "w": _check(p["w"], w)}, n,
                count_ops("gemver", dims), True)


def plan_gesummv(dims, rng):
    n = dims["n"]
    L, mem = Layout(), {}
    A, B, x = rng.vector(n * n, -128, 128), rng.vector(n * n, -128, 128), rng.vector(n, -128, 128)
    pa, pb, px, ptmp, py = L.alloc("A", n * n), L.alloc("B", n * n), L.alloc("x", n), L.alloc("tmp", n), L.alloc("y", n)
    for pp, v in ((pa, A), (pb, B), (px, x)):
        _array(mem, pp, v)
    tmp = [w32(sum(A[i * n + j] * x[j] for j in range(n))) for i in range(n)]
    y0 = [sum(B[i * n + j] * x[j] for j in range(n)) for i in range(n)]
    y = [w32(ALPHA * tmp[i] + BETA * y0[i]) for i in range(n)]
    phases = [_matmul_phase(1, n, n, px, 0, 1, pa, 1, n, ptmp, 0, 1),
              _matmul_phase(1, n, n, px, 0, 1, pb, 1, n, py, 0, 1),
              _axpby_phase(n, ptmp, py, py, ALPHA, BETA)]
    return Plan(phases, mem, {"tmp": _check(ptmp, tmp), "y": _check(py, y)}, n, count_ops("gesummv", dims), True)


@dataclass
class KernelDef:
    plan: Callable
    dims: dict


KERNELS: Dict[str, KernelDef] = {
    "fft": KernelDef(plan_fft, {"n": 256}),
    "relu": KernelDef(plan_relu, {"n": 341}),
    "dither": KernelDef(plan_dither, {"n": 512}),
    "find2min": KernelDef(plan_find2min, {"n": 1024}),
    "mm": KernelDef(plan_mm, {"n": 16}),
    "conv2d": KernelDef(plan_conv2d, {"n": 64}),
    "gemm": KernelDef(plan_gemm, {"ni": 60, "nj": 70, "nk": 80}),
    "gemver": KernelDef(plan_gemver, {"n": 120}),
    "gesummv": KernelDef(plan_gesummv, {"n": 90}),
    "2mm": KernelDef(plan_2mm, {"ni": 40, "nj": 50, "nk": 70, "nl": 80}),
    "3mm": KernelDef(plan_3mm, {"ni": 40, "nj": 50, "nk": 60, "nl": 70, "nm": 80}),
}
# (kernel, dims override) rows of the default suite
SUITE = [("fft", {}), ("relu", {}), ("dither", {}), ("find2min", {}), ("mm", {"n": 16}), ("mm", {"n": 64}),
         ("conv2d", {}), ("gemm", {}), ("gemver", {}), ("gesummv", {}), ("2mm", {}), ("3mm", {})]


def count_ops(kernel: str, dims: dict) -> int:
    """Arithmetic operations. mm: 2n^3 - n^2; fft: 10 per butterfly; one-shot
    control-driven kernels: enabled FUs x iterations; the rest: operations of
    the reference loop nest."""
    d = dict(KERNELS[kernel].dims, **dims)
    if kernel == "mm":
        n = d["n"]
        return 2 * n ** 3 - n ** 2
    if kernel == "fft":
        return 10 * (4 * d["n"] // 4)
    if kernel == "relu":
        return 3 * 2 * d["n"]          # 3 copies x (compare, select)
    if kernel == "dither":
        return 2 * 4 * d["n"]          # 2 copies x (add, compare, mult, sub)
    if kernel == "find2min":
        return 9 * d["n"]              # 9 enabled FUs per element
    if kernel == "conv2d":
        m = d["n"] - 2
        return m * m * (2 * 9 - 1)
    if kernel == "gemm":
        return d["ni"] * d["nj"] * (1 + 3 * d["nk"])
    if kernel == "2mm":
        return 3 * d["ni"] * d["nj"] * d["nk"] + d["ni"] * d["nl"] * (1 + 2 * d["nj"])
    if kernel == "3mm":
        return 2 * (d["ni"] * d["nj"] * d["nk"] + d["nj"] * d["nl"] * d["nm"] + d["ni"] * d["nl"] * d["nj"])
    if kernel == "gemver":
        n = d["n"]
        return 4 * n * n + 3 * n * n + n + 3 * n * n
    if kernel == "gesummv":
        n = d["n"]
        return 4 * n * n + 3 * n
    raise KeyError(kernel)


# -- running ---------------------------------------------------------------

def steady_ii(fire_cycles: List[int]) -> Tuple[Optional[int], bool]:
    """Most common firing period over the middle half, and whether it is constant there."""
    n = len(fire_cycles)
    if n < 8:
        return None, False
    mid = fire_cycles[n // 4: 3 * n // 4]
    diffs = [b - a for a, b in zip(mid, mid[1:])]
    mode = max(sorted(set(diffs)), key=diffs.count)
    return mode, len(set(diffs)) == 1


@dataclass
class KernelResult:
    kernel: str
    label: str
    dims: dict
    seed: int
    pes: int
    launches: int
    config_cycles: int
    exec_cycles: int
    overhead_cycles: int
    total_cycles: int
    ops: int
    outputs: int
    outputs_per_cycle: float
    mops: float
    ii: Dict[str, Optional[int]]
    ii_constant: Dict[str, bool]
    oracle: str
    multishot: bool
    max_interleaved_grants: int
    results: dict = field(default_factory=dict)
    mismatch: Optional[str] = None

    def as_dict(self):
        return asdict(self)


def label_of(kernel, dims):
    d = dict(KERNELS[kernel].dims, **dims)
    if kernel in ("mm", "conv2d"):
        return f"{kernel} {d['n']}x{d['n']}"
    return kernel


def run_kernel(kernel: str, dims: Optional[dict] = None, seed: int = DEFAULT_SEED, banks: int = 4,
               host_overhead: int = HOST_OVERHEAD, engine: str = "compiled", trace: Optional[list] = None,
               strict: bool = True, grid=(4, 4)) -> Tuple[KernelResult, Fabric]:
    """Run one kernel end to end. `trace`, if a list, receives the CSV lines of
    the first launch."""
    if kernel not in KERNELS:
        raise KeyError(f"unknown kernel {kernel!r}")
    dims = dict(KERNELS[kernel].dims, **(dims or {}))
    plan = KERNELS[kernel].plan(dims, Lcg(seed))
    mem = MemoryImage(banks)
    for a, v in plan.memory.items():
        mem.write(a, v)
    fab = Fabric(*grid, mem=mem)
    ctrl = Controller(fab, engine=engine)
    host = Host(ctrl, host_overhead)
    ii, ii_const, pes = {}, {}, 0
    host.trace = trace
    for k, ph in enumerate(plan.phases):
        m = specialize(load_manifest(manifest_path(ph.manifest)), ph.params)
        m.grid = tuple(grid)
        rt = route(m.dfg, m.placement, m.grid)
        log = host.run_manifest(m, rt)
        pes = max(pes, len(build_configs(m, rt)))
        if k == 0:
            for sid, (side, col) in sorted(m.placement.streams.items()):
                if side == "N" and col < len(log.input_fire_cycles):
                    ii[sid], ii_const[sid] = steady_ii(log.input_fire_cycles[col])
    c = ctrl.counters
    mismatch = None
    for name, (addrs, vals) in plan.checks.items():
        for a, v in zip(addrs, vals):
            got = mem.read(a)
            if got != v:
                mismatch = f"{name} @0x{a:05x}: got {got}, expected {v}"
                if strict:
                    raise OracleMismatch(kernel, a, got, v)
                break
        if mismatch:
            break
    denom = c.total_cycles if plan.multishot else c.exec_cycles
    res = KernelResult(
        kernel=kernel, label=label_of(kernel, dims), dims=dims, seed=seed, pes=pes, launches=c.launches,
        config_cycles=c.config_cycles, exec_cycles=c.exec_cycles, overhead_cycles=c.overhead_cycles,
        total_cycles=c.total_cycles, ops=plan.ops, outputs=plan.outputs,
        outputs_per_cycle=plan.outputs / denom if denom else 0.0,
        mops=plan.ops / denom * FREQ_MHZ if denom else 0.0,
        ii=ii, ii_constant=ii_const, oracle="fail" if mismatch else "pass", multishot=plan.multishot,
        max_interleaved_grants=c.max_interleaved_grants, results=plan.results, mismatch=mismatch)
    return res, fab


def run_suite(suite=None, seed: int = DEFAULT_SEED, banks: int = 4, host_overhead: int = HOST_OVERHEAD,
              engine: str = "compiled", traces: Optional[dict] = None, strict: bool = False) -> List[KernelResult]:
    """Run (kernel, dims) rows in order. `traces`, if a dict, maps label -> CSV lines."""
    out = []
    for kernel, dims in (SUITE if suite is None else suite):
        tr = [] if traces is not None else None
        res, _ = run_kernel(kernel, dims, seed, banks, host_overhead, engine, tr, strict)
        if traces is not None:
            traces[res.label] = tr
        out.append(res)
    return out


def fit_host_overhead(engine: str = "compiled") -> float:
    """Least-squares fit (relative error) of the per-launch host overhead to the
    calibration totals, with everything else fixed."""
    num = den = 0.0
    for kernel, (dims, target) in CALIBRATION.items():
        res, _ = run_kernel(kernel, dims, host_overhead=0, engine=engine)
        gaps = res.launches - 1
        base = res.total_cycles
        num += gaps / target * (1 - base / target)
        den += (gaps / target) ** 2
    return num / den


# -- reports ------------------------------------------------------------------

def report_dict(results: List[KernelResult], seed=DEFAULT_SEED, banks=4, host_overhead=HOST_OVERHEAD) -> dict:
    return {"tool": f"strela {__version__}", "seed": seed, "banks": banks, "host_overhead": host_overhead,
            "freq_mhz": FREQ_MHZ, "kernels": [r.as_dict() for r in results]}


def report_json(results, **kw) -> str:
    return json.dumps(report_dict(results, **kw), indent=1, sort_keys=True) + "\n"


COLUMNS = [("kernel", "label", "{}"), ("PEs", "pes", "{}"), ("launches", "launches", "{}"),
           ("config", "config_cycles", "{:,}"), ("exec", "exec_cycles", "{:,}"),
           ("total", "total_cycles", "{:,}"), ("ops", "ops", "{:,}"), ("outputs", "outputs", "{:,}"),
           ("out/cycle", "outputs_per_cycle", "{:.3g}"), ("MOPS", "mops", "{:.1f}"), ("II", "ii", "{}"),
           ("oracle", "oracle", "{}")]


def _ii_text(r: KernelResult) -> str:
    vals = sorted({v for v in r.ii.values() if v is not None})
    if not vals:
        return "-"
    text = "/".join(str(v) for v in vals)
    return text if all(r.ii_constant.values()) else text + "~"


def report_table(results: List[KernelResult]) -> str:
    rows = [[h for h, _, _ in COLUMNS]]
    for r in results:
        row = []
        for _, attr, fmt in COLUMNS:
            row.append(_ii_text(r) if attr == "ii" else fmt.format(getattr(r, attr)))
        rows.append(row)
    widths = [max(len(row[k]) for row in rows) for k in range(len(COLUMNS))]
    lines = []
    for i, row in enumerate(rows):
        cells = [c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.append("")
    lines.append("one-shot rows: out/cycle and MOPS over exec cycles; multi-shot rows: over total cycles.")
    lines.append(f"MOPS at {FREQ_MHZ} MHz, derived from cycle counts. II '~' = not constant in steady state.")
    return "\n".join(lines) + "\n"


def bank_sweep(kernel="fft", banks=(1, 2, 4, 8), seed=DEFAULT_SEED, engine="compiled") -> Dict[int, float]:
    return {b: run_kernel(kernel, None, seed, b, engine=engine)[0].outputs_per_cycle for b in banks}


def render_figures(results: List[KernelResult], outdir, sweep: Optional[Dict[int, float]] = None) -> List[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    # metadata pinned so repeated runs write identical files
    meta = {"Software": None}
    paths = []
    labels = [r.label for r in results]

    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(labels, [r.outputs_per_cycle for r in results], color="#4477aa")
    ax.set_yscale("log")
    ax.set_ylabel("outputs / cycle")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    p = outdir / "outputs_per_cycle.png"
    fig.savefig(p, metadata=meta)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(8, 3.5))
    bottom = [0] * len(results)
    for attr, color in (("config_cycles", "#ccbb44"), ("exec_cycles", "#4477aa"), ("overhead_cycles", "#ee6677")):
        vals = [getattr(r, attr) for r in results]
        ax.bar(labels, vals, bottom=bottom, color=color, label=attr.replace("_cycles", ""))
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_yscale("log")
    ax.set_ylabel("cycles")
    ax.legend(fontsize=8)
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    p = outdir / "cycles.png"
    fig.savefig(p, metadata=meta)
    plt.close(fig)
    paths.append(p)

    if sweep:
        fig, ax = plt.subplots(figsize=(4, 3))
        ks = sorted(sweep)
        ax.plot(ks, [sweep[k] for k in ks], marker="o")
        ax.set_xscale("log", base=2)
        ax.set_xticks(ks, [str(k) for k in ks])
        ax.set_xlabel("interleaved banks")
        ax.set_ylabel("fft outputs / cycle")
        fig.tight_layout()
        p = outdir / "fft_banks.png"
        fig.savefig(p, metadata=meta)
        plt.close(fig)
        paths.append(p)
    return paths


def write_report(results: List[KernelResult], outdir, seed=DEFAULT_SEED, banks=4,
                 host_overhead=HOST_OVERHEAD, traces: Optional[dict] = None, figures=True,
                 sweep: Optional[Dict[int, float]] = None) -> List[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [outdir / "report.json", outdir / "report.txt"]
    paths[0].write_text(report_json(results, seed=seed, banks=banks, host_overhead=host_overhead))
    paths[1].write_text(report_table(results))
    for label, lines in (traces or {}).items():
        p = outdir / f"trace_{label.replace(' ', '_')}.csv"
        p.write_text("\n".join([TRACE_HEADER] + lines) + "\n")
        paths.append(p)
    if figures:
        paths += render_figures(results, outdir, sweep)
    return paths
