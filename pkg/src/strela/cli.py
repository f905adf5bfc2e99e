"""Command line: validate, asm, sim, bench."""
import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import (Deadlock, OracleMismatch, StrelaError, Timeout)

OUT_ENV = "STRELA_OUT"
EXIT_OK, EXIT_USER, EXIT_SIM = 0, 1, 2


def default_outdir() -> Path:
    return Path(os.environ.get(OUT_ENV, "strela-out"))


def _dims(pairs):
    out = {}
    for p in pairs or []:
        k, _, v = p.partition("=")
        if not v:
            raise argparse.ArgumentTypeError(f"--dim expects NAME=VALUE, got {p!r}")
        out[k] = int(v, 0)
    return out


def _grid(text):
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--grid expects RxC, got {text!r}") from None


def _load(path_or_name, dims=None, grid=None):
    from .bench import manifest_path
    from .mapper import load_manifest, specialize
    p = Path(path_or_name)
    if not p.exists() and not p.suffix:
        shipped = manifest_path(path_or_name)
        if shipped.exists():
            p = shipped
    if not p.exists():
        raise FileNotFoundError(f"no such manifest: {path_or_name}")
    m = specialize(load_manifest(p), dims)
    if grid is not None:
        m.grid = tuple(grid)
    return m


def cmd_validate(args) -> int:
    from .mapper import route, validate
    m = _load(args.manifest, _dims(args.dim))
    diags = validate(m.dfg, m.placement, m.grid)
    for d in diags:
        print(f"{args.manifest}: {d}")
    if diags:
        return EXIT_USER
    rt = route(m.dfg, m.placement, m.grid)
    hops = sum(len(p) for p in rt.paths.values())
    print(f"{m.name}: legal, {len(m.dfg.edges)} edges routed over {hops} hops")
    return EXIT_OK


def cmd_asm(args) -> int:
    from .mapper import emit_image, expand_shots
    m = _load(args.manifest, _dims(args.dim))
    consts = expand_shots(m)[0].consts
    words = emit_image(m, consts)
    if args.hex:
        text = "".join(f"{w:08x}\n" for w in words)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    else:
        out = Path(args.out or f"{m.name}.bin")
        out.write_bytes(b"".join(w.to_bytes(4, "little") for w in words))
        print(f"{m.name}: {len(words)} words ({len(words) // 5} PEs) -> {out}")
    return EXIT_OK


def cmd_sim(args) -> int:
    from .controller import Controller, Host
    from .fabric import Fabric, TRACE_HEADER
    from .mapper import route
    from .memory import MemoryImage, load_image, save_image
    m = _load(args.manifest, _dims(args.dim), args.grid)
    mem = load_image(args.mem_in, args.banks) if args.mem_in else MemoryImage(args.banks)
    fab = Fabric(*m.grid, mem=mem)
    ctrl = Controller(fab, max_cycles=args.max_cycles, engine=args.engine)
    host = Host(ctrl, args.host_overhead)
    trace = [] if args.trace else None
    host.trace = trace
    try:
        rt = route(m.dfg, m.placement, m.grid)
        host.run_manifest(m, rt)
    except (Deadlock, Timeout) as exc:
        dump_path = Path(args.dump or default_outdir() / f"{m.name}_dump.json")
        dump_path.parent.mkdir(parents=True, exist_ok=True)
        dump_path.write_text(json.dumps(exc.dump, indent=1, sort_keys=True) + "\n")
        print(f"{type(exc).__name__}: {exc} (state dump: {dump_path})", file=sys.stderr)
        return EXIT_SIM
    finally:
        if trace is not None:
            Path(args.trace).write_text("\n".join([TRACE_HEADER] + trace) + "\n")
    c = ctrl.snapshot_counters()
    if args.mem_out:
        save_image(mem, args.mem_out)
    opc = c.outputs_total / c.exec_cycles if c.exec_cycles else 0.0
    print(f"{m.name}: launches {c.launches}  config {c.config_cycles}  exec {c.exec_cycles}  "
          f"overhead {c.overhead_cycles}  total {c.total_cycles}")
    print(f"outputs {c.outputs_total}  outputs/cycle {opc:.3f}  max interleaved grants {c.max_interleaved_grants}")
    if args.counters:
        Path(args.counters).write_text(json.dumps(c.as_dict(), indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    from . import bench
    names = args.kernels or []
    for k in names:
        if k not in bench.KERNELS:
            print(f"unknown kernel {k!r}; choose from {', '.join(bench.KERNELS)}", file=sys.stderr)
            return EXIT_USER
    dims = _dims(args.dim)
    suite = [(k, dims) for k in names] if names else None
    if suite is None and dims:
        print("--dim needs an explicit kernel", file=sys.stderr)
        return EXIT_USER
    traces = {} if args.trace else None
    try:
        results = bench.run_suite(suite, args.seed, args.banks, args.host_overhead, args.engine, traces, strict=True)
    except OracleMismatch as exc:
        print(f"OracleMismatch: {exc}", file=sys.stderr)
        return EXIT_SIM
    except (Deadlock, Timeout) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIM
    sweep = None
    if args.sweep and any(r.kernel == "fft" for r in results):
        sweep = bench.bank_sweep(seed=args.seed, engine=args.engine)
    outdir = Path(args.out) if args.out else default_outdir()
    paths = bench.write_report(results, outdir, args.seed, args.banks, args.host_overhead, traces,
                               figures=not args.no_figures, sweep=sweep)
    sys.stdout.write(bench.report_table(results))
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return EXIT_OK if all(r.oracle == "pass" for r in results) else EXIT_SIM


def build_parser() -> argparse.ArgumentParser:
    from .controller import HOST_OVERHEAD
    from .bench import DEFAULT_SEED
    p = argparse.ArgumentParser(prog="strela", description="Elastic CGRA simulator and toolchain")
    p.add_argument("--version", action="version", version=f"strela {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("validate", help="check placement legality and routability")
    v.add_argument("manifest", help="manifest path or shipped kernel name")
    v.add_argument("--dim", action="append", metavar="NAME=VALUE")
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("asm", help="emit the configuration image")
    a.add_argument("manifest")
    a.add_argument("-o", "--out")
    a.add_argument("--hex", action="store_true", help="one word per line, hex")
    a.add_argument("--dim", action="append", metavar="NAME=VALUE")
    a.set_defaults(func=cmd_asm)

    s = sub.add_parser("sim", help="run all shots of a manifest on a memory image")
    s.add_argument("manifest")
    s.add_argument("--mem-in", help="input memory image (raw little-endian words)")
    s.add_argument("--mem-out", help="write the final memory image here")
    s.add_argument("--trace", help="write the first launch's event trace (CSV)")
    s.add_argument("--counters", help="write performance counters (JSON)")
    s.add_argument("--dump", help="state dump path on deadlock/timeout")
    s.add_argument("--max-cycles", type=int, default=1_000_000)
    s.add_argument("--grid", type=_grid, default=None, metavar="RxC")
    s.add_argument("--banks", type=int, default=4, choices=(1, 2, 4, 8))
    s.add_argument("--host-overhead", type=int, default=HOST_OVERHEAD)
    s.add_argument("--engine", choices=("compiled", "reference"), default="compiled")
    s.add_argument("--dim", action="append", metavar="NAME=VALUE")
    s.set_defaults(func=cmd_sim)

    b = sub.add_parser("bench", help="run benchmark kernels against their oracles")
    b.add_argument("kernels", nargs="*", help="kernel ids (default: full suite)")
    b.add_argument("-o", "--out", help=f"output directory (default ${OUT_ENV} or ./strela-out)")
    b.add_argument("--seed", type=int, default=DEFAULT_SEED)
    b.add_argument("--banks", type=int, default=4, choices=(1, 2, 4, 8))
    b.add_argument("--host-overhead", type=int, default=HOST_OVERHEAD)
    b.add_argument("--engine", choices=("compiled", "reference"), default="compiled")
    b.add_argument("--dim", action="append", metavar="NAME=VALUE")
    b.add_argument("--trace", action="store_true", help="write first-launch traces per kernel")
    b.add_argument("--sweep", action="store_true", help="add an fft bank sweep figure")
    b.add_argument("--no-figures", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USER
    try:
        return args.func(args)
    except (Deadlock, Timeout) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIM
    except (StrelaError, FileNotFoundError, argparse.ArgumentTypeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
