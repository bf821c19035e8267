"""rfcascade command line: kernel, respond, verify, plan, bench.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
Settings come from a key=value config (--config) and from flags of the same
name; flags win.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from . import engine, io, planner, verify
from .hermite import gauss1d_deriv, hermite_he
from .params import CovMat2, SpatialParams, STParams, cov_from_axes

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

PARAM_KEYS = ("s", "sigma1", "sigma2", "phi", "s11", "s12", "s22", "tau", "v1", "v2")
CONFIG_KEYS = PARAM_KEYS + ("family", "c", "eps_var", "dx", "dy", "dt", "truncation", "normalize",
                            "order", "dphi", "torder", "op", "threads", "backend", "tol",
                            "strategy", "shape", "accuracy", "seed")
FAMILY_ALIASES = {"spatial": "spatial", "st": "st", "st_iso": "st", "st_affine": "st",
                  "timecausal": "timecausal"}


class UsageError(ValueError):
    pass


# --- settings ---------------------------------------------------------------------------

def _floats(text) -> list:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def settings(args) -> dict:
    """Config file values overridden by any flag that was given."""
    out = {}
    if getattr(args, "config", None):
        try:
            out.update(io.read_config(args.config, CONFIG_KEYS))
        except ValueError as e:
            raise UsageError(str(e)) from None
    for k in CONFIG_KEYS:
        v = getattr(args, k, None)
        if v is not None and v is not False:
            out[k] = v
    tol = out.get("tol")
    if tol is not None and not float(tol) > 0:
        raise UsageError("tolerances must be positive")
    return out


def family_of(cfg) -> str:
    fam = cfg.get("family", "spatial")
    if fam not in FAMILY_ALIASES:
        raise UsageError(f"unknown family {fam!r}")
    return FAMILY_ALIASES[fam]


def param_list(cfg) -> list:
    """Parameter sets described by the (possibly list-valued) settings; scalars broadcast."""
    fam = family_of(cfg)
    lists = {k: _floats(cfg[k]) for k in PARAM_KEYS if k in cfg}
    n = max([len(v) for v in lists.values()] + [1])
    for k, v in lists.items():
        if len(v) not in (1, n):
            raise UsageError(f"list {k} has {len(v)} entries, expected 1 or {n}")

    def get(k, i, default):
        if k not in lists:
            return default
        v = lists[k]
        return v[0] if len(v) == 1 else v[i]

    out = []
    for i in range(n):
        s = get("s", i, 1.0)
        if any(k in lists for k in ("s11", "s12", "s22")):
            sigma = CovMat2(get("s11", i, 1.0), get("s12", i, 0.0), get("s22", i, 1.0))
        else:
            s1 = get("sigma1", i, 1.0)
            sigma = cov_from_axes(s1, get("sigma2", i, s1), get("phi", i, 0.0))
        if fam == "spatial":
            out.append(SpatialParams(s, sigma))
        else:
            c = float(cfg.get("c", 2.0)) if fam == "timecausal" else None
            out.append(STParams(s, sigma, get("tau", i, 1.0), (get("v1", i, 0.0), get("v2", i, 0.0)), c))
    return out


def single_params(cfg):
    ps = param_list(cfg)
    if len(ps) != 1:
        raise UsageError("this command takes a single parameter set")
    return ps[0]


def spacing_of(cfg, ndim: int, default=None) -> tuple:
    """Spacing in array order: (dy, dx) or (dt, dy, dx)."""
    d = list(default) if default is not None else [1.0] * ndim
    keys = ("dy", "dx") if ndim == 2 else ("dt", "dy", "dx")
    for i, k in enumerate(keys):
        if k in cfg:
            d[i] = float(cfg[k])
    if min(d) <= 0:
        raise UsageError("spacings must be positive")
    return tuple(d)


def parse_op(text: str, v=(0.0, 0.0)) -> engine.DerivOp:
    """Op grammar: id | dir:m[:phi] | grad | hess | tbar:n | mixed:m:phi:n (velocity from the params)."""
    parts = text.strip().split(":")
    name, rest = parts[0], parts[1:]
    try:
        if name in ("id", "identity") and not rest:
            return engine.DerivOp()
        if name == "dir" and 1 <= len(rest) <= 2:
            return engine.DerivOp.directional(int(rest[0]), float(rest[1]) if len(rest) > 1 else 0.0)
        if name == "grad" and not rest:
            return engine.DerivOp.gradient()
        if name == "hess" and not rest:
            return engine.DerivOp.hessian()
        if name == "tbar" and len(rest) == 1:
            return engine.DerivOp.tbar(int(rest[0]), v)
        if name == "mixed" and len(rest) == 3:
            return engine.DerivOp.mixed(int(rest[0]), float(rest[1]), int(rest[2]), v)
    except ValueError:
        pass
    raise UsageError(f"bad derivative op {text!r}")


def parse_ops(text, v=(0.0, 0.0)) -> list:
    return [parse_op(t, v) for t in str(text).split(";") if t.strip()]


def _shape(text) -> tuple:
    try:
        shape = tuple(int(x) for x in str(text).lower().split("x"))
    except ValueError:
        raise UsageError(f"bad shape {text!r}") from None
    if len(shape) not in (2, 3) or min(shape) <= 0:
        raise UsageError(f"bad shape {text!r}")
    return shape


def _apply_runtime(cfg):
    if "threads" in cfg:
        engine.set_threads(int(cfg["threads"]))
    if "backend" in cfg:
        try:
            engine.use_backend(cfg["backend"])
        except ValueError as e:
            raise UsageError(str(e)) from None


def _bool(x) -> bool:
    return x is True or str(x).lower() in ("1", "true", "yes", "on")


# --- kernel -----------------------------------------------------------------------------

def derivative_kernel(p, family: str, spacing, truncation: float = 5.0, normalize: bool = False,
                      order: int = 0, dphi: float = 0.0, torder: int = 0,
                      eps_var: float = 1e-6) -> engine.SampledKernel:
    """Sampled kernel with an analytic directional derivative of order `order` along dphi and a
    velocity-adapted temporal derivative of order `torder` (stencil-differenced for the limit kernel)."""
    base = engine.sample(p, family, spacing, truncation, False, eps_var)
    scale = 1.0 / base.total() if normalize else 1.0
    k = base
    if torder:
        if family == "spatial":
            raise UsageError("temporal derivative of a spatial kernel")
        dt = spacing[0]
        if family == "st":
            h, o = engine.temporal_gauss(p.tau, dt, truncation)
            t = (np.arange(h.size) - o) * dt
            hd = gauss1d_deriv(torder, t, p.tau)
        else:
            h, o = engine.temporal_limit(p.tau, p.c, dt, eps_var)
            r = engine.stencil(torder, 6).size // 2
            h = np.pad(h, (r, r))
            o += r
            hd = engine.diff_axes(h, (torder,), dt, 6)
        k = engine.spatiotemporal_kernel(p.prod, p.v, hd, o, spacing, truncation)
    if order:
        C = p.prod
        if C.det <= 0:
            raise UsageError("spatial derivative needs a nondegenerate covariance")
        inv = np.linalg.inv(C.as_array())
        e = np.array([math.cos(dphi), math.sin(dphi)])
        q = float(e @ inv @ e)
        if k.axes == "x1x2":
            x2, x1 = np.meshgrid(k.coords(0), k.coords(1), indexing="ij")
        else:
            t, x2, x1 = np.meshgrid(k.coords(0), k.coords(1), k.coords(2), indexing="ij")
            x1, x2 = x1 - p.v[0] * t, x2 - p.v[1] * t
        ea = (e @ inv)[0] * x1 + (e @ inv)[1] * x2
        fac = (-1) ** order * q ** (order / 2) * hermite_he(order, ea / math.sqrt(q))
        k = engine.SampledKernel(k.values * fac, k.spacing, k.origin, k.axes)
    return engine.SampledKernel(k.values * scale, k.spacing, k.origin, k.axes, normalize and not order
                                and not torder)


def cmd_kernel(args) -> int:
    cfg = settings(args)
    fam = family_of(cfg)
    p = single_params(cfg)
    spacing = spacing_of(cfg, 2 if fam == "spatial" else 3)
    order = int(cfg.get("order", 0))
    torder = int(cfg.get("torder", 0))
    if order < 0 or torder < 0:
        raise UsageError("derivative orders must be nonnegative")
    dphi = float(cfg.get("dphi", cfg.get("phi", 0.0)))
    k = derivative_kernel(p, fam, spacing, float(cfg.get("truncation", 5.0)),
                          _bool(cfg.get("normalize", False)), order, dphi, torder,
                          float(cfg.get("eps_var", 1e-6)))
    header, rows = io.kernel_rows(k)
    io.write_csv(args.out + ".csv", header, rows)
    io.write_rfvol(args.out + ".rfvol", k.values, k.spacing)
    print(f"wrote {args.out}.csv and {args.out}.rfvol ({k.values.size} samples)")
    return EXIT_OK


# --- respond ----------------------------------------------------------------------------

def read_field(path):
    """(field, spacing) from a PGM image or an RFVOL1 volume (single-frame volumes become images)."""
    with open(path, "rb") as fh:
        magic = fh.read(6)
    if magic[:2] == b"P5":
        return io.read_pgm(path), (1.0, 1.0)
    vol, spacing = io.read_rfvol(path)
    if vol.shape[0] == 1:
        return vol[0], spacing[1:]
    return vol, spacing


def _outputs(out: str, n: int) -> list:
    if n == 1:
        return [out]
    stem, ext = os.path.splitext(out)
    return [f"{stem}_{i}{ext or '.rfvol'}" for i in range(n)]


def _components(ops, field, spacing, accuracy) -> list:
    res = []
    for op in ops:
        r = engine.apply_deriv(field, op, spacing, accuracy)
        res += list(r) if len(op.components()) > 1 else [r]
    return res


def _write_fields(out, fields, spacing) -> list:
    paths = _outputs(out, len(fields))
    for path, f in zip(paths, fields):
        io.write_rfvol(path, f, spacing)
    return paths


def cmd_respond(args) -> int:
    cfg = settings(args)
    _apply_runtime(cfg)
    f, file_spacing = read_field(args.input)
    spacing = spacing_of(cfg, f.ndim, file_spacing)
    accuracy = int(cfg.get("accuracy", 6))
    tol = float(cfg.get("tol", 1e-3))
    if args.plan:
        with open(args.plan, encoding="ascii") as fh:
            pl = planner.plan_from_csv(fh.read())
        if not np.allclose(pl.spacing, spacing[-len(pl.spacing):]):
            raise UsageError(f"plan spacing {pl.spacing} does not match input spacing {spacing}")
        fields = planner.execute(pl, f)
        status = EXIT_OK
        for w in sorted(fields):
            v = getattr(pl.nodes[w], "v", (0.0, 0.0)) if pl.nodes[w] is not None else (0.0, 0.0)
            ops = parse_ops(cfg.get("op", "id"), v)
            stem, ext = os.path.splitext(args.out)
            paths = _write_fields(f"{stem}_node{w}{ext}", _components(ops, fields[w], spacing, accuracy),
                                  spacing)
            print(f"node {w}: wrote {', '.join(paths)}")
            if args.direct:
                target = planner.compose_path(pl, w)
                d = engine.convolve(f, engine.sample(target, pl.family, spacing, pl.truncation))
                region = engine.interior_slices(f.shape, planner.path_kernels(pl, w))
                cmp = engine.compare(fields[w], d, region)
                ok = cmp["rel_l2"] <= tol
                print(f"node {w}: plan vs direct rel_l2={cmp['rel_l2']:.3e} "
                      f"rel_linf={cmp['rel_linf']:.3e} {'PASS' if ok else 'FAIL'}")
                if not ok:
                    status = EXIT_FAIL
        return status
    fam = family_of(cfg)
    p = single_params(cfg)
    ops = parse_ops(cfg.get("op", "id"), getattr(p, "v", (0.0, 0.0)))
    k = engine.sample(p, fam, spacing, float(cfg.get("truncation", 5.0)), _bool(cfg.get("normalize", False)),
                      float(cfg.get("eps_var", 1e-6)))
    L = engine.convolve(f, k)
    paths = _write_fields(args.out, _components(ops, L, spacing, accuracy), spacing)
    print(f"wrote {', '.join(paths)}")
    return EXIT_OK


# --- verify -----------------------------------------------------------------------------

def cmd_verify(args) -> int:
    suites = []
    for s in args.suite or ["all"]:
        suites += [x for x in s.split(",") if x]
    if "all" in suites:
        suites = list(verify.SUITES)
    for s in suites:
        if s not in verify.SUITES:
            raise UsageError(f"unknown suite {s!r}; choose from {', '.join(verify.SUITES)}")
    fams = None
    if args.family:
        fams = [x for f in args.family for x in f.split(",") if x]
        for fam in fams:
            if fam not in verify.hermite.FAMILIES:
                raise UsageError(f"unknown family {fam!r}")
    if args.mutate and args.mutate not in verify.MUTATIONS:
        raise UsageError(f"unknown mutation {args.mutate!r}")
    with verify.mutation(args.mutate):
        rows = verify.run(suites, fams, quick=not args.full, seed=args.seed)
    if fams:
        rows = [r for r in rows if r.family in fams or r.suite == "limit" and "timecausal" in fams]
    header = ("suite", "family", "check", "value", "tol", "pass")
    text = io.write_csv(args.report, header,
                        [(r.suite, r.family, r.check, r.value, r.tol, int(r.passed)) for r in rows])
    if args.report in (None, "-"):
        sys.stdout.write(text)
    failed = [r for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed", file=sys.stderr)
    return EXIT_FAIL if failed or not rows else EXIT_OK


# --- plan / bench ----------------------------------------------------------------------

def bank_from(cfg) -> tuple:
    fam = family_of(cfg)
    ps = param_list(cfg)
    targets = [(p, parse_ops(cfg.get("op", "id"), getattr(p, "v", (0.0, 0.0)))) for p in ps]
    bank = planner.BankSpec(fam, targets)
    shape = _shape(cfg.get("shape", "128x128" if fam == "spatial" else "64x64x64"))
    if (fam == "spatial") != (len(shape) == 2):
        raise UsageError("shape must be HxW for spatial banks and TxHxW otherwise")
    spacing = spacing_of(cfg, len(shape))
    return bank, shape, spacing


def make_plan(cfg):
    bank, shape, spacing = bank_from(cfg)
    strategy = cfg.get("strategy", "shortest_path")
    if strategy not in ("shortest_path", "direct_only"):
        raise UsageError(f"unknown strategy {strategy!r}")
    pl = planner.plan(bank, spacing, shape, strategy, float(cfg.get("truncation", 5.0)))
    if len(bank.targets) > 1 and all(e.kind == "direct" for e in pl.edges) and strategy != "direct_only":
        print("warning: no feasible cascade step in this bank; plan is direct", file=sys.stderr)
    return bank, pl


def cmd_plan(args) -> int:
    cfg = settings(args)
    _, pl = make_plan(cfg)
    text = planner.plan_to_csv(pl)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="ascii", newline="") as fh:
            fh.write(text)
    print(f"total_cost={pl.total_cost} direct_cost={pl.direct_cost} savings={pl.savings:.4f}",
          file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = settings(args)
    _apply_runtime(cfg)
    bank, pl = make_plan(cfg)
    if args.input:
        f, _ = read_field(args.input)
        if f.shape != pl.shape:
            raise UsageError(f"input shape {f.shape} differs from the bank shape {pl.shape}")
    else:
        f = verify.smooth_field(pl.shape, 1.0, int(cfg.get("seed", 0)))
    direct = planner.plan(bank, pl.spacing, pl.shape, "direct_only", pl.truncation)
    rows = []
    for name, p in (("direct", direct), ("cascade", pl)):
        counter = engine.MacCounter()
        t0 = time.perf_counter()
        planner.execute(p, f, counter)
        wall = time.perf_counter() - t0
        rows.append((name, wall, counter.macs, p.total_cost,
                     abs(counter.macs - p.total_cost) / max(p.total_cost, 1)))
    header = ("mode", "wall_s", "macs", "est_macs", "mac_rel_diff")
    text = io.write_csv(args.report, header, rows)
    if args.report in (None, "-"):
        sys.stdout.write(text)
    print(f"mac ratio cascade/direct={rows[1][2] / max(rows[0][2], 1):.4f} "
          f"speedup={rows[0][1] / max(rows[1][1], 1e-12):.3f}x", file=sys.stderr)
    return EXIT_OK


# --- entry point ------------------------------------------------------------------------

def _add_settings(p, params=True):
    p.add_argument("--config", help="key=value file; flags override its entries")
    p.add_argument("--family", help="spatial | st | timecausal")
    if params:
        for k in PARAM_KEYS:
            p.add_argument(f"--{k}", help="number or comma-separated list")
        p.add_argument("--c", help="distribution parameter of the time-causal ladder")
        p.add_argument("--eps-var", dest="eps_var", help="limit kernel variance tolerance")
    for k in ("dx", "dy", "dt", "truncation", "tol", "accuracy"):
        p.add_argument(f"--{k}")
    p.add_argument("--normalize", action="store_true", default=None, help="renormalize sampled kernels")
    p.add_argument("--op", help="derivative ops separated by ';' (id, dir:m[:phi], grad, hess, "
                                "tbar:n, mixed:m:phi:n)")
    p.add_argument("--threads", help="worker threads for convolution")
    p.add_argument("--backend", help="cython or numpy")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rfcascade", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    k = sub.add_parser("kernel", help="write a sampled kernel as CSV and RFVOL1")
    _add_settings(k)
    k.add_argument("--order", help="directional derivative order")
    k.add_argument("--dphi", help="derivative direction (default: phi)")
    k.add_argument("--torder", help="velocity-adapted temporal derivative order")
    k.add_argument("--out", default="kernel", help="output prefix")
    k.set_defaults(func=cmd_kernel)

    r = sub.add_parser("respond", help="receptive field responses of an image or volume")
    _add_settings(r)
    r.add_argument("--input", required=True, help="PGM (P5) image or RFVOL1 volume")
    r.add_argument("--out", default="response.rfvol")
    r.add_argument("--plan", help="execute this plan CSV instead of one direct kernel")
    r.add_argument("--direct", action="store_true", help="with --plan: compare every node to direct smoothing")
    r.set_defaults(func=cmd_respond)

    v = sub.add_parser("verify", help="run the identity and equivalence suites")
    v.add_argument("--suite", action="append", help=f"one of {', '.join(verify.SUITES)} or all")
    v.add_argument("--family", action="append", help="restrict to a ratio family")
    v.add_argument("--mutate", help=f"inject a deliberate error ({', '.join(verify.MUTATIONS)})")
    v.add_argument("--report", help="CSV report path (default stdout)")
    v.add_argument("--full", action="store_true", help="acceptance-size draws and grids")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plan", help="plan a filter bank as a cascade")
    _add_settings(pl)
    pl.add_argument("--shape", help="HxW or TxHxW field size")
    pl.add_argument("--strategy", help="shortest_path or direct_only")
    pl.add_argument("--out", help="plan CSV path (default stdout)")
    pl.set_defaults(func=cmd_plan)

    b = sub.add_parser("bench", help="time direct vs cascaded bank execution")
    _add_settings(b)
    b.add_argument("--shape")
    b.add_argument("--strategy")
    b.add_argument("--seed")
    b.add_argument("--input", help="field to use instead of random smooth noise")
    b.add_argument("--report", help="CSV report path (default stdout)")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except io.ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError, TypeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
