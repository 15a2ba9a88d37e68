"""Command-line entry point: gen-data, synthesize, verify, evaluate, contracts.

Exit codes: 0 ok/pass, 2 usage or configuration error, 3 partial synthesis,
4 counterexample, 5 inconclusive.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, load_scenario, read_scenario_bytes
from .contracts import ContractError, load_pipeline, report_ok, run_checks
from .partition import build_partition
from .perception import DatasetError, export_csv, import_csv, sample_dataset
from .precision import evaluate, render_heatmap
from .synthesis import ArtifactError, compute_abstraction, load_abstraction, save_abstraction
from .verifier import Random, Verdict, WorstGrid, bounded_reach, check_induction

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_CEX, EXIT_INCONCLUSIVE = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


class Timer:
    def __init__(self):
        self.phases = {}

    def run(self, name, fn, *a, **kw):
        t = time.perf_counter()
        out = fn(*a, **kw)
        self.phases[name] = round(time.perf_counter() - t, 4)
        return out


def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_path, command, config_path, config_sha, seeds, timer, inputs=None):
    manifest = {"tool": "percabs", "version": __version__, "command": command,
                "config": {"path": str(config_path), "sha256": config_sha},
                "seeds": seeds, "inputs": inputs or {}, "timings_s": timer.phases}
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def _envs(arg, cfg):
    if arg is None:
        return [e.id for e in cfg.environments]
    try:
        ids = [int(v) for v in arg.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--envs expects comma-separated integers, got {arg!r}") from None
    known = {e.id for e in cfg.environments}
    unknown = sorted(set(ids) - known)
    if unknown or not ids:
        raise UsageError(f"unknown environment ids {unknown}; scenario has {sorted(known)}")
    return ids


def _partition(arg):
    try:
        a, b = arg.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise UsageError(f"--partition expects NYxNTHETA, got {arg!r}") from None


def _scenario(args):
    cfg = load_scenario(args.scenario)
    if getattr(args, "error_fn", None):
        cfg = cfg.with_error_fn(args.error_fn)
    if getattr(args, "partition", None):
        cfg = cfg.with_partition(*_partition(args.partition))
    return cfg


# commands ------------------------------------------------------------------

def cmd_gen_data(args):
    if args.per_cell < 1:
        raise UsageError("--per-cell must be >= 1")
    timer = Timer()
    cfg = _scenario(args)
    envs = _envs(args.envs, cfg)
    cells = build_partition(cfg.partition)
    data = timer.run("sample", sample_dataset, cells, envs, cfg.perception, args.per_cell, args.seed)
    timer.run("write", export_csv, data, args.out)
    print(f"{len(data)} rows, {len(cells)} cells x {len(envs)} environments x {args.per_cell}")
    print("iy,itheta,count")
    for c in cells:
        print(f"{c.iy},{c.itheta},{args.per_cell * len(envs)}")
    raw, where = read_scenario_bytes(args.scenario)
    write_manifest(args.out, "gen-data", where, config_hash(raw), {"data": args.seed}, timer)
    return EXIT_OK


def cmd_synthesize(args):
    timer = Timer()
    cfg = _scenario(args)
    data = timer.run("load_data", import_csv, args.data)
    if args.envs is not None:
        data = data.with_envs(_envs(args.envs, cfg))
    cfg.validate_percepts(data)
    parent = load_abstraction(args.parent) if args.parent else None
    abst = timer.run("synthesize", compute_abstraction, cfg, data, parent, args.threads)
    save_abstraction(abst, args.out)
    raw, where = read_scenario_bytes(args.scenario)
    write_manifest(args.out, "synthesize", where, config_hash(raw), {}, timer,
                   {"data": {"path": args.data, "sha256": _sha256_file(args.data)}})
    radii = np.array([c.radius for c in abst.cells if math.isfinite(c.radius)])
    counts = abst.counts()
    print("cells  certified  fallback  infeasible  min_r     median_r")
    print(f"{len(abst.cells):<6} {counts['certified']:<10} {counts['fallback']:<9} "
          f"{counts['infeasible']:<11} "
          + (f"{radii.min():<9.4f} {np.median(radii):.4f}" if radii.size else "-         -"))
    if abst.outside_samples:
        print(f"{abst.outside_samples} samples outside the partition domain were ignored")
    for e in abst.errors:
        print(f"cell ({e.index[0]}, {e.index[1]}): {e.kind}: {e.message}", file=sys.stderr)
    return EXIT_PARTIAL if abst.errors else EXIT_OK


def _adversary(spec):
    kind, _, rest = spec.partition(":")
    try:
        if kind == "worst":
            return WorstGrid(int(rest or 8))
        if kind == "random":
            seed, _, n = rest.partition(":")
            return Random(int(seed or 0), int(n or 4))
    except ValueError:
        pass
    raise UsageError(f"--adversary expects worst[:K] or random[:SEED[:N]], got {spec!r}")


def cmd_verify(args):
    timer = Timer()
    abst = load_abstraction(args.abstraction)
    do_induction = args.induction or not args.reach
    reports = {}
    if do_induction:
        reports["induction"] = timer.run("induction", check_induction, abst, args.threads)
    if args.reach:
        adv = _adversary(args.adversary)
        reports["reach"] = timer.run("reach", bounded_reach, abst, args.horizon, adv, args.grid,
                                     args.on_exit)
    verdicts = [r.verdict for r in reports.values()]
    for name, rep in reports.items():
        line = f"{name}: {rep.verdict.value}"
        if name == "induction":
            line += f" ({rep.cells_checked} cells checked)"
        else:
            line += (f" ({rep.effort['executions']} executions, {rep.effort['unsafe_entries']} "
                     f"unsafe, {rep.effort['domain_exits']} domain exits)")
        print(line)
        if rep.witness:
            print("  witness: " + json.dumps(rep.witness if rep.witness["kind"] == "induction"
                                             else {k: rep.witness[k] for k in
                                                   ("kind", "steps", "final_state")}))
    report_path = args.report or str(args.abstraction) + ".report.json"
    Path(report_path).write_text(json.dumps({k: r.to_json() for k, r in reports.items()},
                                            indent=1) + "\n", encoding="utf-8")
    write_manifest(report_path, "verify", args.abstraction, _sha256_file(args.abstraction),
                   {"adversary": args.adversary if args.reach else None}, timer)
    if Verdict.COUNTEREXAMPLE in verdicts:
        return EXIT_CEX
    if Verdict.INCONCLUSIVE in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def cmd_evaluate(args):
    timer = Timer()
    abst = load_abstraction(args.abstraction)
    test = timer.run("load_data", import_csv, args.test)
    if args.envs is not None:
        test = test.with_envs(_envs(args.envs, abst.scenario))
    pmap = timer.run("evaluate", evaluate, abst, test)
    spec = abst.scenario.partition
    timer.run("render", render_heatmap, pmap, args.heatmap, args.csv,
              (spec.y_range, spec.theta_range))
    print(f"mean cell score {pmap.mean_score():.4f}, pooled {pmap.pooled_score():.4f}, "
          f"{int(pmap.totals.sum())} samples in domain, {pmap.outside} outside")
    write_manifest(args.heatmap, "evaluate", args.abstraction, _sha256_file(args.abstraction), {},
                   timer, {"test": {"path": args.test, "sha256": _sha256_file(args.test)}})
    return EXIT_OK


CHECKS = ("init", "seq", "seq-strict", "sat", "presume")


def cmd_contracts(args):
    checks = [c.strip() for c in args.check.split(",") if c.strip()]
    bad = [c for c in checks if c not in CHECKS]
    if bad:
        raise UsageError(f"unknown checks {bad}; choose from {','.join(CHECKS)}")
    pipeline, presume = load_pipeline(args.pipeline)
    report = run_checks(pipeline, presume, checks, args.falsify_cert, args.seed)
    for name, val in report.items():
        if name == "apply":
            print("apply: assumed (not checked)")
            continue
        vals = val if isinstance(val, list) else [val]
        for v in vals:
            tag = "ok" if v["ok"] else ("candidate violation" if v["candidate"] else "violated")
            extra = f" at {v['where']}" if v["where"] else ""
            wit = f" witness {v['witness']}" if v["witness"] is not None else ""
            print(f"{name}: {tag}{extra}{wit}")
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK if report_ok(report) else EXIT_CEX


# parser --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="percabs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"percabs {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample synthetic (truth, perceived) pairs to CSV")
    g.add_argument("--scenario", required=True, help="TOML path or preset name (gem, agbot)")
    g.add_argument("--out", required=True)
    g.add_argument("--per-cell", type=int, default=300)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--envs", help="comma-separated environment ids (default: all)")
    g.add_argument("--partition", help="override partition, e.g. 8x10")
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("synthesize", help="fit centers and certify radii for every cell")
    s.add_argument("--scenario", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--error-fn", choices=["V1", "V2", "V3"])
    s.add_argument("--partition", help="override partition, e.g. 8x10")
    s.add_argument("--parent", help="coarser artifact whose radii carry over to the refinement")
    s.add_argument("--envs", help="train on these environment ids only")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_synthesize)

    v = sub.add_parser("verify", help="check an abstraction artifact")
    v.add_argument("--abstraction", required=True)
    v.add_argument("--induction", action="store_true", help="per-cell inductive check (default)")
    v.add_argument("--reach", action="store_true", help="bounded closed-loop rollouts")
    v.add_argument("--horizon", type=int, default=100)
    v.add_argument("--adversary", default="worst:8", help="worst[:K] or random[:SEED[:N]]")
    v.add_argument("--grid", type=int, default=11, help="initial-set grid points per axis")
    v.add_argument("--on-exit", choices=["fail", "extend"], default="fail")
    v.add_argument("--report", help="report JSON path (default: <abstraction>.report.json)")
    v.add_argument("--threads", type=int, default=1)
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("evaluate", help="precision heatmap of an abstraction on test data")
    e.add_argument("--abstraction", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--heatmap", required=True)
    e.add_argument("--csv", required=True)
    e.add_argument("--envs", help="evaluate on these environment ids only")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("contracts", help="assume-guarantee pipeline checks")
    c.add_argument("--pipeline", required=True, help="TOML path or 'example'")
    c.add_argument("--check", default="init,seq,sat")
    c.add_argument("--falsify-cert", type=int, default=0, metavar="N",
                   help="also sample N inputs per pair to falsify component promises")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--report")
    c.set_defaults(func=cmd_contracts)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, ArtifactError, DatasetError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
