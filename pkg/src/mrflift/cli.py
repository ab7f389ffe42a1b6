"""Command-line driver: ``mrflift run | gen | convert-pci | export | landscape``.

``run`` writes one CSV row per (instance, trial, checkpoint) with the columns
in :data:`CSV_COLUMNS`, and the best assignment of every (instance, trial)
to ``<output>.assignments/<instance>__<solver>__trial<k>.txt``, one state
index per line.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from mrflift.errors import MrfError
from mrflift.instance_gen import GenSpec, write_instance
from mrflift.landscape import loss_landscape
from mrflift.message_passing import lbp_minsum, trbp_minsum
from mrflift.mrf_core import brute_force_map
from mrflift.neurolift import LiftConfig, fit, train, trial_seeds
from mrflift.pci import pci_to_mrf, read_pci
from mrflift.report import SolveReport, TracePoint
from mrflift.uai_io import from_energies, read_uai, to_energies, write_uai

log = logging.getLogger("mrflift")

SEED_ENV = "MRFLIFT_SEED"
CSV_COLUMNS = [
    "instance", "solver", "trial", "seed", "t_seconds",
    "best_energy", "loss_if_any", "iterations", "terminated_reason",
]
SOLVERS = ("neurolift", "lbp", "trbp", "brute")


def load_instance(path, clamp=None):
    """Energy-form instance from a ``.uai`` file or a PCI ``.json`` file."""
    if path.endswith(".json"):
        return pci_to_mrf(read_pci(path))
    return to_energies(read_uai(path), clamp=clamp)


def instance_paths(paths):
    out = []
    for p in paths:
        if os.path.isdir(p):
            out.extend(
                os.path.join(p, f) for f in sorted(os.listdir(p)) if f.endswith((".uai", ".json"))
            )
        else:
            out.append(p)
    return out


def instance_name(path):
    return os.path.splitext(os.path.basename(path))[0]


def lift_config(args, seed):
    return LiftConfig(
        d_l=args.d_l, layers=args.layers, d_h=args.d_h, lr=args.lr,
        max_iters=args.iters if args.iters is not None else LiftConfig.max_iters,
        tol=args.tol, patience=args.patience, T0=args.t0, gamma=args.gamma,
        seed=seed, backbone=args.backbone,
    )


def solve(inst, args, seed, trial):
    if args.solver == "neurolift":
        return train(inst, lift_config(args, seed), args.time_limit, trial)
    if args.solver in ("lbp", "trbp"):
        iters = args.iters if args.iters is not None else 60
        fn = lbp_minsum if args.solver == "lbp" else trbp_minsum
        rep = fn(inst, max_iters=iters, damping=args.damping, seed=seed, time_limit=args.time_limit)
        rep.trial = trial
        return rep
    x, e = brute_force_map(inst)
    return SolveReport("brute", x, e, "exact", seed, trial, trace=[TracePoint(0, 0.0, e, e)])


def report_rows(name, rep, interval=None, every=None):
    """CSV rows for one solve: checkpoints first, then the final result."""

    def row(point, t, reason):
        return {
            "instance": name, "solver": rep.solver, "trial": rep.trial, "seed": rep.seed,
            "t_seconds": f"{t:.3f}", "best_energy": repr(point.best_energy),
            "loss_if_any": "" if point.loss is None else repr(float(point.loss)),
            "iterations": point.iteration, "terminated_reason": reason,
        }

    rows = []
    if every:
        for p in rep.trace:
            if p.iteration and p.iteration % every == 0 and p.iteration < rep.iterations:
                rows.append(row(p, p.t_seconds, "checkpoint"))
    elif interval:
        mark = interval
        while mark < rep.elapsed and rep.trace:
            seen = [p for p in rep.trace if p.t_seconds <= mark]
            if seen:
                rows.append(row(seen[-1], mark, "checkpoint"))
            mark += interval
    final = TracePoint(rep.iterations, rep.elapsed, rep.energy, rep.energy, rep.loss)
    rows.append(row(final, rep.elapsed, rep.reason))
    return rows


def cmd_run(args):
    paths = instance_paths(args.instances)
    failures = 0
    loaded = []
    for path in paths:
        try:
            loaded.append((path, load_instance(path, args.clamp)))
        except (MrfError, OSError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failures += 1

    jobs = []
    for path, inst in loaded:
        seeds = trial_seeds(args.seed, args.trials) if args.trials > 1 else [args.seed]
        jobs.extend((path, inst, k, s) for k, s in enumerate(seeds))

    def work(job):
        path, inst, k, s = job
        try:
            return job, solve(inst, args, s, k), None
        except MrfError as exc:
            return job, None, exc

    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    side_dir = args.output + ".assignments"
    os.makedirs(side_dir, exist_ok=True)
    with open(args.output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for (path, inst, k, s), rep, exc in results:
            name = instance_name(path)
            if exc is not None:
                print(f"error: {path} trial {k}: {exc}", file=sys.stderr)
                failures += 1
                continue
            every = args.checkpoint_iters
            interval = None if every else args.checkpoint_interval
            writer.writerows(report_rows(name, rep, interval, every))
            side = os.path.join(side_dir, f"{name}__{rep.solver}__trial{k}.txt")
            with open(side, "w") as sf:
                sf.write("".join(f"{int(v)}\n" for v in rep.assignment))
    return 1 if failures or not jobs else 0


def cmd_gen(args):
    spec = GenSpec(
        n_vars=args.nodes,
        edge_prob=args.edge_prob,
        mean_degree=None if args.edge_prob is not None else args.mean_degree,
        order="highorder" if args.highorder else "pairwise",
        n_highorder=args.n_highorder,
        energy_mode="potts" if args.potts else "random",
        seed=args.seed,
    )
    for k in range(args.count):
        s = replace(spec, seed=spec.seed + k)
        name = args.name if args.count == 1 and args.name else None
        print(write_instance(s, args.out, name))
    return 0


def cmd_convert_pci(args):
    inst = pci_to_mrf(read_pci(args.input))
    with open(args.output, "w") as fh:
        fh.write(write_uai(from_energies(inst)))
    return 0


def cmd_export(args):
    if args.input.endswith(".json"):
        model = from_energies(pci_to_mrf(read_pci(args.input)))
    else:
        model = read_uai(args.input)
    with open(args.output, "w") as fh:
        fh.write(write_uai(model))
    return 0


def cmd_landscape(args):
    inst = load_instance(args.instance, args.clamp)
    result = fit(inst, lift_config(args, args.seed), args.time_limit)
    alphas, betas, values = loss_landscape(result, args.radius, args.grid, args.seed)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "beta", "loss"])
        for a, alpha in enumerate(alphas):
            for b, beta in enumerate(betas):
                w.writerow([repr(float(alpha)), repr(float(beta)), repr(float(values[a, b]))])
    print(f"trained loss {result.report.loss!r}; wrote {values.size} points to {args.output}")
    return 0


def _lift_options(p):
    d = LiftConfig()
    g = p.add_argument_group("neurolift options")
    g.add_argument("--d-l", type=int, default=d.d_l, help="lifting dimension")
    g.add_argument("--layers", type=int, default=d.layers)
    g.add_argument("--d-h", type=int, default=d.d_h, help="jumping-knowledge projection width")
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--tol", type=float, default=d.tol)
    g.add_argument("--patience", type=int, default=d.patience)
    g.add_argument("--t0", type=float, default=d.T0, help="initial softmax temperature")
    g.add_argument("--gamma", type=float, default=d.gamma, help="temperature decay factor")
    g.add_argument("--backbone", choices=("graphsage", "gcn"), default=d.backbone)


def build_parser():
    default_seed = int(os.environ.get(SEED_ENV, "0"))
    parser = argparse.ArgumentParser(prog="mrflift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve instances and write a CSV report")
    p.add_argument("instances", nargs="+", help=".uai / PCI .json files or directories")
    p.add_argument("--solver", choices=SOLVERS, default="neurolift")
    p.add_argument("--output", "-o", default="results.csv")
    p.add_argument("--time-limit", type=float, default=None, help="seconds per trial")
    p.add_argument("--checkpoint-interval", type=float, default=200.0, help="seconds")
    p.add_argument("--checkpoint-iters", type=int, default=None,
                   help="checkpoint every N iterations instead of by wall clock")
    p.add_argument("--iters", type=int, default=None,
                   help="iteration cap (default 150 for neurolift, 60 for lbp/trbp)")
    p.add_argument("--damping", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=default_seed)
    p.add_argument("--clamp", type=float, default=None,
                   help="replace non-positive potentials by this epsilon")
    _lift_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen", help="generate synthetic .uai instances")
    p.add_argument("--nodes", type=int, required=True)
    topo = p.add_mutually_exclusive_group()
    topo.add_argument("--edge-prob", type=float, default=None)
    topo.add_argument("--mean-degree", type=float, default=15.0)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--potts", action="store_true")
    mode.add_argument("--random", action="store_true")
    p.add_argument("--highorder", action="store_true")
    p.add_argument("--n-highorder", type=int, default=None)
    p.add_argument("--seed", type=int, default=default_seed)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--name", default=None)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("convert-pci", help="PCI JSON to .uai")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_convert_pci)

    p = sub.add_parser("export", help="re-emit an instance as .uai for external solvers")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("landscape", help="train, then sample the loss surface")
    p.add_argument("instance")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--output", "-o", default="landscape.csv")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--seed", type=int, default=default_seed)
    p.add_argument("--clamp", type=float, default=None)
    _lift_options(p)
    p.set_defaults(func=cmd_landscape)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MrfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
