# main.py - LPQP MAP solver
# Command-line entry point: solve, generate, enumerate and score pairwise MRF instances

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import config as settings
from config import LpqpConfig
from core.errors import LpqpError
from core.score import score
from instances import FORMATS, generate_potts, load_model, save_model
from lpqp import CONVERGED, lpqp_run
from oracles import brute_force_gibbs, brute_force_map
from utils.report_writer import dumps, write_batch_summary, write_result, write_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2

INSTANCE_SUFFIXES = (".uai", ".json")

BANNER = "=" * 80


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _rho0(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def build_parser():
    parser = _Parser(prog="lpqp", description="MAP inference in pairwise MRFs by the LPQP relaxation")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve one instance, or every instance in a directory")
    solve.add_argument("--model", required=True, help="instance file or directory")
    solve.add_argument("--format", choices=FORMATS, default=None,
                       help="instance format (default: from the suffix, .json is native)")
    solve.add_argument("--method", choices=("uniform", "tree"), default="uniform")
    solve.add_argument("--rho0", type=_rho0, default="auto")
    solve.add_argument("--rho-factor", type=float, default=1.5)
    solve.add_argument("--eps-dc", type=float, default=1e-4)
    solve.add_argument("--eps-rho", type=float, default=1e-4)
    solve.add_argument("--rho-max", type=float, default=None)
    solve.add_argument("--max-outer", type=int, default=60)
    solve.add_argument("--max-dc-iters", type=int, default=200)
    solve.add_argument("--inner-tol", type=float, default=1e-8)
    solve.add_argument("--schedule", choices=settings.SCHEDULES, default="sequential")
    solve.add_argument("--damping", type=float, default=0.0)
    solve.add_argument("--grid-split", action="store_true",
                       help="tree method: split a square grid into horizontal and vertical forests")
    solve.add_argument("--dd-tol", type=float, default=1e-6,
                       help="tree method: lower bound on the dual decomposition tolerance")
    solve.add_argument("--seed", type=int, default=0,
                       help="recorded in the result JSON; the solver is deterministic")
    solve.add_argument("--trace", help="trace CSV (a directory in batch mode)")
    solve.add_argument("--out", help="result JSON (a directory in batch mode)")
    solve.add_argument("--summary", help="batch mode: summary CSV (default: <out>/summary.csv)")
    solve.add_argument("--timing", action="store_true", help="record wall-clock times in the outputs")
    solve.add_argument("--quiet", action="store_true", help="skip the console report")

    gen = sub.add_parser("gen-potts", help="write a random Potts grid")
    gen.add_argument("--size", type=int, required=True)
    gen.add_argument("--states", type=int, required=True)
    gen.add_argument("--sigma", type=float, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--format", choices=FORMATS, default=None)

    brute = sub.add_parser("brute-force", help="exact MAP by enumeration (small models only)")
    brute.add_argument("--model", required=True)
    brute.add_argument("--format", choices=FORMATS, default=None)

    scoring = sub.add_parser("score", help="relative scores of several energies")
    scoring.add_argument("--energies", type=float, nargs="+", required=True)
    scoring.add_argument("--optimum", type=float, default=None)

    gibbs = sub.add_parser("oracle-gibbs", help="exact Gibbs marginals by enumeration")
    gibbs.add_argument("--model", required=True)
    gibbs.add_argument("--format", choices=FORMATS, default=None)
    gibbs.add_argument("--temperature", type=float, required=True)
    gibbs.add_argument("--out", help="write the marginals as JSON")
    return parser


def config_from_args(args):
    return LpqpConfig(
        method=args.method,
        rho0=args.rho0,
        rho_factor=args.rho_factor,
        eps_dc=args.eps_dc,
        eps_rho=args.eps_rho,
        rho_max=args.rho_max,
        max_outer=args.max_outer,
        max_dc_iters=args.max_dc_iters,
        inner_tol=args.inner_tol,
        dd_tol=args.dd_tol,
        seed=args.seed,
        damping=args.damping,
        schedule=args.schedule,
        grid_split=args.grid_split,
    ).validate()


# ==================== CONSOLE REPORT ====================

def print_solve_report(path, model, result):
    """Print the solve summary"""
    summary = result.summary(model)
    print("\n" + BANNER)
    print(f"LPQP-{result.config.method.upper()[0]} RESULT: {path}")
    print(BANNER)
    print(f"Nodes / edges:        {model.num_nodes} / {model.num_edges}")
    print(f"Status:               {summary['status']}")
    print(f"rho:                  {summary['rho0']:.6g} -> {summary['final_rho']:.6g}")
    print(f"Outer iterations:     {summary['outer_iterations']}")
    print(f"CCCP iterations:      {summary['cccp_iterations']}")
    print("-" * 40)
    print(f"LP objective:         {summary['lp_objective']:.10g}")
    print(f"QP objective:         {summary['qp_objective']:.10g}")
    print(f"Rounded energy:       {summary['rounded_energy']:.10g}")
    print(f"Decoded energy:       {summary['decoded_energy']:.10g}")
    print(BANNER)


# ==================== COMMANDS ====================

def _solve_file(path, fmt, cfg, trace_path, out_path, include_timing):
    model = load_model(path, fmt)
    result = lpqp_run(model, cfg)
    if trace_path:
        write_trace(trace_path, result.trace, include_timing)
    if out_path:
        write_result(out_path, result, model, include_timing)
    return model, result


def _batch_worker(job):
    path, fmt, cfg, trace_dir, out_dir, include_timing = job
    stem = Path(path).stem
    trace_path = os.path.join(trace_dir, f"{stem}_trace.csv") if trace_dir else None
    out_path = os.path.join(out_dir, f"{stem}.json") if out_dir else None
    try:
        model, result = _solve_file(path, fmt, cfg, trace_path, out_path, include_timing)
    except LpqpError as e:
        return {"instance": Path(path).name, "status": "error", "error": str(e)}
    row = {"instance": Path(path).name}
    row.update(result.summary(model))
    row["error"] = ""
    return row


def cmd_solve(args):
    cfg = config_from_args(args)
    target = Path(args.model)
    if target.is_dir():
        return _solve_directory(target, args, cfg)

    model, result = _solve_file(target, args.format, cfg, args.trace, args.out, args.timing)
    if not args.quiet:
        print_solve_report(target, model, result)
    return EXIT_OK if result.status == CONVERGED else EXIT_NOT_CONVERGED


def _solve_directory(directory, args, cfg):
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in INSTANCE_SUFFIXES)
    if not paths:
        raise LpqpError(f"no .uai or .json instances in {directory}")
    jobs = [(str(p), args.format, cfg, args.trace, args.out, args.timing) for p in paths]
    workers = min(settings.THREADS, len(jobs))
    logger.info("solving %d instance(s) with %d worker(s)", len(jobs), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_batch_worker, jobs))
    else:
        rows = [_batch_worker(job) for job in jobs]

    summary_path = args.summary or os.path.join(args.out or str(directory), "summary.csv")
    frame = write_batch_summary(summary_path, rows)
    if not args.quiet:
        print("\n" + BANNER)
        print(f"BATCH SUMMARY: {len(rows)} instance(s) -> {summary_path}")
        print(BANNER)
        for row in rows:
            if row["status"] == "error":
                print(f"  ✗ {row['instance']}: {row['error']}")
            else:
                print(f"  {row['instance']}: {row['status']}, rounded energy {row['rounded_energy']:.10g}")
    statuses = set(frame["status"])
    if "error" in statuses:
        return EXIT_USAGE
    return EXIT_OK if statuses == {CONVERGED} else EXIT_NOT_CONVERGED


def cmd_gen_potts(args):
    model = generate_potts(args.size, args.states, args.sigma, args.seed)
    save_model(model, args.out, args.format)
    print(f"✓ wrote {args.size}x{args.size} Potts grid ({args.states} states, "
          f"{model.num_edges} edges) to {args.out}")
    return EXIT_OK


def cmd_brute_force(args):
    model = load_model(args.model, args.format)
    x, value = brute_force_map(model)
    print(f"assignment: {' '.join(str(label) for label in x)}")
    print(f"energy: {value:.17g}")
    return EXIT_OK


def cmd_score(args):
    report = score(args.energies, args.optimum)
    for e, s in zip(report.energies, report.scores):
        print(f"{e:.17g}\t{s:.17g}")
    return EXIT_OK


def cmd_oracle_gibbs(args):
    model = load_model(args.model, args.format)
    mu = brute_force_gibbs(model, args.temperature)
    record = {
        "temperature": args.temperature,
        "edges": [list(e) for e in mu.edges],
        "node_marginals": [m.tolist() for m in mu.node_marginals],
        "edge_marginals": [m.tolist() for m in mu.edge_marginals],
    }
    text = dumps(record)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "gen-potts": cmd_gen_potts,
    "brute-force": cmd_brute_force,
    "score": cmd_score,
    "oracle-gibbs": cmd_oracle_gibbs,
}


def main(argv=None):
    logging.basicConfig(level=getattr(logging, settings.LOG_LEVEL, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (LpqpError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
