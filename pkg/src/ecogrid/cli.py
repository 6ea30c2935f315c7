"""Command-line front end: parse, generate candidates, optimize,
evaluate and report.

Every subcommand is a pure function of its input files and flags; all
randomness flows through ``--seed`` and the seed is recorded in every
output header, so repeating a command reproduces its outputs byte for
byte.  ``ECOGRID_LOG`` sets the log level (DEBUG, INFO, WARNING, ...).

Exit codes: 0 success, 2 input parse error, 3 infeasible problem,
4 budget exhausted without any feasible incumbent.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .assessment import (
    ContingencySpec,
    explore_topologies,
    graph_properties,
    run_contingencies,
    topology_samples_csv,
)
from .candidates import GenerationSpec, generate_candidates
from .eco_flow import build_efm, eco_metrics_exact
from .expansion import ExpansionProblem, solve_expansion
from .grid_model import (
    CaseFormatError,
    apply_decisions,
    parse_candidates,
    parse_case,
    write_candidates,
    write_case,
)
from .power_flow import IslandedNetworkError, solve_ac, solve_dc

__all__ = ["main"]

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_NO_INCUMBENT = 4

log = logging.getLogger("ecogrid")


def _setup_logging() -> None:
    level = os.environ.get("ECOGRID_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _read_case(path: str):
    return parse_case(Path(path).read_text())


def _write(outdir: Path, name: str, text: str) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    target = outdir / name
    target.write_text(text)
    log.info("wrote %s", target)
    return target


def _load_candidates(args, net):
    """Exactly one of --candidates / --generate supplies the set."""
    if (args.candidates is None) == (args.generate is None):
        raise SystemExit("exactly one of --candidates or --generate is required")
    if args.candidates is not None:
        return parse_candidates(Path(args.candidates).read_text()), False
    spec = GenerationSpec(m=args.generate, seed=args.seed)
    return generate_candidates(net, spec), True


def cmd_optimize(args) -> int:
    net = _read_case(args.case)
    cands, generated = _load_candidates(args, net)
    outdir = Path(args.out)

    prob = ExpansionProblem(
        net=net,
        cands=cands,
        mode=args.mode,
        order=args.order,
        node_budget=args.node_budget,
        time_budget=args.time_budget,
    )
    result = solve_expansion(prob)
    if result.status == "infeasible":
        log.error("infeasible base dispatch")
        return EXIT_INFEASIBLE
    if not result.decisions and result.status == "incumbent-only" and cands.entries:
        # unreachable by construction (all-zeros is seeded), kept for the
        # documented exit-code contract
        return EXIT_NO_INCUMBENT

    base_sol = solve_dc(net)
    base_r = eco_metrics_exact(build_efm(net, base_sol)).r_eco

    payload = json.loads(result.to_json())
    payload.update({
        "seed": args.seed,
        "mode": args.mode,
        "order": args.order,
        "base_r_eco": base_r,
        "built": int(sum(result.decisions)),
        "candidates": len(cands.entries),
    })
    _write(outdir, "result.json", json.dumps(payload, sort_keys=True, indent=2) + "\n")
    _write(outdir, "search_log.ndjson", result.search_log_ndjson())
    expanded = apply_decisions(net, cands.with_decisions(result.decisions))
    _write(outdir, "expanded_case.m", write_case(expanded))
    if generated:
        _write(outdir, "candidates.csv",
               write_candidates(cands, header=f"seed={args.seed} m={args.generate}"))
    print(f"built {sum(result.decisions)}/{len(cands.entries)} candidates; "
          f"achieved r_eco {payload['achieved_r_eco_' + args.mode]:.4f} "
          f"(base {base_r:.4f}); status {result.status}")
    return EXIT_OK


def _analysis_row(name: str, path: str) -> dict:
    net = _read_case(path)
    sol = solve_ac(net)
    if not sol.converged:
        log.warning("%s: AC did not converge, falling back to DC", name)
        sol = solve_dc(net)
    metrics = eco_metrics_exact(build_efm(net, sol))
    props = graph_properties(net, sol)
    row = {"case": name, "r_eco": metrics.r_eco, "asc_dc_ratio": metrics.ratio}
    row.update(props.as_row())
    return row


def cmd_analyze(args) -> int:
    rows = [_analysis_row(Path(p).name, p) for p in args.case]
    outdir = Path(args.out)
    if args.format == "json":
        _write(outdir, "analysis.json",
               json.dumps({"seed": args.seed, "rows": rows}, sort_keys=True, indent=2) + "\n")
    else:
        buf = io.StringIO()
        buf.write(f"# seed={args.seed}\n")
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
        _write(outdir, "analysis.csv", buf.getvalue())
    for row in rows:
        print(f"{row['case']}: r_eco {row['r_eco']:.4f}  r_cf {row['r_cf']:.4f}  "
              f"d_bar {row['d_bar']:.3f}")
    return EXIT_OK


def cmd_contingency(args) -> int:
    net = _read_case(args.case)
    if args.kind == "list":
        if args.list is None:
            raise SystemExit("--kind list requires --list FILE")
        sets = []
        for raw in Path(args.list).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if line:
                sets.append(tuple(int(tok) for tok in line.replace(",", " ").split()))
        spec = ContingencySpec(element_kind="explicit-list", explicit_sets=tuple(sets))
    else:
        spec = ContingencySpec(depth=args.depth, element_kind=args.kind)
    report = run_contingencies(net, spec, jobs=args.jobs)
    outdir = Path(args.out)
    if args.format == "json":
        payload = json.loads(report.to_json())
        payload["seed"] = args.seed
        _write(outdir, "contingency.json", json.dumps(payload, sort_keys=True, indent=2) + "\n")
    else:
        _write(outdir, "contingency.csv", f"# seed={args.seed}\n" + report.to_csv())
    print(f"{report.total_cases} cases: {report.violations} violations, "
          f"{report.unsolved} unsolved")
    return EXIT_OK


def cmd_candidates(args) -> int:
    net = _read_case(args.case)
    spec = GenerationSpec(m=args.m, seed=args.seed, voltage_levels=args.levels)
    cands = generate_candidates(net, spec)
    _write(Path(args.out), "candidates.csv",
           write_candidates(cands, header=f"seed={args.seed} m={args.m} levels={args.levels}"))
    print(f"generated {len(cands.entries)} candidates (seed {args.seed})")
    return EXIT_OK


def cmd_explore(args) -> int:
    net = _read_case(args.case)
    samples = explore_topologies(net, k_links=args.max_links,
                                 sample_budget=args.budget, seed=args.seed)
    _write(Path(args.out), "explore.csv", f"# seed={args.seed}\n" + topology_samples_csv(samples))
    best = max(samples, key=lambda s: s.r_eco)
    print(f"{len(samples)} structures; base r_eco {samples[0].r_eco:.4f}, "
          f"best {best.r_eco:.4f} at {best.k_links} added links")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecogrid",
        description="Ecological-robustness analysis and expansion planning for power grids",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, multi_case=False):
        if multi_case:
            p.add_argument("--case", action="append", required=True,
                           help="case file (repeatable)")
        else:
            p.add_argument("--case", required=True, help="case file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("optimize", help="solve the expansion problem")
    common(p)
    p.add_argument("--candidates", help="candidate branch file")
    p.add_argument("--generate", type=int, metavar="M",
                   help="generate M candidates instead of reading a file")
    p.add_argument("--mode", choices=("structure", "opf"), default="opf")
    p.add_argument("--order", type=int, default=1, metavar="K",
                   help="relaxation series order")
    p.add_argument("--node-budget", type=int, default=10_000)
    p.add_argument("--time-budget", type=float, default=None,
                   help="seconds (omit for deterministic node-budget-only runs)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("analyze", help="robustness and structure metrics")
    common(p, multi_case=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("contingency", help="N-x contingency screening")
    common(p)
    p.add_argument("--depth", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--kind", choices=("branch", "substation", "list"), default="branch")
    p.add_argument("--list", help="file of explicit branch-index outage sets")
    p.set_defaults(func=cmd_contingency)

    p = sub.add_parser("candidates", help="generate a candidate branch file")
    common(p)
    p.add_argument("--m", type=int, required=True, help="number of candidates")
    p.add_argument("--levels", choices=("all", "highest-only"), default="highest-only")
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("explore", help="links-vs-robustness study")
    common(p)
    p.add_argument("--max-links", type=int, default=2)
    p.add_argument("--budget", type=int, default=150,
                   help="structure samples per link count before sampling kicks in")
    p.set_defaults(func=cmd_explore)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CaseFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except IslandedNetworkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        message = str(exc)
        print(f"error: {message}", file=sys.stderr)
        return EXIT_INFEASIBLE if "infeasible" in message else EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
