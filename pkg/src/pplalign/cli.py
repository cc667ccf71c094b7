"""Command-line driver: analyze, run, compare.

Exit codes: 0 success, 1 usage error, 2 parse/analysis error, 3 inference
or model runtime error.  Identical configurations produce byte-identical
output files.  ``PPL_THREADS`` caps worker parallelism when running many
replicates (each replicate is an independent seeded run, so results do not
depend on the degree of parallelism).
"""

import argparse
import os
import sys
import time

from .cfa import analyze, format_constraints
from .label import postorder_label_map
from .errors import (
    AnalysisError, DesugarError, InferenceError, PplError, RuntimeErrorPpl,
    SyntaxErrorPpl,
)
from .inference import (
    lw_log_normalizer, run_aligned_smc, run_likelihood_weighting,
    run_unaligned_smc,
)
from .phylo import read_exact_log_likelihood
from .runtime import Evaluator, untaint
from .syntax import desugar, parse_program
from .terms import K_WEIGHT, UNIT, iter_subterms, pretty
from .transform import align_weights, cps_transform

USAGE_ERROR = 1
ANALYSIS_ERROR = 2
INFERENCE_ERROR = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _read_model(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        sys.exit(ANALYSIS_ERROR)


def _analyze_source(source):
    core = desugar(parse_program(source))
    # label in left-to-right post-order, the order the worked analyses use,
    # so reported label sets line up with hand-worked results
    return analyze(core, label_map=postorder_label_map(core))


def _pipeline(source, method):
    """Build the runnable program for a method from model source text."""
    result = _analyze_source(source)
    if method == "lw":
        return result, result.labeled
    if method == "aligned":
        aligned = align_weights(result.labeled, result.dynamic)
    else:
        aligned = align_weights(result.labeled, frozenset())
    return result, cps_transform(aligned)


def _value_str(v):
    v = untaint(v)
    if v is True:
        return "true"
    if v is False:
        return "false"
    if v is UNIT:
        return "()"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# analyze

def _underline_report(source, result):
    """Source listing with dynamic subterm spans underlined."""
    lines = source.split("\n")
    marks = [[False] * (len(line) + 1) for line in lines]
    for node in iter_subterms(result.labeled):
        if node.label in result.dynamic and node.span is not None:
            l1, c1, l2, c2 = node.span
            for ln in range(l1, min(l2, len(lines)) + 1):
                line = lines[ln - 1]
                lo = c1 - 1 if ln == l1 else 0
                hi = c2 - 1 if ln == l2 else len(line)
                for col in range(max(lo, 0), min(hi, len(line))):
                    marks[ln - 1][col] = True
    width = len(str(len(lines)))
    out = []
    for i, line in enumerate(lines):
        out.append(f"{i + 1:>{width}} | {line}")
        if any(marks[i]):
            carets = "".join("^" if m else " " for m in marks[i][:len(line)])
            out.append(f"{' ' * width} | {carets.rstrip()}")
    return "\n".join(out)


def cmd_analyze(args):
    source = _read_model(args.model)
    result = _analyze_source(source)
    print(_underline_report(source, result))
    print()
    weights = []
    for node in iter_subterms(result.labeled):
        if node.kind == K_WEIGHT:
            kind = "dynamic" if node.label in result.dynamic else "aligned"
            pos = node.span[:2] if node.span else (0, 0)
            weights.append((pos, node.label, kind))
    weights.sort()
    for pos, label, kind in weights:
        print(f"weight at {pos[0]}:{pos[1]} (label {label}): {kind}")
    n_dyn = len(result.dynamic)
    print(f"{len(result.constraints)} constraints, {n_dyn} dynamic "
          f"label{'s' if n_dyn != 1 else ''}")
    if args.dump_constraints:
        print("\n# constraints")
        print(format_constraints(result.constraints))
    if args.dump_dynamic:
        print("\n# dynamic labels")
        print(", ".join(str(l) for l in sorted(result.dynamic)))
    if args.dump_cps:
        print("\n# CPS form (aligned)")
        prog = cps_transform(align_weights(result.labeled, result.dynamic))
        print(pretty(prog))
    return 0


# ---------------------------------------------------------------------------
# run / compare

def _one_replicate(source, method, n, seed, trace=False):
    evaluator = Evaluator(trace=True) if trace else None
    _, prog = _pipeline(source, method)
    if method == "lw":
        samples = run_likelihood_weighting(prog, n, seed,
                                           evaluator=evaluator)
        rows = [(_value_str(v), w) for v, w in samples]
        summary = {
            "log_normalizer": lw_log_normalizer(samples),
            "resample_count": 0,
        }
        return rows, summary, evaluator
    fn = run_aligned_smc if method == "aligned" else run_unaligned_smc
    res = fn(prog, n, seed, evaluator=evaluator)
    rows = [(_value_str(v), 0.0) for v in res.samples]
    summary = {
        "log_normalizer": res.log_normalizer,
        "resample_count": res.resample_count,
    }
    return rows, summary, evaluator


def _replicate_normalizer(task):
    source, method, n, seed = task
    _, summary, _ = _one_replicate(source, method, n, seed)
    return summary["log_normalizer"]


def _map_replicates(tasks):
    threads = int(os.environ.get("PPL_THREADS", "1") or "1")
    if threads > 1 and len(tasks) > 1:
        try:
            import multiprocessing
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(threads) as pool:
                return pool.map(_replicate_normalizer, tasks)
        except (ImportError, OSError, ValueError):
            pass
    return [_replicate_normalizer(t) for t in tasks]


def _emit(args, text):
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_run(args):
    source = _read_model(args.model)
    start = time.perf_counter()
    if args.replicates > 1:
        tasks = [(source, args.method, args.particles, args.seed + k)
                 for k in range(args.replicates)]
        estimates = _map_replicates(tasks)
        lines = ["replicate,log_normalizer"]
        lines += [f"{k},{est!r}" for k, est in enumerate(estimates)]
        _emit(args, "\n".join(lines) + "\n")
        if args.summary:
            mean = sum(estimates) / len(estimates)
            print(f"replicates={args.replicates}")
            print(f"mean_log_normalizer={mean!r}")
            print(f"wall_time_ms={(time.perf_counter() - start) * 1e3:.1f}")
        return 0
    rows, summary, evaluator = _one_replicate(
        source, args.method, args.particles, args.seed, trace=args.trace)
    lines = ["sample,value,log_weight"]
    lines += [f"{i},{v},{w!r}" for i, (v, w) in enumerate(rows)]
    _emit(args, "\n".join(lines) + "\n")
    if args.trace and evaluator is not None:
        for ev in evaluator.events:
            print(f"trace: label={ev.origin} kind={ev.kind} "
                  f"increment={ev.increment!r} cumulative={ev.cumulative!r}",
                  file=sys.stderr)
    if args.summary:
        print(f"log_normalizer={summary['log_normalizer']!r}")
        print(f"resample_count={summary['resample_count']}")
        print(f"wall_time_ms={(time.perf_counter() - start) * 1e3:.1f}")
    return 0


def cmd_compare(args):
    source = _read_model(args.model)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in ("aligned", "unaligned", "lw"):
            print(f"error: unknown method {m!r}", file=sys.stderr)
            return USAGE_ERROR
    start = time.perf_counter()
    columns = {}
    timings = {}
    for m in methods:
        t0 = time.perf_counter()
        tasks = [(source, m, args.particles, args.seed + k)
                 for k in range(args.replicates)]
        columns[m] = _map_replicates(tasks)
        timings[m] = time.perf_counter() - t0
    lines = []
    oracle = read_exact_log_likelihood(source)
    if oracle is not None:
        lines.append(f"# oracle_log_normalizer: {oracle!r}")
    lines.append("replicate," + ",".join(methods))
    for k in range(args.replicates):
        lines.append(f"{k}," + ",".join(repr(columns[m][k]) for m in methods))
    _emit(args, "\n".join(lines) + "\n")
    for m in methods:
        print(f"{m}_wall_time_s={timings[m]:.3f}")
    if "aligned" in timings and "unaligned" in timings \
            and timings["aligned"] > 0:
        ratio = timings["unaligned"] / timings["aligned"]
        print(f"unaligned_over_aligned_time={ratio:.3f}")
    print(f"total_wall_time_ms={(time.perf_counter() - start) * 1e3:.1f}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="pplalign",
                     description="Static weight alignment and SMC inference "
                                 "for a small probabilistic language")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="run the static analysis on a model")
    pa.add_argument("model")
    pa.add_argument("--dump-constraints", action="store_true")
    pa.add_argument("--dump-dynamic", action="store_true")
    pa.add_argument("--dump-cps", action="store_true")
    pa.set_defaults(fn=cmd_analyze)

    pr = sub.add_parser("run", help="run inference on a model")
    pr.add_argument("model")
    pr.add_argument("--method", choices=["aligned", "unaligned", "lw"],
                    default="aligned")
    pr.add_argument("-n", "--particles", type=int, default=1000)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--replicates", type=int, default=1)
    pr.add_argument("--out", default=None)
    pr.add_argument("--summary", action="store_true")
    pr.add_argument("--trace", action="store_true")
    pr.set_defaults(fn=cmd_run)

    pc = sub.add_parser("compare",
                        help="run several methods over many replicates")
    pc.add_argument("model")
    pc.add_argument("--methods", default="aligned,unaligned")
    pc.add_argument("-n", "--particles", type=int, default=1000)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--replicates", type=int, default=10)
    pc.add_argument("--out", default=None)
    pc.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "particles", 1) < 1:
        print("error: particle count must be >= 1", file=sys.stderr)
        return USAGE_ERROR
    if getattr(args, "replicates", 1) < 1:
        print("error: replicates must be >= 1", file=sys.stderr)
        return USAGE_ERROR
    try:
        return args.fn(args)
    except (SyntaxErrorPpl, DesugarError, AnalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ANALYSIS_ERROR
    except (InferenceError, RuntimeErrorPpl) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INFERENCE_ERROR
    except PplError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INFERENCE_ERROR


if __name__ == "__main__":
    sys.exit(main())
