"""Command-line front end.

Commands: bestapprox, badness, cantor, dimension, scan-r.  Every output
file starts with a header carrying the tool version and a hash of the
configuration; nothing time- or host-dependent is written, so identical
configurations give byte-identical files whatever --workers is.

Exit codes: 0 ok, 1 usage, 2 precision exhausted, 3 integer relation,
4 construction or verification failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .arith import PrecisionExhausted, TargetVector, WeightVector, format_decimal
from .badness import (
    classical_badness,
    coordinate_badness,
    dual_badness,
    proposition_bound,
    twisted_badness,
    verify_proposition,
)
from .bestapprox import (
    IntegerRelationFound,
    best_approximations_from_cf,
    enumerate_best_approximations,
    verify_lacunarity,
    verify_minkowski,
    write_sequence_csv,
    write_sequence_jsonl,
)
from .cantor import (
    CantorParams,
    ConstructionViolation,
    Mode,
    build_tree,
    default_epsilon,
    dimension_condition,
    r_exceeds_floor,
    sequence_for_depth,
    stream_rng,
    target_count,
    tree_records,
    verify_fact_counts,
)
from .measure import (
    DimensionCheckParams,
    MeasureWeights,
    dimension_lower_bound,
    empirical_dimension,
    lambda_of,
    mass_distribution_check,
    strict_threshold_met,
)

EXIT_OK, EXIT_USAGE, EXIT_PRECISION, EXIT_RELATION, EXIT_VIOLATION = 0, 1, 2, 3, 4
CF_ROUTE_ABOVE = 10 ** 7  # n = 1 sequences beyond this height come from continued fractions


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# parsing helpers


def parse_int(text: str) -> int:
    t = text.strip().replace("^", "**")
    if "**" in t:
        base, exp = t.split("**", 1)
        return int(base) ** int(exp)
    v = Fraction(t)
    if v.denominator != 1:
        raise UsageError(f"not an integer: {text}")
    return int(v)


def parse_fraction(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"not a rational number: {text}") from None


def parse_weights(text: str | None, n: int) -> WeightVector:
    j = WeightVector.uniform(n) if text is None else WeightVector.parse(text)
    if j.n != n:
        raise UsageError(f"--j has {j.n} weights but theta has {n} components")
    return j


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header(cfg: dict) -> dict:
    return {"record": "header", "tool": "twistedbad", "version": __version__,
            "config_hash": config_hash(cfg), "config": cfg}


@contextlib.contextmanager
def _output(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _report_path(args) -> str | None:
    if args.report:
        return args.report
    if args.out and args.out != "-":
        return args.out + ".report.json"
    return None


def _write_report(args, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    path = _report_path(args)
    if path is None:
        sys.stderr.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _write_rows(fh, fmt: str, head: dict, rows: list[dict], fields: list[str]) -> None:
    if fmt == "jsonl":
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
        return
    fh.write(f"# twistedbad {head['version']} config_hash={head['config_hash']}\n")
    w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})


def _params_from_args(args) -> tuple[CantorParams, int]:
    if args.params:
        path = Path(args.params)
        if not path.is_file():
            raise UsageError(f"parameter file not found: {path}")
        params, depth = CantorParams.from_text(path.read_text(encoding="utf-8"))
        if args.depth is not None:
            depth = args.depth
        return params, depth if depth is not None else 1
    if args.tree:
        return _params_from_tree(args.tree)
    if not args.theta or args.R is None:
        raise UsageError("give --params, --tree, or --theta with --R")
    theta = TargetVector.parse(args.theta)
    j = parse_weights(args.j, theta.n)
    R = parse_int(args.R)
    eps = parse_fraction(args.epsilon) if args.epsilon else default_epsilon(R, j)
    params = CantorParams(theta.n, j, R, eps, theta, Mode(args.mode.upper()), args.seed)
    return params, args.depth if args.depth is not None else 1


def _read_tree_header(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"tree file not found: {p}")
    with p.open(encoding="utf-8") as fh:
        first = fh.readline()
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        raise UsageError(f"{p} is not a tree file") from None
    if head.get("record") != "header" or "params" not in head.get("config", {}):
        raise UsageError(f"{p} has no tree header")
    return head


def _params_from_tree(path: str) -> tuple[CantorParams, int]:
    head = _read_tree_header(path)
    params, depth = CantorParams.from_text(head["config"]["params"])
    return params, depth if depth is not None else 0


def _eta_from_tree(path: str, seed: int) -> tuple[tuple[Fraction, ...], CantorParams, int]:
    params, depth = _params_from_tree(path)
    deepest, boxes = -1, []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            r = json.loads(line)
            if not r["selected"]:
                continue
            if r["level"] > deepest:
                deepest, boxes = r["level"], []
            if r["level"] == deepest:
                boxes.append(r)
    if not boxes:
        raise UsageError("tree file lists no boxes")
    pick = stream_rng(seed, "eta").choice(boxes)
    widths = params.geometry.widths(deepest)
    eta = tuple(Fraction(x) + w / 2 for x, w in zip(pick["lower"], widths))
    return eta, params, depth


# ---------------------------------------------------------------------------
# commands


def cmd_bestapprox(args) -> int:
    theta = TargetVector.parse(args.theta)
    j = parse_weights(args.j, theta.n)
    bound = parse_fraction(args.bound)
    cfg = {"command": "bestapprox", "theta": str(theta), "j": str(j), "bound": str(bound), "format": args.format}
    head = header(cfg)
    if theta.n == 1 and bound > CF_ROUTE_ABOVE:
        seq = best_approximations_from_cf(theta, bound)
    else:
        seq = enumerate_best_approximations(theta, j, bound, workers=args.workers)
    with _output(args.out) as fh:
        if args.format == "csv":
            write_sequence_csv(seq, fh, f"twistedbad {__version__} config_hash={head['config_hash']}")
        else:
            write_sequence_jsonl(seq, fh, head)
    mink, lac = verify_minkowski(seq), verify_lacunarity(seq)
    _write_report(args, {**head, "entries": len(seq), "minkowski": mink.summary(), "lacunarity": lac.summary()})
    if mink.failures or lac.failures:
        return EXIT_VIOLATION
    if not (mink.passed and lac.passed):
        return EXIT_PRECISION
    return EXIT_OK


def cmd_badness(args) -> int:
    theta = TargetVector.parse(args.theta)
    j = parse_weights(args.j, theta.n)
    Q = parse_int(args.Q)
    seq = None
    if args.tree:
        eta, params, depth = _eta_from_tree(args.tree, args.seed)
        if params.theta.n != theta.n:
            raise UsageError("tree dimension differs from theta")
        eta_text = ",".join(str(x) for x in eta)
        seq = sequence_for_depth(params, depth, args.workers)
    elif args.eta:
        eta_text = args.eta
        eta = TargetVector.parse(args.eta)
    else:
        raise UsageError("give --eta or --tree")
    if args.bound is not None:
        bound = parse_fraction(args.bound)
        if theta.n == 1 and bound > CF_ROUTE_ABOVE:
            seq = best_approximations_from_cf(theta, bound)
        else:
            seq = enumerate_best_approximations(theta, j, bound, workers=args.workers)
    cfg = {"command": "badness", "theta": str(theta), "eta": eta_text, "j": str(j), "Q": Q,
           "bound": None if seq is None else str(seq.height_bound), "tree_seed": args.seed if args.tree else None,
           "format": args.format}
    head = header(cfg)
    eta_pt = eta if isinstance(eta, TargetVector) else TargetVector.of(eta)
    profiles = [twisted_badness(theta, eta_pt, j, Q, args.workers), classical_badness(theta, j, Q, args.workers)]
    for i in range(theta.n):
        profiles.append(coordinate_badness(eta_pt[i], Q, args.workers))
    rows = []
    for k, p in enumerate(profiles):
        r = {"record": "profile", **p.to_json()}
        if p.functional.startswith("coordinate"):
            r["axis"] = k - 2
        rows.append(r)
    extra = {}
    if seq is not None and len(seq):
        g = dual_badness(eta_pt, seq)
        extra["dual"] = {"record": "dual", "value": g.to_decimal_string(20), "value_lower": str(g.lower),
                         "entries": len(seq)}
        rep = verify_proposition(theta, eta_pt, j, seq, workers=args.workers)
        pj = rep.to_json()
        if rep.constants is not None:
            pj["c"] = rep.constants.c.to_decimal_string(20)
        extra["proposition"] = {"record": "proposition", **pj}
        rows.extend(extra.values())
    fields = ["record", "functional", "axis", "Q", "value", "value_lower", "value_upper", "argmin_q", "certified",
              "status", "gamma", "floor", "q_max"]
    with _output(args.out) as fh:
        _write_rows(fh, args.format, head, rows, fields)
    if "proposition" in extra and extra["proposition"]["status"] == "FAIL":
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_cantor(args) -> int:
    params, depth = _params_from_args(args)
    try:
        params.validate()
    except ValueError as e:
        raise UsageError(f"parameters rejected for {params.mode.value} mode: {e}") from None
    cfg = {"command": "cantor", "params": params.to_text(depth), "materialize_limit": args.materialize_limit,
           "fact_samples": args.samples, "format": args.format}
    head = header(cfg)
    tree = build_tree(params, depth, materialize_limit=args.materialize_limit, workers=args.workers)
    records = list(tree_records(tree))
    with _output(args.out) as fh:
        _write_rows(fh, args.format, head, records, ["level", "lower", "survivor_count", "selected", "mu"])
    facts = []
    for k in range(min(depth, tree.materialized_depth + 1)):
        facts.append(verify_fact_counts(tree, k, max_boxes=args.samples))
    report = {
        **head,
        "mode": params.mode.value,
        "branching": tree.branching,
        "materialized_depth": tree.materialized_depth,
        "levels": tree.level_statistics(),
        "parameter_warnings": params.problems(),
        "facts": [f.summary() for f in facts],
        "fact_failures": [vars(c) for f in facts for c in f.failures][:50],
        "facts_pass": all(f.passed for f in facts),
    }
    _write_report(args, report)
    return EXIT_OK


def cmd_dimension(args) -> int:
    params, depth = _params_from_args(args)
    params.validate()
    dp = DimensionCheckParams.derive(params.R, params.j)
    levels = [parse_int(x) for x in args.levels.split(",")] if args.levels else [dp.k_min]
    depth = max(depth, max(levels))
    cfg = {"command": "dimension", "params": params.to_text(depth), "samples": args.samples,
           "levels": levels, "fit_depths": args.fit_depths, "seed": args.seed}
    head = header(cfg)
    out = {**head, "lambda": lambda_of(params.R, params.j).to_decimal_string(20)}
    if strict_threshold_met(params.R, params.j):
        out["lower_bound"] = dimension_lower_bound(params.R, params.j).to_decimal_string(20)
    else:
        out["lower_bound"] = None
        out["lower_bound_note"] = "R is below the threshold where the bound is established"
    status = EXIT_OK
    if args.samples > 0 or args.fit_depths:
        tree = build_tree(params, depth, materialize_limit=args.materialize_limit, workers=args.workers)
        if args.samples > 0:
            rep = mass_distribution_check(MeasureWeights(tree), dp, args.samples, args.seed, levels)
            out["mass_check"] = rep.to_json()
            if params.mode is Mode.STRICT and not rep.passed:
                status = EXIT_VIOLATION
        if args.fit_depths:
            ds = [parse_int(x) for x in args.fit_depths.split(",")]
            out["empirical"] = empirical_dimension(tree, ds, seed=args.seed).to_json()
    else:
        out["mass_check"] = {"samples": 0, "pass": True}
    text = json.dumps(out, sort_keys=True, indent=2) + "\n"
    with _output(args.out) as fh:
        fh.write(text)
    return status


def cmd_scan_r(args) -> int:
    j = WeightVector.parse(args.j) if args.j else WeightVector.uniform(args.n)
    cfg = {"command": "scan-r", "j": str(j), "rmin": args.rmin, "rmax": args.rmax, "format": args.format}
    head = header(cfg)
    rows = []
    for t in range(args.rmin, args.rmax + 1):
        R = 1 << t
        lam = lambda_of(R, j)
        rows.append({
            "log2_R": t,
            "R": R,
            "target_count": target_count(R, j),
            "R_above_floor": r_exceeds_floor(R, j),
            "dimension_condition": dimension_condition(R, j),
            "lambda": lam.to_decimal_string(12),
            "n_minus_lambda": (j.n - lam).to_decimal_string(12),
            "default_epsilon": str(default_epsilon(R, j)),
        })
    with _output(args.out) as fh:
        _write_rows(fh, args.format, head, rows, list(rows[0]) if rows else ["log2_R"])
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="twistedbad", description="Twisted badly approximable points: computations and checks.")
    ap.add_argument("--version", action="version", version=f"twistedbad {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, fmt=True):
        p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--report", help="report file (default <out>.report.json, or stderr)")
        if fmt:
            p.add_argument("--format", choices=["csv", "jsonl"], default="jsonl")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="count", default=0)

    def tree_params(p):
        p.add_argument("--params", help="key=value parameter file")
        p.add_argument("--tree", help="tree file written by the cantor command")
        p.add_argument("--theta")
        p.add_argument("--j")
        p.add_argument("--R")
        p.add_argument("--epsilon")
        p.add_argument("--mode", default="EXPLORATORY", type=str.upper, choices=["STRICT", "EXPLORATORY"])
        p.add_argument("--depth", type=int)
        p.add_argument("--materialize-limit", type=int, default=20000)

    p = sub.add_parser("bestapprox", help="enumerate best approximations")
    p.add_argument("--theta", required=True)
    p.add_argument("--j")
    p.add_argument("--bound", required=True)
    common(p)
    p.set_defaults(func=cmd_bestapprox)

    p = sub.add_parser("badness", help="badness profiles and the twisted bound")
    p.add_argument("--theta", required=True)
    p.add_argument("--eta")
    p.add_argument("--tree")
    p.add_argument("--j")
    p.add_argument("--Q", required=True)
    p.add_argument("--bound", help="height bound for the dual functional")
    common(p)
    p.set_defaults(func=cmd_badness)

    p = sub.add_parser("cantor", help="build the Cantor-type tree")
    tree_params(p)
    p.add_argument("--samples", type=int, default=50, help="boxes per level in the fact checks")
    common(p)
    p.set_defaults(func=cmd_cantor)

    p = sub.add_parser("dimension", help="mass distribution check and dimension bound")
    tree_params(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--levels", help="comma-separated cube levels (default: the least admissible)")
    p.add_argument("--fit-depths", help="comma-separated depths for the empirical fit")
    common(p, fmt=False)
    p.set_defaults(func=cmd_dimension)

    p = sub.add_parser("scan-r", help="tabulate target counts and lambda over R = 2**t")
    p.add_argument("--j")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--rmin", type=int, default=2)
    p.add_argument("--rmax", type=int, default=40)
    common(p)
    p.set_defaults(func=cmd_scan_r)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PrecisionExhausted as e:
        print(f"precision exhausted: {e}", file=sys.stderr)
        return EXIT_PRECISION
    except IntegerRelationFound as e:
        print(f"integer relation: v={list(e.v)} p={e.p}", file=sys.stderr)
        return EXIT_RELATION
    except ConstructionViolation as e:
        print(f"construction violation: {e}", file=sys.stderr)
        return EXIT_VIOLATION
    except (ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
