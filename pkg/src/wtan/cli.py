"""Command-line interface: ``wtan <command> ...``.

Exit codes: 0 success, 1 invalid input or failed check, 2 usage error,
3 solver failure.  Every output file is written to a temporary name first and
renamed, so a failing run leaves no partial files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from fractions import Fraction

import numpy as np

from .errors import SolverFailure, TooLarge, ValidationError, WtanError
from .measure import DiscreteMeasure
from .parallel_pool import resolve_threads

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


# -- output helpers ----------------------------------------------------------------

def fmt_float(v: float) -> str:
    if math.isnan(v) or math.isinf(v):
        return json.dumps(str(v))
    return format(v, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with sorted keys and every float printed with 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(obj[k], indent, _level + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(float(obj))
    if isinstance(obj, Fraction):
        return json.dumps(str(obj))
    return json.dumps(str(obj))


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def svg_line_chart(xs, ys, xlabel: str = "x", ylabel: str = "y", width: int = 480, height: int = 320) -> str:
    """Standalone SVG with one polyline and labelled axes."""
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    m = 40
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys + [0.0]), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return m + (x - x0) / (x1 - x0) * (width - 2 * m)

    def py(y):
        return height - m - (y - y0) / (y1 - y0) * (height - 2 * m)

    pts = " ".join(f"{px(x):.3f},{py(y):.3f}" for x, y in zip(xs, ys))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="100%" height="100%" fill="white"/>\n'
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>\n'
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>\n'
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{xlabel}</text>\n'
        f'<text x="12" y="{height / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {height / 2})">{ylabel}</text>\n'
        f'<text x="{m}" y="{height - m + 14}" font-size="10">{x0:.4g}</text>\n'
        f'<text x="{width - m}" y="{height - m + 14}" font-size="10" text-anchor="end">{x1:.4g}</text>\n'
        f'<text x="{m - 4}" y="{height - m}" font-size="10" text-anchor="end">{y0:.4g}</text>\n'
        f'<text x="{m - 4}" y="{m + 4}" font-size="10" text-anchor="end">{y1:.4g}</text>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{pts}"/>\n'
        f'</svg>\n'
    )


# -- input helpers ----------------------------------------------------------------------

def load_json(path: str):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_measure(path: str) -> DiscreteMeasure:
    return DiscreteMeasure.from_dict(load_json(path), path)


def load_tangent(path: str):
    from .tangent import TangentElement

    return TangentElement.from_dict(load_json(path), path)


def load_coupling(path: str):
    from .transport import Coupling

    return Coupling.from_dict(load_json(path), path)


def load_ensemble(path: str):
    from .curves import PathEnsemble

    return PathEnsemble.from_dict(load_json(path), path)


class Outputs:
    """Collects output files and writes them all at the end."""

    def __init__(self, out_dir: str | None):
        self.out_dir = out_dir
        self.files: list[tuple[str, str]] = []

    def add(self, name: str, text: str) -> None:
        if self.out_dir is not None:
            self.files.append((os.path.join(self.out_dir, name), text))

    def flush(self) -> None:
        for path, text in self.files:
            atomic_write(path, text)


# -- commands ------------------------------------------------------------------------------

def cmd_repro(args) -> int:
    from .instances import REPRO, run_repro

    ids = list(REPRO) if args.example == "all" else [args.example]
    if any(i not in REPRO for i in ids):
        print(f"usage: wtan repro {{all,{','.join(REPRO)}}}\n"
              f"wtan repro: error: unknown example '{args.example}'", file=sys.stderr)
        return EXIT_USAGE
    threads = resolve_threads(args.threads)
    out = Outputs(args.out)
    ok = True
    for ex in ids:
        rep = run_repro(ex, threads=threads)
        for name, passed, detail in rep.checks:
            line = f"{'PASS' if passed else 'FAIL'} {ex}: {name}"
            print(line + (f" ({detail})" if detail else ""))
        ok &= rep.passed
        out.add(f"{ex}.json", dumps(rep.to_dict()) + "\n")
        if rep.csv is not None:
            out.add(f"{ex}.csv", rep.csv)
        if args.svg and rep.curve is not None:
            xl, yl, xs, ys = rep.curve
            out.add(f"{ex}.svg", svg_line_chart(xs, ys, xl, yl))
    out.flush()
    return EXIT_OK if ok else EXIT_INVALID


def cmd_ot(args) -> int:
    from .transport import solve_ot

    mu, nu = load_measure(args.source), load_measure(args.target)
    gamma, value = solve_ot(mu, nu, args.p)
    print(fmt_float(value))
    out = Outputs(args.out)
    out.add("coupling.json", dumps({"W_p": value, "p": args.p, "coupling": gamma.to_dict()}) + "\n")
    out.flush()
    return EXIT_OK


def cmd_tangent_dist(args) -> int:
    from .tangent import tangent_distance

    phi, psi = load_tangent(args.phi), load_tangent(args.psi)
    value = tangent_distance(phi, psi, threads=resolve_threads(args.threads))
    print(fmt_float(value))
    out = Outputs(args.out)
    out.add("tangent_distance.json", dumps({"d_mu": value}) + "\n")
    out.flush()
    return EXIT_OK


def cmd_calc_d(args) -> int:
    from .tangent import sheaf_distance

    phi, psi = load_tangent(args.phi), load_tangent(args.psi)
    value = sheaf_distance(phi, psi)
    print(fmt_float(value))
    out = Outputs(args.out)
    out.add("sheaf_distance.json", dumps({"D": value, "D_sq": value * value}) + "\n")
    out.flush()
    return EXIT_OK


def cmd_calc_e(args) -> int:
    from .tangent import comparison_details

    phi, psi = load_tangent(args.phi), load_tangent(args.psi)
    det = comparison_details(phi, psi, eps_geo=args.tol_geo, sup=args.sup)
    print(fmt_float(det.value))
    out = Outputs(args.out)
    out.add("comparison.json", dumps({"E": det.value, "sense": "sup" if args.sup else "inf",
                                      "W2_sq": det.w2_sq, "geodesic_slack": det.geodesic_slack,
                                      "multiplier": det.multiplier}) + "\n")
    out.flush()
    return EXIT_OK


def cmd_ptransport(args) -> int:
    from .curves import uniform_grid
    from .parallel import check_transport, classify_uniqueness, enumerate_transports, transport_along_coupling

    psi, gamma = load_tangent(args.psi), load_coupling(args.gamma)
    grid = uniform_grid(args.steps)
    if args.enumerate:
        results = enumerate_transports(psi, gamma, args.limit, grid)
    else:
        results = [transport_along_coupling(psi, gamma, grid)]
    kind = classify_uniqueness(psi, gamma).value
    print(f"{len(results)} transport(s); {kind}")
    payload = {"classification": kind,
               "transports": [dict(r.to_dict(), checks=check_transport(r)) for r in results]}
    out = Outputs(args.out)
    out.add("transports.json", dumps(payload) + "\n")
    out.flush()
    return EXIT_OK


def _uniform(e) -> bool:
    return e.exact is not None and len(set(e.exact)) == 1


def _translated_w2_sq(eta, translated, j: int) -> float:
    """``W_2^2`` between the time-``j`` marginals, exactly for small rational uniform ensembles."""
    from .exact import pairing_w2_squared
    from .transport import wasserstein_sq

    if (eta.is_exact_arithmetic and translated.is_exact_arithmetic and _uniform(eta) and _uniform(translated)
            and eta.n_paths == translated.n_paths <= 8):
        return float(pairing_w2_squared(eta.positions[:, j], translated.positions[:, j]))
    return wasserstein_sq(eta.marginal_at_index(j), translated.marginal_at_index(j))


def cmd_translate(args) -> int:
    from .curves import translate

    eta, gamma0 = load_ensemble(args.eta), load_coupling(args.gamma0)
    pair, translated = translate(eta, gamma0)
    grid = np.asarray(eta.grid, dtype=float)
    dist = [_translated_w2_sq(eta, translated, j) for j in range(len(grid))]
    csv = "t,W2_sq\n" + "".join(f"{fmt_float(t)},{fmt_float(d)}\n" for t, d in zip(grid, dist))
    sys.stdout.write(csv)
    out = Outputs(args.out)
    out.add("distance.csv", csv)
    out.add("translated.json", dumps(translated.to_dict()) + "\n")
    out.add("translated.csv", translated.to_csv())
    out.add("coupling_curve.json", dumps(pair.to_dict()) + "\n")
    if args.svg:
        out.add("distance.svg", svg_line_chart(grid, dist, "t", "W2^2"))
    out.flush()
    return EXIT_OK


FUNCTIONALS = ("linear-quadratic", "interaction-quadratic")


def cmd_holder(args) -> int:
    from .regularity import (CouplingSampler, half_square_interaction, half_square_potential,
                             regularity_report)

    U = half_square_potential() if args.functional == "linear-quadratic" else half_square_interaction()
    alphas = args.alpha
    for a in alphas:
        if not 0 < a <= 1:
            raise ValidationError(f"--alpha {a}: must lie in (0, 1]")
    sampler = CouplingSampler(seed=args.seed, dim=args.dim)
    reports = [regularity_report(U, sampler, a, args.budget, resolve_threads(args.threads)) for a in alphas]
    for r in reports:
        print(f"alpha={fmt_float(r['alpha'])} I_est={fmt_float(r['I_est'])} J_est={fmt_float(r['J_est'])}")
    out = Outputs(args.out)
    body = reports[0] if len(reports) == 1 else {"functional": args.functional, "reports": reports}
    out.add("holder.json", dumps(body) + "\n")
    if args.svg and len(alphas) > 1:
        out.add("holder.svg", svg_line_chart(alphas, [r["I_est"] for r in reports], "alpha", "I estimate"))
    out.flush()
    return EXIT_OK


def cmd_control(args) -> int:
    from .control import (ControlProblem, lq_problem, solve_value, split_target_problem,
                          theorem_problem)

    if args.problem is not None:
        P = ControlProblem.from_dict(load_json(args.problem), args.problem)
    else:
        P = {"theorem": theorem_problem, "split-target": split_target_problem, "lq": lq_problem}[args.instance]()
    m0 = load_measure(args.m0) if args.m0 is not None else DiscreteMeasure.dirac(np.zeros(1))
    res = solve_value(P, m0, args.mode, args.budget, branches=args.branches, seed=args.seed,
                      threads=resolve_threads(args.threads))
    print(fmt_float(res.value))
    out = Outputs(args.out)
    out.add("control.json", dumps({"value": res.value, "upper_bound": True, "mode": args.mode,
                                   "converged": res.converged, "best_start": res.best_start,
                                   "start_values": list(res.start_values),
                                   "kinetic_action": res.kinetic_action,
                                   "problem": P.to_dict()}) + "\n")
    out.add("ensemble.json", dumps(res.ensemble.ensemble.to_dict()) + "\n")
    out.flush()
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory (nothing is written if omitted)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $WTAN_THREADS or 1)")
    common.add_argument("--svg", action="store_true", help="also write an SVG line chart")

    p = argparse.ArgumentParser(prog="wtan", description="Tangent elements, parallel transport and "
                                "mean-field control on discrete measures.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("repro", parents=[common], help="rebuild a worked example and check it")
    s.add_argument("example", help="example id or 'all'")
    s.set_defaults(func=cmd_repro)

    s = sub.add_parser("ot", parents=[common], help="exact optimal transport between two measures")
    s.add_argument("source")
    s.add_argument("target")
    s.add_argument("--p", type=float, default=2.0)
    s.set_defaults(func=cmd_ot)

    for name, func, helptext in (("tangent-dist", cmd_tangent_dist, "fiberwise distance d_mu"),
                                 ("calc-D", cmd_calc_d, "W_2 distance between joint laws"),
                                 ("calc-E", cmd_calc_e, "transport-based comparison")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("phi")
        s.add_argument("psi")
        if name == "calc-E":
            s.add_argument("--sup", action="store_true", help="maximise instead of minimise")
            s.add_argument("--tol-geo", type=float, default=None,
                           help="slack on the geodesic constraint (default 1e-7 (1 + W_2^2))")
        s.set_defaults(func=func)

    s = sub.add_parser("ptransport", parents=[common], help="parallel transport along a coupling")
    s.add_argument("psi")
    s.add_argument("gamma")
    s.add_argument("--enumerate", action="store_true", help="list vertex transports")
    s.add_argument("--limit", type=int, default=1000)
    s.add_argument("--steps", type=int, default=10)
    s.set_defaults(func=cmd_ptransport)

    s = sub.add_parser("translate", parents=[common], help="translate a path ensemble along a coupling")
    s.add_argument("eta")
    s.add_argument("gamma0")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("holder", parents=[common], help="sampled Hoelder seminorm estimates")
    s.add_argument("--functional", choices=FUNCTIONALS, default="linear-quadratic")
    s.add_argument("--alpha", type=float, nargs="+", default=[1.0])
    s.add_argument("--budget", type=int, default=200)
    s.add_argument("--dim", type=int, default=1)
    s.set_defaults(func=cmd_holder)

    s = sub.add_parser("control", parents=[common], help="particle mean-field control value")
    s.add_argument("problem", nargs="?", default=None, help="problem JSON")
    s.add_argument("--instance", choices=("theorem", "split-target", "lq"), default="theorem")
    s.add_argument("--m0", default=None, help="initial measure JSON (default delta_0)")
    s.add_argument("--mode", choices=("deterministic", "randomized"), default="randomized")
    s.add_argument("--budget", type=int, default=8)
    s.add_argument("--branches", type=int, default=4)
    s.set_defaults(func=cmd_control)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SolverFailure, TooLarge) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValidationError, WtanError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
