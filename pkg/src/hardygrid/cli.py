"""Command line front end.

Subcommands: ``decompose``, ``norms``, ``whitney``, ``maximal``,
``operator-check``, ``meyer``.  Every artifact embeds the full
configuration and seed, outputs are deterministic given (config, seed),
and exit codes follow a CI-friendly contract:

    0  success, all invariants pass
    2  input parse error
    3  precondition failure (zero input, nonzero mean, missing margin)
    4  invariant failure (the report is still written)
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from hardygrid import atomic, grid, maximal, norms, operators, whitney
from hardygrid.grid import GridError, GridFunction

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_PRECONDITION = 3
EXIT_INVARIANT = 4


class _Precondition(Exception):
    pass


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_sanitize(payload), fh, sort_keys=True, indent=1, default=_json_default)
        fh.write("\n")


def _config_of(args: argparse.Namespace) -> dict:
    # out_dir names the destination, not the computation: leaving it out
    # keeps artifacts byte-identical for identical (config, seed)
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out_dir")}
    return _sanitize(cfg)


def _load_input(path: str) -> GridFunction:
    try:
        return grid.load_grid_function(path)
    except (OSError, GridError) as exc:
        raise _ParseError(str(exc)) from exc


class _ParseError(Exception):
    pass


def _parse_q(text: str) -> float:
    if text in ("inf", "Inf", "INF", "oo"):
        return math.inf
    q = float(text)
    return q


def _family_for(args, spec) -> maximal.TestFamily:
    if args.family and args.family != "auto":
        try:
            with open(args.family, "r", encoding="utf-8") as fh:
                return maximal.TestFamily.from_obj(json.load(fh))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise _ParseError(f"bad family file: {exc}") from exc
    r_max = args.r_max if getattr(args, "r_max", None) else 0.25 * spec.box_side
    return maximal.build_family(spec.n, spec.h, r_max)


def _ensure_outdir(args) -> str:
    out = args.out_dir or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_decompose(args) -> int:
    f = _load_input(args.input)
    if f.is_zero:
        print("precondition failure: zero input is not decomposable", file=sys.stderr)
        return EXIT_PRECONDITION
    if abs(grid.integrate(f)) > 1e-10 * grid.lq_norm(f, 1):
        print("precondition failure: input mean is not zero", file=sys.stderr)
        return EXIT_PRECONDITION
    family = _family_for(args, f.spec)
    out = _ensure_outdir(args)
    q = _parse_q(args.q)
    try:
        fd = atomic.finite_decomposition(f, q, args.eps, family, eta=args.eta)
    except maximal.MarginError as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    d = fd.decomposition
    report = atomic.verify_decomposition(d)
    report["finite_total_cost"] = fd.total_cost
    report["finite_reconstruction_l1_rel"] = fd.reconstruction_l1_rel
    report["finite_pairs"] = len(fd.pairs)
    report["mode"] = fd.mode

    atoms_dir = os.path.join(out, "atoms")
    os.makedirs(atoms_dir, exist_ok=True)
    term_entries = []
    for i, t in enumerate(d.terms):
        ref = os.path.join("atoms", f"term_{i:04d}.json")
        grid.save_grid_function(t.atom, os.path.join(out, ref))
        term_entries.append(
            {
                "k": t.k,
                "i": t.i,
                "lambda": t.lam,
                "atom_file": ref,
                "ball_center": list(t.ball.center),
                "ball_radius": t.ball.radius,
                "dep_ball_radius": t.dep_ball.radius,
                "is_bottom": t.is_bottom,
            }
        )
    payload = {
        "config": _config_of(args),
        "k_prime": d.k_prime,
        "k_prime_effective": d.k_prime_effective,
        "k_double_prime": d.k_double_prime,
        "constants": d.constants,
        "terms": term_entries,
    }
    _write_json(os.path.join(out, "decomposition.json"), payload)
    _write_json(os.path.join(out, "report.json"), {"config": _config_of(args), **report})
    ok = report["all_ok"] and fd.reconstruction_l1_rel <= atomic.RECONSTRUCTION_TOL
    print(json.dumps(_sanitize({"all_ok": ok, "cost": fd.total_cost}), sort_keys=True))
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_norms(args) -> int:
    f = _load_input(args.input)
    family = _family_for(args, f.spec)
    q = _parse_q(args.q)
    spec = f.spec
    dictionary = norms.build_dictionary(
        spec, q, max_level=args.dict_level, base_cube=_base_cube_for(f), include_pairs=True
    )
    h1 = norms.h1_proxy_norm(f, family)
    try:
        lp = norms.finite_atomic_norm_lp(f, dictionary)
    except norms.DictionarySpanError as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    ratio = lp.value / h1 if h1 > 0 else math.inf
    payload = {
        "config": _config_of(args),
        "h1_proxy": h1,
        "lp_value": lp.value,
        "lp_value_note": "dictionary-relative upper bound for the atomic norm",
        "ratio": ratio,
        "duality_gap": lp.duality_gap,
    }
    print(json.dumps(_sanitize(payload), sort_keys=True))
    if args.out_dir:
        _write_json(os.path.join(_ensure_outdir(args), "norms.json"), payload)
    if args.band_low is not None and args.band_high is not None:
        if not (args.band_low <= ratio <= args.band_high):
            return EXIT_INVARIANT
    return EXIT_OK


def _base_cube_for(f: GridFunction):
    """Smallest dyadic cube containing the support (keeps the LP small)."""
    mask = f.support_mask()
    if not mask.any():
        return grid.DyadicCube(0, (0,) * f.spec.n)
    idx = np.argwhere(mask)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    side = f.spec.cells_per_side
    while side > 1:
        half = side // 2
        if all(l // half == h // half for l, h in zip(lo, hi)):
            side = half
        else:
            break
    level = (f.spec.cells_per_side // side).bit_length() - 1
    return grid.DyadicCube(level, tuple(int(l // side) for l in lo))


def cmd_whitney(args) -> int:
    f = _load_input(args.omega)
    omega = f.values != 0.0
    try:
        cover = whitney.whitney_decompose(f.spec, omega, args.eta)
        report = cover.verify()
    except whitney.WhitneyError as exc:
        print(f"whitney failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except GridError as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    balls = whitney.expanded_balls(cover, args.factor)
    report["overlap_factor{}".format(args.factor)] = whitney.overlap_count(f.spec, balls)
    report["containment_violations"] = len(
        whitney.containment_violations(f.spec, omega, balls)
    )
    out = _ensure_outdir(args)
    payload = {"config": _config_of(args), **cover.to_obj()}
    _write_json(os.path.join(out, "cover.json"), payload)
    _write_json(os.path.join(out, "whitney_report.json"), {"config": _config_of(args), **report})
    print(json.dumps(_sanitize(report), sort_keys=True))
    return EXIT_OK


def cmd_maximal(args) -> int:
    f = _load_input(args.input)
    if f.is_zero:
        print("precondition failure: zero input", file=sys.stderr)
        return EXIT_PRECONDITION
    family = _family_for(args, f.spec)
    mf = maximal.grand_maximal(f, family)
    hl = maximal.hl_maximal(f)
    out = _ensure_outdir(args)
    grid.save_grid_function(mf, os.path.join(out, "grand_maximal.json"))
    grid.save_grid_function(hl, os.path.join(out, "hl_maximal.json"))
    payload = {"config": _config_of(args), "family": family.to_obj()}
    try:
        decay = maximal.decay_certificate(f, family, mf=mf)
        payload.update(
            {
                "max_ratio": decay.max_ratio,
                "k_prime": decay.k_prime,
                "passed": decay.passed,
            }
        )
        code = EXIT_OK if decay.passed else EXIT_INVARIANT
    except maximal.MarginError as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    _write_json(os.path.join(out, "maximal_report.json"), payload)
    print(json.dumps(_sanitize({k: payload[k] for k in ("max_ratio", "k_prime", "passed")}), sort_keys=True))
    return code


def _load_operator(args, spec) -> operators.OperatorSpec:
    if args.op == "identity":
        return operators.identity_operator(spec)
    if args.op == "hilbert":
        return operators.hilbert_kernel(spec)
    try:
        with open(args.op, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("kind") == "dense":
            return operators.OperatorSpec.dense(np.array(obj["matrix"], dtype=float), spec.n)
        kernel = np.array([float.fromhex(v) if isinstance(v, str) else float(v) for v in obj["values"]])
        h = float.fromhex(obj["h"]) if isinstance(obj["h"], str) else float(obj["h"])
        return operators.OperatorSpec.convolution(kernel, h, spec.n)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise _ParseError(f"bad operator file: {exc}") from exc


def cmd_operator_check(args) -> int:
    f = _load_input(args.input)
    spec = f.spec
    op = _load_operator(args, spec)
    family = _family_for(args, spec)
    q = _parse_q(args.q)
    dictionary = norms.build_dictionary(
        spec, q if not math.isinf(q) else 2.0, max_level=args.dict_level,
        base_cube=_base_cube_for(f), include_pairs=False,
    )
    sup = operators.atom_supremum(op, dictionary, extra_samples=args.samples, seed=args.seed)
    a_cert = operators.certified_atom_bound_q2(op, spec)
    ones = GridFunction(spec, np.where(f.values >= 0, 1.0, -1.0))
    bmo_rep = operators.bmo_dual_check(op, ones, a_cert)
    try:
        cons = operators.consistency_check(op, f, family, q=2.0, eps=args.eps, a_est=sup["a_est"])
    except (atomic.DecompositionError, maximal.MarginError) as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    payload = {
        "config": _config_of(args),
        "a_est": sup["a_est"],
        "a_certified_q2": a_cert,
        "bound_chain": cons["chain"],
        "bmo_ratio": bmo_rep["ratio_vs_2a"],
        "bmo_ok": bmo_rep["ok"],
        "consistency": {k: cons[k] for k in ("diff_l1", "bound", "ok")},
    }
    out = _ensure_outdir(args)
    _write_json(os.path.join(out, "operator_report.json"), payload)
    print(json.dumps(_sanitize({"a_est": sup["a_est"], "bmo_ok": bmo_rep["ok"], "consistency_ok": cons["ok"]}), sort_keys=True))
    return EXIT_OK if (bmo_rep["ok"] and cons["ok"]) else EXIT_INVARIANT


def cmd_meyer(args) -> int:
    rows = operators.meyer_ratio_experiment(cells=args.cells, jmax=args.jmax, seed=args.seed)
    out = _ensure_outdir(args)
    path = os.path.join(out, "meyer.csv")
    cols = ["j", "rho_inf_step", "rho_inf_mollified", "rho_2_step"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# config " + json.dumps(_config_of(args), sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    for row in rows:
        print(",".join(str(row[c]) for c in cols))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hardygrid",
        description="Atomic decompositions and atomic norms on uniform dyadic grids.",
    )
    p.add_argument("--seed", type=int, default=0, help="seed recorded in every artifact")
    p.add_argument("--out-dir", default=None, help="directory for output artifacts")
    p.add_argument("--family", default="auto", help="test family JSON file, or 'auto'")
    p.add_argument("--config", default=None, help="JSON file with extra recorded settings")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decompose", help="finite atomic decomposition of an input function")
    d.add_argument("--input", required=True)
    d.add_argument("--q", default="2", help="atom exponent (float or 'inf')")
    d.add_argument("--eps", type=float, default=1e-3)
    d.add_argument("--eta", type=float, default=0.125)
    d.set_defaults(func=cmd_decompose)

    n = sub.add_parser("norms", help="H1 proxy and dictionary-relative atomic norm")
    n.add_argument("--input", required=True)
    n.add_argument("--q", default="2")
    n.add_argument("--dict-level", type=int, default=None)
    n.add_argument("--band-low", type=float, default=None)
    n.add_argument("--band-high", type=float, default=None)
    n.set_defaults(func=cmd_norms)

    w = sub.add_parser("whitney", help="Whitney cover of a cell mask")
    w.add_argument("--omega", required=True, help="mask file (grid function, nonzero = in)")
    w.add_argument("--eta", type=float, default=0.125)
    w.add_argument("--factor", type=float, default=2.0)
    w.set_defaults(func=cmd_whitney)

    m = sub.add_parser("maximal", help="grand maximal function and decay certificate")
    m.add_argument("--input", required=True)
    m.add_argument("--r-max", type=float, default=None)
    m.set_defaults(func=cmd_maximal)

    o = sub.add_parser("operator-check", help="atom bounds, BMO duality and consistency")
    o.add_argument("--op", required=True, help="'identity', 'hilbert', or an operator file")
    o.add_argument("--input", required=True, help="probe function for the consistency check")
    o.add_argument("--q", default="2")
    o.add_argument("--dict-level", type=int, default=None)
    o.add_argument("--samples", type=int, default=100)
    o.add_argument("--eps", type=float, default=1e-3)
    o.set_defaults(func=cmd_operator_check)

    y = sub.add_parser("meyer", help="step-family norm-ratio experiment (CSV)")
    y.add_argument("--jmax", type=int, default=4)
    y.add_argument("--cells", type=int, default=1024)
    y.set_defaults(func=cmd_meyer)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (atomic.DecompositionError, maximal.MarginError) as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except GridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
