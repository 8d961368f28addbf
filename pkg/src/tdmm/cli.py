"""Command line front end.

Subcommands: h2norm, reduce, validate, sweep, export-sdp.  All file
formats are JSON (systems, models, reports) or plain text (CSV, SDPA).
Exit codes: 0 success, 1 domain error, 2 I/O or parse error, 3 finished
without convergence (output files are still written).
"""

import argparse
import json
import re
import sys
import time

import numpy as np

from .errors import (
    DimensionMismatch,
    InfeasiblePoint,
    IoFailure,
    LineSearchStalled,
    SpectraOverlap,
    TdmmError,
)
from .lti import (
    TWO_PI,
    LtiSystem,
    build_error_system,
    error_system_as_lti,
    h2_norm,
)
from .mateq import observability_rank, spectrum
from .moments import (
    InterpolationData,
    ReducedModel,
    build_interpolation,
    check_interpolation,
    moments_right,
    sylvester_pi,
)
from .optimize import (
    DecisionVars,
    FixedStructure,
    OptimizerConfig,
    _single_run,
    exact_kkt_residual,
    gradient_f,
    init_pole_placement,
    is_feasible,
    multi_start_p1,
    objective_f,
)
from .sdp import build_relaxation, export_sdpa, recover, solve_small


def _read_json(path):
    try:
        with open(path, "r") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure("cannot read %s: %s" % (path, exc))


def _write_json(path, obj):
    try:
        with open(path, "w") as fh:
            fh.write(json.dumps(obj, sort_keys=True, indent=2))
            fh.write("\n")
    except OSError as exc:
        raise IoFailure("cannot write %s: %s" % (path, exc))


def _write_text(path, text):
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure("cannot write %s: %s" % (path, exc))


def load_system(path):
    obj = _read_json(path)
    missing = [k for k in ("A", "B", "C") if k not in obj]
    if missing:
        raise IoFailure("system file %s lacks fields: %s"
                        % (path, ", ".join(missing)))
    try:
        sys_ = LtiSystem(obj["A"], obj["B"], obj["C"])
    except TdmmError as exc:
        raise IoFailure("invalid system file %s: %s" % (path, exc))
    for key, val in (("n", sys_.n), ("m", sys_.m), ("p", sys_.p)):
        if key in obj and int(obj[key]) != val:
            raise IoFailure("system file %s declares %s=%s but arrays give %d"
                            % (path, key, obj[key], val))
    return sys_


def load_model(path):
    obj = _read_json(path)
    missing = [k for k in ("F", "G", "H") if k not in obj]
    if missing:
        raise IoFailure("model file %s lacks fields: %s"
                        % (path, ", ".join(missing)))
    prov = obj.get("provenance") or {}
    return ReducedModel(np.asarray(obj["F"], dtype=float),
                        np.asarray(obj["G"], dtype=float),
                        np.asarray(obj["H"], dtype=float),
                        dict(prov))


def parse_points(text):
    """Comma list of interpolation points.

    Repeated values raise the Jordan multiplicity; complex entries use the
    "a+bj" form and must appear together with their conjugates.  Returns
    (points, multiplicities) with one entry per distinct value.
    """
    tokens = [tok.strip() for tok in text.split(",") if tok.strip()]
    if not tokens:
        raise DimensionMismatch("empty point list")
    vals = []
    for tok in tokens:
        try:
            vals.append(complex(tok.replace(" ", "")))
        except ValueError:
            raise DimensionMismatch("cannot parse point %r" % tok)
    points, mults = [], []
    for v in vals:
        for i, p in enumerate(points):
            if p == v:
                mults[i] += 1
                break
        else:
            points.append(v)
            mults.append(1)
    for v in points:
        if v.imag != 0.0 and complex(v.real, -v.imag) not in points:
            raise DimensionMismatch(
                "complex point %s lacks its conjugate partner" % v)
        if v.imag != 0.0:
            k = points.index(complex(v.real, -v.imag))
            if mults[k] != mults[points.index(v)]:
                raise DimensionMismatch(
                    "conjugate multiplicities differ at %s" % v)
    return points, mults


def _group_order(points):
    """Distinct interpolation groups in first-occurrence order."""
    groups = []
    seen = set()
    for v in points:
        key = (v.real, abs(v.imag))
        if key not in seen:
            seen.add(key)
            groups.append(key)
    return groups


def parse_tangents(text, m, points):
    """One tangent per point group; ';' separates groups when m > 1."""
    groups = _group_order(points)
    if m == 1:
        parts = [p for p in text.split(",") if p.strip()]
    else:
        parts = [p for p in text.split(";") if p.strip()]
    if len(parts) != len(groups):
        raise DimensionMismatch("expected %d tangent(s), got %d"
                                % (len(groups), len(parts)))
    per_group = {}
    for key, part in zip(groups, parts):
        vec = np.array([float(tok) for tok in part.split(",")], dtype=float)
        if vec.size != m:
            raise DimensionMismatch("tangent %r must have %d entries"
                                    % (part, m))
        per_group[key] = vec
    return [per_group[(v.real, abs(v.imag))] for v in points]


def _pairs(values):
    out = []
    arr = np.asarray(values)
    if arr.ndim == 2 and arr.shape[1] == 2 and not np.iscomplexobj(arr):
        out = [[float(re), float(im)] for re, im in arr]
    else:
        for v in np.atleast_1d(arr):
            c = complex(v)
            out.append([float(c.real), float(c.imag)])
    return sorted(out)


def _mat(M):
    return np.asarray(M, dtype=float).tolist()


def cmd_h2norm(args):
    sys_ = load_system(args.system)
    print("%.12g" % h2_norm(sys_))
    return 0


def _parse_step(text):
    if text == "armijo":
        return "armijo", None
    m = re.fullmatch(r"fixed:([0-9.eE+-]+)", text)
    if not m:
        raise DimensionMismatch("--step must be armijo or fixed:ALPHA")
    return "fixed", float(m.group(1))


def _make_config(args, method):
    step, alpha = _parse_step(args.step)
    cfg = OptimizerConfig(method="kkt" if method == "kkt" else "pm",
                          step=step,
                          mode="refresh_cv" if args.mode == "refresh"
                          else "frozen_cv",
                          max_iters=args.max_iters,
                          seed=args.seed,
                          restarts=args.restarts,
                          positivity=args.positive)
    if alpha is not None:
        cfg.alpha = alpha
    if args.tol is not None:
        cfg.tol_grad = args.tol
        cfg.tol_kkt = args.tol
    return cfg


def _interpolation_from_args(args, sys_):
    """(data or None, nu) from --points/--order."""
    if args.points:
        pts, mults = parse_points(args.points)
        tangents = (parse_tangents(args.tangents, sys_.m, pts)
                    if args.tangents else None)
        data = build_interpolation(pts, mults, tangents, sys_.m)
        nu = data.S.shape[0]
        if args.order is not None and args.order != nu:
            raise DimensionMismatch(
                "--order %d contradicts %d point(s)" % (args.order, nu))
        return data, nu
    nu = args.order if args.order is not None else 2
    if nu <= 0:
        raise DimensionMismatch("--order must be a positive integer")
    return None, nu


def _model_from_vars(sys_, vars_, fs, mode):
    S, G = vars_.split(fs)
    H = fs.C_V
    Pi = None
    try:
        Pi = sylvester_pi(sys_, InterpolationData(S, fs.L))
        if mode == "refresh" and vars_.variant == "P1":
            H = sys_.C @ Pi
    except SpectraOverlap:
        Pi = None
    F = S - G @ fs.L
    prov = {"S": S, "L": fs.L, "Pi": Pi,
            "points": np.linalg.eigvals(S), "mode": mode}
    return ReducedModel(F, G, np.atleast_2d(H), prov)


def _model_payload(model):
    prov = model.provenance
    payload = {
        "F": _mat(model.F),
        "G": _mat(model.G),
        "H": _mat(model.H),
        "provenance": {
            "S": _mat(prov["S"]),
            "L": _mat(prov["L"]),
            "Pi": None if prov.get("Pi") is None else _mat(prov["Pi"]),
            "points": _pairs(prov["points"]),
            "mode": prov["mode"],
        },
    }
    return payload


def _constraint_checks(sys_, model):
    S = np.asarray(model.provenance["S"], dtype=float)
    L = np.asarray(model.provenance["L"], dtype=float)
    evS = np.linalg.eigvals(S)
    evA = np.linalg.eigvals(sys_.A)
    evF = np.linalg.eigvals(model.F)
    scale = max(1.0, float(np.abs(evA).max()), float(np.abs(evS).max()))
    gap_A = float(np.abs(evS[:, None] - evA[None, :]).min())
    gap_F = float(np.abs(evS[:, None] - evF[None, :]).min())
    return {
        "sigma_S_disjoint_A": bool(gap_A > 1e-8 * scale),
        "sigma_S_disjoint_F": bool(gap_F > 1e-8 * scale),
        "observable": bool(observability_rank(L, S) == S.shape[0]),
    }


def _residual_entries(sys_, model):
    data = InterpolationData(model.provenance["S"], model.provenance["L"])
    result = check_interpolation(sys_, model, data)
    entries = [{"point": [e["point"].real, e["point"].imag],
                "order": e["order"], "residual": e["residual"]}
               for e in result["residuals"]]
    return entries, result


def cmd_reduce(args):
    t0 = time.perf_counter()
    sys_ = load_system(args.system)
    rep = spectrum(sys_.A)
    if not rep.is_stable:
        raise InfeasiblePoint("system matrix A is not Hurwitz")
    data, nu = _interpolation_from_args(args, sys_)
    if args.problem == 2 and data is None:
        raise DimensionMismatch("--problem 2 requires --points")
    if nu >= sys_.n:
        raise DimensionMismatch("reduced order %d must be below n=%d"
                                % (nu, sys_.n))
    cfg = _make_config(args, args.method)
    targets = [-(k + 1) for k in range(nu)]

    iterations = 0
    converged = True
    seed = args.seed
    history = []
    if args.method == "sdp":
        if data is None:
            from .optimize import init_random_unstable_S
            S0 = init_random_unstable_S(nu, args.seed)
            data = InterpolationData(S0, np.ones((sys_.m, nu)))
        C_V = moments_right(sys_, data).value
        prob = build_relaxation(sys_, data.L, C_V,
                                S=data.S if args.problem == 2 else None,
                                positivity=args.positive)
        sol = solve_small(prob)
        rec = recover(prob, sol)
        fs = FixedStructure(data.L, C_V, sys_)
        vars_ = DecisionVars("P2", G=rec.G, S=rec.S)
        iterations = sol.newton_iters
        converged = rec.stable
        model = _model_from_vars(sys_, vars_, fs, "frozen")
    elif args.problem == 2:
        C_V = moments_right(sys_, data).value
        fs = FixedStructure(data.L, C_V, sys_)
        # geometric default gain; fall back to placement when it is not a
        # stable start for this data
        G0 = np.repeat(2.0 ** -np.arange(nu)[:, None], sys_.m, axis=1)
        vars0 = DecisionVars("P2", G=G0, S=data.S.copy())
        if not is_feasible(vars0, fs):
            vars0 = init_pole_placement(data, targets, "P2")
        try:
            vars_, history, fs, converged, _ = _single_run(vars0, fs, cfg)
        except LineSearchStalled as exc:
            vars_, history, converged = exc.vars, exc.history, False
        iterations = len(history)
        model = _model_from_vars(sys_, vars_, fs, "frozen")
    else:
        best, _all = multi_start_p1(sys_, nu, cfg, targets=targets,
                                    S_seed=None if data is None else data.S)
        vars_, fs = best.vars, best.fs
        history = best.history
        iterations = len(best.history)
        converged = best.converged
        seed = best.seed
        model = _model_from_vars(sys_, vars_, fs, args.mode)

    _write_json(args.out, _model_payload(model))
    written = load_model(args.out)

    stable = spectrum(written.F).spectral_abscissa < 0.0
    absc = float(spectrum(written.F).spectral_abscissa)
    h2_err = None
    grad_norm = None
    kkt_res = None
    if stable:
        err = error_system_as_lti(build_error_system(sys_, written))
        h2_err = float(h2_norm(err))
        grad_norm = float(np.linalg.norm(gradient_f(vars_, fs)))
        kkt_res = [float(r) for r in exact_kkt_residual(vars_, fs)]
    entries, _check = _residual_entries(sys_, written)
    checks = _constraint_checks(sys_, written)

    report = {
        "h2_error": h2_err,
        "h2_error_squared": None if h2_err is None else h2_err ** 2,
        "iterations": int(iterations),
        "final_gradient_norm": grad_norm,
        "kkt_residuals": kkt_res,
        "interpolation_points": _pairs(written.provenance["points"]),
        "interpolation_residuals": entries,
        "stable": bool(stable),
        "spectral_abscissa": absc,
        "constraint_checks": checks,
        "timing_ms": (time.perf_counter() - t0) * 1000.0,
        "seed": int(seed),
        "method": args.method,
        "mode": args.mode,
    }
    _write_json(args.report, report)
    if args.plot is not None:
        path = args.plot or re.sub(r"\.json$", "", args.report) + ".png"
        _render_reduce_plot(path, history, sys_, written)
    ok = bool(converged and stable and all(checks.values()))
    return 0 if ok else 3


def cmd_validate(args):
    sys_ = load_system(args.system)
    model = load_model(args.model)
    prov = model.provenance
    if "S" in prov and "L" in prov:
        prov["S"] = np.asarray(prov["S"], dtype=float)
        prov["L"] = np.asarray(prov["L"], dtype=float)
    elif "points" in prov:
        pts = [complex(re_, im_) for re_, im_ in prov["points"]]
        merged, mults = [], []
        for v in pts:
            if v in merged:
                mults[merged.index(v)] += 1
            else:
                merged.append(v)
                mults.append(1)
        data = build_interpolation(merged, mults, None, sys_.m)
        prov["S"], prov["L"] = data.S, data.L
    else:
        raise IoFailure("model file %s has no provenance (S, L) or points"
                        % args.model)
    model.provenance = prov
    entries, result = _residual_entries(sys_, model)
    for e in entries:
        print("point %+.6g%+.6gj order %d residual %.6e"
              % (e["point"][0], e["point"][1], e["order"], e["residual"]))
    rep = spectrum(model.F)
    checks = _constraint_checks(sys_, model)
    res_ok = result["max_residual"] <= args.tol
    print("max residual %.6e (tol %.1e)" % (result["max_residual"], args.tol))
    print("stable: %s (spectral abscissa %.6g)"
          % (str(rep.is_stable).lower(), rep.spectral_abscissa))
    print("sigma(S) disjoint from sigma(F): %s"
          % str(checks["sigma_S_disjoint_F"]).lower())
    ok = res_ok and rep.is_stable and checks["sigma_S_disjoint_F"]
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _sweep_points(strategy, nu):
    kind, _, arg = strategy.partition(":")
    if kind == "dense":
        h = float(arg)
        return [k * h for k in range(nu)]
    if kind == "rare":
        h = float(arg)
        return [k * 10.0 * h for k in range(nu)]
    if kind == "list":
        obj = _read_json(arg)
        pts = []
        for v in obj:
            pts.append(complex(v[0], v[1]) if isinstance(v, list)
                       else complex(v))
        if len(pts) < nu:
            raise DimensionMismatch("point file %s has %d entries, need %d"
                                    % (arg, len(pts), nu))
        return pts[:nu]
    raise DimensionMismatch("unknown strategy %r" % strategy)


def cmd_sweep(args):
    sys_ = load_system(args.system)
    m = re.fullmatch(r"(\d+)\.\.(\d+)", args.orders)
    if not m:
        raise DimensionMismatch("--orders must look like A..B")
    lo, hi = int(m.group(1)), int(m.group(2))
    if lo < 1 or hi >= sys_.n or lo > hi:
        raise DimensionMismatch("orders %d..%d not within [1, %d]"
                                % (lo, hi, sys_.n - 1))
    strategies = args.points_strategy or ["dense:0.2", "rare:0.2"]
    cfg = _make_config(args, args.method)
    rows = ["nu,strategy,h2_error,iterations,converged,stable"]
    curves = {}
    for nu in range(lo, hi + 1):
        for strat in strategies:
            pts = _sweep_points(strat, nu)
            merged, mults = [], []
            for v in pts:
                if v in merged:
                    mults[merged.index(v)] += 1
                else:
                    merged.append(v)
                    mults.append(1)
            try:
                data = build_interpolation(merged, mults, None, sys_.m)
                C_V = moments_right(sys_, data).value
                fs = FixedStructure(data.L, C_V, sys_)
                targets = [-(k + 1) for k in range(nu)]
                vars0 = init_pole_placement(data, targets, "P2")
                if args.method == "sdp":
                    prob = build_relaxation(sys_, data.L, C_V, S=data.S)
                    sol = solve_small(prob)
                    rec = recover(prob, sol)
                    stable = rec.stable
                    f_fin = rec.f_recovered if stable else float("nan")
                    iters, conv = sol.newton_iters, True
                else:
                    try:
                        vars_, hist, fs, conv, _ = _single_run(vars0, fs, cfg)
                    except LineSearchStalled as exc:
                        vars_, hist, conv = exc.vars, exc.history, False
                    iters = len(hist)
                    stable = spectrum(vars_.closed_loop(fs)).is_stable
                    f_fin = objective_f(vars_, fs) if stable else float("nan")
                h2e = float(np.sqrt(TWO_PI * f_fin)) if np.isfinite(f_fin) \
                    else float("nan")
            except TdmmError:
                h2e, iters, conv, stable = float("nan"), 0, False, False
            rows.append("%d,%s,%.12g,%d,%s,%s"
                        % (nu, strat, h2e, iters,
                           str(bool(conv)).lower(), str(bool(stable)).lower()))
            curves.setdefault(strat, []).append((nu, h2e))
    _write_text(args.out, "\n".join(rows) + "\n")
    if args.plot is not None:
        path = args.plot or re.sub(r"\.csv$", "", args.out) + ".png"
        _render_sweep_plot(path, curves)
    return 0


def cmd_export_sdp(args):
    sys_ = load_system(args.system)
    data, nu = _interpolation_from_args(args, sys_)
    if data is None:
        from .optimize import init_random_unstable_S
        S0 = init_random_unstable_S(nu, args.seed)
        data = InterpolationData(S0, np.ones((sys_.m, nu)))
    C_V = moments_right(sys_, data).value
    prob = build_relaxation(sys_, data.L, C_V,
                            S=data.S if args.problem == 2 else None,
                            positivity=args.positive)
    _write_text(args.out, export_sdpa(prob))
    return 0


def _render_reduce_plot(path, history, sys_, model):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    good = [(h.iteration, h.f) for h in history if np.isfinite(h.f)]
    if good:
        axes[0].semilogy([g[0] for g in good],
                         [max(g[1], 1e-300) for g in good])
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("objective")
    axes[0].set_title("descent history")
    evA = np.linalg.eigvals(sys_.A)
    evF = np.linalg.eigvals(np.asarray(model.F, dtype=float))
    axes[1].scatter(evA.real, evA.imag, marker="x", label="full")
    axes[1].scatter(evF.real, evF.imag, marker="o", label="reduced")
    axes[1].axvline(0.0, color="k", lw=0.5)
    axes[1].set_xlabel("Re")
    axes[1].set_ylabel("Im")
    axes[1].set_title("poles")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _render_sweep_plot(path, curves):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for strat, pts in sorted(curves.items()):
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.semilogy(xs, ys, marker="o", label=strat)
    ax.set_xlabel("reduced order")
    ax.set_ylabel("h2 error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def build_parser():
    p = argparse.ArgumentParser(
        prog="tdmm",
        description="Model order reduction by time-domain moment matching.")
    sub = p.add_subparsers(dest="command", required=True)

    h2 = sub.add_parser("h2norm", help="print the H2 norm of a system file")
    h2.add_argument("--system", required=True)
    h2.set_defaults(func=cmd_h2norm)

    red = sub.add_parser("reduce", help="compute a reduced order model")
    red.add_argument("--system", required=True)
    red.add_argument("--order", type=int, default=None)
    red.add_argument("--problem", type=int, choices=(1, 2), default=1)
    red.add_argument("--method", choices=("kkt", "grad", "sdp"),
                     default="grad")
    red.add_argument("--points", default=None,
                     help="comma list; repeats raise Jordan multiplicity")
    red.add_argument("--tangents", default=None,
                     help="one tangent per point group (default all ones)")
    red.add_argument("--mode", choices=("frozen", "refresh"),
                     default="refresh")
    red.add_argument("--max-iters", type=int, default=5000)
    red.add_argument("--tol", type=float, default=None)
    red.add_argument("--step", default="armijo",
                     help="armijo or fixed:ALPHA")
    red.add_argument("--seed", type=int, default=0)
    red.add_argument("--restarts", type=int, default=1)
    red.add_argument("--positive", action="store_true")
    red.add_argument("--out", default="model.json")
    red.add_argument("--report", default="report.json")
    red.add_argument("--plot", nargs="?", const="", default=None,
                     help="render a PNG; optional path, defaults next to "
                          "the report")
    red.set_defaults(func=cmd_reduce)

    val = sub.add_parser("validate", help="check a model against a system")
    val.add_argument("--system", required=True)
    val.add_argument("--model", required=True)
    val.add_argument("--tol", type=float, default=1e-6)
    val.set_defaults(func=cmd_validate)

    sw = sub.add_parser("sweep", help="error vs order for point strategies")
    sw.add_argument("--system", required=True)
    sw.add_argument("--orders", required=True, help="range as A..B")
    sw.add_argument("--points-strategy", action="append", default=None,
                    help="dense:H, rare:H, or list:FILE (repeatable)")
    sw.add_argument("--method", choices=("kkt", "grad", "sdp"),
                    default="grad")
    sw.add_argument("--mode", choices=("frozen", "refresh"), default="frozen")
    sw.add_argument("--max-iters", type=int, default=5000)
    sw.add_argument("--tol", type=float, default=None)
    sw.add_argument("--step", default="armijo")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--restarts", type=int, default=1)
    sw.add_argument("--positive", action="store_true")
    sw.add_argument("--out", required=True)
    sw.add_argument("--plot", nargs="?", const="", default=None)
    sw.set_defaults(func=cmd_sweep)

    ex = sub.add_parser("export-sdp", help="write the relaxation in SDPA form")
    ex.add_argument("--system", required=True)
    ex.add_argument("--problem", type=int, choices=(1, 2), default=2)
    ex.add_argument("--order", type=int, default=None)
    ex.add_argument("--points", default=None)
    ex.add_argument("--tangents", default=None)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--positive", action="store_true")
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export_sdp)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IoFailure as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except TdmmError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
