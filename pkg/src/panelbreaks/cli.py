"""Command-line front end.

Every subcommand writes one JSON document (sorted keys, no timestamps) that
echoes the effective configuration, the package version and the provenance of
any critical values used. ``--format text`` prints the human-readable tables
instead. Exit codes: 1 input, 2 infeasible, 3 numerical, 4 internal.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np
from scipy import stats

from . import __version__
from .exceptions import InputError, PanelBreaksError


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2, which is reserved for infeasibility
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    g = p.add_argument_group("common")
    if data:
        g.add_argument("--data", help="long-format CSV panel")
        g.add_argument("--unit", default="unit")
        g.add_argument("--period", default="period")
        g.add_argument("--y", default="y")
        g.add_argument("--x", default="", help="comma-separated stable regressors")
        g.add_argument("--w", default="", help="comma-separated breaking regressors")
        g.add_argument("--factors", default="", help="comma-separated observed factors")
        g.add_argument("--breaking-constant", action="store_true")
        g.add_argument("--observed-layout", choices=["pooled", "regime"], default="pooled")
        g.add_argument("--bandwidth", type=int, default=None)
        g.add_argument("--search", choices=["sup", "ssr"], default="sup")
    g.add_argument("--trim", type=float, default=0.15)
    g.add_argument("--alpha", type=float, default=0.05)
    g.add_argument("--cv", choices=["embedded", "simulate"], default="embedded")
    g.add_argument("--cv-reps", type=int, default=100_000)
    g.add_argument("--cv-grid", type=int, default=2000)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--config", help="JSON file whose keys override the flags")
    g.add_argument("--output", help="write JSON here instead of stdout")
    g.add_argument("--format", choices=["json", "text"], default="json")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="panelbreaks", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="supF, WDmax or F(k+1|k) test")
    t.add_argument("test", choices=["supf", "wdmax", "seqf"])
    t.add_argument("--k", type=int, default=1, help="breaks (supf) or breaks under the null (seqf)")
    t.add_argument("--kmax", type=int, default=5)
    t.add_argument("--weights", choices=["level", "unit"], default="level")
    _common(t)

    e = sub.add_parser("estimate", help="estimate k break dates and coefficients")
    e.add_argument("--breaks", type=int, required=True)
    e.add_argument("--max-iter", type=int, default=10)
    e.add_argument("--level", type=float, default=0.95, help="confidence level for the text table")
    _common(e)

    c = sub.add_parser("ci", help="break-date confidence intervals")
    c.add_argument("--breaks", type=int, default=None, help="estimate this many dates")
    c.add_argument("--dates", default=None, help="comma-separated known break periods (1-based)")
    c.add_argument("--level", type=float, default=0.95)
    _common(c)

    k = sub.add_parser("khat", help="sequential estimate of the number of breaks")
    k.add_argument("--kcap", type=int, default=None)
    k.add_argument("--shrink", type=float, default=None,
                   help="use level K/(NT) with this K instead of --alpha")
    _common(k)

    v = sub.add_parser("cv", help="critical values")
    vs = v.add_subparsers(dest="cv_command", required=True, parser_class=_Parser)
    s = vs.add_parser("simulate", help="simulate critical values")
    s.add_argument("--kind", choices=["supF", "UDmax", "WDmax", "seqF", "all"], default="all")
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--pw", default="1,2,3,4,5")
    s.add_argument("--trims", default="0.05,0.10,0.15,0.20,0.25")
    s.add_argument("--table", help="write the CSV table here")
    _common(s, data=False)

    m = sub.add_parser("simulate", help="simulate a panel or run a Monte Carlo experiment")
    m.add_argument("--spec", help="JSON DgpSpec")
    m.add_argument("--panel", help="write one simulated panel as CSV here")
    m.add_argument("--replication", type=int, default=0)
    m.add_argument("--experiment", choices=["size", "power", "hit_rate", "khat", "coverage"])
    m.add_argument("--test", choices=["supF", "WDmax", "seqF", "F_known"], default="supF")
    m.add_argument("--k", type=int, default=1)
    m.add_argument("--kmax", type=int, default=3)
    m.add_argument("--kcap", type=int, default=None)
    m.add_argument("--weights", choices=["level", "unit"], default="level")
    m.add_argument("--reps", type=int, default=100)
    m.add_argument("--bandwidth", type=int, default=None)
    _common(m, data=False)
    return ap


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError("config file must hold a JSON object")
    for key, val in cfg.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise InputError(f"unknown config key {key!r}")
        setattr(args, dest, val)
    return args


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("output", "format")}


def _load(args):
    from .panel import PanelSchema, load_panel

    if not args.data:
        raise InputError("--data is required")
    schema = PanelSchema(unit=args.unit, period=args.period, y=args.y, x=args.x, w=args.w,
                         factors=args.factors)
    return load_panel(args.data, schema)


def _options(args):
    from .estimator import FitOptions

    return FitOptions(breaking_constant=bool(args.breaking_constant),
                      include_observed=True, observed_layout=args.observed_layout)


def _cv_table(args, kind: str, k: int, p_w: int):
    from .inference.critical import DEFAULT_SEED, embedded_table, simulate_critical_values

    if args.cv == "embedded":
        return embedded_table()
    seed = DEFAULT_SEED if args.seed is None else args.seed
    return simulate_critical_values(kind, k, p_w, args.trim, grid=args.cv_grid,
                                    reps=args.cv_reps, seed=seed, threads=args.threads)


def _stars(p: float) -> str:
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""


def coefficient_table(fit, cov, w_names, x_names) -> str:
    """First-regime coefficient then the change at every break, per breaking regressor."""
    n, t, p, k = fit.n_units, fit.n_periods, fit.p_w, fit.k
    var = cov.v / (n * t)
    rows = []
    head = f"{'':<14}{'delta_1':>14}" + "".join(f"{'Delta_' + str(j + 1):>14}" for j in range(k))
    rows.append(head)
    for c, name in enumerate(w_names):
        est, se = [], []
        sel = np.zeros(fit.delta.shape[0])
        sel[c] = 1.0
        est.append(fit.delta[c])
        se.append(math.sqrt(sel @ var @ sel))
        for j in range(k):
            r = np.zeros(fit.delta.shape[0])
            r[j * p + c], r[(j + 1) * p + c] = -1.0, 1.0
            est.append(r @ fit.delta)
            se.append(math.sqrt(max(r @ var @ r, 0.0)))
        pv = [2 * stats.norm.sf(abs(e) / s) if s > 0 else float("nan") for e, s in zip(est, se)]
        rows.append(f"{name:<14}" + "".join(f"{e:>11.4f}{_stars(q):<3}" for e, q in zip(est, pv)))
        rows.append(f"{'':<14}" + "".join(f"{'(' + format(s, '.4f') + ')':>11}   " for s in se))
    if fit.p_x:
        rows.append("")
        for name, b in zip(x_names, fit.beta):
            rows.append(f"{name:<14}{b:>11.4f}")
    rows.append("Standard errors in parentheses; *, ** and *** denote significance "
                "at the 10%, 5% and 1% levels.")
    return "\n".join(rows)


def break_table(conf, labels) -> str:
    rows = [f"{'break':<8}{'date':>12}{'lower':>12}{'upper':>12}"]
    for j, iv in enumerate(conf.intervals):
        rows.append(f"{j + 1:<8}{str(labels[iv.date - 1]):>12}{str(labels[iv.lo - 1]):>12}"
                    f"{str(labels[iv.hi - 1]):>12}")
    rows.append(f"{int(round(conf.level * 100))}% confidence intervals.")
    return "\n".join(rows)


def _cmd_test(args):
    from .inference.breaktests import seq_f, sup_f, wdmax_f
    from .inference.hac import HacSpec

    data = _load(args)
    hac, opts = HacSpec(args.bandwidth), _options(args)
    if args.test == "supf":
        cv = _cv_table(args, "supF", args.k, data.p_w)
        rep = sup_f(data, args.k, args.trim, hac, options=opts, level=args.alpha, cv=cv,
                    search=args.search)
    elif args.test == "wdmax":
        cv = _cv_table(args, "UDmax" if args.weights == "unit" else "WDmax", args.kmax,
                       data.p_w)
        rep = wdmax_f(data, args.kmax, args.trim, hac, options=opts, level=args.alpha,
                      weights=args.weights, cv=cv, search=args.search)
    else:
        cv = _cv_table(args, "seqF", args.k, data.p_w)
        rep = seq_f(data, args.k, args.trim, hac, options=opts, level=args.alpha, cv=cv,
                    search=args.search)
    out = rep.to_dict()
    text = "\n".join([f"{rep.kind} statistic {rep.statistic:.4f}"] + [
        f"  {lv * 100:>5g}% critical value {cv_:.4f}" for lv, cv_ in sorted(rep.critical_values.items())
    ] + [f"reject at {rep.level:.0%}: {rep.decision}"])
    return out, text, rep.cv_provenance


def _cmd_estimate(args):
    from .dpsearch import estimate_breaks
    from .inference.confidence import break_confidence
    from .inference.hac import HacSpec, hac_covariance

    data = _load(args)
    res = estimate_breaks(data, args.breaks, args.trim, _options(args), max_iter=args.max_iter)
    out = res.to_dict()
    out["fit"] = res.fit.to_dict(data.w_names, data.x_names)
    out["break_labels"] = [data.period_labels[d - 1] for d in res.best_breaks.dates]
    cov = hac_covariance(res.fit, HacSpec(args.bandwidth))
    text = coefficient_table(res.fit, cov, data.w_names, data.x_names)
    if res.best_breaks.k:
        conf = break_confidence(res.fit, cov, args.level)
        text = break_table(conf, data.period_labels) + "\n\n" + text
    return out, text, {}


def _cmd_ci(args):
    from .dpsearch import estimate_breaks
    from .estimator import fit_breaks
    from .inference.confidence import break_confidence
    from .inference.hac import HacSpec, hac_covariance
    from .panel import BreakSet

    data = _load(args)
    if args.dates:
        dates = tuple(int(d) for d in str(args.dates).split(",") if d.strip())
        fit = fit_breaks(data, BreakSet(dates, data.n_periods), _options(args))
    elif args.breaks:
        fit = estimate_breaks(data, args.breaks, args.trim, _options(args)).fit
    else:
        raise InputError("ci needs --breaks or --dates")
    conf = break_confidence(fit, hac_covariance(fit, HacSpec(args.bandwidth)), args.level)
    out = conf.to_dict()
    out["labels"] = [{"date": data.period_labels[iv.date - 1],
                      "lo": data.period_labels[iv.lo - 1],
                      "hi": data.period_labels[iv.hi - 1]} for iv in conf.intervals]
    return out, break_table(conf, data.period_labels), {}


def _cmd_khat(args):
    import warnings

    from .inference.breaktests import estimate_num_breaks
    from .inference.hac import HacSpec
    from .panel import TrimmingSpec

    data = _load(args)
    kcap = args.kcap if args.kcap is not None else TrimmingSpec(args.trim).max_breaks
    cv = _cv_table(args, "seqF", kcap, data.p_w)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = estimate_num_breaks(data, args.trim, HacSpec(args.bandwidth), args.alpha, kcap,
                                  options=_options(args), shrink_constant=args.shrink, cv=cv,
                                  search=args.search)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    text = f"estimated number of breaks: {res.k_hat}" + (" (cap reached)" if res.truncated else "")
    return res.to_dict(), text, cv.provenance_dict()


def _cmd_cv(args):
    from .inference.critical import DEFAULT_SEED, build_table, simulate_critical_values

    seed = DEFAULT_SEED if args.seed is None else args.seed
    pws = [int(v) for v in str(args.pw).split(",")]
    trims = [float(v) for v in str(args.trims).split(",")]
    if args.kind == "all":
        table = build_table(pws, trims, reps=args.cv_reps, grid=args.cv_grid, seed=seed,
                            threads=args.threads)
    else:
        if args.k is None:
            raise InputError("--k is required with a single --kind")
        table = None
        for p in pws:
            for e in trims:
                part = simulate_critical_values(args.kind, args.k, p, e, grid=args.cv_grid,
                                                reps=args.cv_reps, seed=seed,
                                                threads=args.threads)
                table = part if table is None else table.merge(part)
    if args.table:
        table.to_csv(args.table)
    out = {"entries": [
        {"kind": k[0], "k": k[1], "p_w": k[2], "epsilon": k[3], "level": k[4],
         "value": v[0], "se": v[1]}
        for k, v in sorted(table.entries.items())
        if k[4] in (0.1, 0.05, 0.025, 0.01)]}
    text = "\n".join(f"{e['kind']:<6} k={e['k']} p_w={e['p_w']} eps={e['epsilon']:g} "
                     f"level={e['level']:g}: {e['value']:.3f} (se {e['se']:.3f})"
                     for e in out["entries"])
    return out, text, table.provenance_dict()


def _cmd_simulate(args):
    from .inference.critical import DEFAULT_SEED, simulate_critical_values
    from .panel import PanelSchema, write_panel
    from .simlab import DgpSpec, ToolboxConfig, generate, run_experiment

    spec = DgpSpec()
    if args.spec:
        try:
            with open(args.spec, encoding="utf-8") as fh:
                spec = DgpSpec.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise InputError(f"cannot read DGP spec {args.spec}: {exc}") from None
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    if args.panel:
        data, _ = generate(spec, args.replication)
        schema = PanelSchema(x=",".join(data.x_names), w=",".join(data.w_names),
                             factors=",".join(data.factor_names))
        write_panel(data, args.panel, schema)
        out = {"panel": args.panel, "n_units": data.n_units, "n_periods": data.n_periods,
               "spec": spec.to_dict(), "replication": args.replication}
        return out, f"wrote {data.n_units} x {data.n_periods} panel to {args.panel}", {}
    if not args.experiment:
        raise InputError("simulate needs --panel or --experiment")
    cfg = ToolboxConfig(test=args.test, k=args.k, k_max=args.kmax, epsilon=args.trim,
                        level=args.alpha, bandwidth=args.bandwidth, weights=args.weights,
                        k_cap=args.kcap)
    cv = None
    prov = {}
    if args.cv == "simulate" and args.experiment in ("size", "power", "khat"):
        kind = {"supF": "supF", "WDmax": "WDmax", "seqF": "seqF"}.get(args.test, "seqF")
        kk = args.kmax if kind == "WDmax" else max(args.k, args.kcap or 1)
        cv = simulate_critical_values(kind, kk, spec.p_w, args.trim, grid=args.cv_grid,
                                      reps=args.cv_reps,
                                      seed=DEFAULT_SEED if args.seed is None else args.seed,
                                      threads=args.threads)
        prov = cv.provenance_dict()
    elif args.experiment in ("size", "power", "khat"):
        from .inference.critical import embedded_table

        prov = embedded_table().provenance_dict()
    rep = run_experiment(args.experiment, spec, cfg, args.reps, n_jobs=args.threads, cv=cv)
    return rep.to_dict(), rep.table(), prov


_COMMANDS = {"test": _cmd_test, "estimate": _cmd_estimate, "ci": _cmd_ci, "khat": _cmd_khat,
             "cv": _cmd_cv, "simulate": _cmd_simulate}


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def run(argv=None) -> int:
    """Parse ``argv``, run the subcommand and return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _apply_config(args)
        result, text, prov = _COMMANDS[args.command](args)
        doc = {"command": args.command, "version": __version__, "config": _config_echo(args),
               "cv_provenance": prov, "result": result}
        payload = json.dumps(doc, sort_keys=True, indent=2, default=_jsonable,
                             allow_nan=True) + "\n"
        if args.format == "text":
            sys.stdout.write(text + "\n")
            if args.output:
                with open(args.output, "w", encoding="utf-8") as fh:
                    fh.write(payload)
        elif args.output:
            with open(args.output, "w", encoding="utf-8") as fh:
                fh.write(payload)
        else:
            sys.stdout.write(payload)
        return 0
    except PanelBreaksError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
