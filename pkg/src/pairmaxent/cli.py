"""Command-line pipeline.

Every subcommand reads its inputs, runs one library operation and writes
plot-ready CSV/JSON files. Options may come from a JSON config file
(``--config``); explicit flags win. Exit codes: 0 success, 1 invalid input,
2 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import approx, crit, exact, infer, mcmc, predict, topo
from .core import (CouplingModel, MaxentError, NumericalError, SignPanel,
                   ValidationError, empirical_distribution, sample_moments)
from .ingest import load_panel_from_prices, read_panel, write_panel

DIGITS = 12


class UsageError(ValidationError):
    pass


# --------------------------------------------------------------------------- #
# output helpers
# --------------------------------------------------------------------------- #

def _round(x):
    """Round floats to 12 significant digits, recursively."""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{DIGITS}g}")
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return _round(x.tolist())
    if isinstance(x, dict):
        return {str(k): _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    return x


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def render_report(results, format: str, path, columns=None) -> Path:
    """Write ``results`` as JSON, or as CSV from a list of row dicts.

    An empty row list still yields a CSV header (``columns`` must then be given).
    """
    path = Path(path)
    if format == "json":
        write_json(results, path)
        return path
    if format != "csv":
        raise ValidationError(f"unknown report format {format!r}")
    rows = list(results)
    if columns is None:
        if not rows:
            raise ValidationError("columns are required for an empty CSV report")
        columns = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for c in columns:
                v = _round(row[c])
                cells.append("" if v is None else str(v))
            fh.write(",".join(cells) + "\n")
    return path


def _out(args, name: str) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def model_to_json(model: CouplingModel, assets, method: str, meta: dict | None = None) -> dict:
    return {"assets": list(assets), "J": model.influences.tolist(),
            "h": model.fields.tolist(), "lags": [k.tolist() for k in model.lags],
            "beta": model.beta, "method": method, "fit_meta": meta or {}}


def load_model(path) -> tuple[CouplingModel, list]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    try:
        model = CouplingModel(np.array(d["J"], dtype=float), np.array(d["h"], dtype=float),
                              tuple(np.array(k, dtype=float) for k in d.get("lags", [])),
                              float(d.get("beta", 1.0)))
    except KeyError as e:
        raise ValidationError(f"model file lacks key {e}") from None
    assets = d.get("assets") or [f"a{i}" for i in range(model.n)]
    return model, assets


def _threads(args) -> int:
    if args.threads:
        return max(1, int(args.threads))
    env = os.environ.get("MAXENT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"MAXENT_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def _pmap(args, fn, items):
    """Order-preserving map over a thread pool (results are seed-deterministic)."""
    n = _threads(args)
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _existing(path: str) -> str:
    if not Path(path).is_file():
        raise ValidationError(f"input file {path!r} does not exist")
    return path


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #

def cmd_ingest(args) -> dict:
    panel = load_panel_from_prices(_existing(args.prices))
    path = _out(args, "panel.csv")
    write_panel(panel, path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    summary = {"assets": list(panel.assets), "n": panel.n, "m": panel.m,
               "first": panel.times[0], "last": panel.times[-1], "sha256": digest}
    write_json(summary, _out(args, "panel.json"))
    return summary


def cmd_fit(args) -> dict:
    panel = read_panel(_existing(args.panel))
    meta: dict = {"m": panel.m}
    if args.method == "exact":
        model = exact.fit_exact_panel(panel)
    elif args.method == "rpml":
        cfg = infer.RpmlConfig(regularization=args.regularization, lam=args.lam,
                               lag_count=args.lags)
        model, trace = infer.fit_rpml(panel, cfg, return_trace=True)
        meta.update({"iterations": trace.iterations, "gradient_norm": trace.gradient_norm,
                     "converged": trace.converged,
                     "lam": cfg.lam if cfg.lam is not None else 1.0 / (panel.m - args.lags),
                     "regularization": cfg.regularization})
    elif args.method == "mf":
        model = infer.invert_mean_field(sample_moments(panel))
    elif args.method == "tap":
        res = infer.invert_tap(sample_moments(panel), full=True)
        model = res.model
        meta.update({"raw_diagonal": res.raw_diagonal.tolist(),
                     "complex_roots": int(res.complex_roots.sum()) // 2})
    else:
        raise UsageError(f"unknown method {args.method!r}")
    doc = model_to_json(model, panel.assets, args.method, meta)
    write_json(doc, _out(args, "model.json"))
    return {"method": args.method, "n": model.n}


def cmd_simulate(args) -> dict:
    model, assets = load_model(_existing(args.model))
    cfg = mcmc.ChainConfig(args.equilibration, args.samples, args.spacing, args.seed,
                           args.temperature, True)
    series = mcmc.overlap_series(model, cfg) if args.replicas else mcmc.simulate_chain(model, cfg)
    series.to_csv(_out(args, "series.csv"))
    write_panel(series.to_panel(assets), _out(args, "panel.csv"))
    stats = mcmc.estimate_observables(series, n_units=model.n)
    write_json(stats, _out(args, "observables.json"))
    return stats


def _scan_input(args):
    if args.lattice:
        return exact.gibbs_distribution(mcmc.square_lattice(args.lattice)), f"lattice{args.lattice}"
    if args.model:
        model, _ = load_model(_existing(args.model))
        return exact.gibbs_distribution(model), "model"
    if args.panel:
        return empirical_distribution(read_panel(_existing(args.panel))), "panel"
    raise UsageError("crit scan needs a panel, --model or --lattice")


def _t_grid(args):
    return crit.default_t_grid(args.points, args.t_min, args.t_max)


def cmd_crit_scan(args) -> dict:
    grid = _t_grid(args)
    if args.sizes:
        panel = read_panel(_existing(args.panel))
        sizes = [int(s) for s in str(args.sizes).split(",")]
        summ = crit.subset_scan(panel, sizes, args.sets, args.seed, grid)
        rows = [s.summary() for s in summ.scans]
        out = {"sizes": summ.sizes, "mean_t_max": summ.mean_t_max,
               "sd_t_max": summ.sd_t_max, "power_fit": summ.power_fit,
               "exponential_fit": summ.exponential_fit, "scans": rows}
        write_json(out, _out(args, "subset_scan.json"))
        return {k: out[k] for k in ("mean_t_max", "sd_t_max")}
    dist, label = _scan_input(args)
    res = crit.response_function_scan(dist, grid)
    res.to_csv(_out(args, "scan.csv"))
    out = {"source": label, **res.summary()}
    write_json(out, _out(args, "scan.json"))
    return out


def cmd_crit_significance(args) -> dict:
    d = crit.sampling_significance(read_panel(_existing(args.panel)))
    out = {"h_s": d.h_s, "h_k": d.h_k, "m_counts": d.m_counts, "M": d.sample_size,
           "N": d.system_size, "upper_bound": d.upper_bound}
    write_json(out, _out(args, "significance.json"))
    return out


def cmd_crit_zipf(args) -> dict:
    f = crit.zipf_test(read_panel(_existing(args.panel)), args.bootstrap, args.seed)
    out = {"alpha_mle": f.alpha_mle, "sigma_alpha": f.sigma_alpha, "x_max": f.x_max,
           "ks_statistic": f.ks_statistic, "p_value": f.p_value,
           "bootstrap_count": f.bootstrap_count, "rejected": f.rejected}
    write_json(out, _out(args, "zipf.json"))
    return out


def cmd_crit_entropy_utility(args) -> dict:
    r = crit.entropy_utility_relation(read_panel(_existing(args.panel)))
    out = {"points": r.points, "slope": r.slope, "intercept": r.intercept,
           "relative_nonlinearity": r.relative_nonlinearity}
    write_json(out, _out(args, "entropy_utility.json"))
    return {"slope": r.slope, "relative_nonlinearity": r.relative_nonlinearity}


def _distance(args, panel: SignPanel):
    if args.distance == "ms":
        C, _ = topo.correlation_matrix(panel)
        return topo.ms_distance(C, panel.assets)
    if args.distance == "influence":
        fit = topo._window_inference(panel, args.method)
        model = fit if isinstance(fit, CouplingModel) else fit.model
        return topo.influence_dissimilarity(model, panel.assets)
    raise UsageError(f"unknown distance {args.distance!r}")


def cmd_topo_mst(args) -> dict:
    panel = read_panel(_existing(args.panel))
    tree = topo.minimum_spanning_tree(_distance(args, panel))
    tree.to_csv(_out(args, "tree.csv"))
    out = {"total_length": tree.total_length, "degrees": tree.degree_sequence,
           "labels": list(tree.labels)}
    if panel.n >= 3:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = topo.degree_distribution_fit(tree)
        out.update({"alpha_ls": fit.alpha_ls, "r_squared": fit.r_squared,
                    "alpha_mle": fit.alpha_mle})
    write_json(out, _out(args, "tree.json"))
    return {"total_length": tree.total_length}


def cmd_topo_cluster(args) -> dict:
    panel = read_panel(_existing(args.panel))
    d = _distance(args, panel)
    if args.threshold is not None:
        cl = topo.hierarchical_clusters(d, threshold=args.threshold)
    else:
        cl = topo.hierarchical_clusters(d, cluster_count=args.clusters)
    cl.dendrogram_csv(_out(args, "dendrogram.csv"))
    d.to_csv(_out(args, "matrix.csv"), cl.permutation)
    out = {"labels": dict(zip(panel.assets, cl.labels.tolist())),
           "permutation": cl.permutation.tolist()}
    write_json(out, _out(args, "clusters.json"))
    return out


def cmd_topo_sliding(args) -> dict:
    panel = read_panel(_existing(args.panel))
    if args.statistic not in topo.STATISTICS:
        raise ValidationError(f"unknown statistic {args.statistic!r}")
    if args.width > panel.m:
        raise topo.WindowTooLarge(f"width {args.width} exceeds M={panel.m}")
    if args.width < 2 or args.shift < 1:
        raise ValidationError("width must be >= 2 and shift >= 1")
    starts = list(range(0, panel.m - args.width + 1, args.shift))
    vals = _pmap(args, lambda a: topo.window_statistic(
        panel.window(a, a + args.width), args.statistic, args.method), starts)
    signs = None
    if args.statistic == "det_J":
        signs = np.array([v[1] for v in vals], dtype=int)
        vals = [v[0] for v in vals]
    vals = np.asarray(vals, dtype=float)
    series = topo.WindowSeries(args.statistic, tuple(panel.times[a] for a in starts), vals,
                               vals - vals.mean(), signs)
    series.to_csv(_out(args, f"sliding_{args.statistic}.csv"))
    return {"windows": len(starts), "mean": float(vals.mean())}


def cmd_predict_cv(args) -> dict:
    panel = read_panel(_existing(args.panel))
    cfg = infer.RpmlConfig(regularization=args.regularization, lam=args.lam,
                           lag_count=args.lags)
    rep = predict.kfold_cross_validation(panel, cfg, args.folds, args.independent)
    rep.to_csv(_out(args, "roc.csv"))
    rep.predictions_csv(_out(args, "predictions.csv"), panel)
    out = {"mean_auc": rep.mean_auc, "best_mean_accuracy": rep.best_mean_accuracy,
           "best_threshold": rep.best_threshold,
           "per_asset": {a: r.to_dict() for a, r in zip(panel.assets, rep.per_asset)}}
    write_json(out, _out(args, "cv.json"))
    return {"mean_auc": rep.mean_auc, "best_mean_accuracy": rep.best_mean_accuracy}


def cmd_predict_reversals(args) -> dict:
    panel = read_panel(_existing(args.panel))
    out = predict.compare_reversal_models(panel, args.subset_size, args.subsets, args.seed,
                                          args.dg_samples)
    write_json(out, _out(args, "reversals.json"))
    return {k: out[k] for k in ("pairwise", "poisson", "dg")}


def bench_results() -> list[dict]:
    """Fast fixtures with known reference values."""
    rows = []

    def add(name, value, target, ok):
        rows.append({"name": name, "value": value, "target": target, "pass": bool(ok)})

    t0 = time.perf_counter()
    scan = crit.response_function_scan(exact.gibbs_distribution(mcmc.square_lattice(3)))
    add("lattice3x3_t_max", scan.t_max, "2.40 +- 0.05", abs(scan.t_max - 2.40) <= 0.05)
    add("lattice3x3_runtime_s", time.perf_counter() - t0, "< 1", time.perf_counter() - t0 < 1)
    cm = predict.evaluate_classifier([0.9] * 8 + [0.1] * 2, [1] * 6 + [0] * 4, [0.5])
    add("confusion_accuracy", cm.accuracy[0], "0.8", cm.accuracy[0] == 0.8)
    tr = approx.bd_consensus_dynamics(approx.BdModel(1.0), 0.5, 10_000)
    slope = approx.decay_exponent(tr)
    add("bd_decay_exponent", slope, "-0.5 +- 0.05", abs(slope + 0.5) <= 0.05)
    add("onsager_K0.5", approx.onsager_magnetization(0.5), "0.9113",
        abs(approx.onsager_magnetization(0.5) - 0.9113) < 5e-5)
    q = exact.fit_exact_maxent(
        sample_moments(SignPanel.from_array(np.array([[1, 1, 1, 1, -1, -1, -1, -1],
                                       [1, 1, 1, -1, -1, -1, -1, 1]]))))
    add("exact_fit_N2", q.influences[0, 1], "atanh(0.5)",
        abs(q.influences[0, 1] - math.atanh(0.5)) < 1e-6)
    return rows


def cmd_bench(args) -> dict:
    rows = bench_results()
    write_json({"results": rows}, _out(args, "bench.json"))
    for r in rows:
        print(f"{'PASS' if r['pass'] else 'FAIL'} {r['name']} = {r['value']:.6g} "
              f"(target {r['target']})")
    return {"passed": sum(r["pass"] for r in rows), "total": len(rows)}


# --------------------------------------------------------------------------- #
# parser
# --------------------------------------------------------------------------- #

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# option name -> default; values from --config fill in options left unset
DEFAULTS = {
    "out": ".", "threads": None, "seed": 0,
    "regularization": "l2", "lam": None, "lags": 0,
    "samples": 10_000, "equilibration": 10_000, "spacing": 1, "temperature": 1.0,
    "replicas": False,
    "points": 200, "t_min": 0.2, "t_max": 3.0, "sizes": None, "sets": 100,
    "lattice": None, "model": None, "panel": None,
    "bootstrap": 1000,
    "distance": "ms", "method": "tap", "clusters": 2, "threshold": None,
    "width": 200, "shift": 20, "statistic": "tree_length_ms",
    "folds": 10, "independent": False,
    "subset_size": None, "subsets": 20, "dg_samples": 100_000,
}


def _common(p):
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--out", "-o", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default MAXENT_THREADS or all cores)")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pairmaxent", description="Pairwise maximum-entropy pipeline")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("ingest", help="price CSV -> sign panel")
    s.add_argument("prices")
    _common(s)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("fit", help="fit a pairwise model")
    s.add_argument("method", choices=["exact", "rpml", "mf", "tap"])
    s.add_argument("panel")
    s.add_argument("--regularization", choices=["l1", "l2"], default=None)
    s.add_argument("--lam", type=float, default=None)
    s.add_argument("--lags", type=int, default=None)
    _common(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="Glauber chain from a model file")
    s.add_argument("model")
    for name, typ in [("samples", int), ("equilibration", int), ("spacing", int),
                      ("temperature", float)]:
        s.add_argument(f"--{name}", type=typ, default=None)
    s.add_argument("--replicas", action="store_true", default=None)
    _common(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("crit", help="criticality diagnostics")
    csub = c.add_subparsers(dest="crit_command", parser_class=_Parser)
    s = csub.add_parser("scan")
    s.add_argument("panel", nargs="?")
    s.add_argument("--model")
    s.add_argument("--lattice", type=int)
    s.add_argument("--points", type=int)
    s.add_argument("--t-min", type=float, dest="t_min")
    s.add_argument("--t-max", type=float, dest="t_max")
    s.add_argument("--sizes", help="comma-separated subset sizes")
    s.add_argument("--sets", type=int)
    _common(s)
    s.set_defaults(func=cmd_crit_scan)
    for name, fn in [("significance", cmd_crit_significance), ("zipf", cmd_crit_zipf),
                     ("entropy-utility", cmd_crit_entropy_utility)]:
        s = csub.add_parser(name)
        s.add_argument("panel")
        if name == "zipf":
            s.add_argument("--bootstrap", type=int)
        _common(s)
        s.set_defaults(func=fn)

    t = sub.add_parser("topo", help="network topology")
    tsub = t.add_subparsers(dest="topo_command", parser_class=_Parser)
    for name, fn in [("mst", cmd_topo_mst), ("cluster", cmd_topo_cluster),
                     ("sliding", cmd_topo_sliding)]:
        s = tsub.add_parser(name)
        s.add_argument("panel")
        s.add_argument("--method", choices=["tap", "mf", "rpml"])
        if name != "sliding":
            s.add_argument("--distance", choices=["ms", "influence"])
        if name == "cluster":
            s.add_argument("--clusters", type=int)
            s.add_argument("--threshold", type=float)
        if name == "sliding":
            s.add_argument("--width", type=int)
            s.add_argument("--shift", type=int)
            s.add_argument("--statistic", choices=list(topo.STATISTICS))
        _common(s)
        s.set_defaults(func=fn)

    r = sub.add_parser("predict", help="trend-reversal prediction")
    rsub = r.add_subparsers(dest="predict_command", parser_class=_Parser)
    s = rsub.add_parser("cv")
    s.add_argument("panel")
    s.add_argument("--folds", type=int)
    s.add_argument("--lags", type=int)
    s.add_argument("--lam", type=float)
    s.add_argument("--regularization", choices=["l1", "l2"])
    s.add_argument("--independent", action="store_true", default=None)
    _common(s)
    s.set_defaults(func=cmd_predict_cv)
    s = rsub.add_parser("reversals")
    s.add_argument("panel")
    s.add_argument("--subset-size", type=int, dest="subset_size")
    s.add_argument("--subsets", type=int)
    s.add_argument("--dg-samples", type=int, dest="dg_samples")
    _common(s)
    s.set_defaults(func=cmd_predict_reversals)

    s = sub.add_parser("bench", help="run the built-in reference fixtures")
    _common(s)
    s.set_defaults(func=cmd_bench)
    return p


def _merge_config(args) -> None:
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(_existing(args.config), encoding="utf-8") as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e}") from None
        if not isinstance(cfg, dict):
            raise ValidationError("config must be a JSON object")
    for key, default in DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, cfg.get(key.replace("_", "-"), cfg.get(key, default)))


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        _merge_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            result = args.func(args)
    except NumericalError as e:
        print(f"error ({type(e).__module__}.{type(e).__name__}): {e}", file=sys.stderr)
        return 2
    except (ValidationError, OSError) as e:
        print(f"error ({type(e).__module__}.{type(e).__name__}): {e}", file=sys.stderr)
        return 1
    except MaxentError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if result is not None and args.func is not cmd_bench:
        print(json.dumps(_round(result), sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
