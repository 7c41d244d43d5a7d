"""Command-line interface: scan, simulate, weights, and moran subcommands.

Every run writes its outputs into a directory together with a manifest JSON
recording the inputs, parameters, seed, and software version needed to
reproduce the run.  Report files are byte-identical across repeated runs
with the same inputs and seed.

Exit codes: 0 success, 2 input or usage error, 3 numerical failure.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import SpatialDataset, load_dataset_csv, load_dataset_geojson, pairwise_distances
from .errors import InputDataError, NumericalError
from .scan import ScanMethod, detect, reports_to_csv, reports_to_json
from .simulate import SimConfig, default_config, result_to_json, results_to_csv, run_grid
from .weights import (build_contiguity, build_inverse_distance, build_knn,
                      knn_family, load_contiguity_csv, load_weights_csv,
                      morans_i, row_standardize, save_weights_csv,
                      select_weights)

__all__ = ["main", "entry_point"]

_KNN_SELECT_RANGE = range(2, 11)


def _load_dataset(args) -> SpatialDataset:
    path = Path(args.data)
    if path.suffix.lower() in (".geojson", ".json"):
        return load_dataset_geojson(path, value_property=args.value_property)
    return load_dataset_csv(path)


def _add_weights_flags(p: argparse.ArgumentParser, required: bool = False):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--weights", metavar="FILE",
                   help="edge-list weights CSV (i,j,w or id_i,id_j,w)")
    g.add_argument("--knn", type=int, metavar="K",
                   help="binary k-nearest-neighbour weights")
    g.add_argument("--knn-select", action="store_true",
                   help="pick k in 2..10 by maximizing Moran's I of the outcome")
    g.add_argument("--contiguity", metavar="FILE",
                   help="undirected edge list CSV (i,j or id_i,id_j)")
    p.add_argument("--no-standardize", action="store_true",
                   help="keep constructed weights binary instead of row-standardizing")


def _resolve_weights(args, ds: SpatialDataset):
    """Build the weights matrix requested by the shared CLI flags.

    Returns:
        (W, spec, extra) where spec is a human-readable description and
        extra holds selection details for the manifest; (None, None, {})
        when no weights flag was given.
    """
    standardize = not getattr(args, "no_standardize", False)
    extra: dict = {}
    if args.weights:
        W = load_weights_csv(args.weights, ids=ds.ids)
        return W, f"file:{args.weights}", extra
    if args.knn is not None:
        W = build_knn(pairwise_distances(ds), args.knn)
        W = row_standardize(W) if standardize else W
        return W, f"knn({args.knn})", extra
    if args.knn_select:
        fam = knn_family(pairwise_distances(ds), _KNN_SELECT_RANGE,
                         standardize=standardize)
        W, score = select_weights(fam, ds.values)
        extra = {"selected_scheme": W.scheme, "selected_moran_i": score}
        return W, f"knn-select[{W.scheme}]", extra
    if args.contiguity:
        edges = load_contiguity_csv(args.contiguity, ids=ds.ids)
        W = build_contiguity(ds.n, edges)
        W = row_standardize(W) if standardize else W
        return W, f"contiguity:{args.contiguity}", extra
    return None, None, extra


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def _emit_manifest(out_dir: Path, command: str, started: float,
                   outputs: list[str], **fields) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "duration_seconds": round(time.monotonic() - started, 3),
        "outputs": outputs,
        **fields,
    }
    _write(out_dir / "manifest.json",
           json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _apply_log(ds: SpatialDataset):
    """Natural-log transform for analysis; returns (ds_log, raw_values)."""
    if np.any(ds.values <= 0):
        raise InputDataError("--log requires strictly positive outcome values")
    return ds.with_values(np.log(ds.values)), ds.values


def cmd_scan(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    ds = _load_dataset(args)
    raw = ds.values
    if args.log:
        ds, raw = _apply_log(ds)
    method = ScanMethod.from_string(args.method)
    W, w_spec, extra = _resolve_weights(args, ds)
    if method.is_sar and W is None:
        raise InputDataError(
            f"method {args.method} needs weights: pass --weights, --knn, "
            "--knn-select, or --contiguity")
    if not method.is_sar and W is not None:
        raise InputDataError(f"method {args.method} does not use weights; "
                             "drop the weights flag")

    res = detect(ds, method, W=W, M=args.mc, alpha_level=args.alpha,
                 max_clusters=args.max_clusters, seed=args.seed,
                 report_values=raw)

    _write(out_dir / "reports.json", reports_to_json(res.reports, ds.ids))
    _write(out_dir / "reports.csv", reports_to_csv(res.reports, ds.ids))
    fields = {
        "inputs": {"data": str(args.data)},
        "method": method.value,
        "weights_spec": w_spec,
        "M": args.mc,
        "alpha_level": args.alpha,
        "max_clusters": args.max_clusters,
        "seed": args.seed,
        "log_transform": bool(args.log),
        "n_sites": ds.n,
        "n_candidates": res.n_candidates,
        "n_detected": len(res.reports),
        **extra,
    }
    if res.rho_hat is not None:
        fields["rho_hat"] = res.rho_hat
    if res.selection is not None:
        fields["delta_bic"] = res.selection.delta_bic
        fields["rho_from_cluster_fit"] = res.selection.from_h1
    if res.best_insignificant is not None:
        fields["best_insignificant_p"] = res.best_insignificant.p_value
    _emit_manifest(out_dir, "scan", started,
                   ["reports.json", "reports.csv"], **fields)

    if res.reports:
        for r in res.reports:
            ids = ", ".join(str(ds.ids[i]) for i in r.cluster.members)
            print(f"cluster {r.rank}: {r.cluster.size} sites "
                  f"(p = {r.p_value:g}, statistic = {r.statistic:.4f}): {ids}")
    else:
        p = res.best_insignificant.p_value if res.best_insignificant else float("nan")
        print(f"no significant cluster at alpha = {args.alpha:g} "
              f"(best p = {p:g})")
    if res.rho_hat is not None:
        print(f"rho_hat = {res.rho_hat:.6f}")
    print(f"wrote {out_dir / 'reports.json'}")
    return 0


def _parse_config_text(text: str, path: str) -> dict:
    """Parse key = value lines; '#' starts a comment."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputDataError(f"{path}: line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        out[key.strip().lower()] = value.strip()
    return out


def _config_from_file(path: str | None) -> tuple[SimConfig, tuple[ScanMethod, ...], str]:
    raw: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            raw = _parse_config_text(f.read(), path)
    layout = raw.pop("layout", "french94")
    methods_text = raw.pop("methods", "gaussian,p-sar,np-sar")
    methods = tuple(ScanMethod.from_string(t) for t in methods_text.split(","))
    w_mode = raw.pop("w_mode", "true").replace("-", "_")

    overrides: dict = {}
    parsers = {
        "rho_grid": lambda v: tuple(float(x) for x in v.split(",")),
        "c_grid": lambda v: tuple(float(x) for x in v.split(",")),
        "s": ("S", int),
        "m": ("M", int),
        "alpha": ("alpha_level", float),
        "alpha_level": ("alpha_level", float),
        "alpha0": ("alpha0", float),
        "sigma": ("sigma", float),
        "seed": ("seed", int),
    }
    for key, value in raw.items():
        spec = parsers.get(key)
        if spec is None:
            raise InputDataError(f"{path}: unknown config key {key!r}")
        if callable(spec):
            overrides[key] = spec(value)
        else:
            name, cast = spec
            try:
                overrides[name] = cast(value)
            except ValueError as exc:
                raise InputDataError(f"{path}: bad value for {key}: {exc}") from exc
    return default_config(layout, **overrides), methods, w_mode


def cmd_simulate(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    cfg, methods, w_mode = _config_from_file(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    result = run_grid(cfg, methods=methods, w_mode=w_mode, threads=args.threads)

    _write(out_dir / "results.csv", results_to_csv(result))
    _write(out_dir / "results.json", result_to_json(result))
    _emit_manifest(
        out_dir, "simulate", started, ["results.csv", "results.json"],
        inputs={"config": str(args.config) if args.config else None},
        methods=[m.value for m in methods], w_mode=w_mode,
        rho_grid=list(cfg.rho_grid), c_grid=list(cfg.c_grid),
        S=cfg.S, M=cfg.M, alpha_level=cfg.alpha_level, sigma=cfg.sigma,
        seed=cfg.seed, threads=args.threads, n_sites=cfg.layout.n)

    n_fail = sum(c.n_fail for c in result.cells)
    print(f"{len(result.cells)} cells ({len(methods)} methods x "
          f"{len(cfg.rho_grid)} rho x {len(cfg.c_grid)} c), "
          f"S = {cfg.S}, failures = {n_fail}")
    print(f"wrote {out_dir / 'results.csv'}")
    return 0


def cmd_weights(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    ds = _load_dataset(args) if args.data else None

    if args.contiguity:
        ids = ds.ids if ds is not None else None
        edges = load_contiguity_csv(args.contiguity, ids=ids)
        n = ds.n if ds is not None else (max(max(e) for e in edges) + 1 if edges else 0)
        if n == 0:
            raise InputDataError("empty edge list and no --data to size the matrix")
        W = build_contiguity(n, edges)
        spec = f"contiguity:{args.contiguity}"
    elif args.knn is not None:
        if ds is None:
            raise InputDataError("--knn needs --data for site coordinates")
        W = build_knn(pairwise_distances(ds), args.knn)
        spec = f"knn({args.knn})"
    elif args.inverse_distance is not None:
        if ds is None:
            raise InputDataError("--inverse-distance needs --data for site coordinates")
        W = build_inverse_distance(pairwise_distances(ds),
                                   args.inverse_distance, cutoff=args.cutoff)
        spec = f"inverse_distance({args.inverse_distance:g})"
    else:
        raise InputDataError("pass one of --contiguity, --knn, --inverse-distance")

    if args.standardize:
        W = row_standardize(W)
    score = None
    if ds is not None and W.matrix.nnz and np.ptp(ds.values) > 0:
        score = morans_i(W, ds.values)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_weights_csv(W, out_dir / "weights.csv")
    _emit_manifest(out_dir, "weights", started, ["weights.csv"],
                   inputs={"data": str(args.data) if args.data else None},
                   weights_spec=spec, n_sites=W.n, nnz=int(W.matrix.nnz),
                   row_standardized=W.row_standardized,
                   has_isolated_sites=W.has_isolated_sites,
                   moran_i=score)
    print(f"{W.scheme}: {W.n} sites, {W.matrix.nnz} nonzero weights"
          f"{' (row-standardized)' if W.row_standardized else ''}")
    if score is not None:
        print(f"moran_i = {score:.6f}")
    print(f"wrote {out_dir / 'weights.csv'}")
    return 0


def cmd_moran(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    ds = _load_dataset(args)
    if args.log:
        ds, _ = _apply_log(ds)
    W, w_spec, extra = _resolve_weights(args, ds)
    if W is None:
        raise InputDataError("pass --weights, --knn, --knn-select, or --contiguity")
    score = morans_i(W, ds.values)

    doc = {"moran_i": score, "weights_spec": w_spec, "n_sites": ds.n,
           "log_transform": bool(args.log), **extra}
    _write(out_dir / "moran.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")
    _emit_manifest(out_dir, "moran", started, ["moran.json"],
                   inputs={"data": str(args.data)}, weights_spec=w_spec,
                   log_transform=bool(args.log), moran_i=score, **extra)
    print(f"moran_i = {score:.6f}  ({w_spec})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sarscan",
        description="Spatial cluster detection for continuous data with "
                    "SAR-based spatial filtering.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_scan = sub.add_parser("scan", help="detect clusters in a dataset")
    p_scan.add_argument("--data", required=True,
                        help="dataset CSV (id,x,y,value) or GeoJSON points")
    p_scan.add_argument("--value-property", default="value",
                        help="GeoJSON property holding the outcome (default: value)")
    p_scan.add_argument("--method", default="gaussian",
                        choices=["gaussian", "df", "p-sar", "np-sar"])
    _add_weights_flags(p_scan)
    p_scan.add_argument("--mc", type=int, default=999, metavar="M",
                        help="Monte Carlo permutations (default: 999)")
    p_scan.add_argument("--alpha", type=float, default=0.05,
                        help="significance level (default: 0.05)")
    p_scan.add_argument("--max-clusters", type=int, default=1,
                        help="maximum clusters to detect sequentially (default: 1)")
    p_scan.add_argument("--seed", type=int, default=0)
    p_scan.add_argument("--log", action="store_true",
                        help="analyze log-transformed values, report originals")
    p_scan.add_argument("--out", default=".", help="output directory")
    p_scan.set_defaults(func=cmd_scan)

    p_sim = sub.add_parser("simulate", help="run the method-comparison grid")
    p_sim.add_argument("--config", help="key = value configuration file")
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_sim.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads (results do not depend on this)")
    p_sim.add_argument("--out", default=".", help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_w = sub.add_parser("weights", help="build and save a weights matrix")
    p_w.add_argument("--data", help="dataset CSV or GeoJSON for coordinates")
    p_w.add_argument("--value-property", default="value")
    p_w.add_argument("--contiguity", metavar="FILE",
                     help="undirected edge list CSV")
    p_w.add_argument("--knn", type=int, metavar="K")
    p_w.add_argument("--inverse-distance", type=float, metavar="POWER")
    p_w.add_argument("--cutoff", type=float, default=None,
                     help="zero out inverse-distance weights beyond this distance")
    p_w.add_argument("--standardize", action="store_true",
                     help="row-standardize before saving")
    p_w.add_argument("--out", default=".", help="output directory")
    p_w.set_defaults(func=cmd_weights)

    p_m = sub.add_parser("moran", help="compute Moran's I of a dataset")
    p_m.add_argument("--data", required=True,
                     help="dataset CSV (id,x,y,value) or GeoJSON points")
    p_m.add_argument("--value-property", default="value")
    _add_weights_flags(p_m)
    p_m.add_argument("--log", action="store_true",
                     help="compute on log-transformed values")
    p_m.add_argument("--out", default=".", help="output directory")
    p_m.set_defaults(func=cmd_moran)

    return parser


def main(argv=None) -> int:
    """Entry point returning an exit code instead of raising."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entry_point() -> None:
    raise SystemExit(main(sys.argv[1:]))
