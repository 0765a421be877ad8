"""Command-line interface.

Subcommands: ingest, plan, tune, run-aggr, infer, bench, calibrate.  Reports
are JSON (schema_version field) or CSV with a fixed column order; identical
invocations produce byte-identical reports.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from .costmodel import CalibrationGrid, CostProfile, default_profile
from .matrices import (
    DenseMatrix, Format, GnnKind, MatrixMarketError, SparseMatrix, ValueKind,
    degree_stats, load_matrix_market, normalize_adjacency,
)
from .partition import (
    Balance, CapacityError, PafConfig, PlanError, SyncMode, build_tile_plan,
    validate_capacity,
)
from .runtime import Activation, GnnModel, Layer, run_inference
from .simulator import (
    BaselineKind, CSV_COLUMNS, simulate_aggregation, simulate_baseline,
)
from .synthetic import power_law_graph, random_dense
from .tensorio import load_tensor, save_tensor
from .topology import PimTopology
from .tuner import NoValidConfiguration, tune

BENCH_SCHEMES = ("fused-csr", "fused-coo", "grande", "sp1", "sp2")


def _add_topology_args(p):
    g = p.add_argument_group("topology")
    g.add_argument("--devices", type=int, default=32)
    g.add_argument("--cores-per-device", type=int, default=64)
    g.add_argument("--threads", type=int, default=16)
    g.add_argument("--bank-mib", type=int, default=64)
    g.add_argument("--scratchpad-kib", type=int, default=64)
    g.add_argument("--transfer-chunk", type=int, choices=(128, 256), default=256)
    g.add_argument("--saturation-threads", type=int, default=16)


def _topology(args) -> PimTopology:
    return PimTopology(
        n_devices=args.devices, clusters_per_device=1,
        cores_per_cluster=args.cores_per_device, threads_per_core=args.threads,
        bank_capacity=args.bank_mib * 2**20,
        scratchpad_capacity=args.scratchpad_kib * 2**10,
        transfer_chunk=args.transfer_chunk,
        pipeline_saturation_threads=args.saturation_threads)


def _add_graph_args(p):
    g = p.add_argument_group("graph")
    g.add_argument("--graph", help="Matrix Market file")
    g.add_argument("--synthetic", type=int, metavar="N",
                   help="generate an N-vertex power-law graph instead")
    g.add_argument("--avg-degree", type=float, default=8.0)
    g.add_argument("--graph-seed", type=int, default=0)
    g.add_argument("--value-kind", choices=[k.value for k in ValueKind],
                   default="int32")


def _graph(args) -> SparseMatrix:
    kind = ValueKind(args.value_kind)
    if bool(args.graph) == bool(args.synthetic):
        raise PlanError("give exactly one of --graph or --synthetic")
    if args.graph:
        return load_matrix_market(args.graph, value_kind=kind)
    return power_law_graph(args.synthetic, avg_degree=args.avg_degree,
                           seed=args.graph_seed, value_kind=kind)


def _add_config_args(p):
    g = p.add_argument_group("aggregation config")
    g.add_argument("--config", default=None,
                   help="'auto' to tune, omit to use explicit fields")
    g.add_argument("--sp", type=int)
    g.add_argument("--dp", type=int)
    g.add_argument("--grp", type=int, choices=(1, 2, 4))
    g.add_argument("--format", choices=[f.value for f in Format], default="csr")
    g.add_argument("--cluster-scheme", choices=[b.value for b in Balance],
                   default="edg")
    g.add_argument("--core-scheme", choices=[b.value for b in Balance],
                   default="edg")
    g.add_argument("--sync", choices=[s.value for s in SyncMode],
                   default="lock-free")


def _config(args, graph, hidden, topo, profile):
    explicit = args.sp is not None or args.dp is not None or args.grp is not None
    if args.config == "auto":
        if explicit:
            raise PlanError("--config auto excludes explicit --sp/--dp/--grp")
        return tune(graph, hidden, topo, profile, Format(args.format),
                    sync=SyncMode(args.sync)).best
    if args.config is not None:
        with open(args.config) as fh:
            return PafConfig.from_json(json.load(fh))
    if not (args.sp and args.dp and args.grp):
        raise PlanError("give --config auto, --config FILE, or all of --sp/--dp/--grp")
    return PafConfig(sp=args.sp, dp=args.dp, grp=args.grp,
                     format=Format(args.format),
                     cluster_scheme=Balance(args.cluster_scheme),
                     core_scheme=Balance(args.core_scheme),
                     sync=SyncMode(args.sync))


def _profile(args) -> CostProfile:
    if getattr(args, "profile", None):
        return CostProfile.load(args.profile)
    return default_profile()


def _emit_json(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_report(report, args):
    if args.report_format == "csv":
        rows = report.csv_rows()
        if args.out:
            with open(args.out, "w", newline="") as fh:
                csv.writer(fh).writerows(rows)
        else:
            csv.writer(sys.stdout).writerows(rows)
    else:
        _emit_json(report.to_json(), args.out)


def _features(args, n, hidden, kind) -> DenseMatrix:
    if getattr(args, "features", None):
        f = load_tensor(args.features)
        if f.n_rows != n or f.n_cols != hidden:
            raise PlanError(f"features are {f.n_rows}x{f.n_cols}, "
                            f"expected {n}x{hidden}")
        return f
    return random_dense(n, hidden, seed=args.seed, value_kind=kind)


def _cmd_ingest(args) -> int:
    m = _graph(args)
    stats = degree_stats(m)
    doc = {
        "schema_version": 1,
        "n_rows": m.n_rows, "n_cols": m.n_cols, "nnz": m.nnz,
        "value_kind": m.value_kind.value,
        "degree": {"min": stats.min_nnz, "max": stats.max_nnz,
                   "avg": stats.avg_nnz, "std": stats.std_nnz},
    }
    if args.normalize:
        m2 = normalize_adjacency(m, GnnKind(args.normalize), eps=args.eps)
        doc["normalized_nnz"] = m2.nnz
    _emit_json(doc, args.out)
    return 0


def _cmd_plan(args) -> int:
    graph = _graph(args)
    topo = _topology(args)
    profile = _profile(args)
    a = normalize_adjacency(graph, GnnKind(args.model), eps=args.eps) \
        if args.model != "none" else graph
    cfg = _config(args, a, args.hidden, topo, profile)
    plan = build_tile_plan(a.with_format(cfg.format), args.hidden, cfg, topo)
    doc = plan.to_json()
    try:
        validate_capacity(plan)
        doc["capacity"] = {"ok": True}
    except CapacityError as exc:
        doc["capacity"] = {"ok": False, "detail": str(exc),
                           "breakdown": exc.breakdown}
    _emit_json(doc, args.out)
    return 0


def _cmd_tune(args) -> int:
    graph = _graph(args)
    topo = _topology(args)
    profile = _profile(args)
    a = normalize_adjacency(graph, GnnKind(args.model), eps=args.eps) \
        if args.model != "none" else graph
    result = tune(a, args.hidden, topo, profile, Format(args.format),
                  sync=SyncMode(args.sync))
    _emit_json(result.to_json(), args.out)
    return 0


def _cmd_run_aggr(args) -> int:
    graph = _graph(args)
    topo = _topology(args)
    profile = _profile(args)
    a = normalize_adjacency(graph, GnnKind(args.model), eps=args.eps) \
        if args.model != "none" else graph
    cfg = _config(args, a, args.hidden, topo, profile)
    f = _features(args, a.n_rows, args.hidden, a.value_kind)
    plan = build_tile_plan(a.with_format(cfg.format), args.hidden, cfg, topo)
    out, report = simulate_aggregation(plan, f, profile)
    if args.out_features:
        save_tensor(args.out_features, out)
    _emit_report(report, args)
    return 0


def _cmd_infer(args) -> int:
    if args.model == "none":
        raise PlanError("infer requires --model gcn, gin, or sage")
    graph = _graph(args)
    topo = _topology(args)
    profile = _profile(args)
    kind = graph.value_kind
    f = _features(args, graph.n_rows, args.hidden, kind)
    if args.weights:
        weights = [load_tensor(p) for p in args.weights]
        if len(weights) != args.layers:
            raise PlanError(f"{len(weights)} weight files for {args.layers} layers")
    else:
        weights = [random_dense(args.hidden, args.hidden, seed=args.seed + 1 + i,
                                value_kind=kind, value_range=(-2, 3))
                   for i in range(args.layers)]
    layers = tuple(
        Layer(weights=(w,),
              activation=Activation.RELU if i < args.layers - 1 else Activation.IDENTITY)
        for i, w in enumerate(weights))
    model = GnnModel(kind=GnnKind(args.model), layers=layers,
                     hidden=args.hidden, eps=args.eps)
    cfg = "auto" if args.config == "auto" else _config(args, graph, args.hidden,
                                                       topo, profile)
    out, report = run_inference(model, graph, f, topo, profile, cfg=cfg)
    if args.out_features:
        save_tensor(args.out_features, out)
    _emit_json(report.to_json(), args.out)
    return 0


def _bench_one(scheme: str, a: SparseMatrix, f: DenseMatrix,
               topo: PimTopology, profile: CostProfile):
    if scheme in ("fused-csr", "fused-coo"):
        fmt = Format.CSR if scheme == "fused-csr" else Format.COO
        cfg = tune(a, f.n_cols, topo, profile, fmt).best
        plan = build_tile_plan(a.with_format(fmt), f.n_cols, cfg, topo)
        return simulate_aggregation(plan, f, profile)[1], cfg
    kind = BaselineKind(scheme)
    return simulate_baseline(kind, a, f, topo, profile)[1], None


def _cmd_bench(args) -> int:
    graph = _graph(args)
    topo = _topology(args)
    profile = _profile(args)
    a = normalize_adjacency(graph, GnnKind(args.model), eps=args.eps) \
        if args.model != "none" else graph
    f = _features(args, a.n_rows, args.hidden, a.value_kind)
    schemes = args.schemes or list(BENCH_SCHEMES)
    rows = [("scheme",) + CSV_COLUMNS]
    docs = {}
    for scheme in schemes:
        try:
            report, cfg = _bench_one(scheme, a, f, topo, profile)
        except CapacityError as exc:
            docs[scheme] = {"error": "capacity", "detail": str(exc),
                            "breakdown": exc.breakdown}
            rows.append((scheme, "error", "capacity", "", "", "", "", ""))
            continue
        docs[scheme] = {"report": report.to_json()}
        if cfg is not None:
            docs[scheme]["config"] = cfg.to_json()
        for row in report.csv_rows()[1:]:
            rows.append((scheme,) + row)
    if args.report_format == "csv" or args.csv_out:
        target = args.csv_out or args.out
        if target:
            with open(target, "w", newline="") as fh:
                csv.writer(fh).writerows(rows)
        else:
            csv.writer(sys.stdout).writerows(rows)
    if args.report_format == "json":
        _emit_json({"schema_version": 1, "schemes": docs}, args.out)
    return 0


def _cmd_calibrate(args) -> int:
    from .tuner import calibrate

    topo = _topology(args)
    ground = _profile(args)
    profile = calibrate(topo, ground, CalibrationGrid())
    _emit_json(profile.to_json(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pimgnn",
        description="GNN aggregation on a modeled near-bank PIM machine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False, needs_hidden=True):
        _add_graph_args(p)
        _add_topology_args(p)
        p.add_argument("--profile", help="cost profile JSON")
        p.add_argument("--model", choices=["none", "gcn", "gin", "sage"],
                       default="none")
        p.add_argument("--eps", type=float, default=0.0)
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--report-format", choices=("json", "csv"), default="json")
        p.add_argument("--seed", type=int, default=0)
        if needs_hidden:
            p.add_argument("--hidden", type=int, required=True)
        if config:
            _add_config_args(p)

    p = sub.add_parser("ingest", help="parse a graph and report statistics")
    common(p, needs_hidden=False)
    p.add_argument("--normalize", choices=["gcn", "gin", "sage"])
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("plan", help="materialize and inspect a tile plan")
    common(p, config=True)
    p.set_defaults(fn=_cmd_plan)

    p = sub.add_parser("tune", help="search for the best configuration")
    common(p)
    p.add_argument("--format", choices=[f.value for f in Format], default="csr")
    p.add_argument("--sync", choices=[s.value for s in SyncMode],
                   default="lock-free")
    p.set_defaults(fn=_cmd_tune)

    p = sub.add_parser("run-aggr", help="simulate one aggregation")
    common(p, config=True)
    p.add_argument("--features", help="input feature tensor file")
    p.add_argument("--out-features", help="write the output tensor here")
    p.set_defaults(fn=_cmd_run_aggr)

    p = sub.add_parser("infer", help="multi-layer GNN inference")
    common(p, config=True)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--features", help="input feature tensor file")
    p.add_argument("--weights", nargs="*", help="weight tensor files, one per layer")
    p.add_argument("--out-features", help="write the output tensor here")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("bench", help="compare schemes on one graph")
    common(p)
    p.add_argument("--schemes", nargs="*", choices=BENCH_SCHEMES)
    p.add_argument("--csv-out", help="also write the per-step CSV here")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("calibrate", help="run microbenchmarks, emit a profile")
    _add_topology_args(p)
    p.add_argument("--profile", help="ground-truth profile JSON")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(fn=_cmd_calibrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (PlanError, CapacityError, MatrixMarketError, NoValidConfiguration,
            ValueError, OverflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
