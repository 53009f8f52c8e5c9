"""Command-line pipeline: circuits -> counts -> marginals -> correlations -> clusters -> model -> benchmark.

Every command reads and writes JSON (the benchmark report is CSV). All
randomness comes from explicit ``--seed`` flags, so rerunning a command on the
same inputs reproduces its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .bench import (
    BenchReport,
    hamiltonians_from_dict,
    hamiltonians_to_dict,
    random_hamiltonians,
    run_benchmark,
)
from .circuits import (
    QDOT,
    CircuitCollection,
    ComplexityQuery,
    generate_collection,
    required_circuits_choi,
    required_circuits_matrix_elements,
)
from .clustering import ClusteringConfig, Partition, cluster_qubits, objective
from .cn_model import reconstruct_cn, reconstruct_tpn, suggest_neighborhoods
from .correlations import CorrelationMatrix, coherence_report, correlation_matrix_from_marginals
from .marginals import ConvergenceError, MarginalTable, estimate_marginals, estimate_marginals_multishot
from .povm import ValidationError
from .simulate import CnModel, ExperimentRecords, QuantumDeviceSpec, planted_model_library, sample_cn, sample_quantum

EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4

log = logging.getLogger("qdotkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message)
        sys.exit(EXIT_USAGE)


def _emit_error(kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message)}) + "\n")


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_text(path, text: str):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def write_json(path, data):
    write_text(path, json.dumps(data, indent=1) + "\n")


def load_device(spec: str):
    """``planted:<name>`` or a path to a CN model / quantum device JSON file."""
    if spec.startswith("planted:"):
        return planted_model_library(spec.split(":", 1)[1])
    data = read_json(spec)
    if "blocks" in data:
        return QuantumDeviceSpec.from_dict(data)
    return CnModel.from_dict(data)


# ---------------------------------------------------------------------------
# commands; each takes the parsed namespace and returns a process exit code

def cmd_gen_circuits(a):
    coll = generate_collection(a.protocol, a.qubits, a.circuits, a.seed)
    write_json(a.out, coll.to_dict())
    if a.gates:
        write_text(a.gates, "\n".join(coll.gate_lines()) + "\n")
    return 0


def cmd_plan(a):
    q = ComplexityQuery(a.protocol, a.k, a.qubits, a.eps, a.delta)
    n = required_circuits_choi(q) if a.bound == "choi" else required_circuits_matrix_elements(q)
    print(n)
    return 0


def cmd_simulate(a):
    coll = CircuitCollection.from_dict(read_json(a.circuits))
    device = load_device(a.device)
    if isinstance(device, QuantumDeviceSpec):
        recs = sample_quantum(device, coll, a.shots, a.seed, a.threads)
    else:
        recs = sample_cn(device, coll, a.shots, a.seed, a.threads)
    write_json(a.out, recs.to_dict())
    return 0


def cmd_estimate(a):
    recs = ExperimentRecords.from_dict(read_json(a.counts))
    subsets = [tuple(int(t) for t in s.split(",")) for s in a.subsets] if a.subsets else None
    fn = estimate_marginals_multishot if a.multishot else estimate_marginals
    table = fn(recs, a.k, subsets, threads=a.threads)
    write_json(a.out, table.to_dict())
    uncovered = [e.qubits for e in table.entries.values() if not e.covered]
    if uncovered:
        log.warning("%d subsets have uncovered input settings", len(uncovered))
    return 0


def cmd_correlations(a):
    table = MarginalTable.from_dict(read_json(a.marginals))
    corr = correlation_matrix_from_marginals(table, a.metric, a.kind, a.threshold, a.p_err, a.threads)
    write_json(a.out, corr.to_dict())
    if a.dot:
        write_text(a.dot, corr.to_dot())
    return 0


def cmd_coherence_bound(a):
    table = MarginalTable.from_dict(read_json(a.marginals))
    if table.protocol != QDOT:
        raise ValidationError("coherence bounds need QDOT marginals")
    reports = [coherence_report(e, a.p_err).to_dict() for e in table.entries.values()]
    write_json(a.out, {"p_err": a.p_err, "reports": reports})
    return 0


def cmd_cluster(a):
    corr = CorrelationMatrix.from_dict(read_json(a.corr))
    cfg = ClusteringConfig(a.c_max, a.alpha, a.runs, a.seed)
    part = cluster_qubits(corr, cfg, a.threads)
    out = part.to_dict()
    out.update({"objective": objective(part, corr, cfg), "alpha": a.alpha, "c_max": a.c_max, "seed": a.seed})
    write_json(a.out, out)
    return 0


def cmd_reconstruct(a):
    recs = ExperimentRecords.from_dict(read_json(a.counts))
    if a.tpn:
        model = reconstruct_tpn(recs, a.min_count, a.threads)
    else:
        if not a.partition:
            raise UsageError("--partition is required unless --tpn is given")
        part = Partition.from_dict(read_json(a.partition))
        nbrs = None
        if a.neighbors_from:
            corr = CorrelationMatrix.from_dict(read_json(a.neighbors_from))
            nbrs = suggest_neighborhoods(corr, part, a.neighbor_threshold, a.max_neighbors)
        model = reconstruct_cn(recs, part, nbrs, a.min_count, a.threads)
    write_json(a.out, model.to_dict())
    return 0


def cmd_gen_hamiltonians(a):
    hams = random_hamiltonians(a.instances, a.qubits, None, a.seed, a.max_edges)
    write_json(a.out, hamiltonians_to_dict(hams))
    return 0


def cmd_benchmark(a):
    hams = hamiltonians_from_dict(read_json(a.hamiltonians))
    device = load_device(a.device)
    if not isinstance(device, CnModel):
        raise ValidationError("benchmark device must be a CN model")
    models = {"cn": load_device(a.cn), "tpn": load_device(a.tpn)}
    rep = run_benchmark(models, hams, device, a.shots, a.seed, a.mode, a.threads)
    write_text(a.out, rep.to_csv())
    return 0


PIPELINE_DEFAULTS = {
    "protocol": "DDOT",
    "k": 2,
    "metric": "WC",
    "threshold": 0.03,
    "p_err": 0.01,
    "c_max": 2,
    "alpha": 0.0,
    "n_runs": 10,
    "min_count": 10,
    "neighbor_threshold": 0.05,
    "max_neighbors": 0,
    "hamiltonians": 20,
    "max_edges": None,
    "bench_shots": 10_000,
    "mode": "cluster",
}


def load_config(path) -> dict:
    if str(path).endswith(".toml"):
        try:
            import tomli
        except ImportError:
            raise UsageError("TOML configs need the 'tomli' package; use JSON instead") from None
        with open(path, "rb") as f:
            return tomli.load(f)
    return read_json(path)


def cmd_pipeline(a):
    cfg = dict(PIPELINE_DEFAULTS)
    cfg.update(load_config(a.config))
    for key in ("device", "num_qubits", "circuits", "shots", "seeds"):
        if key not in cfg:
            raise UsageError(f"config is missing {key!r}")
    seeds = cfg["seeds"]
    for key in ("circuits", "simulate", "cluster", "hamiltonians", "benchmark"):
        if key not in seeds:
            raise UsageError(f"config seeds are missing {key!r}")
    out = Path(a.outdir or cfg.get("outdir", "."))
    out.mkdir(parents=True, exist_ok=True)
    p = {name: str(out / name) for name in (
        "circuits.json", "counts.json", "marginals.json", "corr.json", "corr.dot", "partition.json",
        "cn_model.json", "tpn_model.json", "hamiltonians.json", "report.csv")}
    t = a.threads
    ns = argparse.Namespace
    steps = [
        (cmd_gen_circuits, ns(protocol=cfg["protocol"], qubits=cfg["num_qubits"], circuits=cfg["circuits"],
                              seed=seeds["circuits"], out=p["circuits.json"], gates=None)),
        (cmd_simulate, ns(circuits=p["circuits.json"], device=cfg["device"], shots=cfg["shots"],
                          seed=seeds["simulate"], out=p["counts.json"], threads=t)),
        (cmd_estimate, ns(counts=p["counts.json"], k=cfg["k"], subsets=None, multishot=False,
                          out=p["marginals.json"], threads=t)),
        (cmd_correlations, ns(marginals=p["marginals.json"], metric=cfg["metric"], kind="classical",
                              threshold=cfg["threshold"], p_err=cfg["p_err"], out=p["corr.json"],
                              dot=p["corr.dot"], threads=t)),
        (cmd_cluster, ns(corr=p["corr.json"], c_max=cfg["c_max"], alpha=cfg["alpha"], runs=cfg["n_runs"],
                         seed=seeds["cluster"], out=p["partition.json"], threads=t)),
        (cmd_reconstruct, ns(counts=p["counts.json"], partition=p["partition.json"], tpn=False,
                             neighbors_from=p["corr.json"] if cfg["max_neighbors"] else None,
                             neighbor_threshold=cfg["neighbor_threshold"], max_neighbors=cfg["max_neighbors"],
                             min_count=cfg["min_count"], out=p["cn_model.json"], threads=t)),
        (cmd_reconstruct, ns(counts=p["counts.json"], partition=None, tpn=True, neighbors_from=None,
                             neighbor_threshold=0.05, max_neighbors=0, min_count=cfg["min_count"],
                             out=p["tpn_model.json"], threads=t)),
        (cmd_gen_hamiltonians, ns(qubits=cfg["num_qubits"], instances=cfg["hamiltonians"], seed=seeds["hamiltonians"],
                                  max_edges=cfg["max_edges"], out=p["hamiltonians.json"])),
        (cmd_benchmark, ns(hamiltonians=p["hamiltonians.json"], device=cfg["device"], cn=p["cn_model.json"],
                           tpn=p["tpn_model.json"], shots=cfg["bench_shots"], seed=seeds["benchmark"],
                           mode=cfg["mode"], out=p["report.csv"], threads=t)),
    ]
    for fn, args in steps:
        log.info("pipeline: %s", fn.__name__[4:].replace("_", "-"))
        fn(args)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qdotkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qdotkit {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $QDOTKIT_THREADS or 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def proto(p):
        p.add_argument("--protocol", type=str.upper, choices=["DDOT", "QDOT"], required=True)

    p = sub.add_parser("gen-circuits", help="draw a random circuit collection")
    proto(p)
    p.add_argument("--qubits", type=int, required=True)
    p.add_argument("--circuits", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="circuits.json")
    p.add_argument("--gates", help="also write one line of gate labels per circuit")
    p.set_defaults(func=cmd_gen_circuits)

    p = sub.add_parser("plan", help="print the number of circuits needed")
    proto(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--qubits", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--bound", choices=["elements", "choi"], default="elements")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="sample readout counts from a synthetic device")
    p.add_argument("--circuits", required=True)
    p.add_argument("--device", required=True, help="planted:<name> or a model/device JSON file")
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="counts.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate k-qubit marginals")
    p.add_argument("--counts", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--subsets", nargs="*", help="explicit subsets like 0,1 2,5")
    p.add_argument("--multishot", action="store_true", help="average per-record frequencies")
    p.add_argument("--out", default="marginals.json")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("correlations", help="pairwise correlation coefficients")
    p.add_argument("--marginals", required=True)
    p.add_argument("--metric", type=str.upper, choices=["WC", "AC"], default="WC")
    p.add_argument("--kind", choices=["classical", "quantum"], default="classical")
    p.add_argument("--threshold", type=float, default=0.03)
    p.add_argument("--p-err", type=float, default=0.01)
    p.add_argument("--out", default="corr.json")
    p.add_argument("--dot", help="write above-threshold edges as a DOT graph")
    p.set_defaults(func=cmd_correlations)

    p = sub.add_parser("coherence-bound", help="coherence-strength witnesses from QDOT marginals")
    p.add_argument("--marginals", required=True)
    p.add_argument("--p-err", type=float, default=0.01)
    p.add_argument("--out", default="coherence.json")
    p.set_defaults(func=cmd_coherence_bound)

    p = sub.add_parser("cluster", help="partition qubits into noise clusters")
    p.add_argument("--corr", required=True)
    p.add_argument("--c-max", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="partition.json")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("reconstruct", help="fit a CN (or TPN) noise model")
    p.add_argument("--counts", required=True)
    p.add_argument("--partition")
    p.add_argument("--tpn", action="store_true", help="all-singleton model, ignores --partition")
    p.add_argument("--neighbors-from", help="corr.json used to choose neighborhoods")
    p.add_argument("--neighbor-threshold", type=float, default=0.05)
    p.add_argument("--max-neighbors", type=int, default=2)
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--out", default="cn_model.json")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("gen-hamiltonians", help="random 2-local diagonal Hamiltonians")
    p.add_argument("--qubits", type=int, required=True)
    p.add_argument("--instances", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-edges", type=int)
    p.add_argument("--out", default="hamiltonians.json")
    p.set_defaults(func=cmd_gen_hamiltonians)

    p = sub.add_parser("benchmark", help="energy prediction and mitigation benchmark")
    p.add_argument("--hamiltonians", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--cn", required=True)
    p.add_argument("--tpn", required=True)
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mode", choices=["marginal", "cluster"], default="cluster")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("pipeline", help="run every stage from one JSON (or TOML) config")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if a.threads is not None and a.threads < 1:
        parser.error("--threads must be >= 1")
    if a.threads is None and os.environ.get("QDOTKIT_THREADS"):
        try:
            a.threads = int(os.environ["QDOTKIT_THREADS"])
        except ValueError:
            parser.error("QDOTKIT_THREADS must be an integer")
    try:
        return a.func(a)
    except UsageError as exc:
        _emit_error("usage", exc)
        return EXIT_USAGE
    except (ValidationError, ConvergenceError, KeyError, TypeError) as exc:
        _emit_error("validation", exc)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        _emit_error("io", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
