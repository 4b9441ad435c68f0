"""Command-line entry point wiring all stages into reproducible runs."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, features, flows, ingest, pipeline, sampling, synth
from .manifest import write_manifest
from .neural import gradcheck as gc
from .neural import load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_sampling(method: str, params: str) -> sampling.SamplingSpec:
    try:
        if method == "fixed":
            return sampling.Fixed(int(params))
        if method == "random":
            return sampling.Random(float(params))
        if method == "incremental":
            l0, alpha, beta = params.split(",")
            return sampling.Incremental(int(l0), float(alpha), int(beta))
    except ValueError as exc:
        raise UsageError(f"bad --params for {method}: {exc}") from exc
    raise UsageError(f"unknown sampling method {method!r}")


def _require(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _load_config(args, default_seed_required=True) -> pipeline.TrainConfig:
    cfg_dict = {}
    if getattr(args, "config", None):
        cfg_dict = json.loads(_require(args.config).read_text())
    if getattr(args, "seed", None) is not None:
        cfg_dict["seed"] = args.seed
    if "seed" not in cfg_dict and default_seed_required:
        raise UsageError("a seed is required (--seed or config file)")
    if "sampling" not in cfg_dict:
        raise UsageError("config must define the sampling spec")
    return pipeline.TrainConfig.from_dict(cfg_dict)


def cmd_ingest(args) -> int:
    started = time.time()
    pcap_path = _require(args.pcap)
    stats = ingest.DecodeStats()
    with open(pcap_path, "rb") as fh:
        result = ingest.ingest_pcap(fh, idle_timeout=args.timeout,
                                    min_packets=args.min_packets, stats=stats)
    flows.write_flows(result, args.out)
    write_manifest(args.out, "ingest",
                   {"timeout": args.timeout, "min_packets": args.min_packets},
                   None, [pcap_path], started)
    print(f"decoded {stats.decoded} packets "
          f"(skipped {dict(stats.skipped)}), wrote {len(result)} flows")
    return EXIT_OK


def cmd_synth(args) -> int:
    started = time.time()
    result = synth.generate(args.classes, args.flows_per_class, args.seed,
                            difficulty=args.difficulty)
    flows.write_flows(result, args.out)
    write_manifest(args.out, "synth",
                   {"classes": args.classes,
                    "flows_per_class": args.flows_per_class,
                    "difficulty": args.difficulty},
                   args.seed, [], started)
    print(f"wrote {len(result)} flows")
    return EXIT_OK


def cmd_stats(args) -> int:
    started = time.time()
    in_path = _require(args.flows)
    flow_list = flows.read_flows(in_path)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "label", *features.FEATURE_NAMES])
        for f in flow_list:
            vec = features.stat_features(f)
            writer.writerow([f.id, f.label if f.label is not None else "",
                             *(repr(v) for v in vec)])
    write_manifest(args.out, "stats", {}, None, [in_path], started)
    print(f"wrote statistics for {len(flow_list)} flows")
    return EXIT_OK


def cmd_sample(args) -> int:
    started = time.time()
    in_path = _require(args.flows)
    spec = _parse_sampling(args.method, args.params)
    flow_list = flows.read_flows(in_path)
    pairs = []
    for f in flow_list:
        rng = sampling.derive_rng(args.seed, f.id)
        for sf in sampling.augment(f, spec, args.window, args.copies, rng):
            pairs.append((sf, f))
    sampling.write_sampled(pairs, args.out)
    write_manifest(args.out, "sample",
                   {"sampling": sampling.spec_to_dict(spec),
                    "window": args.window, "copies": args.copies},
                   args.seed, [in_path], started)
    print(f"wrote {len(pairs)} sampled copies from {len(flow_list)} flows")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    started = time.time()
    in_path = _require(args.flows)
    cfg = _load_config(args)
    flow_list = flows.read_flows(in_path)
    net = pipeline.pretrain(flow_list, cfg)
    save_checkpoint(net, args.out,
                    extra_meta={"train_config": cfg.to_dict(),
                                "feature_order_version":
                                    features.FEATURE_ORDER_VERSION})
    write_manifest(args.out, "pretrain", cfg.to_dict(), cfg.seed,
                   [in_path], started)
    print(f"pretrained on {len(flow_list)} flows, "
          f"final epoch loss {net.history[-1]:.6f}")
    return EXIT_OK


def cmd_retrain(args) -> int:
    started = time.time()
    model_path = _require(args.model)
    in_path = _require(args.flows)
    pretrained, meta = load_checkpoint(model_path)
    cfg_dict = {}
    if args.config:
        cfg_dict = json.loads(_require(args.config).read_text())
    elif "train_config" in meta:
        cfg_dict = dict(meta["train_config"])
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if "seed" not in cfg_dict:
        raise UsageError("a seed is required (--seed or config file)")
    if args.freeze_trunk:
        cfg_dict["freeze_trunk"] = True
    cfg = pipeline.TrainConfig.from_dict(cfg_dict)
    classes = args.classes.split(",")
    flow_list = flows.read_flows(in_path)
    if args.no_transfer:
        net = pipeline.train_supervised_baseline(flow_list, classes, cfg)
    else:
        net = pipeline.retrain(pretrained, flow_list, classes, cfg)
    save_checkpoint(net, args.out,
                    extra_meta={"train_config": cfg.to_dict(),
                                "classes": classes,
                                "feature_order_version":
                                    features.FEATURE_ORDER_VERSION})
    write_manifest(args.out, "retrain", cfg.to_dict(), cfg.seed,
                   [model_path, in_path], started)
    print(f"trained classifier over classes {classes}, "
          f"final epoch loss {net.history[-1]:.6f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.time()
    model_path = _require(args.model)
    in_path = _require(args.flows)
    model, meta = load_checkpoint(model_path)
    if "train_config" not in meta or "classes" not in meta:
        raise ValueError(f"{model_path} is not a classifier checkpoint")
    cfg = pipeline.TrainConfig.from_dict(meta["train_config"])
    classes = meta["classes"]
    flow_list = flows.read_flows(in_path)
    report = pipeline.evaluate(model, flow_list, classes, cfg)
    payload = report.to_dict()
    payload["manifest"] = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "model": str(model_path),
        "inputs": {str(in_path): None},
    }
    Path(args.report).write_text(json.dumps(payload, indent=2) + "\n",
                                 encoding="utf-8")
    write_manifest(args.report, "evaluate", cfg.to_dict(), cfg.seed,
                   [model_path, in_path], started)
    print(f"macro accuracy {report.macro_accuracy:.4f} over "
          f"{report.n_sampled} sampled copies / {report.n_flows} flows")
    return EXIT_OK


def cmd_baseline_knn(args) -> int:
    train_path = _require(args.train)
    test_path = _require(args.test)
    train_flows = flows.read_flows(train_path)
    test_flows = flows.read_flows(test_path)
    clf = pipeline.knn_baseline(pipeline.flow_stat_vectors(train_flows),
                                k=args.k)
    classes = sorted({f.label for f in test_flows})
    import numpy as np
    k = len(classes)
    index = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((k, k), dtype=int)
    for f in test_flows:
        pred = clf.predict(pipeline.flow_stat_vectors([f])[0][0])
        if pred in index:
            confusion[index[f.label], index[pred]] += 1
    macro, per_class = pipeline.confusion_metrics(confusion, classes)
    print(json.dumps({"k": args.k, "macro_accuracy": macro,
                      "per_class": per_class,
                      "confusion": confusion.tolist()}, indent=2))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gc.run_all(num_seeds=args.seeds)
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_rel_err:.3e}  {status}")
        ok = ok and r.passed
    return EXIT_OK if ok else EXIT_DATA


def build_parser() -> _Parser:
    parser = _Parser(prog="sampleflow",
                     description="Semi-supervised traffic classification "
                                 "from sampled packet time series")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress logging")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker threads (0 = auto)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a pcap into the flow file format")
    p.add_argument("--pcap", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--min-packets", type=int, default=100)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("synth", help="generate labeled synthetic flows")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--flows-per-class", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--difficulty", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("stats", help="compute per-flow statistical features")
    p.add_argument("--flows", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("sample", help="sample flows into fixed-length windows")
    p.add_argument("--flows", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", required=True,
                   choices=["fixed", "random", "incremental"])
    p.add_argument("--params", required=True,
                   help="l | p | l0,alpha,beta depending on --method")
    p.add_argument("--window", type=int, default=45)
    p.add_argument("--copies", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("pretrain", help="pretrain the statistics regressor")
    p.add_argument("--flows", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("retrain", help="train a classifier from a pretrained "
                                       "model")
    p.add_argument("--model", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--classes", required=True, help="comma-separated list")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-transfer", action="store_true",
                   help="train the same architecture without weight transfer")
    p.add_argument("--freeze-trunk", action="store_true")
    p.set_defaults(fn=cmd_retrain)

    p = sub.add_parser("evaluate", help="evaluate a classifier checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("baseline-knn", help="KNN over statistical features")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(fn=cmd_baseline_knn)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


DATA_ERRORS = (
    FileNotFoundError,
    flows.FlowFormatError,
    ingest.UnsupportedFormatError,
    ingest.TruncatedCaptureError,
    features.EmptyFlowError,
    features.InconsistentSampleError,
    sampling.InvalidStartError,
    synth.SynthConfigError,
    pipeline.EmptyDatasetError,
    pipeline.LabelError,
    pipeline.CoverageError,
    pipeline.EmptyEvalError,
    ValueError,
    json.JSONDecodeError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
