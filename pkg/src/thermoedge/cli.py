"""Command-line entry point: gen-data, train, compress, serve, stream, bench, report."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path


from . import bench as B
from .compression import (
    PQAT_PRESETS,
    convert_dense,
    convert_half,
    deserialize,
    model_size_bytes,
    post_training_quantize,
    pqat_pipeline,
    representative_subset,
    serialize,
)
from .data import (
    AugmentConfig,
    batch_augmenter,
    generate_synthetic,
    load_dataset_dir,
    read_pgm,
    save_dataset_dir,
    split_dataset,
    to_arrays,
)
from .nn import TRAIN_PRESETS, build_reference_model, evaluate_accuracy, train_model
from .runtime import RuntimeModel
from .stream import (
    EdgeServer,
    dataset_source,
    fixed_source,
    parse_address,
    serve,
    stream_client,
    synthetic_source,
    wall_image,
)

log = logging.getLogger("thermoedge")

PRESETS = sorted(TRAIN_PRESETS)
CALIBRATION_SAMPLES = 512


def resolve_seed(seed: int) -> int:
    env = os.environ.get("THERMOEDGE_SEED")
    return int(env) if env else seed


def _splits(data_dir, size: int, seed: int):
    ds = load_dataset_dir(data_dir)
    train, val, test = split_dataset(ds, (0.6, 0.2, 0.2), seed)
    return to_arrays(train, size), to_arrays(val, size), to_arrays(test, size), ds.class_count


def cmd_gen_data(args):
    seed = resolve_seed(args.seed)
    ds = generate_synthetic(args.per_class, args.size, seed)
    save_dataset_dir(ds, args.out)
    print(f"wrote {len(ds)} images ({ds.class_count} classes) to {args.out}")


def cmd_train(args):
    seed = resolve_seed(args.seed)
    cfg = replace(TRAIN_PRESETS[args.preset], seed=seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if args.lr is not None:
        cfg = replace(cfg, learning_rate=args.lr)
    train, val, test, k = _splits(args.data, args.size, seed)
    graph = build_reference_model(args.model, args.size, k, dropout=cfg.dropout_rate, seed=seed)
    augment = batch_augmenter(AugmentConfig()) if args.augment else None
    graph, history = train_model(graph, train, val, cfg, augment=augment)
    for rec in history:
        log.info("epoch %d loss %.4f val_acc %.4f", rec.epoch, rec.train_loss, rec.val_accuracy)
    acc = evaluate_accuracy(graph, test)
    meta = {"name": args.model, "preset": args.preset, "seed": seed, "train": asdict(cfg)}
    n = serialize(convert_dense(graph, metadata=meta), args.out)
    print(f"test accuracy {acc:.4f}; wrote {n} bytes to {args.out}")


def cmd_compress(args):
    src = deserialize(args.model)
    graph = src.to_graph()
    seed = resolve_seed(args.seed if args.seed is not None else src.metadata.get("seed", 0))
    meta = dict(src.metadata, mode=args.mode)
    if args.mode == "half":
        out = convert_half(graph, meta)
    else:
        if args.data is None:
            raise SystemExit("--data is required for pqat/ptq (fine-tuning and calibration data)")
        train, _, _, _ = _splits(args.data, graph.input_size, seed)
        calib = representative_subset(train[0], CALIBRATION_SAMPLES, seed)
        if args.mode == "ptq":
            out = post_training_quantize(graph, calib, meta)
        else:
            cfg = PQAT_PRESETS[args.preset or src.metadata.get("preset", "mobilenet")]
            overrides = {k: v for k, v in (("target_sparsity", args.sparsity), ("prune_lr", args.prune_lr),
                                           ("prune_epochs", args.prune_epochs), ("quant_lr", args.quant_lr),
                                           ("quant_epochs", args.quant_epochs)) if v is not None}
            cfg = replace(cfg, **overrides)
            out = pqat_pipeline(graph, cfg, train, calib, seed=seed, metadata=meta)
    n = serialize(out, args.out)
    print(f"{out.kind.name.lower()} model: {n} bytes (source {model_size_bytes(src)}) -> {args.out}")


def cmd_serve(args):
    logging.basicConfig(level=logging.INFO)
    sessions = serve(args.model, parse_address(args.bind), label=args.label,
                     ready=lambda a: print(f"listening on {a[0]}:{a[1]}", flush=True))
    for s in sessions:
        print(f"received {s.frames_received} classified {s.frames_classified} dropped {s.frames_dropped}")


def _source(args):
    if args.source == "fixed":
        return fixed_source(read_pgm(args.image) if args.image else wall_image())
    if args.source == "dir":
        if args.data is None:
            raise SystemExit("--data is required with --source dir")
        return dataset_source(args.data)
    return synthetic_source(resolve_seed(args.seed))


def cmd_stream(args):
    rate = args.rate if args.rate > 0 else None
    report = stream_client(parse_address(args.addr), _source(args), rate=rate, count=args.count)
    fps = B.fps_from_client(report)
    s = report.stats
    print(f"sent {s.frames_sent} results {len(report.results)} dropped {s.frames_dropped} "
          f"fps {fps.fps:.2f} send span {report.send_span_s:.2f}s")


def cmd_bench(args):
    seed = resolve_seed(args.seed)
    compressed = deserialize(args.model)
    model = RuntimeModel(compressed, label=args.label)
    _, _, test, _ = _splits(args.data, compressed.input_size, seed)
    acc = B.bench_accuracy(model, test)
    name = args.name or compressed.metadata.get("name") or Path(args.model).stem
    row = B.SizeAccuracyRow(name, model.label, model_size_bytes(compressed), acc)
    latency = None if args.no_latency else B.bench_inference(model, test[0], args.n)
    fps = None
    if args.fps:
        with EdgeServer.from_model(model) as server:
            fps = B.bench_fps(server.address, args.frames, args.rate if args.rate > 0 else None)
    manifest = B.RunManifest(seed, {
        "command": "bench", "backend": model.label, "kind": compressed.kind.name.lower(),
        "n": args.n, "latency": not args.no_latency, "fps": bool(args.fps),
        "model_metadata": compressed.metadata,
    })
    text = B.emit_report([B.ReportRow.combine(row, latency, fps)], manifest, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)


def cmd_report(args):
    text = B.merge_reports(args.merge, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thermoedge", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic PGM dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=300)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a reference model (dense32 container)")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=["micro_cnn", "micro_mobilenet"], default="micro_cnn")
    p.add_argument("--preset", choices=PRESETS, default="vgg16")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, choices=[32, 96], default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--augment", action="store_true", help="on-the-fly augmentation of training batches")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="convert to pqat/ptq int8 or half precision")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=["pqat", "ptq", "half"], required=True)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--sparsity", type=float)
    p.add_argument("--prune-lr", type=float)
    p.add_argument("--prune-epochs", type=int)
    p.add_argument("--quant-lr", type=float)
    p.add_argument("--quant-epochs", type=int)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("serve", help="run the edge classification server")
    p.add_argument("--model", required=True)
    p.add_argument("--bind", default="127.0.0.1:5500")
    p.add_argument("--label")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("stream", help="camera simulator client")
    p.add_argument("--addr", default="127.0.0.1:5500")
    p.add_argument("--source", choices=["fixed", "dir", "synthetic"], default="fixed")
    p.add_argument("--data")
    p.add_argument("--image", help="PGM file for --source fixed (default: a flat wall)")
    p.add_argument("--rate", type=float, default=B.DEFAULT_RATE, help="frames per second; 0 = unpaced")
    p.add_argument("--count", type=int, default=B.DEFAULT_FRAMES)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("bench", help="latency / accuracy / size (/ fps) report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=B.DEFAULT_N)
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.add_argument("--out")
    p.add_argument("--label", help="backend label carried into the report (e.g. edgetpu_std)")
    p.add_argument("--name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-latency", action="store_true", help="skip wall-clock timing (reproducible reports)")
    p.add_argument("--fps", action="store_true", help="also stream frames through a loopback server")
    p.add_argument("--frames", type=int, default=B.DEFAULT_FRAMES)
    p.add_argument("--rate", type=float, default=B.DEFAULT_RATE)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="merge bench reports")
    p.add_argument("--merge", nargs="+", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
