"""Command-line entry points.

    evpr convert  --events FILE --out DIR [--dt MICROS] [--size S]
    evpr synth    --out DIR [--labels N] [--per-label K] [--width W] [--height H] [--seed S] [--force]
    evpr train    --config FILE [--override section.key=value ...]
    evpr eval     --config FILE [--checkpoint FILE] [--out FILE] [--override ...]
    evpr ablate   --config FILE --axis {rho,gamma,fusion_mode} [--values CSV] [--out FILE] [--override ...]
    evpr index    --checkpoint FILE --dataset DIR --out FILE [--split NAME]
    evpr query    --checkpoint FILE --dataset DIR --query-id ID [--index FILE] [--topn N]

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import config_from_text, load_config
from .dataset import load_dataset, synthesize_toy_dataset
from .errors import DataError, NumericalError
from .events import accumulate_frame, load_events, resize_frame, save_frame_png, slice_stream
from .retrieval import build_index, load_index, query_topn, save_index
from .trainer import (
    Checkpoint,
    ablate,
    build_encoding_cache,
    compute_descriptors,
    evaluate,
    load_model,
    split_from_config,
    train,
)

DEFAULT_WINDOW_US = 33_000


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _cmd_convert(args) -> int:
    try:
        stream = load_events(args.events)
    except OSError as exc:
        raise DataError(f"cannot read {args.events}: {exc}") from exc
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    slices = slice_stream(stream, args.dt)
    if not slices:
        print(f"warning: {args.events} contains no events, nothing written", file=sys.stderr)
        return 0
    stem = Path(args.events).stem
    for k, sub in enumerate(slices):
        frame = accumulate_frame(sub)
        if args.size:
            frame = resize_frame(frame, args.size)
        save_frame_png(frame, out_dir / f"{stem}_{k}.png")
    print(f"wrote {len(slices)} frame(s) to {out_dir}")
    return 0


def _cmd_synth(args) -> int:
    samples = synthesize_toy_dataset(
        args.out,
        n_labels=args.labels,
        samples_per_label=args.per_label,
        resolution=(args.width, args.height),
        seed=args.seed,
        force=args.force,
    )
    labels = len({s.location_label for s in samples})
    print(f"wrote {len(samples)} samples over {labels} labels to {args.out}")
    return 0


def _checkpoint_file(config) -> Path:
    return Path(config.train.out_dir) / "checkpoint.pt"


def _cmd_train(args) -> int:
    config = load_config(args.config, args.override)
    samples = load_dataset(config.dataset.root)
    split = split_from_config(samples, config)
    path = _checkpoint_file(config)
    checkpoint, history = train(samples, split, config, checkpoint_path=path)
    final = history[-1] if history else {}
    print(
        f"trained {len(history)} epoch(s); best val R@1 {checkpoint.best_val_recall1:.4f} "
        f"at epoch {checkpoint.epoch}; final loss {final.get('loss', float('nan')):.4f}"
    )
    print(f"checkpoint written to {path}")
    return 0


def _cmd_eval(args) -> int:
    config = load_config(args.config, args.override)
    checkpoint = Checkpoint.load(args.checkpoint or _checkpoint_file(config))
    samples = load_dataset(config.dataset.root)
    split = split_from_config(samples, config)
    report = evaluate(samples, split, config, checkpoint)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


_AXIS_DEFAULTS = {
    "rho": "0.15,0.20,0.25,0.30",
    "gamma": "0.10,0.15,0.20,0.25",
    "fusion_mode": "vision_only,global,local,full",
}


def _cmd_ablate(args) -> int:
    config = load_config(args.config, args.override)
    values = (args.values or _AXIS_DEFAULTS[args.axis]).split(",")
    samples = load_dataset(config.dataset.root)
    split = split_from_config(samples, config)
    rows = ablate(samples, split, config, args.axis, [v.strip() for v in values])
    ns = sorted(rows[0]["recall_at"]) if rows else []
    header = ["value"] + [f"R@{n}" for n in ns]
    table = [[str(r["value"])] + [f"{r['recall_at'][n]:.4f}" for n in ns] for r in rows]
    out = Path(args.out) if args.out else Path(config.train.out_dir) / f"ablation_{args.axis}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(table)
    print(f"wrote {len(table)} rows to {out}")
    print(",".join(header))
    for row in table:
        print(",".join(row))
    return 0


def _load_for_inference(args):
    checkpoint = Checkpoint.load(args.checkpoint)
    config = config_from_text(checkpoint.config_text)
    config.dataset.root = str(args.dataset)
    model = load_model(config, checkpoint)
    samples = load_dataset(config.dataset.root)
    return config, model, samples


def _cmd_index(args) -> int:
    config, model, samples = _load_for_inference(args)
    if args.split != "all":
        split = split_from_config(samples, config)
        keep = split.subset(args.split)
        samples = [s for s in samples if s.sample_id in keep]
    cache = build_encoding_cache(model, samples, config.backend.image_size)
    ids = [s.sample_id for s in samples]
    descriptors = compute_descriptors(model, cache, ids)
    by_id = {s.sample_id: s for s in samples}
    index = build_index(
        (sid, by_id[sid].location_label, descriptors[i]) for i, sid in enumerate(ids)
    )
    save_index(index, args.out)
    print(f"indexed {len(index)} descriptors of dimension {index.dim} to {args.out}")
    return 0


def _cmd_query(args) -> int:
    config, model, samples = _load_for_inference(args)
    by_id = {s.sample_id: s for s in samples}
    if args.query_id not in by_id:
        raise DataError(f"query id {args.query_id!r} not in dataset {args.dataset}")
    cache = build_encoding_cache(model, samples, config.backend.image_size)
    if args.index:
        index = load_index(args.index)
    else:
        ids = [s.sample_id for s in samples]
        descriptors = compute_descriptors(model, cache, ids)
        index = build_index(
            (sid, by_id[sid].location_label, descriptors[i]) for i, sid in enumerate(ids)
        )
    query = compute_descriptors(model, cache, [args.query_id])[0]
    for rank, (sid, score) in enumerate(query_topn(index, query, args.topn), start=1):
        print(f"{rank}\t{sid}\t{score:.6f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="evpr", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="slice an event file into 16-bit frame PNGs")
    p.add_argument("--events", required=True, help="event file (.csv or binary)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dt", type=int, default=DEFAULT_WINDOW_US, help="slice window in microseconds")
    p.add_argument("--size", type=int, default=0, help="resize frames to SxS (0 keeps native)")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("synth", help="generate a synthetic toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", type=int, default=8)
    p.add_argument("--per-label", type=int, default=10)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.set_defaults(func=_cmd_synth)

    for name, fn in (("train", _cmd_train), ("eval", _cmd_eval), ("ablate", _cmd_ablate)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--override", action="append", default=[], metavar="section.key=value")
        if name == "eval":
            p.add_argument("--checkpoint", default=None)
            p.add_argument("--out", default=None, help="also write the JSON report here")
        if name == "ablate":
            p.add_argument("--axis", required=True, choices=sorted(_AXIS_DEFAULTS))
            p.add_argument("--values", default=None, help="comma-separated grid values")
            p.add_argument("--out", default=None, help="write the table as CSV here")
        p.set_defaults(func=fn)

    p = sub.add_parser("index", help="write a binary descriptor index for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="all", help="all | train | val | test | train+val ...")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("query", help="rank database entries against one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--index", default=None, help="descriptor file; defaults to indexing the dataset")
    p.add_argument("--topn", type=int, default=10)
    p.set_defaults(func=_cmd_query)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
