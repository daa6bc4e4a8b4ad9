"""Command-line entry point: ``ipost <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .layers import build_ipost_cnn
from .persistence import FormatError, load_checkpoint, load_gallery, save_checkpoint, save_gallery
from .recognizers import DEFAULT_THRESHOLD, EmbeddingGallery, embed_face, enroll, match_face
from .simulator import ScenarioConfig, default_prices, simulate, verify_journal
from .synthetic import SyntheticDatasetSpec, generate_dataset, load_dataset, read_pnm, split, to_float
from .training import TrainConfig, evaluate, fit


def _csv(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def _prices(text: str) -> dict[str, int]:
    out = {}
    for item in _csv(text):
        label, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"price entry {item!r} is not label=cents")
        out[label] = int(value)
    return out


def cmd_gen_data(args) -> int:
    classes = _csv(args.classes) if args.classes else (
        ["cross", "disc"] if args.task == "items" else [f"id{i:02d}" for i in range(5)])
    spec = SyntheticDatasetSpec(task=args.task, classes=classes, size=args.size, samples=args.samples,
                                noise=args.noise, seed=args.seed, channels=args.channels)
    manifest = generate_dataset(spec, args.out)
    print(f"wrote {len(manifest)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    data = load_dataset(args.data)
    if args.val_data:
        train, val = data, load_dataset(args.val_data, data.classes)
    elif args.val_fraction > 0:
        train, val = split(data, args.val_fraction, args.seed)
    else:
        train, val = data, None
    loss = args.loss or ("triplet" if args.embedding_dim else ("bce" if len(data.classes) == 2 else "cce"))
    input_shape = data.images.shape[1:]
    net = build_ipost_cnn(input_shape, len(data.classes), embedding_dim=args.embedding_dim,
                          hidden=args.hidden, dropout_rate=args.dropout, seed=args.seed,
                          labels=None if args.embedding_dim else data.classes)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                         learning_rate=args.lr, loss=loss, margin=args.margin, dropout_rate=args.dropout)
    history = fit(net, train, config, val, args.metrics)
    save_checkpoint(net, args.out)
    last = history[-1]
    print(f"epoch {last.epoch}\ttrain_loss {last.train_loss:.6f}\tval_acc {last.val_acc:.4f}\tf1 {last.f1:.4f}")
    return 0


def cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, None if net.is_embedding else net.labels)
    acc, f1, loss = evaluate(net, data)
    print(f"accuracy {acc:.6f}\tf1 {f1:.6f}\tloss {loss:.6f}")
    return 0


def cmd_enroll(args) -> int:
    net = load_checkpoint(args.checkpoint)
    gallery_path = Path(args.gallery)
    if gallery_path.exists():
        gallery = load_gallery(gallery_path)
        if args.threshold is not None:
            gallery.accept_threshold = args.threshold
    else:
        gallery = EmbeddingGallery(args.threshold if args.threshold is not None else DEFAULT_THRESHOLD)
    images = np.stack([to_float(read_pnm(p)) for p in args.images])
    enroll(gallery, args.identity, images, net)
    save_gallery(gallery, gallery_path)
    print(f"{args.identity}: {len(gallery.entries[args.identity])} embeddings; "
          f"{len(gallery.entries)} identities in gallery")
    return 0


def cmd_match(args) -> int:
    net = load_checkpoint(args.checkpoint)
    gallery = load_gallery(args.gallery)
    result = match_face(gallery, embed_face(net, to_float(read_pnm(args.image))))
    decision = f"accepted {result.identity}" if result.accepted else "unknown"
    print(f"{decision}\tdistance {result.best_distance:.6f}\tsimilarity {result.similarity:.6f}")
    return 0


def cmd_simulate(args) -> int:
    item_net = load_checkpoint(args.item_checkpoint)
    face_net = load_checkpoint(args.face_checkpoint)
    gallery = load_gallery(args.gallery)
    prices = args.prices or default_prices(item_net.labels)
    scenario = ScenarioConfig(shoppers=args.shoppers, seed=args.seed, unknown_fraction=args.unknown_fraction,
                              putback_prob=args.putback_prob, ttl_ms=args.ttl_ms, prices=prices,
                              picks_max=args.max_picks, noise=args.noise)
    report = simulate(scenario, item_net, face_net, gallery, args.journal)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="ascii")
    print(f"shoppers {report.shoppers}\tchecked_out {report.checked_out}\tvoided {report.voided}\t"
          f"rejected {report.rejected_entries}\trevenue {report.revenue}\tviolations {report.violations}")
    return 0 if report.violations == 0 else 1


def cmd_journal_verify(args) -> int:
    text = Path(args.journal).read_bytes().decode("utf-8")
    problems = verify_journal(text)
    for p in problems:
        print(p, file=sys.stderr)
    n = len([line for line in text.splitlines() if line])
    print(f"{'ok' if not problems else 'FAILED'}\t{n} records")
    return 0 if not problems else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipost", description="Cashier-less checkout toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic glyph dataset")
    p.add_argument("--task", choices=("items", "faces"), default="items")
    p.add_argument("--classes", help="comma-separated class or identity names")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--samples", type=int, default=50, help="samples per class")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--channels", type=int, choices=(1, 3), default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a classifier or face embedder")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data")
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="per-epoch metrics file")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss", choices=("bce", "cce", "triplet"))
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embedding-dim", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and F1 of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("enroll", help="add face images for an identity to a gallery")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--identity", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--images", nargs="+", required=True)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("match", help="match one face image against a gallery")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("simulate", help="run the shopper simulation")
    p.add_argument("--item-checkpoint", required=True)
    p.add_argument("--face-checkpoint", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--shoppers", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unknown-fraction", type=float, default=0.1)
    p.add_argument("--putback-prob", type=float, default=0.15)
    p.add_argument("--max-picks", type=int, default=6)
    p.add_argument("--ttl-ms", type=int, default=30 * 60 * 1000)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--prices", type=_prices, help="label=cents,... (defaults derived from classes)")
    p.add_argument("--journal", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("journal-verify", help="replay a settlement journal and check it")
    p.add_argument("--journal", required=True)
    p.set_defaults(func=cmd_journal_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    try:
        return args.func(args)
    except (ValueError, FormatError, OSError) as exc:
        print(f"ipost {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
