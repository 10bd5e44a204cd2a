"""Command-line entry points: ``serve`` a saved model, ``train`` a new one."""

import argparse
import sys

from .architectures import ARCHITECTURES
from .data import DataError
from .modelfile import ModelFileError
from .server import serve
from .train import train_model


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pixelstorm-server",
        description="Train CIFAR-scale classifiers and serve them as "
        "probability oracles over HTTP.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="serve a saved model file")
    p_serve.add_argument("--model", required=True, help="path to a saved model")
    p_serve.add_argument("--port", required=True, type=int)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument(
        "--quiet", action="store_true", help="suppress per-request logging"
    )

    p_train = sub.add_parser("train", help="train an architecture on CIFAR-10")
    p_train.add_argument("--arch", required=True, choices=sorted(ARCHITECTURES))
    p_train.add_argument("--data", required=True, help="directory of .bin batches")
    p_train.add_argument("--out", required=True, help="where to save the model")
    p_train.add_argument("--epochs", type=int, default=50)
    p_train.add_argument("--batch-size", type=int, default=128)
    p_train.add_argument("--lr", type=float, default=0.01)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument(
        "--limit", type=int, default=None, help="cap images per split (smoke runs)"
    )
    p_train.add_argument("--device", default="cpu")
    p_train.add_argument(
        "--no-second-avgpool",
        action="store_true",
        help="nin variant: drop the mid-network average pool",
    )
    p_train.add_argument(
        "--no-first-batchnorm",
        action="store_true",
        help="allconv variant: drop batch normalization on the first layer",
    )
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            serve(args.model, args.port, host=args.host, verbose=not args.quiet)
        else:
            variant_flags = {}
            if args.no_second_avgpool:
                variant_flags["second_avgpool"] = False
            if args.no_first_batchnorm:
                variant_flags["first_batchnorm"] = False
            train_model(
                args.arch,
                args.data,
                args.out,
                epochs=args.epochs,
                batch_size=args.batch_size,
                lr=args.lr,
                seed=args.seed,
                limit=args.limit,
                device=args.device,
                **variant_flags,
            )
    except (DataError, ModelFileError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
