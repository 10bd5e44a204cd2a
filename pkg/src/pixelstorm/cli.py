"""Command-line front end: ``attack``, ``baseline`` and ``report``.

Every flag can also come from a flat ``key=value`` config file (``--config``);
explicit flags win over the file.  When ``--oracle`` is omitted, the
``PIXELSTORM_ORACLE_URL`` environment variable supplies a remote oracle.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .campaign import (
    CampaignConfig,
    load_outcomes,
    load_traces,
    run_campaign,
    write_report_artifacts,
)
from .errors import FormatError, PixelstormError
from .imagery import load_cifar10_batch, load_manifest
from .metrics import build_report
from .oracle import RemoteOracle, load_builtin_oracle

ENV_ORACLE_URL = "PIXELSTORM_ORACLE_URL"

_PRESET_ALIASES = {
    "kaggle": "kaggle_cifar10",
    "kaggle_cifar10": "kaggle_cifar10",
    "original": "original_cifar10",
    "original_cifar10": "original_cifar10",
    "imagenet": "imagenet",
}


def _parse_bool(raw):
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_CONVERTERS = {
    "dataset": str,
    "manifest": str,
    "oracle": str,
    "preset": str,
    "mode": str,
    "pixels": int,
    "images": int,
    "sample_seed": int,
    "de_seed": int,
    "out": str,
    "workers": int,
    "attempts": int,
    "figures": _parse_bool,
}


def read_config(path) -> dict:
    """Parse a flat key=value config file (# starts a comment line)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, raw = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _CONVERTERS:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CONVERTERS[key](raw.strip())
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return values


def _apply_config(args):
    if not getattr(args, "config", None):
        return
    for key, value in read_config(args.config).items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)


def _add_common(parser, with_attack_flags):
    parser.add_argument("--config", help="flat key=value file supplying flag defaults")
    parser.add_argument("--dataset", help="CIFAR-10 binary batch file to attack")
    parser.add_argument("--manifest", help="PNG manifest file: <path>,<true_class> per line")
    parser.add_argument(
        "--oracle",
        help="builtin:<bundle-dir> or remote:<url> (default: $PIXELSTORM_ORACLE_URL)",
    )
    parser.add_argument("--images", type=int, help="how many images to sample (default: all)")
    parser.add_argument("--sample-seed", type=int, dest="sample_seed", help="image sampling seed")
    parser.add_argument("--de-seed", type=int, dest="de_seed", help="attack randomness seed")
    parser.add_argument("--out", help="output directory for records and the report")
    parser.add_argument("--workers", type=int, help="worker pool size (default: one per processor)")
    parser.add_argument(
        "--no-figures",
        dest="figures",
        action="store_const",
        const=False,
        help="skip figure rendering",
    )
    if with_attack_flags:
        parser.add_argument(
            "--preset",
            choices=sorted(_PRESET_ALIASES),
            help="attack preset (default: kaggle)",
        )
        parser.add_argument(
            "--mode", choices=["targeted", "nontargeted"], help="attack mode (default: nontargeted)"
        )
        parser.add_argument(
            "--pixels", type=int, choices=[1, 3, 5], help="pixel budget (default: 1)"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pixelstorm",
        description="Few-pixel black-box attacks against probability oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    attack = sub.add_parser("attack", help="run an evolutionary attack campaign")
    _add_common(attack, with_attack_flags=True)

    baseline = sub.add_parser("baseline", help="run the random one-pixel control")
    _add_common(baseline, with_attack_flags=False)
    baseline.add_argument("--attempts", type=int, help="random attempts per image (default: 100)")

    report = sub.add_parser("report", help="recompute the report from stored records")
    report.add_argument("--out", required=True, help="campaign directory to (re)summarize")
    report.add_argument(
        "--no-figures",
        dest="figures",
        action="store_const",
        const=False,
        help="skip figure rendering",
    )
    return parser


def _resolve_oracle(args):
    spec = args.oracle
    if spec is None and os.environ.get(ENV_ORACLE_URL):
        spec = f"remote:{os.environ[ENV_ORACLE_URL]}"
    if spec is None:
        raise ValueError(f"no oracle: pass --oracle or set ${ENV_ORACLE_URL}")
    if spec.startswith("builtin:"):
        return load_builtin_oracle(spec[len("builtin:") :])
    if spec.startswith("remote:"):
        return RemoteOracle(spec[len("remote:") :])
    raise ValueError(f"oracle must be builtin:<dir> or remote:<url>, got {spec!r}")


def _load_dataset(args):
    if bool(args.dataset) == bool(args.manifest):
        raise ValueError("pass exactly one of --dataset or --manifest")
    if args.dataset:
        return load_cifar10_batch(args.dataset)
    return load_manifest(args.manifest)


def _print_summary(outcomes, report):
    parts = [f"{len(outcomes)} attacks over {report.num_images} images"]
    if report.success_rate_targeted is not None:
        parts.append(f"targeted success {report.success_rate_targeted:.1%}")
    if report.success_rate_nontargeted is not None:
        parts.append(f"non-targeted success {report.success_rate_nontargeted:.1%}")
    if report.derived_nontargeted_success_rate is not None:
        parts.append(f"derived non-targeted {report.derived_nontargeted_success_rate:.1%}")
    if report.confidence is not None:
        parts.append(f"confidence {report.confidence:.3f}")
    print("; ".join(parts))


def cmd_attack(args) -> int:
    _apply_config(args)
    if args.out is None:
        raise ValueError("--out is required")
    oracle = _resolve_oracle(args)
    dataset = _load_dataset(args)
    config = CampaignConfig(
        mode=args.mode or "nontargeted",
        preset=_PRESET_ALIASES[args.preset or "kaggle"],
        pixel_count=args.pixels or 1,
        num_images=args.images,
        sample_seed=args.sample_seed or 0,
        de_seed=args.de_seed or 0,
        workers=args.workers,
    )
    outcomes, report = run_campaign(
        oracle,
        dataset,
        config,
        out_dir=args.out,
        render_figures=args.figures is not False,
    )
    _print_summary(outcomes, report)
    print(f"artifacts written to {args.out}")
    return 0


def cmd_baseline(args) -> int:
    _apply_config(args)
    if args.out is None:
        raise ValueError("--out is required")
    oracle = _resolve_oracle(args)
    dataset = _load_dataset(args)
    config = CampaignConfig(
        mode="baseline",
        num_images=args.images,
        sample_seed=args.sample_seed or 0,
        de_seed=args.de_seed or 0,
        workers=args.workers,
        baseline_attempts=args.attempts or 100,
    )
    outcomes, report = run_campaign(
        oracle,
        dataset,
        config,
        out_dir=args.out,
        render_figures=args.figures is not False,
    )
    _print_summary(outcomes, report)
    print(f"artifacts written to {args.out}")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    outcomes = load_outcomes(out_dir)
    if not outcomes:
        raise ValueError(f"no attack records found in {out_dir}")
    report = build_report(outcomes, num_classes=len(outcomes[0].final_probs))
    write_report_artifacts(
        out_dir,
        outcomes,
        report,
        render_figures=args.figures is not False,
        traces=load_traces(out_dir) or None,
    )
    _print_summary(outcomes, report)
    return 0


_COMMANDS = {"attack": cmd_attack, "baseline": cmd_baseline, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (PixelstormError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
