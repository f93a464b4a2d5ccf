"""Command-line entry points.

Each subcommand runs one pipeline phase against a run directory:

    mwtdiff generate-data     --run-dir runs/demo
    mwtdiff pretrain-wavevit  --run-dir runs/demo
    mwtdiff train-vae         --run-dir runs/demo
    mwtdiff train-base        --run-dir runs/demo
    mwtdiff train-mwt         --run-dir runs/demo
    mwtdiff evaluate          --run-dir runs/demo
    mwtdiff ablate            --run-dir runs/demo
    mwtdiff super-resolve     --run-dir runs/demo --lr img.png \
        --metadata meta.json --caption "A fMoW satellite image of a crop field"

The run directory comes from --run-dir, else the MWT_RUN_DIR environment
variable, else ./mwtdiff-run. Configuration is TOML (--config) plus
repeatable dotted overrides (--set train.base_steps=200).

Exit codes: 0 success, 2 configuration or argument error, 3 missing or
mismatched prerequisite artifact, 4 bad or corrupt data.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import pipeline
from .captions import Caption
from .config import load_config
from .embeddings import MetadataRecord
from .errors import ConfigError, DataError, DependencyError
from .images import bicubic_resize, load_png, make_grid, save_png

EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_DATA = 4


def _log(msg: str) -> None:
    print(msg, flush=True)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--run-dir", default=None, help="run directory (default: $MWT_RUN_DIR or ./mwtdiff-run)")
    sub.add_argument("--config", default=None, help="TOML config file")
    sub.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    sub.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub.add_argument(
        "--allow-mismatch",
        action="store_true",
        help="proceed even if an artifact was built under a different config hash",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwtdiff",
        description="metadata/wavelet/time conditioned latent diffusion super-resolution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("generate-data", help="write the synthetic paired dataset"))
    _add_common(sub.add_parser("pretrain-wavevit", help="supervised category pretraining"))
    _add_common(sub.add_parser("train-vae", help="train the latent autoencoder"))
    _add_common(sub.add_parser("train-base", help="train denoiser and caption table on HR latents"))

    p = sub.add_parser("train-mwt", help="train conditioning encoder + SFT heads (backbone frozen)")
    _add_common(p)
    p.add_argument("--ablation", default="full", choices=pipeline.ABLATIONS)

    p = sub.add_parser("evaluate", help="score the model on the validation split")
    _add_common(p)
    p.add_argument("--ablation", default="full", choices=pipeline.ABLATIONS)
    p.add_argument(
        "--category",
        action="append",
        default=None,
        dest="categories",
        help="score only this category (repeatable; default: first eval.num_scenes pairs)",
    )
    p.add_argument(
        "--limit-per-category",
        type=int,
        default=None,
        help="first N val pairs of each category instead of the num_scenes window",
    )

    p = sub.add_parser("ablate", help="retrain and evaluate ablations, emit delta report")
    _add_common(p)
    p.add_argument(
        "--modes",
        nargs="+",
        default=["no_wavevit", "no_text"],
        help="ablation modes to run",
    )

    p = sub.add_parser("super-resolve", help="super-resolve one LR image")
    _add_common(p)
    p.add_argument("--lr", required=True, help="LR input PNG")
    p.add_argument("--metadata", required=True, help="JSON file with the seven metadata fields")
    p.add_argument("--caption", required=True, help="full caption text")
    p.add_argument("--out", default=None, help="output directory (default: <run>/reports/samples)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None, help="sampling steps (default: eval.sample_steps)")
    p.add_argument("--ablation", default="full", choices=pipeline.ABLATIONS)
    return parser


def _resolve_run_dir(args) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    env = os.environ.get("MWT_RUN_DIR")
    if env:
        return Path(env)
    return Path("mwtdiff-run")


def cmd_super_resolve(cfg, run_dir: Path, args, log) -> None:
    if not Path(args.lr).exists():
        raise ConfigError(f"LR image not found: {args.lr}")
    lr = load_png(args.lr)
    meta_path = Path(args.metadata)
    if not meta_path.exists():
        raise ConfigError(f"metadata file not found: {meta_path}")
    record = MetadataRecord.from_json(meta_path.read_text())

    resolver = pipeline.SuperResolver.from_run_dir(
        cfg, run_dir, args.ablation, args.allow_mismatch
    )
    caption = Caption.parse(args.caption, resolver.caption_enc.vocabulary)
    sr = resolver.super_resolve_arrays(
        [lr], [record], [caption], args.seed, args.steps
    )[0]

    out_dir = Path(args.out) if args.out else run_dir / "reports" / "samples"
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.lr).stem
    sr_path = out_dir / f"{stem}_sr.png"
    grid_path = out_dir / f"{stem}_grid.png"
    save_png(sr_path, sr.data)
    up = bicubic_resize(lr, sr.data.shape[:2])
    save_png(grid_path, make_grid([[lr, up, sr.data]]))
    if log is not None:
        log(f"wrote {sr_path} and {grid_path}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    log = None if args.quiet else _log
    try:
        cfg = load_config(args.config, args.overrides)
        run_dir = _resolve_run_dir(args)

        if args.command == "generate-data":
            pipeline.run_generate_data(cfg, run_dir, log)
        elif args.command == "pretrain-wavevit":
            pipeline.run_pretrain_wavevit(cfg, run_dir, log, args.allow_mismatch)
        elif args.command == "train-vae":
            pipeline.run_train_vae(cfg, run_dir, log, args.allow_mismatch)
        elif args.command == "train-base":
            pipeline.run_train_base(cfg, run_dir, log, args.allow_mismatch)
        elif args.command == "train-mwt":
            pipeline.run_train_mwt(
                cfg, run_dir, log, ablation=args.ablation, allow_mismatch=args.allow_mismatch
            )
        elif args.command == "evaluate":
            pipeline.run_evaluate(
                cfg, run_dir, args.ablation, log, args.allow_mismatch,
                categories_filter=args.categories,
                limit_per_category=args.limit_per_category,
            )
        elif args.command == "ablate":
            pipeline.run_ablate(
                cfg, run_dir, args.modes, log, args.allow_mismatch
            )
        elif args.command == "super-resolve":
            cmd_super_resolve(cfg, run_dir, args, log)
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
