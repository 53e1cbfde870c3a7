"""Command-line entry points for adapter training and smoke inference."""

from __future__ import annotations

import argparse
import sys

from .data import TrainError
from .infer import smoke_infer
from .lora import DEFAULT_TARGET_MODULES
from .train import TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cor-finetune")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a low-rank adapter on an SFT file")
    t.add_argument("--sft", required=True, help="line-delimited prompt/completion SFT file")
    t.add_argument("--out", required=True, help="adapter output directory")
    t.add_argument("--base", default="toy", help="base model: 'toy' or a hosted checkpoint id")
    t.add_argument("--rank", type=int, default=128)
    t.add_argument("--scaling", type=int, default=16)
    t.add_argument("--lr", type=float, default=0.0003)
    t.add_argument("--schedule", default="cosine", choices=["cosine"])
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument(
        "--target-modules", default=",".join(DEFAULT_TARGET_MODULES),
        help="comma-separated linear-module names to adapt",
    )

    s = sub.add_parser("smoke", help="greedy-decode one prompt through a trained adapter")
    s.add_argument("--adapter", required=True)
    s.add_argument("--prompt", default=None)
    s.add_argument("--prompt-file", default=None)
    s.add_argument("--max-new-tokens", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = TrainConfig(
                sft_path=args.sft,
                out_dir=args.out,
                base=args.base,
                rank=args.rank,
                scaling=args.scaling,
                lr=args.lr,
                schedule=args.schedule,
                batch_size=args.batch_size,
                epochs=args.epochs,
                seed=args.seed,
                target_modules=tuple(m for m in args.target_modules.split(",") if m),
            )
            out = train(config)
            print(f"adapter written to {out}")
        else:
            if args.prompt is None and args.prompt_file is None:
                print("one of --prompt/--prompt-file is required", file=sys.stderr)
                return 2
            prompt = args.prompt
            if prompt is None:
                with open(args.prompt_file, encoding="utf-8") as fh:
                    prompt = fh.read()
            print(smoke_infer(args.adapter, prompt, args.max_new_tokens))
    except (TrainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
