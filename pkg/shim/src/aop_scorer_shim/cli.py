"""aop-scorer-shim command line: serve the protocol or sweep checkpoints."""

from __future__ import annotations

import argparse
import logging
import sys

from .server import ScorerServer, ShimConfig, run_sweep


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="model identifier or local checkpoint path")
    p.add_argument("--revision", help="checkpoint/revision label")
    p.add_argument("--device", default="cpu")
    p.add_argument("--max-length", type=int, default=1024)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--no-deterministic", action="store_true")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="aop-scorer-shim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="serve the scorer protocol")
    _add_model_args(serve)
    serve.add_argument(
        "--listen",
        default="stdio",
        help="'stdio' (default) or tcp:HOST:PORT",
    )

    sweep = sub.add_parser("sweep", help="score a request file under several revisions")
    _add_model_args(sweep)
    sweep.add_argument("--revisions", required=True, help="comma-separated revision labels")
    sweep.add_argument("--requests", required=True, help="NDJSON request file")
    sweep.add_argument("--out-dir", required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    config = ShimConfig(
        model_id=args.model,
        revision=args.revision,
        device=args.device,
        max_length=args.max_length,
        batch_size=args.batch_size,
        deterministic=not args.no_deterministic,
    )
    if args.command == "serve":
        if args.listen == "stdio":
            ScorerServer(config).serve_stdio()
        elif args.listen.startswith("tcp:"):
            _, host, port = args.listen.split(":")
            ScorerServer(config).serve_tcp(host, int(port))
        else:
            parser.error(f"--listen must be stdio or tcp:HOST:PORT, got {args.listen!r}")
        return 0
    run_sweep(config, args.revisions.split(","), args.requests, args.out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
