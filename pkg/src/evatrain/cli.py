"""Command line entry point: ``evatrain --config train.json``."""

from __future__ import annotations

import argparse
import sys

from .client import ProtocolDesyncError
from .config import TrainConfigError, load_config
from .train import train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="evatrain",
        description="Train an evasion policy against a running environment "
                    "server and export the weight file.")
    parser.add_argument("--config", required=True,
                        help="path to a JSON training config")
    parser.add_argument("--host", help="override the server host")
    parser.add_argument("--port", type=int, help="override the server port")
    parser.add_argument("--seed", type=int, help="override the training seed")
    parser.add_argument("--export", help="override the weight file path")
    parser.add_argument("--curve", help="override the learning-curve CSV path")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.host is not None:
            cfg.host = args.host
        if args.port is not None:
            cfg.port = args.port
        if args.seed is not None:
            cfg.seed = args.seed
        if args.export is not None:
            cfg.export_path = args.export
        if args.curve is not None:
            cfg.curve_path = args.curve
        result = train(cfg)
    except (TrainConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ProtocolDesyncError as e:
        print(f"protocol desync, aborting: {e}", file=sys.stderr)
        return 3

    if result.evals:
        last = result.evals[-1]
        print(f"final eval: mean reward {last.mean_reward:.3f} "
              f"(95% CI {last.ci95_lo:.3f}..{last.ci95_hi:.3f}) "
              f"at step {last.step}")
    print(f"weights written to {result.export_path}")
    print(f"learning curve written to {result.curve_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
