"""Command line entry: dynapsim-figures render --kind <k> --in <csv...> --out <img>."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .render import DEFAULT_BIN_WIDTH_S, FigureSpec, KINDS, render


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dynapsim-figures")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure from CSV artifacts")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--in", dest="inputs", required=True, nargs="+", help="input CSV path(s)")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument(
        "--bin-width",
        type=float,
        default=DEFAULT_BIN_WIDTH_S,
        help="histogram bin width in seconds (delay-hist)",
    )
    args = parser.parse_args(argv)

    try:
        spec = FigureSpec(
            kind=args.kind,
            inputs=tuple(args.inputs),
            output=args.out,
            bin_width_s=args.bin_width,
        )
        info = render(spec)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {info['output']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
