"""epk-plot: render figures from the epk CLI's CSV outputs.

Usage: epk-plot <kind> --in <csv> [--in2 <csv> ...] --out <png>
Kinds: compare, align, refine (multiple --in), field, contrib, pathdiag.
"""

from __future__ import annotations

import argparse
import sys

from .figures import RENDERERS, FigureJob, PlotError, render


def build_parser():
    p = argparse.ArgumentParser(prog="epk-plot", description=__doc__)
    p.add_argument("kind", choices=sorted(RENDERERS))
    p.add_argument(
        "--in",
        dest="inputs",
        action="append",
        required=True,
        help="input CSV (repeatable; order matters for refine/contrib)",
    )
    p.add_argument("--in2", dest="inputs", action="append", help=argparse.SUPPRESS)
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--dpi", type=int, default=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    options = {}
    if args.dpi:
        options["dpi"] = args.dpi
    job = FigureJob(kind=args.kind, inputs=args.inputs, out=args.out, options=options)
    try:
        render(job)
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
