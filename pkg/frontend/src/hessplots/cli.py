"""Render figures from figure-spec JSON files.

Usage: hessplots render SPEC.json [SPEC2.json ...]
Exit status: 0 success, 1 on schema or missing-input errors.
"""

import argparse
import sys

from .figures import FigureSpec, render
from .formats import MissingInputError, SchemaMismatchError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hessplots")
    sub = parser.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("render")
    sp.add_argument("specs", nargs="+", help="figure-spec JSON files")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        for path in args.specs:
            for out in render(FigureSpec.from_json(path)):
                print(out)
    except (SchemaMismatchError, MissingInputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
