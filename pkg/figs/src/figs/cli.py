"""Command line for batch figure regeneration."""

from __future__ import annotations

import argparse
import sys

from .render import SchemaError, load_specs, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="figs")
    sub = parser.add_subparsers(dest="command", required=True)
    cmd = sub.add_parser("render", help="render figures from exported CSVs")
    cmd.add_argument("--spec", required=True,
                     help="JSON figure spec (object or list of objects)")
    cmd.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)

    try:
        specs = load_specs(args.spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for spec in specs:
        try:
            path = render(spec, args.out)
        except SchemaError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
