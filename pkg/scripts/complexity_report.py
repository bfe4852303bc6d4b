#!/usr/bin/env python3
"""Print the golden complexity table verification and optionally dump CSV."""

import argparse
import sys
from pathlib import Path

from resnetkit.analyzer import verify_tables


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--csv", default=None, help="also write the per-cell report as CSV")
    args = p.parse_args()
    report = verify_tables()
    print(report.format_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
        print(f"wrote {args.csv}")
    return 0 if report.all_pass else 1


if __name__ == "__main__":
    sys.exit(main())
