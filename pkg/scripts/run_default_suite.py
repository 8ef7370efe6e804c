"""Run the default clean-vs-biased suite and print the qualitative verdicts.

    python scripts/run_default_suite.py --out runs/default [--seeds 10] [--config cfg.json]

Writes the same files as ``nclab run`` and then evaluates the collapse,
degradation and parity checks on the resulting records.
"""

import argparse
import sys
import time

from nclab.cli import main as cli_main
from nclab.criteria import suite_verdicts
from nclab.experiment import load_records


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/default")
    parser.add_argument("--seeds", default="10")
    parser.add_argument("--config")
    args = parser.parse_args()
    argv = ["run", "--out", args.out, "--seeds", args.seeds]
    if args.config:
        argv += ["--config", args.config]
    start = time.perf_counter()
    code = cli_main(argv)
    if code:
        return code
    print(f"suite finished in {time.perf_counter() - start:.0f}s")
    records = load_records(args.out)
    verdicts = suite_verdicts(records)
    for v in verdicts:
        print(v.line())
    return 0 if all(v.passed for v in verdicts) else 1


if __name__ == "__main__":
    sys.exit(main())
