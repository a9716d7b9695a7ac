"""Run the desk-scale experiment manifest end to end and print the SNR summary.

    python scripts/run_desk.py [manifest.ini] [--seed N] [--out DIR] [--stages gen,blend,...]
"""

import argparse
import logging
from pathlib import Path

import torch

from seisdeblend.experiment import parse_manifest, run_experiment

HERE = Path(__file__).resolve().parent


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("manifest", nargs="?", default=str(HERE / "desk.ini"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="override the run directory")
    p.add_argument("--stages", default=None, help="override the stage list")
    p.add_argument("--threads", type=int, default=1, help="torch intra-op threads")
    args = p.parse_args()

    torch.set_num_threads(args.threads)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    m = parse_manifest(Path(args.manifest))
    run = m.sections.setdefault("run", {})
    for key, val in (("seed", args.seed), ("out", args.out), ("stages", args.stages)):
        if val is not None:
            run[key] = str(val)
    results = run_experiment(m)
    for survey, snr_in, snr_out in results.get("snr", []):
        print(f"survey {survey}: input {snr_in:.2f} dB, deblended {snr_out:.2f} dB, gain {snr_out - snr_in:.2f} dB")
    print(f"artifacts in {results['out']}")


if __name__ == "__main__":
    main()
