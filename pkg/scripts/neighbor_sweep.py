"""Best validation loss versus number of adjacent gathers, on surveys from a desk run.

Expects the run directory of the manifest to already hold clean and blended
surveys (run ``run_desk.py`` first, or pass ``--generate``).

    python scripts/neighbor_sweep.py [manifest.ini] [--k-values 0,1,2,3] [--repetitions 5]
"""

import argparse
import logging
from pathlib import Path

import torch

from seisdeblend.experiment import parse_manifest, run_experiment, sweep_summary

HERE = Path(__file__).resolve().parent


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("manifest", nargs="?", default=str(HERE / "desk.ini"))
    p.add_argument("--k-values", default=None)
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--main-epochs", type=int, default=None)
    p.add_argument("--generate", action="store_true", help="simulate and blend the surveys first")
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()

    torch.set_num_threads(args.threads)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    m = parse_manifest(Path(args.manifest))
    m.sections["run"]["stages"] = "gen, blend, sweep" if args.generate else "sweep"
    sweep = m.sections.setdefault("sweep", {})
    for key, val in (("k_values", args.k_values), ("repetitions", args.repetitions),
                     ("main_epochs", args.main_epochs)):
        if val is not None:
            sweep[key] = str(val)
    rows = run_experiment(m)["sweep"]
    for k, st in sweep_summary(rows).items():
        print(f"k={k}: median {st['median']:.6g}, min {st['min']:.6g} over {st['n_ok']} runs")


if __name__ == "__main__":
    main()
