"""Run an experiment config and print mean PSNR per (rate, SNR) for each solver.

Usage: python3 scripts/run_sweep.py [config.json] [--workers N]
"""
import argparse
from pathlib import Path

from amrf_cs.bench import ExperimentConfig, run_experiment, summarize

DEFAULT = Path(__file__).parent / "configs" / "synthetic_sweep.json"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config", nargs="?", default=str(DEFAULT))
    p.add_argument("--workers", type=int, default=None)
    args = p.parse_args()

    cfg = ExperimentConfig.from_json(args.config)
    cells = summarize(run_experiment(cfg, workers=args.workers))
    solvers = list(cfg.solvers)
    table = {}
    for c in cells:
        table.setdefault((c["rate"], str(c["snr_db"])), {})[c["solver"]] = c["psnr_mean"]
    print(f"{'rate':>5} {'snr':>9} " + " ".join(f"{s:>9}" for s in solvers))
    for (rate, snr), row in table.items():
        print(f"{rate:5.2f} {snr:>9} " + " ".join(f"{row.get(s, float('nan')):9.2f}" for s in solvers))
    print(f"reports in {cfg.output_dir}")


if __name__ == "__main__":
    main()
