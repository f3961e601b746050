"""Desk-scale noise sweep: how the learned parameters degrade as the demonstration gets noisier.

Takes about a minute on one core. Pass an output directory to keep the CSVs.

    python demos/noise_sweep.py [outdir]
"""

import sys
from pathlib import Path

from hypergames.experiments import noise_sweep
from hypergames.export import write_csv
from hypergames.scenarios import guess_theta, table_scenario, truth_theta


def main(outdir=None):
    spec = table_scenario()
    sweep = noise_sweep(spec, truth_theta(spec), guess_theta(spec), base_seed=0)
    print(" sigma   omega (median, IQR)          rho (median)   D median")
    for row in sweep.aggregate():
        print(
            f"{row['sigma']:6.1f}   {row['omega_median']:.4f} [{row['omega_q25']:.4f}, {row['omega_q75']:.4f}]"
            f"   {row['rho_median']:8.2f}     {row['error_median']:8.3f}"
        )
    if outdir:
        out = Path(outdir)
        write_csv(out / "trials.csv", sweep.trial_rows())
        write_csv(out / "aggregate.csv", sweep.aggregate_rows())
        print(f"wrote {out}/trials.csv and aggregate.csv")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
