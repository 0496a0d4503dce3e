"""Run CD and CD-seeded LEA-MVD over several seeds on an MNIST profile and tabulate.

    python scripts/compare_trainers.py --profile small7x7 --subset 2000 --reps 5
    python scripts/compare_trainers.py --profile full28x28 --subset 1000 --reps 5
"""

import argparse
import statistics
from pathlib import Path

from leamvd import cli, rbm


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--profile", choices=("small7x7", "full28x28"), default="small7x7")
    p.add_argument("--subset", type=int, default=2000)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", default="runs/compare")
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()

    roots = {}
    for trainer in (rbm.CD, rbm.LEA_MVD_SEEDED):
        profile = cli.ExperimentProfile(
            name=args.profile, trainer=trainer, budget=args.budget, seed=args.seed,
            subset=args.subset, data_dir=args.data_dir, out=str(Path(args.out) / trainer),
        )
        roots[trainer] = cli.batch(profile, args.reps, jobs=args.jobs)

    n_layers = len(cli.ExperimentProfile(name=args.profile).dbn_spec.layers)
    print("layer  rep  final_CD  final_LEA  CD/LEA")
    for k in range(1, n_layers + 1):
        ratios = []
        for i in range(args.reps):
            cd = cli.read_history(roots[rbm.CD] / f"rep{i:03d}" / f"history_layer{k}.csv")[-1]["f_best"]
            lea = cli.read_history(roots[rbm.LEA_MVD_SEEDED] / f"rep{i:03d}" / f"history_layer{k}.csv")[-1]["f_best"]
            ratios.append(cd / lea)
            print(f"{k:>5} {i:>4} {cd:>9.1f} {lea:>10.1f} {cd / lea:>7.3f}")
        print(f"layer {k}: LEA lower in {sum(r > 1 for r in ratios)}/{args.reps}, "
              f"median CD/LEA {statistics.median(ratios):.3f}")


if __name__ == "__main__":
    main()
