"""Sphere n=1000 over many seeds: median final / median initial best fitness."""

import argparse
import statistics

from leamvd import optimizer as opt
from leamvd.objectives import sphere


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--n-var", type=int, default=1000)
    p.add_argument("--n-gen", type=int, default=200)
    p.add_argument("--perturb-prob", type=float, default=0.02)
    p.add_argument("--stagnation-limit", type=int, default=10)
    args = p.parse_args()

    initial, final = [], []
    for seed in range(args.seeds):
        config = opt.OptimizerConfig(
            n_var=args.n_var, n_gen=args.n_gen, x_inf=-5.0, x_sup=5.0, rng_seed=seed,
            perturb_prob=args.perturb_prob, stagnation_limit=args.stagnation_limit,
        )
        result = opt.run(config, sphere)
        initial.append(result.history[0].f_best)
        final.append(result.f_best)
        print(f"seed {seed:>3}: {initial[-1]:.1f} -> {final[-1]:.1f} "
              f"({result.restarts} restarts, {result.stop_reason})")
    ratio = statistics.median(final) / statistics.median(initial)
    print(f"median final / median initial = {ratio:.4f}")


if __name__ == "__main__":
    main()
