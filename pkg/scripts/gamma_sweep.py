"""Train the noisy plane once per gamma and print a comparison table."""
import argparse

from trimgs.experiments import format_runs, gamma_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--gammas", type=float, nargs="+", default=[0.25, 0.5, 0.75])
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    print(format_runs(gamma_sweep(a.gammas, a.iterations, a.seed)))


if __name__ == "__main__":
    main()
