"""Size-bucketed normalized position gradients on the checkerboard fit."""
import argparse

from trimgs.experiments import table1_direction


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=300)
    p.add_argument("--warmup", type=int, default=100)
    a = p.parse_args()
    stats = table1_direction(a.seed, a.window, a.warmup)
    print(stats.table())
    print(f"strictly decreasing: {stats.strictly_decreasing()}")


if __name__ == "__main__":
    main()
