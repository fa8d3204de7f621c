"""Trim / normal-loss / densify-interval variants on the noisy plane, one table."""
import argparse

from trimgs.experiments import PLANE_NORMALS, compare_runs, format_runs, with_densify_interval
from trimgs.georeg import NormalConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    variants = {
        "trim": {},
        "no-trim": {"trim": False},
        "no-normal-loss": {"normal": NormalConfig(window=PLANE_NORMALS.window, normal_weight=0.0)},
        "densify-100": {"densify_config": with_densify_interval(100)},
        "densify-500": {"densify_config": with_densify_interval(500)},
    }
    print(format_runs(compare_runs(variants, a.iterations, a.seed)))


if __name__ == "__main__":
    main()
