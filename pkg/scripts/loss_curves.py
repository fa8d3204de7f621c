"""Write L(mu) for sigma = T/4 and T/2 to CSV, and optionally plot it."""
import argparse
import csv

from trimgs.gradlab import loss_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("-n", type=int, default=301)
    p.add_argument("-o", "--output", default="loss_curves.csv")
    p.add_argument("--plot", help="also save a PNG here (needs matplotlib)")
    a = p.parse_args()
    mus, curves = loss_sweep(a.T, n=a.n)
    with open(a.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu"] + [f"L_sigma_{s:g}" for s in curves])
        for i, m in enumerate(mus):
            w.writerow([repr(float(m))] + [repr(float(c[i])) for c in curves.values()])
    print(f"wrote {a.output}")
    if a.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 3))
        for s, c in curves.items():
            ax.plot(mus, c, label=f"sigma = {s:g}")
        ax.axvline(0.0, color="k", lw=0.5)
        ax.set_xlabel("mu")
        ax.set_ylabel("windowed L1 loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(a.plot, dpi=150)
        print(f"wrote {a.plot}")


if __name__ == "__main__":
    main()
