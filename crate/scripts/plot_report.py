"""Plot a `vesselatlas eval` CSV: precision against training fraction
(cross-validation) or against atlas iteration (iterations protocol).

usage: python3 scripts/plot_report.py report.csv [more.csv ...] -o out.png
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def per_tree(cell):
    if not isinstance(cell, str) or not cell:
        return []
    return [float(kv.split(":")[1]) for kv in cell.split(";")]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--out", default="report.png")
    args = ap.parse_args()

    fig, ax = plt.subplots(figsize=(6, 4))
    for path in args.csv:
        df = pd.read_csv(path)
        if "k" in df.columns:
            ax.errorbar(df["k"], df["mean_precision"], yerr=df["std_precision"], marker="o", capsize=3, label=path)
            ax.set_xlabel("atlas iteration k")
        else:
            name = f"{df['method'].iloc[0]} {df['assignment'].iloc[0]}"
            rows = []
            for frac, g in df.groupby("fraction"):
                vals = [p for cell in g["per_tree"] for p in per_tree(cell)]
                s = pd.Series(vals, dtype=float)
                rows.append((frac, s.mean(), s.std(ddof=0)))
            x, m, s = zip(*rows)
            ax.errorbar(x, m, yerr=s, marker="o", capsize=3, label=name)
            ax.set_xlabel("training fraction")
    ax.set_ylabel("precision")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
