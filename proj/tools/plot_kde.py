#!/usr/bin/env python3
"""Terminal plot of one or more kde_<mode>.csv files from `burstkit permtest`.

Usage: tools/plot_kde.py runs/perm/kde_true.csv runs/perm/kde_shuffled.csv

Overlays the density curves as ASCII so distribution shifts between modes are
visible without a plotting stack. Each file gets its own glyph.
"""

import csv
import sys

GLYPHS = "ox+*#@"
WIDTH = 72
HEIGHT = 18


def load_curve(path):
    xs, ds = [], []
    with open(path, newline="") as f:
        rows = csv.reader(f)
        header = next(rows)
        if header[:2] != ["x", "density"]:
            raise SystemExit(f"{path}: expected header x,density")
        for row in rows:
            xs.append(float(row[0]))
            ds.append(float(row[1]))
    return xs, ds


def main(paths):
    if not paths:
        raise SystemExit(__doc__.strip())
    curves = [(p, *load_curve(p)) for p in paths]
    lo = min(min(xs) for _, xs, _ in curves)
    hi = max(max(xs) for _, xs, _ in curves)
    top = max(max(ds) for _, _, ds in curves)
    if hi <= lo or top <= 0.0:
        raise SystemExit("degenerate curves; nothing to plot")

    grid = [[" "] * WIDTH for _ in range(HEIGHT)]
    for idx, (_, xs, ds) in enumerate(curves):
        glyph = GLYPHS[idx % len(GLYPHS)]
        for x, d in zip(xs, ds):
            col = int((x - lo) / (hi - lo) * (WIDTH - 1))
            row = HEIGHT - 1 - int(d / top * (HEIGHT - 1))
            grid[row][col] = glyph

    print(f"density (peak {top:.3g})")
    for row in grid:
        print("|" + "".join(row))
    print("+" + "-" * WIDTH)
    print(f" {lo:<12.4g}{'':^{WIDTH - 24}}{hi:>12.4g}")
    for idx, (path, _, _) in enumerate(curves):
        print(f"  {GLYPHS[idx % len(GLYPHS)]} {path}")


if __name__ == "__main__":
    main(sys.argv[1:])
