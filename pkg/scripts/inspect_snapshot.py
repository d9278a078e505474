#!/usr/bin/env python3
"""Summarize PLF1 field snapshots: header, norms and the location of the peak."""
import argparse

import numpy as np

from polaron.artifacts import read_snapshot


def describe(path: str) -> str:
    snap = read_snapshot(path)
    dx = snap.L / snap.N
    vals = snap.values
    peak = np.unravel_index(np.argmax(np.abs(vals)), vals.shape)
    l2 = np.sqrt(np.sum(np.abs(vals) ** 2) * dx**3)
    return (f"{path}: N={snap.N} L={snap.L:g} t={snap.t:g} "
            f"L2={l2:.6g} max|Re|={np.max(np.abs(vals.real)):.6g} max|Im|={np.max(np.abs(vals.imag)):.6g} "
            f"peak at index {tuple(int(i) for i in peak)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("paths", nargs="+")
    for path in ap.parse_args().paths:
        print(describe(path))


if __name__ == "__main__":
    main()
