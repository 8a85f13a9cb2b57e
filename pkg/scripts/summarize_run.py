#!/usr/bin/env python3
# scripts/summarize_run.py

import json
import os
import sys

import pandas as pd

MANIFEST = "manifest.json"


def summarize(run_dir):
    path = os.path.join(run_dir, MANIFEST)
    if not os.path.exists(path):
        print(f"❌ No {MANIFEST} in {run_dir}")
        return 1
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    print(f"📁 {run_dir}: {manifest['command']} on {manifest['scenario']['name']} (seed {manifest['seed']})")

    for name in manifest["outputs"]:
        if not name.endswith(".csv"):
            continue
        df = pd.read_csv(os.path.join(run_dir, name))
        print(f"  📄 {name}: {len(df)} rows")
        if name == "singularity.csv" and not df.empty:
            first = df.iloc[0]
            print(f"     first fold t*={first['t']:.6g} x*={first['x']:.6g}")
        elif name == "masses.csv" and not df.empty:
            drift = (df["total"] - df["total"].iloc[0]).abs().max() / abs(df["total"].iloc[0])
            print(f"     relative mass drift {drift:.3g}")
        elif name == "amplitudes.csv" and not df.empty:
            last = df.groupby("shock_id").tail(1)
            for _, row in last.iterrows():
                print(f"     shock {int(row['shock_id'])}: e={row['e']:.6g} at t={row['t']:.6g}")
        elif name == "identity.csv" and not df.empty:
            print(f"     max residual {df['residual'].max():.3g}, min order {df['order'].min():.3g}")
        elif name == "tunnel.csv" and not df.empty:
            print(f"     fitted order {df['fitted_order'].iloc[0]:.3g}")
        elif name == "limit_study.csv" and not df.empty:
            print(df.to_string(index=False))
    return 0


def main():
    if len(sys.argv) != 2:
        print("usage: summarize_run.py <run_dir>")
        return 64
    return summarize(sys.argv[1])


if __name__ == "__main__":
    sys.exit(main())
