#!/usr/bin/env python3
"""Write the benchmark CSVs under data/.

Iris and Wine come from the copies bundled with scikit-learn. The 699-row
Wisconsin breast cancer table comes from the MASS `biopsy` data shipped in the
`pydataset` source distribution; pass its path with --biopsy. Rows with a
missing Bare Nuclei value (16 of them) are dropped, since the loader rejects
missing values.
"""
import argparse
import csv
import os

from sklearn.datasets import load_iris, load_wine


def write(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def sk(loader, out, names=None):
    bunch = loader()
    cols = names or [c.replace(" ", "_").replace("/", "_").replace("(", "").replace(")", "") for c in bunch.feature_names]
    rows = []
    for x, y in zip(bunch.data, bunch.target):
        rows.append([repr(float(v)) if not float(v).is_integer() else str(float(v)) for v in x] + [bunch.target_names[y]])
    write(out, cols + ["class"], rows)


def biopsy(src, out):
    names = ["clump_thickness", "cell_size", "cell_shape", "adhesion", "epithelial_size",
             "bare_nuclei", "chromatin", "nucleoli", "mitoses"]
    rows = []
    with open(src) as f:
        r = csv.reader(f)
        next(r)
        for rec in r:
            feats = rec[2:11]
            if any(v in ("NA", "") for v in feats):
                continue
            rows.append(feats + [rec[11]])
    write(out, names + ["class"], rows)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    ap.add_argument("--biopsy", help="path to MASS biopsy.csv")
    a = ap.parse_args()
    os.makedirs(a.out, exist_ok=True)
    sk(load_iris, os.path.join(a.out, "iris.csv"),
       ["sepal_length", "sepal_width", "petal_length", "petal_width"])
    sk(load_wine, os.path.join(a.out, "wine.csv"))
    if a.biopsy:
        biopsy(a.biopsy, os.path.join(a.out, "wisc_cancer.csv"))


if __name__ == "__main__":
    main()
