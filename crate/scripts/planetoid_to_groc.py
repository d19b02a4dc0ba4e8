#!/usr/bin/env python3
"""Convert Planetoid raw files (ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}) into a
groc dataset directory: meta.json, features.bin, edges.csv, labels.csv, splits.json.

Splits follow the public Planetoid convention: the first 20 nodes per class in `y` for
training, the next 500 nodes for validation, and `test.index` for testing. Citeseer's
isolated test indices without features get zero feature rows and label 0.

    python3 scripts/planetoid_to_groc.py --raw data/raw --name cora --out data/cora
"""

import argparse
import json
import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_pickle(path: Path):
    with path.open("rb") as f:
        return pickle.load(f, encoding="latin1")


def dense(m) -> np.ndarray:
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def convert(raw: Path, name: str, out: Path, normalize: bool) -> None:
    parts = {k: load_pickle(raw / f"ind.{name}.{k}") for k in ["x", "y", "tx", "ty", "allx", "ally", "graph"]}
    test_index = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)

    tx, ty = dense(parts["tx"]), dense(parts["ty"])
    if name == "citeseer":
        full = np.arange(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = np.zeros((len(full), tx.shape[1]))
        ty_ext = np.zeros((len(full), ty.shape[1]))
        tx_ext[test_sorted - test_sorted.min()] = tx
        ty_ext[test_sorted - test_sorted.min()] = ty
        tx, ty = tx_ext, ty_ext

    features = np.vstack([dense(parts["allx"]), tx]).astype(np.float64)
    onehot = np.vstack([dense(parts["ally"]), ty])
    features[test_index] = features[test_sorted]
    onehot[test_index] = onehot[test_sorted]
    labels = onehot.argmax(1)
    if normalize:
        sums = features.sum(1, keepdims=True)
        sums[sums == 0] = 1.0
        features = features / sums

    n, d = features.shape
    c = onehot.shape[1]
    num_train = dense(parts["y"]).shape[0]
    splits = {
        "train": list(range(num_train)),
        "val": list(range(num_train, num_train + 500)),
        "test": sorted(int(i) for i in test_index),
    }

    edges = set()
    for src, neighbors in parts["graph"].items():
        for dst in neighbors:
            if src != dst and src < n and dst < n:
                edges.add((min(src, dst), max(src, dst)))

    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(json.dumps({"n": n, "d": d, "c": c}))
    features.astype("<f4").tofile(out / "features.bin")
    with (out / "edges.csv").open("w") as f:
        f.write("src,dst\n")
        for u, v in sorted(edges):
            f.write(f"{u},{v}\n")
    (out / "labels.csv").write_text("".join(f"{int(l)}\n" for l in labels))
    (out / "splits.json").write_text(json.dumps(splits))
    print(f"{name}: {n} nodes, {len(edges)} edges, {d} features, {c} classes -> {out}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--raw", type=Path, required=True, help="directory holding the ind.<name>.* files")
    parser.add_argument("--name", required=True, choices=["cora", "citeseer", "pubmed"])
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--normalize", action="store_true", help="row-normalize features to sum to 1")
    args = parser.parse_args()
    convert(args.raw, args.name, args.out, args.normalize)


if __name__ == "__main__":
    main()
