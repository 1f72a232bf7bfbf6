#!/usr/bin/env python3
"""Write the desk-scale MNIST subset (2000 train / 1000 test) as IDX files.

The source is the 5000-image MNIST sample bundled with mlxtend
(`pip install --no-deps mlxtend`), which avoids any dataset download.
The split is a seeded, class-stratified shuffle so reruns are byte-identical.
"""

import argparse
import gzip
import os
import struct

import numpy as np


def find_source(path):
    if path:
        return path
    import mlxtend.data

    return os.path.join(os.path.dirname(mlxtend.data.__file__), "data", "mnist_5k.csv.gz")


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--source", default=None, help="path to mnist_5k.csv.gz")
    parser.add_argument("--out", default="data/mnist_subset")
    parser.add_argument("--train", type=int, default=2000)
    parser.add_argument("--test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with gzip.open(find_source(args.source), "rt") as f:
        table = np.loadtxt(f, delimiter=",")
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)

    rng = np.random.default_rng(args.seed)
    train_idx, test_idx = [], []
    classes = np.unique(labels)
    per_train = args.train // len(classes)
    per_test = args.test // len(classes)
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        train_idx.extend(idx[:per_train])
        test_idx.extend(idx[per_train:per_train + per_test])
    train_idx = rng.permutation(np.array(train_idx))
    test_idx = rng.permutation(np.array(test_idx))

    os.makedirs(args.out, exist_ok=True)
    write_images(os.path.join(args.out, "train-images-idx3-ubyte"), pixels[train_idx])
    write_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), labels[train_idx])
    write_images(os.path.join(args.out, "t10k-images-idx3-ubyte"), pixels[test_idx])
    write_labels(os.path.join(args.out, "t10k-labels-idx1-ubyte"), labels[test_idx])
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test images to {args.out}")


if __name__ == "__main__":
    main()
