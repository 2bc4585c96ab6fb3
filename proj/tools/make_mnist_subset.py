#!/usr/bin/env python3
# Copyright 2026 The bitbudget Authors
# SPDX-License-Identifier: Apache-2.0
"""Builds IDX files from the digits bundled in the npm `mnist` package.

The package ships roughly 1,000 real MNIST digits per class as JSON arrays of
byte/255 values rounded to three decimals, which is enough to recover the
original bytes exactly. Digits are shuffled with a fixed seed and split into
train / test IDX pairs.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import json
import os
import random
import struct
import sys


def write_idx(prefix, images, labels):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = sys.argv[1], sys.argv[2]
    test_fraction = float(sys.argv[3]) if len(sys.argv) > 3 else 0.2
    samples = []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        for i in range(len(flat) // 784):
            px = [int(round(v * 255)) for v in flat[i * 784:(i + 1) * 784]]
            samples.append((px, digit))
    random.Random(20180417).shuffle(samples)
    n_test = int(len(samples) * test_fraction)
    test, train = samples[:n_test], samples[n_test:]
    os.makedirs(dst, exist_ok=True)
    write_idx(os.path.join(dst, "train"), [s[0] for s in train], [s[1] for s in train])
    write_idx(os.path.join(dst, "t10k"), [s[0] for s in test], [s[1] for s in test])
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
