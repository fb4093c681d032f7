#!/usr/bin/env python3
"""Build IDX files from the digits bundled in the `mnist` npm package.

The npm package (https://github.com/cazala/mnist) ships 10,000 MNIST digits as
per-class JSON arrays of pixel intensities in [0, 1]. This script splits each
class 80/20 and writes the four canonical IDX files expected by `lmnet`:

    train-images-idx3-ubyte  train-labels-idx1-ubyte
    t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package data/mnist

Use the official files from the MNIST distribution instead when they are
available; the loader accepts either.
"""

import json
import os
import struct
import sys


def write_images(path, images):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            fh.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 2049, len(labels)))
        fh.write(bytes(labels))


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    pkg, out = sys.argv[1], sys.argv[2]
    os.makedirs(out, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as fh:
            raw = json.load(fh)["data"]
        count = len(raw) // 784
        cut = (count * 4) // 5
        for k in range(count):
            px = [min(255, max(0, round(v * 255))) for v in raw[k * 784 : (k + 1) * 784]]
            (train if k < cut else test).append((px, digit))
    for name, rows in (("train", train), ("t10k", test)):
        write_images(os.path.join(out, f"{name}-images-idx3-ubyte"), [r[0] for r in rows])
        write_labels(os.path.join(out, f"{name}-labels-idx1-ubyte"), [r[1] for r in rows])
        print(f"{name}: {len(rows)} samples")


if __name__ == "__main__":
    main()
