#!/usr/bin/env python3
"""Build a 10,000-digit MNIST subset in IDX format from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, v1.1.0) ships 10,000 real
MNIST digits as JSON arrays of pixel/255 rounded to three decimals, grouped by
class. Rounding is undone exactly (the 1/255 grid is coarser than 1e-3), the
digits are interleaved with a fixed permutation and written as gzipped IDX.

usage: npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
       python3 scripts/mnist_subset_from_npm.py package/src/digits data/mnist-10k
"""
import gzip
import json
import os
import struct
import sys

import numpy as np


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            raw = np.asarray(json.load(f)["data"], dtype=np.float64)
        pix = np.rint(raw * 255.0).astype(np.int64)
        assert pix.min() >= 0 and pix.max() <= 255
        assert np.all(np.abs(np.round(pix / 255.0, 3) - raw) < 1e-9)
        pix = pix.reshape(-1, 784).astype(np.uint8)
        images.append(pix)
        labels.append(np.full(len(pix), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    perm = np.random.RandomState(20240601).permutation(len(labels))
    images, labels = images[perm], labels[perm]
    os.makedirs(dst, exist_ok=True)
    with gzip.GzipFile(os.path.join(dst, "train-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(labels), 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(os.path.join(dst, "train-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(labels)} digits to {dst}; class counts {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
