#!/usr/bin/env python3
"""Convert the 5000-sample MNIST subset shipped inside the mlxtend wheel into
IDX files (train/test split) under data/.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    wheel, out = Path(sys.argv[1]), Path(sys.argv[2])
    raw = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode()
    table = np.loadtxt(raw.splitlines(), delimiter=",", dtype=np.int64)
    images, labels = table[:, :-1], table[:, -1]
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    n_test = 1000
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "mnist5k-train-images-idx3-ubyte", images[n_test:])
    write_labels(out / "mnist5k-train-labels-idx1-ubyte", labels[n_test:])
    write_images(out / "mnist5k-test-images-idx3-ubyte", images[:n_test])
    write_labels(out / "mnist5k-test-labels-idx1-ubyte", labels[:n_test])


if __name__ == "__main__":
    main()
