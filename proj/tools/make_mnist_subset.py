#!/usr/bin/env python3
"""Write the 5,000-sample MNIST subset bundled with mlxtend as IDX files.

Usage: make_mnist_subset.py <mnist_5k.csv.gz> <out_dir>

The CSV holds 784 pixel columns (0..255) followed by the label column.
"""
import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    table = np.genfromtxt(gzip.open(src), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    n = len(labels)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mnist5k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(pixels.tobytes())
    with open(out / "mnist5k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())


if __name__ == "__main__":
    main()
