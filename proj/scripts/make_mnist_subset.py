#!/usr/bin/env python3
"""Convert the digit samples bundled with the `mnist` npm package into IDX files.

The npm package (MIT licensed) ships 10000 MNIST digits as JSON arrays of
pixel intensities in [0, 1] rounded to three decimals. This script restores
the byte values, shuffles with a fixed seed, and writes a disjoint
train/test pair in the standard IDX layout:

    python3 scripts/make_mnist_subset.py <npm-package-dir> data/mnist-subset

Obtain the package with `npm pack mnist && tar xzf mnist-*.tgz`.
"""
import json
import random
import struct
import sys
from pathlib import Path

N_TRAIN = 5000
SEED = 20190527


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        for i in range(0, len(data), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in data[i:i + 784]]
            samples.append((pixels, digit))
    random.Random(SEED).shuffle(samples)
    out.mkdir(parents=True, exist_ok=True)
    train, test = samples[:N_TRAIN], samples[N_TRAIN:]
    write_images(out / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(out / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(out / "test-images-idx3-ubyte", [s[0] for s in test])
    write_labels(out / "test-labels-idx1-ubyte", [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")


if __name__ == "__main__":
    main()
