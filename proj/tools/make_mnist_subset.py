#!/usr/bin/env python3
"""Write the 10k-digit MNIST subset bundled in the `mnist` npm package as IDX files.

The npm package stores each digit class as a JSON array of pixel intensities
scaled to [0, 1] with three decimals; round(v * 255) recovers the original
bytes exactly. Output:

    <out>/images-idx3-ubyte   (magic 0x00000803, n x 28 x 28)
    <out>/labels-idx1-ubyte   (magic 0x00000801, n)

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import argparse
import json
import os
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", help="directory holding 0.json .. 9.json")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    images = bytearray()
    labels = bytearray()
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as fh:
            data = json.load(fh)["data"]
        if len(data) % 784:
            raise SystemExit(f"{digit}.json: length {len(data)} is not a multiple of 784")
        images.extend(min(255, max(0, round(v * 255))) for v in data)
        labels.extend([digit] * (len(data) // 784))

    n = len(labels)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, n, 28, 28))
        fh.write(images)
    with open(os.path.join(args.out_dir, "labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x801, n))
        fh.write(labels)
    print(f"wrote {n} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
