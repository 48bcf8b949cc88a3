#!/usr/bin/env python3
"""Build a class-balanced Fashion-MNIST subset in gzipped IDX format.

The source is the `fashion-mnist` npm package (src/clothes/<class>.json, each a
{"data": [[784 uint8], ...]} document). Fetch it with `npm pack fashion-mnist`
and point --package at the extracted `package/` directory.
"""
import argparse
import gzip
import json
import os
import random
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--package", required=True, help="extracted npm package dir")
    ap.add_argument("--per-class", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    samples = []
    for label in range(10):
        path = os.path.join(args.package, "src", "clothes", f"{label}.json")
        with open(path) as f:
            rows = [r for r in json.load(f)["data"] if len(r) == 784]
        samples.extend((label, r) for r in rows[: args.per_class])
    random.Random(args.seed).shuffle(samples)

    os.makedirs(args.out, exist_ok=True)
    n = len(samples)
    with gzip.GzipFile(os.path.join(args.out, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for _, r in samples:
            f.write(bytes(r))
    with gzip.GzipFile(os.path.join(args.out, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for label, _ in samples))


if __name__ == "__main__":
    main()
