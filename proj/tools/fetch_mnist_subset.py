#!/usr/bin/env python3
"""Build a small MNIST train/test split in IDX format.

The npm package ``mnist`` (MIT, https://www.npmjs.com/package/mnist) ships
10,000 MNIST digits as per-class JSON arrays with intensities already scaled
to [0,1]. This script converts them back to byte pixels and writes the four
standard gzip'd IDX files. The last ``--test-per-class`` digits of each class
become the test split; the rest form the training split.

Usage:
    tools/fetch_mnist_subset.py --out data/mnist-subset
    tools/fetch_mnist_subset.py --package /path/to/mnist-1.1.0.tgz --out ...
"""

import argparse
import gzip
import json
import os
import struct
import subprocess
import tarfile
import tempfile

SIDE = 28


def read_digits(tgz_path):
    digits = {}
    with tarfile.open(tgz_path, "r:gz") as tar:
        for d in range(10):
            member = tar.getmember(f"package/src/digits/{d}.json")
            data = json.load(tar.extractfile(member))["data"]
            n = len(data) // (SIDE * SIDE)
            pixels = bytes(max(0, min(255, round(v * 255))) for v in data)
            digits[d] = [pixels[i * SIDE * SIDE:(i + 1) * SIDE * SIDE] for i in range(n)]
    return digits


def write_idx(path_prefix, images, labels):
    with gzip.GzipFile(path_prefix + "-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)
    with gzip.GzipFile(path_prefix + "-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def interleave(per_class):
    """Round-robin over classes so the files are not sorted by label."""
    out_images, out_labels = [], []
    longest = max(len(v) for v in per_class.values())
    for i in range(longest):
        for d in range(10):
            if i < len(per_class[d]):
                out_images.append(per_class[d][i])
                out_labels.append(d)
    return out_images, out_labels


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--package", help="path to mnist-<ver>.tgz; fetched with `npm pack` if omitted")
    parser.add_argument("--out", required=True)
    parser.add_argument("--test-per-class", type=int, default=300)
    args = parser.parse_args()

    os.makedirs(args.out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tgz = args.package
        if tgz is None:
            subprocess.run(["npm", "pack", "mnist@1.1.0", "--pack-destination", tmp],
                           check=True, stdout=subprocess.DEVNULL)
            tgz = os.path.join(tmp, "mnist-1.1.0.tgz")
        digits = read_digits(tgz)

    train = {d: v[:-args.test_per_class] for d, v in digits.items()}
    test = {d: v[-args.test_per_class:] for d, v in digits.items()}
    write_idx(os.path.join(args.out, "train"), *interleave(train))
    write_idx(os.path.join(args.out, "t10k"), *interleave(test))
    for name, split in (("train", train), ("test", test)):
        counts = ", ".join(f"{d}:{len(v)}" for d, v in split.items())
        print(f"{name}: {sum(len(v) for v in split.values())} images ({counts})")


if __name__ == "__main__":
    main()
