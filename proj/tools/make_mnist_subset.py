#!/usr/bin/env python3
"""Convert the digit JSON files of the npm `mnist` package (MIT) into IDX files.

Usage: make_mnist_subset.py <package>/src/digits <out_dir> [--test-per-class 100]

Each digit file stores 784-pixel images scaled to [0,1] with three decimals;
multiplying by 255 and rounding recovers the original bytes. The first
`test-per-class` images of each digit form a balanced test split, the rest
form the training split. Samples are interleaved by digit in file order.
"""
import argparse
import gzip
import json
import pathlib
import struct


def write_idx(path, images, labels):
    n = len(labels)
    with gzip.GzipFile(path + "-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(path + "-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args()

    per_digit = []
    for d in range(10):
        data = json.loads((pathlib.Path(args.digits_dir) / f"{d}.json").read_text())["data"]
        imgs = [data[i:i + 784] for i in range(0, len(data), 784)]
        per_digit.append([[min(255, max(0, round(v * 255))) for v in img] for img in imgs])

    splits = {"train": ([], []), "t10k": ([], [])}
    for d, imgs in enumerate(per_digit):
        for i, img in enumerate(imgs):
            key = "t10k" if i < args.test_per_class else "train"
            splits[key][0].append(img)
            splits[key][1].append(d)

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for key, (imgs, labels) in splits.items():
        write_idx(str(out / key), imgs, labels)
        print(key, len(labels))


if __name__ == "__main__":
    main()
