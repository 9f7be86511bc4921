#!/usr/bin/env python3
"""Write a small MNIST subset in IDX format.

The full MNIST archives are not reachable from the build sandbox, but the
mlxtend wheel on PyPI ships 5000 genuine MNIST samples (mnist_5k.csv.gz,
784 pixel columns followed by the label). This script fetches that wheel
with pip (or uses --wheel) and splits it into train/test IDX files.
"""
import argparse
import gzip
import io
import pathlib
import random
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                    "-d", str(dest), "mlxtend==0.24.0"], check=True)
    return next(pathlib.Path(dest).glob("mlxtend-*.whl"))


def write_idx(path, images, labels):
    with open(path + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(path + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--wheel")
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = pathlib.Path(args.wheel) if args.wheel else fetch_wheel(tmp)
        raw = zipfile.ZipFile(wheel).read(MEMBER)
    rows = []
    for line in io.TextIOWrapper(gzip.GzipFile(fileobj=io.BytesIO(raw))):
        vals = [int(float(v)) for v in line.strip().split(",")]
        rows.append((vals[:-1], vals[-1]))
    random.Random(args.seed).shuffle(rows)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    test, train = rows[:args.test], rows[args.test:]
    write_idx(str(out / "train"), [r[0] for r in train], [r[1] for r in train])
    write_idx(str(out / "t10k"), [r[0] for r in test], [r[1] for r in test])
    print(f"{len(train)} train / {len(test)} test samples in {out}")


if __name__ == "__main__":
    main()
