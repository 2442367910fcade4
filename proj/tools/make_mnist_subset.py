#!/usr/bin/env python3
"""Write a 10,000-image MNIST subset as an IDX pair.

The digits come from the `mnist` npm package (src/digits/<d>.json, each a
flat list of 784-float images scaled to [0, 1]). Samples are shuffled with a
fixed seed so any prefix is a class-mixed subset.
"""

import argparse
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile

import numpy as np


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    out = subprocess.run(
        ["npm", "pack", "mnist@1.1.0", "--silent"],
        cwd=workdir, check=True, capture_output=True, text=True,
    )
    tarball = workdir / out.stdout.strip().splitlines()[-1]
    with tarfile.open(tarball) as tar:
        tar.extractall(workdir, filter="data")
    return workdir / "package"


def load_digits(package: pathlib.Path):
    images, labels = [], []
    for digit in range(10):
        with open(package / "src" / "digits" / f"{digit}.json") as f:
            flat = np.asarray(json.load(f)["data"], dtype=np.float64)
        block = flat.reshape(-1, 784)
        images.append(np.rint(block * 255.0).clip(0, 255).astype(np.uint8))
        labels.append(np.full(len(block), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx(out_dir: pathlib.Path, images: np.ndarray, labels: np.ndarray) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "mnist10k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        f.write(images.tobytes())
    with open(out_dir / "mnist10k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--package", type=pathlib.Path,
                        help="unpacked mnist npm package (fetched with npm if omitted)")
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist"))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        package = args.package or fetch_package(pathlib.Path(tmp))
        images, labels = load_digits(package)

    order = np.random.default_rng(args.seed).permutation(len(images))
    write_idx(args.out, images[order], labels[order])
    counts = np.bincount(labels, minlength=10)
    print(f"wrote {len(images)} images to {args.out} (per class: {counts.tolist()})")


if __name__ == "__main__":
    main()
