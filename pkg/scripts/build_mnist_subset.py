"""Assemble the bundled 10k MNIST subset from the ``mnist`` npm package.

The npm package (MIT licensed) ships 10,000 MNIST digits as JSON with
pixel values stored as ``round(v / 255, 3)``; ``rint(value * 255)``
recovers the original bytes exactly. Digits are shuffled with a fixed
seed and split 8000 / 2000 into IDX files.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python scripts/build_mnist_subset.py package/src/digits data/mnist10k
"""
import argparse
import json
from pathlib import Path

import numpy as np

from spikeconv.idx import write_idx

N_TRAIN = 8000


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=20230)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        data = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        px = np.asarray(data, dtype=np.float64).reshape(-1, 28, 28)
        recovered = np.rint(px * 255)
        assert np.abs(recovered / 255 - px).max() < 0.5 / 255
        images.append(recovered.astype(np.uint8))
        labels += [digit] * len(px)
    images = np.concatenate(images)
    labels = np.asarray(labels, dtype=np.uint8)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    splits = {"train": slice(0, N_TRAIN), "test": slice(N_TRAIN, None)}
    for name, sl in splits.items():
        write_idx(args.out_dir / f"{name}-images-idx3-ubyte.gz", images[sl])
        write_idx(args.out_dir / f"{name}-labels-idx1-ubyte.gz", labels[sl])
        print(name, images[sl].shape, np.bincount(labels[sl], minlength=10))


if __name__ == "__main__":
    main()
