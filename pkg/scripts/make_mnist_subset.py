"""Build IDX files from the 10,000 MNIST digits bundled in the npm ``mnist`` package.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/make_mnist_subset.py package/src/digits data/

The package stores each digit class as a flat JSON array of 28x28 images with
pixels scaled to [0, 1] (3 decimals); pixels are mapped back to bytes and the
classes are interleaved with a fixed shuffle.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from hfcl.data import write_idx


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    images, labels = [], []
    for digit in range(10):
        flat = np.asarray(json.loads((args.digits_dir / f"{digit}.json").read_text())["data"])
        n = flat.size // 784
        images.append(np.rint(flat[: n * 784].reshape(n, 28, 28) * 255).clip(0, 255).astype(np.uint8))
        labels.append(np.full(n, digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(labels))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(
        args.out_dir / "mnist10k-images-idx3-ubyte.gz",
        args.out_dir / "mnist10k-labels-idx1-ubyte.gz",
        images[order],
        labels[order],
    )
    print(f"wrote {len(labels)} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
