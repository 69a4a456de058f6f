"""Fetch the original MNIST IDX files into data/mnist/ (gzipped).

The files come from the ``mnist-data`` npm package, which ships them
unmodified; ``npm`` must be on PATH. Pass ``--from-dir`` to copy from an
existing directory instead.
"""

import argparse
import gzip
import shutil
import subprocess
import tarfile
import tempfile
from pathlib import Path

NAMES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]


def from_npm(workdir: Path) -> Path:
    subprocess.run(["npm", "pack", "mnist-data@1.2.6"], cwd=workdir, check=True, capture_output=True)
    with tarfile.open(workdir / "mnist-data-1.2.6.tgz") as tar:
        tar.extractall(workdir, filter="data")
    return workdir / "package" / "data"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "mnist"))
    ap.add_argument("--from-dir")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(args.from_dir) if args.from_dir else from_npm(Path(tmp))
        for name in NAMES:
            raw = src / name
            with open(raw, "rb") as fin, gzip.GzipFile(out / f"{name}.gz", "wb", mtime=0) as fout:
                shutil.copyfileobj(fin, fout)
            print(out / f"{name}.gz")


if __name__ == "__main__":
    main()
