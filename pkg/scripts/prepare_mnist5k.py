"""Build a small MNIST IDX set from the 5000-image sample bundled in the mlxtend wheel.

The full MNIST files cannot always be fetched; this sample (500 images per
digit, taken from the MNIST training set) is a stand-in for desk-scale runs.
It is split class-stratified into 4000 train / 1000 test images and written
under ``$ACOLGAR_DATA_ROOT/mnist5k/`` with the usual MNIST file names.

    python3 scripts/prepare_mnist5k.py [--wheel path/to/mlxtend-*.whl]
"""

import argparse
import gzip
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from acolgar.data import data_root, sha256, write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest: Path) -> Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "mlxtend==0.24.0", "--no-deps", "-d", str(dest)],
        check=True,
    )
    return next(dest.glob("mlxtend-*.whl"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wheel", type=Path)
    ap.add_argument("--out", type=Path, default=None, help="default: $ACOLGAR_DATA_ROOT/mnist5k")
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(Path(tmp))
        with zipfile.ZipFile(wheel) as z, gzip.open(z.open(MEMBER)) as fh:
            table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)

    rng = np.random.default_rng(args.seed)
    test = np.concatenate([
        rng.choice(np.flatnonzero(labels == c), size=args.test_per_class, replace=False) for c in range(10)
    ])
    is_test = np.zeros(len(labels), dtype=bool)
    is_test[test] = True

    out = args.out or data_root() / "mnist5k"
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "train-images-idx3-ubyte": pixels[~is_test],
        "train-labels-idx1-ubyte": labels[~is_test],
        "t10k-images-idx3-ubyte": pixels[is_test],
        "t10k-labels-idx1-ubyte": labels[is_test],
    }
    for name, arr in files.items():
        write_idx(out / name, arr)
        print(f"{out / name}: {arr.shape} sha256={sha256(out / name)}")


if __name__ == "__main__":
    main()
