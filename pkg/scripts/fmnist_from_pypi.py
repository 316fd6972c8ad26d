"""Build Fashion-MNIST IDX files from the copy bundled in the DeeprAI-Datasets sdist.

Use this when the usual Fashion-MNIST download hosts are unreachable but a
PyPI mirror is.  That package only ships the 60,000-image training split
(pixels stored as byte/1000), so the last 10,000 images become the test
split:

    pip download --no-deps DeeprAI-Datasets==0.0.2 -d /tmp/deeprai
    python scripts/fmnist_from_pypi.py /tmp/deeprai/DeeprAI-Datasets-0.0.2.tar.gz data/fmnist

The sdist pickle only contains NumPy arrays; the unpickler below refuses
any other global.
"""

import argparse
import gzip
import io
import pickle
import tarfile
from pathlib import Path

import numpy as np

from vtss.datasets import write_idx

MEMBER = "DeeprAI-Datasets-0.0.2/Datasets/FashionMNIST/fashion_mnist.pyndb.gz"
ALLOWED = {("numpy.core.multiarray", "_reconstruct"), ("numpy", "ndarray"), ("numpy", "dtype")}


class _ArrayUnpickler(pickle.Unpickler):
    def find_class(self, module, name):
        if (module, name) not in ALLOWED:
            raise pickle.UnpicklingError(f"refusing global {module}.{name}")
        return super().find_class(module, name)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("sdist")
    ap.add_argument("out_dir")
    ap.add_argument("--test-size", type=int, default=10000)
    args = ap.parse_args()

    with tarfile.open(args.sdist) as tar:
        blob = tar.extractfile(MEMBER).read()
    table = _ArrayUnpickler(io.BytesIO(gzip.decompress(blob))).load()
    scaled = np.asarray(table["train_X"]) * 1000.0
    pixels = np.rint(scaled)
    if np.abs(scaled - pixels).max() > 1e-6 or pixels.max() > 255:
        raise SystemExit("unexpected pixel encoding")
    images = pixels.astype(np.uint8).reshape(-1, 28, 28)
    labels = np.asarray(table["train_Y(num)"]).astype(np.uint8)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cut = len(images) - args.test_size
    write_idx(images[:cut], labels[:cut], out / "train-images-idx3-ubyte",
              out / "train-labels-idx1-ubyte")
    write_idx(images[cut:], labels[cut:], out / "t10k-images-idx3-ubyte",
              out / "t10k-labels-idx1-ubyte")
    print(f"wrote {cut} train / {len(images) - cut} test images to {out}")


if __name__ == "__main__":
    main()
