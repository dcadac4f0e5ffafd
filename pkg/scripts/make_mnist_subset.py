"""Convert the 10,000-digit MNIST sample bundled in the npm ``mnist`` package
(``npm pack mnist``; digits in ``package/src/digits/<label>.json``, grayscale
values rounded to 3 decimals) into gzip'd idx files.

    python scripts/make_mnist_subset.py path/to/package/src/digits data/
"""

import json
import sys
from pathlib import Path

import numpy as np

from bhtsne.io import write_idx


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        flat = np.array(json.loads((Path(src) / f"{digit}.json").read_text())["data"])
        imgs = np.rint(flat.reshape(-1, 784) * 255).astype(np.uint8)
        images.append(imgs)
        labels.append(np.full(len(imgs), digit, dtype=np.uint8))
    images = np.concatenate(images).reshape(-1, 28, 28)
    labels = np.concatenate(labels)
    perm = np.random.default_rng(0).permutation(len(labels))
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    write_idx(dst / "mnist10k-images-idx3-ubyte.gz", images[perm])
    write_idx(dst / "mnist10k-labels-idx1-ubyte.gz", labels[perm])
    print(f"wrote {len(labels)} digits to {dst}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
