"""Write the 5000-digit MNIST sample shipped inside the mlxtend wheel as IDX files.

    python scripts/export_mnist_subset.py path/to/mlxtend-*.whl OUTDIR

The CSV stores one digit per row: 784 pixel values followed by the label.
"""
import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from vpcca.dataio import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(wheel, outdir):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :784].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, 784].astype(np.uint8)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "subset-images-idx3-ubyte", images)
    write_idx(out / "subset-labels-idx1-ubyte", labels)
    print(f"wrote {len(labels)} digits to {out}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
