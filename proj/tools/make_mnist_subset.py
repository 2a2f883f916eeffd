#!/usr/bin/env python3
"""Write the 5000-image MNIST subset shipped inside the mlxtend wheel as IDX files.

Usage: make_mnist_subset.py WHEEL OUTDIR

Produces OUTDIR/mnist5k-images-idx3-ubyte.gz and OUTDIR/mnist5k-labels-idx1-ubyte.gz.
"""
import gzip
import io
import struct
import sys
import zipfile


def main(wheel, outdir):
    with zipfile.ZipFile(wheel) as z:
        raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = gzip.decompress(raw).decode().strip().splitlines()
    labels = bytearray()
    pixels = bytearray()
    for line in rows:
        values = [int(float(v)) for v in line.split(",")]
        # first 784 columns are pixels, last column is the label
        pixels.extend(values[:784])
        labels.append(values[784])
    n = len(labels)
    images = io.BytesIO()
    images.write(struct.pack(">IIII", 0x803, n, 28, 28))
    images.write(pixels)
    lab = io.BytesIO()
    lab.write(struct.pack(">II", 0x801, n))
    lab.write(labels)
    # mtime=0 keeps the archives byte-reproducible
    with open(f"{outdir}/mnist5k-images-idx3-ubyte.gz", "wb") as f:
        f.write(gzip.compress(images.getvalue(), mtime=0))
    with open(f"{outdir}/mnist5k-labels-idx1-ubyte.gz", "wb") as f:
        f.write(gzip.compress(lab.getvalue(), mtime=0))
    print(f"wrote {n} images")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
