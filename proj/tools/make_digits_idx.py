#!/usr/bin/env python3
"""Export a handwritten-digit corpus as IDX files for the acceptance run.

Preferred source: real MNIST IDX files in the directory given by
SIMEX_MNIST_DIR (train-images-idx3-ubyte / train-labels-idx1-ubyte); when
present they are just copied through. Without them, the bundled scikit-learn
handwritten digits (1797 samples, 8x8) are upsampled to 28x28 with bilinear
interpolation and written in the same format, so the digit pipeline stays
runnable offline.
"""

import os
import shutil
import struct
import sys

import numpy as np


def write_idx(images: np.ndarray, labels: np.ndarray, out_dir: str) -> None:
    n, h, w = images.shape
    with open(os.path.join(out_dir, "train-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())
    with open(os.path.join(out_dir, "train-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels.astype(np.uint8).tobytes())


def upsample_bilinear(img: np.ndarray, side: int) -> np.ndarray:
    src = img.shape[0]
    # sample positions map corners to corners
    pos = np.linspace(0, src - 1, side)
    x0 = np.clip(np.floor(pos).astype(int), 0, src - 2)
    fx = pos - x0
    rows = img[x0][:, x0] * np.outer(1 - fx, 1 - fx)
    rows += img[x0 + 1][:, x0] * np.outer(fx, 1 - fx)
    rows += img[x0][:, x0 + 1] * np.outer(1 - fx, fx)
    rows += img[x0 + 1][:, x0 + 1] * np.outer(fx, fx)
    return rows


def main() -> int:
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "data/digits"
    os.makedirs(out_dir, exist_ok=True)

    mnist_dir = os.environ.get("SIMEX_MNIST_DIR", "")
    if mnist_dir:
        src_img = os.path.join(mnist_dir, "train-images-idx3-ubyte")
        src_lab = os.path.join(mnist_dir, "train-labels-idx1-ubyte")
        if os.path.exists(src_img) and os.path.exists(src_lab):
            shutil.copy(src_img, out_dir)
            shutil.copy(src_lab, out_dir)
            print(f"copied MNIST IDX files from {mnist_dir} to {out_dir}")
            return 0
        print(f"SIMEX_MNIST_DIR={mnist_dir} set but files missing", file=sys.stderr)
        return 1

    from sklearn.datasets import load_digits

    digits = load_digits()
    images = []
    for img in digits.images:  # values 0..16
        up = upsample_bilinear(img / 16.0, 28)
        images.append(np.clip(np.round(up * 255.0), 0, 255))
    write_idx(np.stack(images), digits.target, out_dir)
    print(f"wrote {len(images)} upsampled 8x8 digits as 28x28 IDX to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
