import math

import numpy as np
import pytest

from visthresh.image_io import GrayImage


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_image(arr) -> GrayImage:
    return GrayImage(np.asarray(arr, dtype=np.float64))


def write_pgm_bytes(path, width, height, pixels, magic=b"P5", maxval=255):
    """Hand-rolled PGM writer so reader tests do not depend on save_pgm."""
    header = magic + b"\n" + f"{width} {height}\n{maxval}\n".encode()
    path.write_bytes(header + bytes(pixels))


def reflect101(i: int, n: int) -> int:
    """Mirror an index about the edge without repeating the edge pixel."""
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * (n - 1) - i
    return i


def brute_force_maps(img: np.ndarray, weights: np.ndarray, eps: float):
    """Independent nested-loop oracle with explicit reflect-101 indexing."""
    h, w = img.shape
    m = weights.shape[0]
    half = m // 2
    mean = np.zeros_like(img)
    var = np.zeros_like(img)
    mscn = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            acc_sq = 0.0
            for u in range(-half, half + 1):
                for v in range(-half, half + 1):
                    pix = img[reflect101(y + u, h), reflect101(x + v, w)]
                    wgt = weights[u + half, v + half]
                    acc += wgt * pix
                    acc_sq += wgt * pix * pix
            mean[y, x] = acc
            var[y, x] = max(0.0, acc_sq - acc * acc)
            mscn[y, x] = (img[y, x] - acc) / (math.sqrt(var[y, x]) + eps)
    return mean, var, mscn
