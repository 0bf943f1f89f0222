"""Separable orthonormal transform kernels (DCT-II, DST-VII, DCT-VIII).

Production path runs float32 batched matmuls (BLAS); the float64 basis
is kept as the numeric reference for orthogonality checks. Basis
matrices are cached per (kind, size).
"""

import math
from functools import lru_cache

import numpy as np

DCT2, DST7, DCT8 = "dct2", "dst7", "dct8"
KINDS = (DCT2, DST7, DCT8)


@lru_cache(maxsize=None)
def basis(kind: str, n: int, dtype: str = "f4") -> np.ndarray:
    """Orthonormal row-basis matrix: rows are basis vectors."""
    if kind not in KINDS:
        raise ValueError(f"unknown transform kind {kind!r}")
    mat = np.empty((n, n), dtype=np.float64)
    if kind == DCT2:
        for k in range(n):
            scale = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
            for j in range(n):
                mat[k, j] = scale * math.cos(math.pi * (2 * j + 1) * k / (2 * n))
    elif kind == DST7:
        scale = math.sqrt(4.0 / (2 * n + 1))
        for k in range(n):
            for j in range(n):
                mat[k, j] = scale * math.sin(math.pi * (2 * k + 1) * (j + 1) / (2 * n + 1))
    else:  # DCT8
        scale = math.sqrt(4.0 / (2 * n + 1))
        for k in range(n):
            for j in range(n):
                mat[k, j] = scale * math.cos(math.pi * (2 * k + 1) * (2 * j + 1) / (4 * n + 2))
    out = mat.astype(np.float32) if dtype == "f4" else mat
    out.setflags(write=False)
    return out


def forward(block: np.ndarray, kind_v: str, kind_h: str) -> np.ndarray:
    """2-D forward transform of one (H, W) residual block or an
    (M, H, W) batch of them."""
    h, w = block.shape[-2], block.shape[-1]
    tv = basis(kind_v, h)
    th = basis(kind_h, w)
    x = np.asarray(block, dtype=np.float32)
    return np.matmul(np.matmul(tv, x), th.T)


def inverse(coeffs: np.ndarray, kind_v: str, kind_h: str) -> np.ndarray:
    h, w = coeffs.shape[-2], coeffs.shape[-1]
    tv = basis(kind_v, h)
    th = basis(kind_h, w)
    x = np.asarray(coeffs, dtype=np.float32)
    return np.matmul(np.matmul(tv.T, x), th)
