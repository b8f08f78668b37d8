"""Image quality metrics: PSNR and SSIM (with analytic gradient).

SSIM uses an 11x11 Gaussian window (sigma=1.5), K1=0.01, K2=0.03 and dynamic
range 1.  Local statistics are taken with zero-padded correlation and the
SSIM map is averaged over the interior region where the window fits entirely,
so padding never contaminates the score.  The window shrinks to the largest
odd size that fits when images are smaller than 11 pixels on a side.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP_DB = 99.0
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Capped at 99 dB when MSE < 1e-10 (identical images would be +inf).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = (size - 1) / 2.0
    x = np.arange(size, dtype=float) - r
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _win_size(h: int, w: int) -> int:
    size = min(_SSIM_WIN, h, w)
    if size % 2 == 0:
        size -= 1
    if size < 1:
        raise ValueError(f"image {h}x{w} too small for SSIM")
    return size


def _corr(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # Separable zero-padded correlation; self-adjoint for a symmetric window.
    out = correlate1d(img, win, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, win, axis=1, mode="constant", cval=0.0)


def _ssim_channel(x, y, win):
    C1 = _K1 * _K1
    C2 = _K2 * _K2
    mx = _corr(x, win)
    my = _corr(y, win)
    sxx = _corr(x * x, win) - mx * mx
    syy = _corr(y * y, win) - my * my
    sxy = _corr(x * y, win) - mx * my
    A1 = 2.0 * mx * my + C1
    A2 = 2.0 * sxy + C2
    B1 = mx * mx + my * my + C1
    B2 = sxx + syy + C2
    smap = (A1 * A2) / (B1 * B2)
    return smap, (mx, my, A1, A2, B1, B2)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity for images in [0, 1].

    Multichannel inputs are averaged over channels.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    H, W, C = a.shape
    size = _win_size(H, W)
    win = _gaussian_window(size, _SSIM_SIGMA)
    r = size // 2
    interior = np.zeros((H, W), dtype=bool)
    interior[r : H - r, r : W - r] = True
    total = 0.0
    for c in range(C):
        smap, _ = _ssim_channel(a[:, :, c], b[:, :, c], win)
        total += float(smap[interior].mean())
    return total / C


def ssim_and_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean SSIM plus its analytic gradient with respect to the first image.

    The gradient is exact for the interior-averaged SSIM computed by `ssim`
    (b is treated as constant).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[:, :, None]
        b = b[:, :, None]
    H, W, C = a.shape
    size = _win_size(H, W)
    win = _gaussian_window(size, _SSIM_SIGMA)
    r = size // 2
    interior = np.zeros((H, W), dtype=bool)
    interior[r : H - r, r : W - r] = True
    n_valid = int(interior.sum())
    grad = np.zeros_like(a)
    total = 0.0
    for c in range(C):
        x = a[:, :, c]
        y = b[:, :, c]
        smap, (mx, my, A1, A2, B1, B2) = _ssim_channel(x, y, win)
        total += float(smap[interior].mean())
        S1 = A1 / B1
        S2 = A2 / B2
        # d(smap)/d(mu_x), d(smap)/d(sigma_x^2), d(smap)/d(sigma_xy),
        # restricted to the interior pixels that enter the mean.
        c1 = np.where(interior, 2.0 * (my - mx * S1) * S2 / B1, 0.0)
        c2 = np.where(interior, -S1 * S2 / B2, 0.0)
        c3 = np.where(interior, 2.0 * S1 / B2, 0.0)
        g = (
            _corr(c1, win)
            + 2.0 * x * _corr(c2, win)
            - 2.0 * _corr(c2 * mx, win)
            + y * _corr(c3, win)
            - _corr(c3 * my, win)
        )
        grad[:, :, c] = g / (n_valid * C)
    if squeeze:
        grad = grad[:, :, 0]
    return total / C, grad
