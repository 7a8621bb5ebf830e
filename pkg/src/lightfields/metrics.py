"""Image-space evaluation: masked L1, PSNR, SSIM, and error heat-maps."""

from __future__ import annotations

import numpy as np

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

ERROR_COLD = np.array([0, 0, 255], dtype=np.uint8)   # zero error
ERROR_HOT = np.array([255, 0, 0], dtype=np.uint8)    # max error


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes {a.shape} and {b.shape} differ")
    return a, b


def l1_masked(a, b, mask) -> float:
    """Mean absolute difference over masked pixels (all channels)."""
    a, b = _check_pair(a, b)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match {a.shape}")
    if not mask.any():
        raise ValueError("empty mask")
    return float(np.abs(a[mask] - b[mask]).mean())


def psnr(a, b, mask=None) -> float:
    """Peak signal-to-noise ratio in dB on [0,1] images; +inf when equal."""
    a, b = _check_pair(a, b)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("empty mask")
        diff = a[mask] - b[mask]
    else:
        diff = a - b
    mse = float(np.mean(diff ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter2_valid(img, kernel):
    """Separable 2-D correlation with 'valid' boundary handling."""
    size = len(kernel)
    h, w = img.shape
    # rows
    out = np.zeros((h, w - size + 1))
    for i in range(size):
        out += kernel[i] * img[:, i:i + w - size + 1]
    # cols
    out2 = np.zeros((h - size + 1, out.shape[1]))
    for i in range(size):
        out2 += kernel[i] * out[i:i + h - size + 1, :]
    return out2


def ssim(a, b) -> float:
    """Structural similarity, Gaussian-windowed (11x11, sigma 1.5,
    K1=0.01, K2=0.03, L=1), averaged over channels."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel()
    c1 = (SSIM_K1) ** 2
    c2 = (SSIM_K2) ** 2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mu_x = _filter2_valid(x, kernel)
        mu_y = _filter2_valid(y, kernel)
        xx = _filter2_valid(x * x, kernel) - mu_x ** 2
        yy = _filter2_valid(y * y, kernel) - mu_y ** 2
        xy = _filter2_valid(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def error_map(pred, gt, mask) -> np.ndarray:
    """Per-pixel L1 as an RGBA heat-map: blue = low, red = high, max
    normalized per image; masked-out pixels transparent."""
    pred, gt = _check_pair(pred, gt)
    mask = np.asarray(mask, dtype=bool)
    err = np.abs(pred - gt).mean(axis=2)
    peak = err[mask].max() if mask.any() else 0.0
    t = err / peak if peak > 0 else np.zeros_like(err)
    rgba = np.zeros(err.shape + (4,), dtype=np.uint8)
    rgba[..., 0] = np.round(t * 255)
    rgba[..., 2] = np.round((1.0 - t) * 255)
    rgba[..., 3] = np.where(mask, 255, 0)
    return rgba
