"""sRGB <-> linear conversions (IEC 61966-2-1 piecewise curves).

Light contributions add physically only in linear space; images are stored
display-encoded. Inputs outside [0, 1] are clamped and counted so callers
can notice silent range violations without paying for exceptions.
"""

import numpy as np

_clamp_warnings = 0


def clamp_warning_count() -> int:
    return _clamp_warnings


def reset_clamp_warnings():
    global _clamp_warnings
    _clamp_warnings = 0


def _clamped(c):
    global _clamp_warnings
    c = np.asarray(c, dtype=np.float64)
    if np.any(c < 0.0) or np.any(c > 1.0):
        _clamp_warnings += 1
        c = np.clip(c, 0.0, 1.0)
    return c


def srgb_to_linear(c):
    """Display-encoded sRGB in [0,1] to linear radiance in [0,1]."""
    c = _clamped(c)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    """Linear radiance in [0,1] to display-encoded sRGB in [0,1]."""
    c = _clamped(c)
    # 1.055*c^(1/2.4) - 0.055, regrouped so the upper endpoint maps to 1.0
    # exactly in float64.
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * (c ** (1.0 / 2.4) - 1.0) + 1.0)
