"""Independent numerical oracles shared across the test suite.

Everything here is deliberately dumb and slow: central finite differences,
brute-force enumeration, Monte-Carlo estimates. None of it touches the
package's own gradient or rendering paths.
"""

import numpy as np

FD_STEP = 1e-5
GRAD_TOL = 1e-4


def finite_diff_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of the scalar function ``f`` with respect
    to the array ``x``, which ``f`` must read on every call (the buffer is
    perturbed in place and restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_close(analytic: np.ndarray, fd: np.ndarray, tol: float = GRAD_TOL):
    """Elementwise |a - f| <= tol * max(1, |a|, |f|): relative at unit scale
    and absolute below it, which is where finite differences bottom out."""
    analytic = np.asarray(analytic)
    fd = np.asarray(fd)
    assert analytic.shape == fd.shape
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
    err = np.abs(analytic - fd) / denom
    assert err.max() <= tol, f"gradient mismatch: max rel err {err.max():.3e}"


def fd_check_sampled(f, x: np.ndarray, analytic: np.ndarray, rng: np.random.Generator,
                     n_coords: int = 25, h: float = FD_STEP, tol: float = GRAD_TOL,
                     require_smooth: bool = True) -> int:
    """Finite-difference check on a random subset of coordinates of ``x``.

    A probe whose two one-sided differences disagree straddles a kink (ReLU
    or abs within h of zero somewhere downstream); central differences say
    nothing about the gradient there, so such coordinates are skipped.
    Returns the number of coordinates checked; by default at least one must
    survive (zero-initialized tensors can sit entirely on kinks, in which
    case callers pass require_smooth=False and pool the counts).
    """
    flat = x.reshape(-1)
    gflat = analytic.reshape(-1)
    idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
    f0 = f()
    checked = 0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        d_plus = (fp - f0) / h
        d_minus = (f0 - fm) / h
        # Kinks can sit exactly at the evaluation point (zero-init biases
        # with ReLU-clipped inputs), so consistency must be judged relative
        # to the slopes themselves, with a floor well above curvature noise.
        if abs(d_plus - d_minus) > max(0.02 * max(abs(d_plus), abs(d_minus)), 50 * h):
            continue  # nonsmooth at this probe
        fd = (fp - fm) / (2.0 * h)
        denom = max(1.0, abs(fd), abs(gflat[i]))
        assert abs(gflat[i] - fd) / denom <= tol, (
            f"coord {i}: analytic {gflat[i]:.6e} vs fd {fd:.6e}")
        checked += 1
    if require_smooth:
        assert checked > 0, "every probed coordinate straddled a kink"
    return checked
