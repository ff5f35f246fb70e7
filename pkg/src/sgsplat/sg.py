"""Spherical-Gaussian and spherical-harmonics color math.

Everything here is a pure function of its arguments.  A lobe evaluates to
``a * exp(s * (mu . v - 1))``; its integral over the unit sphere has the
closed form ``2*pi*a*(1 - exp(-2s))/s`` whose s -> 0 limit is ``4*pi*a``.
Dividing by the sphere area gives the exact mean-preserving compensation
used when a lobe is deleted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import ConfigError, GaussianPrimitive, SGLobe

FOUR_PI = 4.0 * np.pi

# Switch the (1 - exp(-2s))/s family to its Taylor expansion below this
# sharpness to avoid 0/0.
_TAYLOR_EPS = 1e-8

# Real SH basis constants in the standard splat-export convention.
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
       -1.0925484305920792, 0.5462742152960396)
_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
       0.3731763325901154, -0.4570457994644658, 1.445305721320277,
       -0.5900435899266435)


def fibonacci_sphere(n: int) -> np.ndarray:
    """n near-uniform unit directions (deterministic Fibonacci lattice)."""
    if n < 1:
        raise ConfigError(f"need at least 1 sample, got {n}")
    k = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * k + 1.0) / n
    phi = k * (np.pi * (3.0 - np.sqrt(5.0)))  # golden angle
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _as_unit_dirs(v: np.ndarray) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    dirs = v.reshape(1, 3) if single else v
    norms = np.linalg.norm(dirs, axis=-1)
    if not np.allclose(norms, 1.0, atol=1e-6):
        raise ValueError("view directions must be unit length")
    return dirs, single


def eval_sg_lobe(v: np.ndarray, lobe: SGLobe) -> np.ndarray:
    """Evaluate one lobe at unit direction(s) v: a * exp(s*(mu.v - 1))."""
    dirs, single = _as_unit_dirs(v)
    mu = lobe.axis.astype(np.float64)
    mu = mu / np.linalg.norm(mu)
    e = np.exp(lobe.sharpness * (dirs @ mu - 1.0))
    out = e[:, None] * lobe.amplitude.astype(np.float64)[None, :]
    return out[0] if single else out


def eval_color(v: np.ndarray, prim: GaussianPrimitive,
               clamp: bool = True) -> np.ndarray:
    """Diffuse plus the sum of all lobes, optionally clamped at 0.

    The clamp matches render-time behavior; pass ``clamp=False`` for the
    raw value used inside fitting where smooth gradients matter.
    """
    dirs, single = _as_unit_dirs(v)
    c = np.broadcast_to(prim.diffuse.astype(np.float64),
                        (dirs.shape[0], 3)).copy()
    for lobe in prim.lobes:
        c += eval_sg_lobe(dirs, lobe)
    if clamp:
        c = np.maximum(c, 0.0)
    return c[0] if single else c


@dataclass
class SHBlock:
    """Real spherical-harmonics coefficients for one primitive.

    ``coefficients`` has one (r, g, b) row per basis function,
    (degree+1)**2 rows total, in the usual splat-export basis order with
    the DC term first (stored unscaled, exactly as in the source file).
    """

    coefficients: np.ndarray
    degree: int

    def __post_init__(self):
        if not 0 <= self.degree <= 3:
            raise ConfigError(f"unsupported SH degree {self.degree}")
        self.coefficients = np.asarray(self.coefficients,
                                       dtype=np.float64).reshape(-1, 3)
        want = (self.degree + 1) ** 2
        if self.coefficients.shape[0] != want:
            raise ValueError(
                f"degree {self.degree} needs {want} coefficient rows, "
                f"got {self.coefficients.shape[0]}")


def sh_basis(v: np.ndarray, degree: int) -> np.ndarray:
    """Stack of real SH basis values at unit direction(s) v, DC first."""
    if not 0 <= degree <= 3:
        raise ConfigError(f"unsupported SH degree {degree}")
    dirs, single = _as_unit_dirs(v)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [np.full_like(x, _C0)]
    if degree >= 1:
        cols += [-_C1 * y, _C1 * z, -_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            _C2[0] * x * y,
            _C2[1] * y * z,
            _C2[2] * (2.0 * zz - xx - yy),
            _C2[3] * x * z,
            _C2[4] * (xx - yy),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            _C3[0] * y * (3.0 * xx - yy),
            _C3[1] * x * y * z,
            _C3[2] * y * (4.0 * zz - xx - yy),
            _C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            _C3[4] * x * (4.0 * zz - xx - yy),
            _C3[5] * z * (xx - yy),
            _C3[6] * x * (xx - 3.0 * yy),
        ]
    basis = np.stack(cols, axis=-1)
    return basis[0] if single else basis


def eval_sh(v: np.ndarray, sh: SHBlock) -> np.ndarray:
    """Evaluate the SH color function (without the +0.5 export offset)."""
    basis = sh_basis(v, sh.degree)
    return basis @ sh.coefficients


def _mean_factor(s) -> np.ndarray:
    """(1 - exp(-2s)) / (2s), with the limit 1 at s = 0."""
    s = np.asarray(s, dtype=np.float64)
    small = s < _TAYLOR_EPS
    safe = np.where(small, 1.0, s)
    exact = -np.expm1(-2.0 * safe) / (2.0 * safe)
    return np.where(small, 1.0 - s, exact)


def lobe_compensation(lobe: SGLobe) -> np.ndarray:
    """Sphere-average of the lobe, a*(1-exp(-2s))/(2s).

    Adding this to the parent's diffuse color before deleting the lobe
    preserves the mean color over all view directions exactly; it is the
    minimizer of the integrated squared color change.
    """
    return float(_mean_factor(lobe.sharpness)) * lobe.amplitude.astype(np.float64)


def sphere_integral_sg(lobe: SGLobe) -> np.ndarray:
    """Integral of the lobe over all directions: 2*pi*a*(1-exp(-2s))/s.

    Shares the compensation code path so the x(4*pi) identity between the
    two is exact at the bit level.
    """
    return lobe_compensation(lobe) * FOUR_PI


def dynamic_range(lobe: SGLobe) -> float:
    """Peak-to-trough swing ||a|| * (1 - exp(-2s)) of the lobe over views.

    The extremes occur at v = +axis and v = -axis; amplitude is collapsed
    to its Euclidean norm.
    """
    s = float(lobe.sharpness)
    return float(np.linalg.norm(lobe.amplitude) * -np.expm1(-2.0 * s))


def dynamic_range_many(sharpness: np.ndarray, amplitude: np.ndarray) -> np.ndarray:
    """Vectorized dynamic_range on parallel arrays (..., ) and (..., 3)."""
    s = np.asarray(sharpness, dtype=np.float64)
    a = np.asarray(amplitude, dtype=np.float64)
    return np.linalg.norm(a, axis=-1) * -np.expm1(-2.0 * s)
