"""Scene containers and parameter-budget accounting.

A scene is an ordered list of Gaussian primitives sharing one color model:
either spherical harmonics (as ingested from standard splat exports) or
diffuse color plus a variable-length list of spherical-Gaussian lobes.
All stored values are activated (opacity in [0,1], positive scales,
normalized quaternions and lobe axes); raw/unconstrained parameterizations
exist only inside the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

# Parameter-budget weights: a primitive costs BASE_PARAMS_PER_PRIMITIVE
# budget units, a lobe costs PARAMS_PER_LOBE (axis 3 + sharpness 1 + rgb 3).
BASE_PARAMS_PER_PRIMITIVE = 11
PARAMS_PER_LOBE = 7

# Floats actually serialized per primitive: position 3 + quaternion 4 +
# scale 3 + opacity 1 + diffuse 3.  The budget weight above deliberately
# excludes the diffuse color; both numbers are reported side by side.
STATIC_FLOATS_PER_PRIMITIVE = 14

DEFAULT_MAX_LOBES = 3


class SceneError(Exception):
    """Base class for scene construction and serialization errors."""


class SceneFormatError(SceneError):
    """Malformed input file (bad magic, missing property, bad header)."""


class UnsupportedEncodingError(SceneFormatError):
    """Recognized format but an encoding we refuse (ASCII/big-endian PLY)."""


class TruncatedFileError(SceneFormatError):
    """Payload shorter than the header promises."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ColorModelError(SceneError):
    """Operation applied to a scene with the wrong color model."""


class ConfigError(SceneError):
    """Invalid configuration value."""


class NumericalFailure(SceneError):
    """Non-finite value produced during optimization."""

    def __init__(self, message: str, index: int = -1):
        super().__init__(message)
        self.index = index


def _unit(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < eps:
        raise ValueError("cannot normalize a near-zero vector")
    return v / n


@dataclass
class SGLobe:
    """One spherical-Gaussian lobe: rgb amplitude, unit axis, sharpness.

    The lobe evaluates to ``amplitude * exp(sharpness * (axis . v - 1))``
    for a view direction v; sharpness 0 makes it view-independent.
    Amplitudes are linear color and may be negative or exceed 1.
    """

    axis: np.ndarray
    sharpness: float
    amplitude: np.ndarray

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=np.float32).reshape(3)
        self.amplitude = np.asarray(self.amplitude, dtype=np.float32).reshape(3)
        self.sharpness = float(self.sharpness)
        if self.sharpness < 0:
            raise ValueError(f"sharpness must be >= 0, got {self.sharpness}")

    def normalized(self) -> "SGLobe":
        return SGLobe(_unit(self.axis.astype(np.float64)).astype(np.float32),
                      self.sharpness, self.amplitude)


@dataclass
class GaussianPrimitive:
    """One splat: geometry, opacity, diffuse color and its SG lobes."""

    position: np.ndarray      # (3,) scene units
    rotation: np.ndarray      # (4,) unit quaternion, w first
    scale: np.ndarray         # (3,) per-axis stddev, > 0
    opacity: float            # activated, in [0, 1]
    diffuse: np.ndarray       # (3,) view-independent color
    lobes: list[SGLobe] = field(default_factory=list)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float32).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float32).reshape(4)
        self.scale = np.asarray(self.scale, dtype=np.float32).reshape(3)
        self.diffuse = np.asarray(self.diffuse, dtype=np.float32).reshape(3)
        self.opacity = float(self.opacity)
        if not np.all(self.scale > 0):
            raise ValueError(f"scale components must be > 0, got {self.scale}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity must be in [0,1], got {self.opacity}")


@dataclass(frozen=True)
class ColorModel:
    """Tag describing how primitives in a scene encode color."""

    kind: str                  # "sh" or "sg"
    degree: int = 0            # SH degree, 0..3
    max_lobes: int = DEFAULT_MAX_LOBES

    def __post_init__(self):
        if self.kind not in ("sh", "sg"):
            raise ValueError(f"unknown color model kind {self.kind!r}")
        if self.kind == "sh" and not 0 <= self.degree <= 3:
            raise ValueError(f"SH degree must be 0..3, got {self.degree}")
        if self.kind == "sg" and self.max_lobes < 0:
            raise ValueError("max_lobes must be >= 0")

    @staticmethod
    def sh(degree: int) -> "ColorModel":
        return ColorModel(kind="sh", degree=degree)

    @staticmethod
    def sg(max_lobes: int = DEFAULT_MAX_LOBES) -> "ColorModel":
        return ColorModel(kind="sg", max_lobes=max_lobes)


@dataclass
class Scene:
    """Immutable-by-convention snapshot of an ordered primitive list.

    SH-tagged scenes keep their harmonic coefficients in ``sh_coeffs``
    (one (n_coeffs, 3) block per primitive, first row is the DC term as
    stored in the source file) and carry empty lobe lists.
    """

    primitives: list[GaussianPrimitive]
    color_model: ColorModel
    sh_coeffs: list[np.ndarray] | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.color_model.kind == "sh":
            if self.sh_coeffs is None or len(self.sh_coeffs) != len(self.primitives):
                raise ValueError("SH scene needs one coefficient block per primitive")
            for p in self.primitives:
                if p.lobes:
                    raise ValueError("SH-tagged primitives must not carry lobes")
        else:
            if self.sh_coeffs is not None:
                raise ValueError("SG scene must not carry SH coefficients")
            for p in self.primitives:
                if len(p.lobes) > self.color_model.max_lobes:
                    raise ValueError(
                        f"primitive has {len(p.lobes)} lobes, "
                        f"max is {self.color_model.max_lobes}")

    def __len__(self) -> int:
        return len(self.primitives)

    @property
    def lobe_count(self) -> int:
        return sum(len(p.lobes) for p in self.primitives)

    def require_sg(self, what: str = "operation"):
        if self.color_model.kind != "sg":
            raise ColorModelError(f"{what} requires an SG-tagged scene, "
                                  f"got {self.color_model.kind!r}")


@dataclass(frozen=True)
class BudgetReport:
    """Parameter counts of an SG scene under the unified budget weights."""

    primitive_count: int
    lobe_count: int
    budget_units: int
    static_floats: int
    static_bytes: int
    avg_color_floats_per_primitive: Fraction


def budget_report(scene: Scene) -> BudgetReport:
    """Count budget units (11 per primitive + 7 per lobe) and stored floats."""
    scene.require_sg("budget_report")
    n = len(scene)
    l = scene.lobe_count
    static_floats = n * STATIC_FLOATS_PER_PRIMITIVE + l * PARAMS_PER_LOBE
    avg = Fraction(3 * n + PARAMS_PER_LOBE * l, n) if n else Fraction(0)
    return BudgetReport(
        primitive_count=n,
        lobe_count=l,
        budget_units=BASE_PARAMS_PER_PRIMITIVE * n + PARAMS_PER_LOBE * l,
        static_floats=static_floats,
        static_bytes=4 * static_floats,
        avg_color_floats_per_primitive=avg,
    )


def sh_color_float_cost(degree: int) -> int:
    """Color floats per primitive for an SH scene of the given degree.

    Third order is the usual splat-export layout and costs 48.
    """
    if not 0 <= degree <= 3:
        raise ConfigError(f"SH degree must be 0..3, got {degree}")
    return 3 * (degree + 1) ** 2
