"""Periodic lattices, metric signatures and finite-difference stencils.

Scalar fields are numpy arrays of shape ``lattice.shape``; vector fields carry
a leading component axis, shape ``(n, *lattice.shape)``.  Array axis ``i``
corresponds to coordinate ``a^{i+1}``.  The canonical serialization order is
column-major (axis 1 fastest), i.e. ``values.ravel(order="F")``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .errors import CFLViolation, ConfigError

MAX_DIM = 4


@dataclass(frozen=True)
class MetricSignature:
    """Diagonal spatial metric g_ij = zeta_i delta_ij."""

    zeta: tuple[int, ...]

    def __post_init__(self):
        zeta = tuple(int(z) for z in self.zeta)
        if not zeta or any(z not in (-1, 1) for z in zeta):
            raise ConfigError(f"signature entries must be +1 or -1, got {self.zeta}")
        object.__setattr__(self, "zeta", zeta)

    @classmethod
    def spatial(cls, n: int) -> "MetricSignature":
        """All-minus signature used by the Klein-Gordon reduction."""
        return cls((-1,) * n)

    @property
    def n(self) -> int:
        return len(self.zeta)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.zeta, dtype=float)

    def matrix(self) -> np.ndarray:
        return np.diag(self.array)

    def raise_index(self, v: np.ndarray) -> np.ndarray:
        """Raise (or lower; the metric is its own inverse) the leading index."""
        z = self.array.reshape((self.n,) + (1,) * (np.ndim(v) - 1))
        return z * v

    lower_index = raise_index


@dataclass(frozen=True)
class Lattice:
    """Uniform periodic lattice of sites ``origin + j * spacing``."""

    counts: tuple[int, ...]
    box: tuple[float, ...]
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        box = tuple(float(b) for b in self.box)
        if not 1 <= len(counts) <= MAX_DIM or len(box) != len(counts):
            raise ConfigError(f"lattice needs 1..{MAX_DIM} axes with matching box, got {counts}, {box}")
        if any(c < 1 for c in counts) or any(not b > 0 for b in box):
            raise ConfigError("lattice counts and extents must be positive")
        origin = (0.0,) * len(counts) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != len(counts):
            raise ConfigError("origin must have one entry per axis")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def cube(cls, n: int, count: int, length: float, offset: float = 0.0) -> "Lattice":
        """Equal counts and extents on every axis; ``offset`` is in cell units."""
        h = length / count
        return cls((count,) * n, (length,) * n, (offset * h,) * n)

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> np.ndarray:
        return np.array(self.box) / np.array(self.counts)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.counts[axis])

    def coords(self) -> np.ndarray:
        """Site positions, shape ``(n, *shape)``."""
        axes = [self.axis_coords(i) for i in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def site_index(self, multi_index) -> int:
        """Canonical (axis 1 fastest) flat index of a site."""
        return int(np.ravel_multi_index(tuple(multi_index), self.shape, order="F"))

    def fold(self, points: np.ndarray) -> np.ndarray:
        """Map points (leading axis = component) into ``[origin, origin + box)``."""
        o = np.array(self.origin).reshape((self.n,) + (1,) * (np.ndim(points) - 1))
        L = np.array(self.box).reshape(o.shape)
        return o + np.mod(points - o, L)


@dataclass(frozen=True)
class VectorField:
    """Per-site n-vector on a lattice with an explicit index position."""

    values: np.ndarray
    lattice: Lattice
    variance: str = "upper"

    def __post_init__(self):
        if self.variance not in ("upper", "lower"):
            raise ConfigError(f"variance must be 'upper' or 'lower', got {self.variance!r}")
        if np.shape(self.values) != (self.lattice.n, *self.lattice.shape):
            raise ConfigError(f"vector field shape {np.shape(self.values)} does not match lattice")

    def raised(self, signature: MetricSignature) -> "VectorField":
        if self.variance == "upper":
            return self
        return VectorField(signature.raise_index(self.values), self.lattice, "upper")

    def lowered(self, signature: MetricSignature) -> "VectorField":
        if self.variance == "lower":
            return self
        return VectorField(signature.lower_index(self.values), self.lattice, "lower")


@dataclass(frozen=True)
class PhysicalConstants:
    c: float = 1.0
    hbar: float = 1.0
    m: float = 1.0

    def __post_init__(self):
        if not (self.c > 0 and self.hbar > 0 and self.m > 0):
            raise ConfigError("c, hbar and m must be strictly positive")

    @property
    def alpha(self) -> float:
        """Clock scale hbar / (m c^2), a time."""
        return self.hbar / (self.m * self.c**2)

    @property
    def rest_frequency(self) -> float:
        """m c^2 / hbar."""
        return self.m * self.c**2 / self.hbar

    @property
    def inverse_compton(self) -> float:
        """m c / hbar."""
        return self.m * self.c / self.hbar


@dataclass(frozen=True)
class SimConfig:
    constants: PhysicalConstants
    signature: MetricSignature
    lattice: Lattice
    dt: float
    n_steps: int
    rho_floor: float = 1e-3
    jacobian_floor: float = 1e-6
    kernel: str = "multilinear"
    snapshot_every: int = 1
    cfl_max: float = 0.5
    tau_max_factor: float = 20.0
    window: float = 0.4
    velocity_floor: float = 1e-12
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.signature.n != self.lattice.n:
            raise ConfigError("signature and lattice dimensions differ")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.n_steps < 0:
            raise ConfigError("n_steps must be non-negative")
        if not self.rho_floor > 0 or not self.jacobian_floor > 0:
            raise ConfigError("rho_floor and jacobian_floor must be positive")
        if not 0 < self.cfl_max <= 0.5:
            raise ConfigError("CFL limit must lie in (0, 0.5]")
        if self.kernel not in ("nearest", "multilinear"):
            raise ConfigError(f"unknown deposition kernel {self.kernel!r}")
        bound = self.cfl_max * float(self.lattice.spacing.min()) / self.constants.c
        if self.dt > bound * (1 + 1e-12):
            raise CFLViolation(
                f"dt={self.dt:.6g} exceeds CFL bound {self.cfl_max} * min(da) / c = {bound:.6g}"
            )

    @property
    def tau_max(self) -> float:
        return self.tau_max_factor * self.constants.alpha

    @property
    def cfl(self) -> float:
        return self.dt * self.constants.c / float(self.lattice.spacing.min())


# ---------------------------------------------------------------------------
# stencils


def _shift(values: np.ndarray, axis: int, step: int, jump: float) -> np.ndarray:
    """values at index j + step along ``axis`` for a field with f(a + L) = f(a) + jump."""
    out = np.roll(values, -step, axis=axis)
    if jump:
        n = values.shape[axis]
        idx = [slice(None)] * values.ndim
        if step > 0:
            idx[axis] = slice(n - step, n)
            out[tuple(idx)] += jump
        else:
            idx[axis] = slice(0, -step)
            out[tuple(idx)] -= jump
    return out


def fd_gradient(values: np.ndarray, lattice: Lattice, axis: int, jump: float = 0.0) -> np.ndarray:
    """Second-order central difference along ``axis`` with periodic wrap.

    ``jump`` supports quasi-periodic fields (a linear ramp on top of a
    periodic part) by adding the per-period increment across the seam.
    """
    h = lattice.spacing[axis]
    return (_shift(values, axis, 1, jump) - _shift(values, axis, -1, jump)) / (2 * h)


def fd_second(values: np.ndarray, lattice: Lattice, axis: int, jump: float = 0.0) -> np.ndarray:
    h = lattice.spacing[axis]
    return (_shift(values, axis, 1, jump) - 2 * values + _shift(values, axis, -1, jump)) / h**2


def gradient(values: np.ndarray, lattice: Lattice, jumps: Sequence[float] | None = None) -> np.ndarray:
    jumps = jumps or (0.0,) * lattice.n
    return np.stack([fd_gradient(values, lattice, i, jumps[i]) for i in range(lattice.n)])


def sample(fn: Callable[..., np.ndarray], lattice: Lattice) -> np.ndarray:
    """Evaluate ``fn(*coords)`` at every site."""
    x = lattice.coords()
    return np.broadcast_to(np.asarray(fn(*x), dtype=float), lattice.shape).copy()


# ---------------------------------------------------------------------------
# interpolation


def _cell_position(lattice: Lattice, points: np.ndarray):
    pts = np.asarray(points, dtype=float)
    o = np.array(lattice.origin).reshape((lattice.n,) + (1,) * (pts.ndim - 1))
    h = lattice.spacing.reshape(o.shape)
    s = (pts - o) / h
    base = np.floor(s)
    return base.astype(np.int64), s - base


def interpolate(values: np.ndarray, lattice: Lattice, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation over the 2^n surrounding sites (periodic).

    ``points`` has shape ``(n, ...)``; the result has shape ``points.shape[1:]``.
    """
    base, frac = _cell_position(lattice, points)
    out = np.zeros(base.shape[1:])
    for corner in product((0, 1), repeat=lattice.n):
        w = np.ones(base.shape[1:])
        idx = []
        for ax, c in enumerate(corner):
            w = w * (frac[ax] if c else 1.0 - frac[ax])
            idx.append(np.mod(base[ax] + c, lattice.counts[ax]))
        out += w * values[tuple(idx)]
    return out


def lagrange4(f: np.ndarray) -> np.ndarray:
    """Cubic Lagrange weights for nodes -1, 0, 1, 2 at fractional offset f."""
    return np.stack([
        -f * (f - 1) * (f - 2) / 6,
        (f + 1) * (f - 1) * (f - 2) / 2,
        -(f + 1) * f * (f - 2) / 2,
        (f + 1) * f * (f - 1) / 6,
    ])


def interpolate_cubic(values: np.ndarray, lattice: Lattice, points: np.ndarray) -> np.ndarray:
    """Tensor-product four-point Lagrange interpolation (periodic), O(h^4)."""
    base, frac = _cell_position(lattice, points)
    weights = [lagrange4(frac[ax]) for ax in range(lattice.n)]
    out = np.zeros(base.shape[1:])
    for offs in product(range(4), repeat=lattice.n):
        w = np.ones(base.shape[1:])
        idx = []
        for ax, k in enumerate(offs):
            w = w * weights[ax][k]
            idx.append(np.mod(base[ax] + k - 1, lattice.counts[ax]))
        out += w * values[tuple(idx)]
    return out
