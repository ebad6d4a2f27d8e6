"""Torus geometry: site enumeration, wrapping, sup-norm distances.

The environment lives on a d-dimensional torus of side L; walker positions
stay in the infinite lattice and are reduced modulo L only when reading the
environment. Site indices follow C-order (lexicographic, origin first).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

Offset = tuple[int, ...]


class GeometryError(ValueError):
    """Raised when a lattice object does not fit its geometry."""


@dataclass(frozen=True)
class Geometry:
    """Finite torus (Z/LZ)^d with the wrap-around sup-norm metric."""

    dim: int
    side: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise GeometryError("dim must be a positive integer")
        if self.side < 3:
            raise GeometryError("torus side must be at least 3")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def n_sites(self) -> int:
        return self.side**self.dim

    def sites(self) -> list[Offset]:
        """All sites in C-order; index 0 is the origin."""
        return list(itertools.product(range(self.side), repeat=self.dim))

    def site_index(self, site: Offset) -> int:
        idx = 0
        for c in site:
            idx = idx * self.side + (c % self.side)
        return idx

    def wrap(self, point: Offset) -> Offset:
        return tuple(c % self.side for c in point)

    def wrap_offset(self, offset: Offset) -> Offset:
        """Centered representative of an offset, components in (-L/2, L/2]."""
        half = self.side // 2
        out = []
        for c in offset:
            c = c % self.side
            if c > half or (c == half and self.side % 2 == 0 and c != 0):
                # even side: L/2 is its own negative; keep +L/2 by convention
                pass
            if c > self.side - c:
                c = c - self.side
            out.append(c)
        return tuple(out)

    def wrap_distance(self, a: Offset, b: Offset) -> int:
        """Sup-norm distance with per-coordinate wrap-around."""
        d = 0
        for x, y in zip(a, b):
            delta = abs((x - y) % self.side)
            d = max(d, min(delta, self.side - delta))
        return d

    def fits_radius(self, radius: int) -> bool:
        """Whether a window of sup-norm radius fits without wrap ambiguity."""
        return 2 * radius + 1 <= self.side


def sup_ball(radius: int, dim: int) -> list[Offset]:
    """Offsets with sup-norm at most ``radius``, in C-order."""
    rng = range(-radius, radius + 1)
    return list(itertools.product(rng, repeat=dim))


def sup_norm(offset: Offset) -> int:
    return max(abs(int(c)) for c in offset)


def roll_axes(values: np.ndarray, offset: Offset, lattice_ndim: int) -> np.ndarray:
    """Shift lattice values so position q holds the value at q + offset.

    The lattice axes are the trailing ``lattice_ndim`` axes; leading axes
    (batch, time) are untouched.
    """
    axes = tuple(range(values.ndim - lattice_ndim, values.ndim))
    return np.roll(values, shift=tuple(-c for c in offset), axis=axes)
