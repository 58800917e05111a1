import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Tuple

import numpy as np


@dataclass(frozen=True, order=True)
class LatticePoint:
    """A site of Z^d."""
    coords: Tuple[int, ...]

    def __post_init__(self):
        coords = tuple(int(c) for c in self.coords)
        if not coords:
            raise ValueError("a lattice point needs at least one coordinate")
        object.__setattr__(self, "coords", coords)

    @classmethod
    def of(cls, *coords: int) -> "LatticePoint":
        return cls(tuple(coords))

    @property
    def d(self) -> int:
        return len(self.coords)

    @property
    def norm(self) -> int:
        """l1 norm |i|."""
        return sum(abs(c) for c in self.coords)


def l1_distance(i: LatticePoint, j: LatticePoint) -> int:
    if i.d != j.d:
        raise ValueError(f"dimension mismatch: {i.d} vs {j.d}")
    return sum(abs(a - b) for a, b in zip(i.coords, j.coords))


@dataclass(frozen=True)
class Cube:
    """The truncation cube [-N, N]^d with its lexicographic enumeration."""
    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be at least 1, got {self.d}")
        if self.N < 0:
            raise ValueError(f"half-width must be nonnegative, got {self.N}")

    @property
    def side(self) -> int:
        return 2 * self.N + 1

    @property
    def size(self) -> int:
        return self.side ** self.d

    @cached_property
    def coords(self) -> np.ndarray:
        """Integer coordinates of every site, shape (size, d), lexicographic order."""
        axes = [np.arange(-self.N, self.N + 1)] * self.d
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        coords = grid.reshape(-1, self.d)
        coords.setflags(write=False)
        return coords

    @cached_property
    def norms(self) -> np.ndarray:
        """l1 norm of every site, shape (size,)."""
        norms = np.abs(self.coords).sum(axis=1)
        norms.setflags(write=False)
        return norms

    def point(self, index: int) -> LatticePoint:
        if not 0 <= index < self.size:
            raise IndexError(f"index {index} outside cube of size {self.size}")
        return LatticePoint(tuple(self.coords[index]))

    def contains(self, point: LatticePoint) -> bool:
        return point.d == self.d and all(abs(c) <= self.N for c in point.coords)

    def index_of(self, point: LatticePoint) -> int:
        if not self.contains(point):
            raise ValueError(f"{point.coords} is not a site of the cube [-{self.N}, {self.N}]^{self.d}")
        index = 0
        for c in point.coords:
            index = index * self.side + (c + self.N)
        return index

    def indices_of(self, points: Iterable[LatticePoint]) -> np.ndarray:
        return np.array([self.index_of(p) for p in points], dtype=int)

    def site_tuples(self) -> List[Tuple[int, ...]]:
        return [tuple(int(c) for c in row) for row in self.coords]

    def pairwise_l1(self) -> np.ndarray:
        """Matrix of l1 distances between all sites, shape (size, size)."""
        return np.abs(self.coords[:, None, :] - self.coords[None, :, :]).sum(axis=2)

    def embed(self, values: np.ndarray, target: "Cube") -> np.ndarray:
        """Zero-extend values on this cube to a larger cube (last axis indexes sites)."""
        if target.d != self.d or target.N < self.N:
            raise ValueError("target cube must have the same dimension and a half-width at least as large")
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.size:
            raise ValueError(f"expected {self.size} site values, got {values.shape[-1]}")
        out = np.zeros(values.shape[:-1] + (target.size,))
        out[..., self.positions_in(target)] = values
        return out

    def restrict(self, values: np.ndarray, source: "Cube") -> np.ndarray:
        """Restrict values given on a larger cube to this cube."""
        values = np.asarray(values, dtype=float)
        return values[..., self.positions_in(source)]

    def positions_in(self, other: "Cube") -> np.ndarray:
        """Positions of this cube's sites within the enumeration of a larger cube."""
        if other.d != self.d or other.N < self.N:
            raise ValueError("cube is not contained in the other cube")
        shifted = self.coords + other.N
        positions = np.zeros(self.size, dtype=int)
        for axis in range(self.d):
            positions = positions * other.side + shifted[:, axis]
        return positions


def enumerate_cube(cube: Cube) -> List[LatticePoint]:
    return [LatticePoint(coords) for coords in itertools.product(range(-cube.N, cube.N + 1), repeat=cube.d)]


@dataclass(frozen=True)
class LatticeState:
    """A real value per site of a cube, at a given time."""
    cube: Cube
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.cube.size,):
            raise ValueError(f"state needs {self.cube.size} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("state values must be finite")
        if self.time < 0:
            raise ValueError(f"time must be nonnegative, got {self.time}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def zeros(cls, cube: Cube, time: float = 0.0) -> "LatticeState":
        return cls(cube, np.zeros(cube.size), time)

    @classmethod
    def from_profile(cls, cube: Cube, profile, time: float = 0.0) -> "LatticeState":
        """Build a state from a function of the lattice point."""
        return cls(cube, np.array([profile(p) for p in enumerate_cube(cube)], dtype=float), time)

    def value_at(self, point: LatticePoint) -> float:
        return float(self.values[self.cube.index_of(point)])

    def with_value(self, point: LatticePoint, value: float) -> "LatticeState":
        values = self.values.copy()
        values[self.cube.index_of(point)] = value
        return LatticeState(self.cube, values, self.time)


@dataclass(frozen=True)
class GrowthBall:
    """Sites whose values grow at most polynomially: |x_i| <= R (|i| + 1)^rho."""
    R: float
    rho: float

    def __post_init__(self):
        if self.R < 0 or self.rho < 0:
            raise ValueError("R and rho must be nonnegative")

    def bound(self, cube: Cube) -> np.ndarray:
        return self.R * np.power(cube.norms + 1.0, self.rho)

    def contains(self, state: LatticeState) -> bool:
        return bool(np.all(np.abs(state.values) <= self.bound(state.cube)))

    def boundary_profile(self, cube: Cube) -> LatticeState:
        """The extreme state x_i = R (|i| + 1)^rho."""
        return LatticeState(cube, self.bound(cube))


def ball_contains(ball: GrowthBall, state: LatticeState) -> bool:
    return ball.contains(state)
