from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from lattice.lattice import Cube, LatticePoint, LatticeState

OBSERVABLE_KINDS = ("coordinate-tanh", "product-window", "constant")


@dataclass(frozen=True)
class Observable:
    """
    A bounded local function f of the lattice state with support Lambda(f).

    coordinate-tanh: f(x) = tanh(x_i) for the single support site i.
    product-window: f(x) = prod_{i in support} exp(-x_i^2 / (2 width^2)).
    constant: f(x) = value with |value| <= 1 and empty support.
    """
    kind: str
    support: Tuple[LatticePoint, ...] = field(default=())
    width: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in OBSERVABLE_KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}, expected one of {OBSERVABLE_KINDS}")
        object.__setattr__(self, "support", tuple(self.support))
        if self.kind == "coordinate-tanh" and len(self.support) != 1:
            raise ValueError("coordinate-tanh needs exactly one support site")
        if self.kind == "product-window":
            if not self.support:
                raise ValueError("product-window needs at least one support site")
            if not self.width > 0:
                raise ValueError(f"window width must be positive, got {self.width}")
        if self.kind == "constant":
            if self.support:
                raise ValueError("a constant observable has empty support")
            if abs(self.value) > 1.0:
                raise ValueError(f"constant observables are bounded by 1, got {self.value}")

    @classmethod
    def coordinate_tanh(cls, site: LatticePoint) -> "Observable":
        return cls("coordinate-tanh", (site,))

    @classmethod
    def product_window(cls, sites: Sequence[LatticePoint], width: float = 1.0) -> "Observable":
        return cls("product-window", tuple(sites), width=width)

    @classmethod
    def constant(cls, value: float = 1.0) -> "Observable":
        return cls("constant", value=value)

    @property
    def seminorm(self) -> float:
        """|||f||| = sum_i sup |d_i f|."""
        if self.kind == "coordinate-tanh":
            return 1.0
        if self.kind == "product-window":
            return len(self.support) / (self.width * np.sqrt(np.e))
        return 0.0

    def sup_partial_sq(self, cube: Cube) -> np.ndarray:
        """sup_x |d_i f(x)|^2 for every site of the cube."""
        out = np.zeros(cube.size)
        if self.kind == "coordinate-tanh":
            out[self.positions(cube)] = 1.0
        elif self.kind == "product-window":
            out[self.positions(cube)] = 1.0 / (self.width ** 2 * np.e)
        return out

    def positions(self, cube: Cube) -> np.ndarray:
        for site in self.support:
            if not cube.contains(site):
                raise ValueError(f"support site {site.coords} lies outside the cube [-{cube.N}, {cube.N}]^{cube.d}")
        return cube.indices_of(self.support)

    def contains(self, site: LatticePoint) -> bool:
        return site in self.support

    def distance_to_support(self, site: LatticePoint) -> int:
        if not self.support:
            raise ValueError("a constant observable has no support to measure distance from")
        return min(sum(abs(a - b) for a, b in zip(site.coords, s.coords)) for s in self.support)

    def evaluate(self, X: np.ndarray, cube: Cube) -> np.ndarray:
        """f on states stacked along leading axes (last axis indexes cube sites)."""
        X = np.asarray(X, dtype=float)
        if self.kind == "constant":
            return np.full(X.shape[:-1], self.value)
        local = X[..., self.positions(cube)]
        if self.kind == "coordinate-tanh":
            return np.tanh(local[..., 0])
        return np.exp(-np.sum(local ** 2, axis=-1) / (2.0 * self.width ** 2))

    def gradient(self, X: np.ndarray, cube: Cube) -> np.ndarray:
        """All partial derivatives, same shape as X; zero off the support."""
        X = np.asarray(X, dtype=float)
        out = np.zeros_like(X)
        if self.kind == "constant":
            return out
        positions = self.positions(cube)
        local = X[..., positions]
        if self.kind == "coordinate-tanh":
            out[..., positions] = 1.0 / np.cosh(local) ** 2
        else:
            f = self.evaluate(X, cube)[..., None]
            out[..., positions] = -local / self.width ** 2 * f
        return out

    def describe(self) -> dict:
        out = {"kind": self.kind, "support": [list(s.coords) for s in self.support]}
        if self.kind == "product-window":
            out["width"] = self.width
        if self.kind == "constant":
            out["value"] = self.value
        return out


def eval_observable(f: Observable, state: LatticeState) -> float:
    return float(f.evaluate(state.values, state.cube))


def gradient_norm_sq(f: Observable, state: LatticeState) -> float:
    """|grad f|^2 at a state."""
    return float(np.sum(f.gradient(state.values, state.cube) ** 2))
