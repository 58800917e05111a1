import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from lattice.lattice import Cube, LatticePoint, LatticeState, l1_distance
from utils.utils import compute_hash

KERNEL_KINDS = ("exp-decay-scaled", "finite-range", "custom-table")
DRIFT_KINDS = ("poly", "linear", "custom")
INTERACTION_KINDS = ("linear", "log-exp")

DEFAULT_SUPPORT_RADIUS = 30
DEFAULT_ZERO_THRESHOLD = 1e-12
DECAY_TOLERANCE = 1e-12
OUTSIDE_MASS_RTOL = 1e-12

ArrayLike = Union[float, np.ndarray]


def shell_count(d: int, m: int) -> int:
    """Number of sites of Z^d at l1 distance exactly m from the origin."""
    if m == 0:
        return 1
    return sum(2 ** j * math.comb(d, j) * math.comb(m - 1, j - 1) for j in range(1, min(d, m) + 1))


def exp_shell_tail(d: int, r: int) -> float:
    """Sum of e^{-|k|} over the sites of Z^d with |k| > r."""
    total = 0.0
    m = r + 1
    while True:
        term = shell_count(d, m) * math.exp(-m)
        total += term
        if m > r + 5 * d and term < 1e-18 * max(total, 1e-300):
            return total
        m += 1


def exp_lattice_mass(d: int) -> float:
    """Sum of e^{-|k|} over k in Z^d, k != 0, in closed form."""
    return (1.0 / math.tanh(0.5)) ** d - 1.0


@dataclass(frozen=True)
class InteractionKernel:
    """
    Nonnegative interaction weights a_ij on Z^d.

    exp-decay-scaled: a_ij = beta e^{-|i-j|} / Z for i != j, Z = 1, or the full
    lattice mass of e^{-|k|} when `normalize` is set (column sums then equal beta).
    Evaluation keeps offsets up to `support_radius`; the dropped mass is covered
    by `tail_bound`.
    finite-range: a_ij = beta e^{-|i-j|} for 0 < |i-j| <= range.
    custom-table: explicit (i, j, weight) entries, zero elsewhere.
    """
    kind: str
    d: int
    beta: float = 1.0
    normalize: bool = False
    range: int = 1
    support_radius: int = DEFAULT_SUPPORT_RADIUS
    entries: Tuple[Tuple[Tuple[int, ...], Tuple[int, ...], float], ...] = field(default=())

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}, expected one of {KERNEL_KINDS}")
        if self.d < 1:
            raise ValueError(f"dimension must be at least 1, got {self.d}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.kind == "finite-range" and self.range < 1:
            raise ValueError(f"finite-range kernels need range >= 1, got {self.range}")
        if self.support_radius < 1:
            raise ValueError(f"support_radius must be at least 1, got {self.support_radius}")
        if self.kind == "custom-table":
            cleaned = []
            for i, j, w in self.entries:
                i, j = tuple(int(c) for c in i), tuple(int(c) for c in j)
                if len(i) != self.d or len(j) != self.d:
                    raise ValueError(f"table entry {i} -> {j} does not have dimension {self.d}")
                cleaned.append((i, j, float(w)))
            object.__setattr__(self, "entries", tuple(cleaned))

    @classmethod
    def exp_decay(cls, d: int, beta: float = 1.0, normalize: bool = False,
                  support_radius: int = DEFAULT_SUPPORT_RADIUS) -> "InteractionKernel":
        return cls("exp-decay-scaled", d, beta=beta, normalize=normalize, support_radius=support_radius)

    @classmethod
    def finite_range(cls, d: int, beta: float = 1.0, range: int = 1) -> "InteractionKernel":
        return cls("finite-range", d, beta=beta, range=range, support_radius=range)

    @classmethod
    def custom_table(cls, d: int, entries) -> "InteractionKernel":
        entries = tuple((tuple(i), tuple(j), float(w)) for i, j, w in entries)
        radius = max([sum(abs(a - b) for a, b in zip(i, j)) for i, j, _ in entries] + [1])
        return cls("custom-table", d, support_radius=radius, entries=entries)

    @classmethod
    def zero(cls, d: int) -> "InteractionKernel":
        return cls.exp_decay(d, beta=0.0)

    @property
    def translation_invariant(self) -> bool:
        return self.kind != "custom-table"

    @cached_property
    def amplitude(self) -> float:
        """Prefactor of e^{-|k|} for the translation-invariant kinds."""
        if self.kind == "exp-decay-scaled" and self.normalize:
            return self.beta / exp_lattice_mass(self.d)
        return self.beta

    @property
    def radius(self) -> int:
        return self.range if self.kind == "finite-range" else self.support_radius

    @cached_property
    def _table(self) -> Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], float]:
        table: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], float] = {}
        for i, j, w in self.entries:
            table[(i, j)] = table.get((i, j), 0.0) + w
        return table

    def offset_weight(self, distance: Union[int, np.ndarray]) -> np.ndarray:
        """Weight as a function of the l1 offset, for translation-invariant kinds."""
        distance = np.asarray(distance)
        inside = (distance > 0) & (distance <= self.radius)
        return np.where(inside, self.amplitude * np.exp(-distance.astype(float)), 0.0)

    def weight(self, i: LatticePoint, j: LatticePoint) -> float:
        if self.translation_invariant:
            return float(self.offset_weight(l1_distance(i, j)))
        return self._table.get((i.coords, j.coords), 0.0)

    def matrix(self, cube: Cube) -> np.ndarray:
        """Dense matrix A[p, q] = a_{pq} over the sites of a cube."""
        if cube.d != self.d:
            raise ValueError(f"kernel dimension {self.d} does not match cube dimension {cube.d}")
        if self.translation_invariant:
            return self.offset_weight(cube.pairwise_l1())
        A = np.zeros((cube.size, cube.size))
        for (i, j), w in self._table.items():
            pi, pj = LatticePoint(i), LatticePoint(j)
            if cube.contains(pi) and cube.contains(pj):
                A[cube.index_of(pi), cube.index_of(pj)] = w
        return A

    def stencil(self) -> Tuple[np.ndarray, np.ndarray]:
        """Offsets with |k| <= radius and their weights, for translation-invariant kinds."""
        r = self.radius
        axes = [np.arange(-r, r + 1)] * self.d
        offsets = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        distance = np.abs(offsets).sum(axis=1)
        keep = distance <= r
        return offsets[keep], self.offset_weight(distance[keep])

    def tail_bound(self) -> float:
        """Upper bound on the row or column mass dropped beyond the evaluated support."""
        if self.kind == "exp-decay-scaled":
            return self.amplitude * exp_shell_tail(self.d, self.support_radius)
        return 0.0

    def column_total(self, j: LatticePoint) -> float:
        """sum_i a_ij over all of Z^d (the mass feeding site j's log-exp interaction)."""
        if self.translation_invariant:
            if self.kind == "exp-decay-scaled":
                return self.amplitude * exp_lattice_mass(self.d)
            _, weights = self.stencil()
            return float(weights.sum())
        return sum(w for (_, jj), w in self._table.items() if jj == j.coords)

    def describe(self) -> dict:
        out = {"kind": self.kind, "d": self.d}
        if self.kind == "custom-table":
            out["entries"] = [[list(i), list(j), w] for i, j, w in self.entries]
        else:
            out["beta"] = self.beta
            if self.kind == "finite-range":
                out["range"] = self.range
            else:
                out["normalize"] = self.normalize
                out["support_radius"] = self.support_radius
        return out


@dataclass(frozen=True)
class SiteDrift:
    """
    Single-site drift J with J(0) = 0 and J' <= 0.

    poly: J(x) = -(1 + eps) x - c0 x^{2n+1}, kappa = 2n + 1, kappa' = 1 + eps + c0.
    linear: J(x) = -rate x, kappa = 1, kappa' = rate.
    custom: any callable; `derivative` defaults to a central difference.
    """
    kind: str
    eps: float = 0.0
    c0: float = 0.0
    n: int = 0
    rate: float = 0.0
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    derivative_func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    kappa: float = 1.0
    kappa_prime: float = 1.0

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}, expected one of {DRIFT_KINDS}")
        if self.kind == "poly":
            if self.eps < 0 or self.c0 < 0 or self.n < 0 or int(self.n) != self.n:
                raise ValueError("poly drift needs eps >= 0, c0 >= 0 and an integer n >= 0")
            object.__setattr__(self, "n", int(self.n))
            object.__setattr__(self, "kappa", 2.0 * self.n + 1.0)
            object.__setattr__(self, "kappa_prime", 1.0 + self.eps + self.c0)
        elif self.kind == "linear":
            if self.rate < 0:
                raise ValueError(f"linear drift needs rate >= 0, got {self.rate}")
            object.__setattr__(self, "kappa", 1.0)
            object.__setattr__(self, "kappa_prime", float(self.rate))
        elif self.func is None:
            raise ValueError("custom drift needs a callable")

    @classmethod
    def poly(cls, eps: float, c0: float = 0.0, n: int = 0) -> "SiteDrift":
        return cls("poly", eps=eps, c0=c0, n=n)

    @classmethod
    def linear(cls, rate: float) -> "SiteDrift":
        return cls("linear", rate=rate)

    @classmethod
    def custom(cls, func, derivative=None, kappa: float = 1.0, kappa_prime: float = 1.0) -> "SiteDrift":
        return cls("custom", func=func, derivative_func=derivative, kappa=kappa, kappa_prime=kappa_prime)

    @property
    def analytic(self) -> bool:
        return self.kind != "custom"

    def value(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "poly":
            return -(1.0 + self.eps) * x - self.c0 * np.power(x, 2 * self.n + 1)
        if self.kind == "linear":
            return -self.rate * x
        return np.asarray(self.func(x), dtype=float)

    def derivative(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "poly":
            return -(1.0 + self.eps) - self.c0 * (2 * self.n + 1) * np.power(x, 2 * self.n)
        if self.kind == "linear":
            return np.full_like(x, -self.rate)
        if self.derivative_func is not None:
            return np.asarray(self.derivative_func(x), dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(x))
        return (self.value(x + h) - self.value(x - h)) / (2.0 * h)

    def ratio(self, x: ArrayLike, threshold: float = DEFAULT_ZERO_THRESHOLD) -> np.ndarray:
        """J(x) / x away from the origin, J'(0) within `threshold` of it."""
        x = np.asarray(x, dtype=float)
        at_zero = float(self.derivative(0.0))
        near_zero = np.abs(x) <= threshold
        if self.kind == "poly":
            away = -(1.0 + self.eps) - self.c0 * np.power(x, 2 * self.n)
        elif self.kind == "linear":
            away = np.full_like(x, -self.rate)
        else:
            safe = np.where(near_zero, 1.0, x)
            away = self.value(safe) / safe
        return np.where(near_zero, at_zero, away)

    def dissipativity(self, grid: Optional[np.ndarray] = None) -> float:
        """c = inf over y of -J'(y); closed form for the built-in kinds."""
        if self.kind == "poly":
            return 1.0 + self.eps
        if self.kind == "linear":
            return float(self.rate)
        grid = default_evaluation_grid() if grid is None else grid
        return float(np.min(-self.derivative(grid)))

    def describe(self) -> dict:
        if self.kind == "poly":
            return {"kind": "poly", "eps": self.eps, "c0": self.c0, "n": self.n}
        if self.kind == "linear":
            return {"kind": "linear", "rate": self.rate}
        return {"kind": "custom", "func": getattr(self.func, "__name__", repr(self.func)),
                "kappa": self.kappa, "kappa_prime": self.kappa_prime}


def default_evaluation_grid() -> np.ndarray:
    """[-100, 100] in steps of 0.02; contains 0 exactly."""
    return np.linspace(-100.0, 100.0, 10001)


def compute_eta(kernel: InteractionKernel, region: Cube) -> float:
    """
    Upper bound on eta = max(sup_j sum_i a_ij, sup_i sum_j a_ij).

    Translation-invariant kernels have equal row and column sums everywhere;
    the exponential tail beyond the evaluated support is added.
    """
    if kernel.translation_invariant:
        _, weights = kernel.stencil()
        return float(weights.sum()) + kernel.tail_bound()
    rows: Dict[Tuple[int, ...], float] = {}
    cols: Dict[Tuple[int, ...], float] = {}
    for (i, j), w in kernel._table.items():
        if region.contains(LatticePoint(i)):
            rows[i] = rows.get(i, 0.0) + w
        if region.contains(LatticePoint(j)):
            cols[j] = cols.get(j, 0.0) + w
    return max([0.0] + list(rows.values()) + list(cols.values()))


@dataclass(frozen=True)
class ModelSpec:
    """A Galerkin-truncated lattice model on the cube [-N, N]^d."""
    cube: Cube
    kernel: InteractionKernel
    drift: SiteDrift
    interaction_kind: str = "linear"

    def __post_init__(self):
        if self.interaction_kind not in INTERACTION_KINDS:
            raise ValueError(f"unknown interaction kind {self.interaction_kind!r}, expected one of {INTERACTION_KINDS}")
        if self.kernel.d != self.cube.d:
            raise ValueError(f"kernel dimension {self.kernel.d} does not match cube dimension {self.cube.d}")

    @property
    def d(self) -> int:
        return self.cube.d

    @property
    def size(self) -> int:
        return self.cube.size

    @cached_property
    def matrix(self) -> np.ndarray:
        A = self.kernel.matrix(self.cube)
        A.setflags(write=False)
        return A

    @cached_property
    def outside_mass(self) -> np.ndarray:
        """Mass sum_{j outside the cube} a_ji for each site i (zero-extended sites enter as e^0)."""
        totals = np.array([self.kernel.column_total(self.cube.point(i)) for i in range(self.size)])
        rest = totals - self.matrix.sum(axis=0)
        # summation-order residue is not mass
        return np.where(rest > OUTSIDE_MASS_RTOL * totals, rest, 0.0)

    @cached_property
    def eta(self) -> float:
        return compute_eta(self.kernel, self.cube)

    @cached_property
    def c(self) -> float:
        return self.drift.dissipativity()

    @property
    def delta(self) -> float:
        return self.c - self.eta

    @property
    def interaction_is_zero(self) -> bool:
        return not np.any(self.matrix) and not np.any(self.outside_mass)

    @property
    def is_linear(self) -> bool:
        """Linear interaction with a linear drift: the dynamics is affine in the state."""
        linear_drift = self.drift.kind == "linear" or (self.drift.kind == "poly" and self.drift.c0 == 0)
        return self.interaction_kind == "linear" and linear_drift

    def with_cube(self, N: int) -> "ModelSpec":
        return replace(self, cube=Cube(self.d, N))

    def interaction(self, X: np.ndarray) -> np.ndarray:
        """I^N(X) for states stacked along leading axes; the last axis indexes sites."""
        X = np.asarray(X, dtype=float)
        if self.interaction_kind == "linear":
            return X @ self.matrix
        shift = X.max(axis=-1, keepdims=True)
        with np.errstate(divide="ignore"):
            inside = np.log(np.exp(X - shift) @ self.matrix) + shift
            # outside sites sit at zero
            return np.logaddexp(inside, np.log(self.outside_mass))

    def drift_values(self, X: np.ndarray) -> np.ndarray:
        return self.drift.value(X)

    def describe(self) -> dict:
        return {
            "d": self.d,
            "N": self.cube.N,
            "kernel": self.kernel.describe(),
            "drift": self.drift.describe(),
            "interaction": self.interaction_kind,
            "eta": self.eta,
            "c": self.c,
            "delta": self.delta,
        }

    def identity(self) -> str:
        return compute_hash(json.dumps(self.describe(), sort_keys=True))


def interaction_eval(spec: ModelSpec, state: LatticeState) -> np.ndarray:
    if state.cube != spec.cube:
        raise ValueError(f"state lives on a cube of size {state.cube.size}, model on {spec.cube.size}")
    return spec.interaction(state.values)


def drift_eval(drift: SiteDrift, x: ArrayLike) -> ArrayLike:
    value = drift.value(x)
    return float(value) if np.ndim(value) == 0 else value


def drift_ratio(drift: SiteDrift, x: ArrayLike, threshold: float = DEFAULT_ZERO_THRESHOLD) -> ArrayLike:
    value = drift.ratio(x, threshold)
    return float(value) if np.ndim(value) == 0 else value


@dataclass
class ConditionResult:
    name: str
    passed: bool
    detail: str = ""
    witness: Optional[object] = None

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail, "witness": self.witness}


@dataclass
class ValidationReport:
    conditions: List[ConditionResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    @property
    def failures(self) -> List[ConditionResult]:
        return [c for c in self.conditions if not c.passed]

    def get(self, name: str) -> ConditionResult:
        for condition in self.conditions:
            if condition.name == name:
                return condition
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "conditions": [c.to_dict() for c in self.conditions]}

    def summary(self) -> str:
        lines = []
        for c in self.conditions:
            status = "pass" if c.passed else "FAIL"
            line = f"  [{status}] {c.name}: {c.detail}"
            if not c.passed and c.witness is not None:
                line += f" (witness {c.witness})"
            lines.append(line)
        return "\n".join(lines)


def kernel_pairs(kernel: InteractionKernel) -> List[Tuple[Tuple[int, ...], Tuple[int, ...], float]]:
    """Every stored (i, j, a_ij); translation-invariant kinds are listed from the origin."""
    if kernel.translation_invariant:
        offsets, weights = kernel.stencil()
        origin = tuple([0] * kernel.d)
        return [(origin, tuple(int(c) for c in k), float(w)) for k, w in zip(offsets, weights)]
    return list(kernel.entries)


def decay_violation(kernel: InteractionKernel):
    """The pair exceeding a_ij <= exp(-|i-j|) by the largest margin, as (i, j, a_ij, bound), or None."""
    worst, worst_excess = None, 0.0
    for i, j, w in kernel_pairs(kernel):
        bound = math.exp(-sum(abs(a - b) for a, b in zip(i, j)))
        excess = w - bound * (1.0 + DECAY_TOLERANCE)
        if excess > worst_excess:
            worst, worst_excess = (i, j, w, bound), excess
    return worst


def _check_kernel(spec: ModelSpec) -> List[ConditionResult]:
    pairs = kernel_pairs(spec.kernel)
    negative = [(i, j) for i, j, w in pairs if w < 0]
    results = [ConditionResult(
        "kernel_nonnegative", not negative,
        "all weights are nonnegative" if not negative else "negative weight found",
        [list(negative[0][0]), list(negative[0][1])] if negative else None,
    )]

    worst = decay_violation(spec.kernel)
    if worst is None:
        results.append(ConditionResult("kernel_decay", True, "a_ij <= exp(-|i-j|) for every pair"))
    else:
        i, j, w, bound = worst
        results.append(ConditionResult(
            "kernel_decay", False,
            f"a_ij = {w:.6g} exceeds exp(-|i-j|) = {bound:.6g}",
            [list(i), list(j)],
        ))

    eta = spec.eta
    results.append(ConditionResult("eta_finite", bool(np.isfinite(eta)), f"eta <= {eta:.6g}"))
    return results


def _check_interaction(spec: ModelSpec) -> List[ConditionResult]:
    results = []
    if spec.interaction_kind == "log-exp":
        totals = np.array([spec.kernel.column_total(spec.cube.point(i)) for i in range(spec.size)])
        off = np.abs(totals - 1.0)
        worst = int(np.argmax(off))
        ok = bool(off[worst] <= 1e-9)
        results.append(ConditionResult(
            "column_stochastic", ok,
            "sum_j a_ji = 1 at every site" if ok else f"sum_j a_ji = {totals[worst]:.6g}",
            None if ok else list(spec.cube.point(worst).coords),
        ))
    values = spec.interaction(np.zeros(spec.size))
    off = np.where(np.isfinite(values), np.abs(values), np.inf)
    worst = int(np.argmax(off))
    ok = bool(off[worst] <= 1e-9)
    results.append(ConditionResult(
        "interaction_zero", ok,
        "I_i(0) = 0 at every site" if ok else f"I_i(0) = {values[worst]:.6g}",
        None if ok else list(spec.cube.point(worst).coords),
    ))
    return results


def _check_drift(drift: SiteDrift, grid: np.ndarray) -> List[ConditionResult]:
    results = []
    j0 = float(drift.value(0.0))
    results.append(ConditionResult("drift_zero", abs(j0) <= 1e-12, f"J(0) = {j0:.3g}", None if abs(j0) <= 1e-12 else 0.0))

    slope = drift.derivative(grid)
    bad = np.flatnonzero(slope > 1e-9)
    if bad.size == 0:
        detail = "J' <= 0 on the evaluation grid" + (" (verified analytically)" if drift.analytic else "")
        results.append(ConditionResult("drift_monotone", True, detail))
    else:
        closest = bad[np.argmin(np.abs(grid[bad]))]
        results.append(ConditionResult(
            "drift_monotone", False, f"J'({grid[closest]:.6g}) = {slope[closest]:.6g} > 0", float(grid[closest]),
        ))

    envelope = drift.kappa_prime * (np.power(np.abs(grid), drift.kappa) + 1.0)
    excess = np.abs(drift.value(grid)) - envelope * (1.0 + 1e-12)
    if np.all(excess <= 0):
        detail = f"|J(x)| <= {drift.kappa_prime:.6g}(|x|^{drift.kappa:.6g} + 1)"
        if drift.analytic:
            detail += " (verified analytically)"
        results.append(ConditionResult("drift_growth", True, detail))
    else:
        worst = int(np.argmax(excess))
        results.append(ConditionResult(
            "drift_growth", False,
            f"|J({grid[worst]:.6g})| exceeds the growth envelope by {excess[worst]:.6g}", float(grid[worst]),
        ))
    return results


def validate_assumptions(spec: ModelSpec, grid: Optional[Sequence[float]] = None) -> ValidationReport:
    """Check the standing hypotheses on the kernel, the interaction and the drift."""
    grid = default_evaluation_grid() if grid is None else np.asarray(grid, dtype=float)
    conditions = _check_kernel(spec) + _check_interaction(spec) + _check_drift(spec.drift, grid)
    return ValidationReport(conditions)
