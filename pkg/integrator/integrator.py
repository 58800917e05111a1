"""
Time stepping for the Galerkin system dX = [J(X) + I(X)] dt + dZ on a cube.

Two explicit schemes share one array-level update so that single trajectories,
coupled pairs and replica ensembles all advance through the same arithmetic:

    euler        X <- X + (J(X) + I(X)) dt + dZ
    exponential  X <- e^{L dt} X + phi1(L dt) dt I(X) + dZ,  L = J(X)/X frozen at step start

`picard_solve` builds the mild solution by the fixed-point construction instead
of stepping.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import exprel
from tqdm import tqdm

from lattice.lattice import Cube, LatticeState
from model.model import DEFAULT_ZERO_THRESHOLD, ModelSpec
from noise.stable_noise import CHUNK_STEPS, NoisePath, ReplicaNoise, StableParams, white_noise_path

logger = logging.getLogger(__name__)

SCHEMES = ("euler", "exponential")
DEFAULT_DT = 1e-3
SEGMENT_LOG = 600.0


class SimulationBlowUpError(RuntimeError):
    """A non-finite value appeared; carries the last finite state of the offending replica."""

    def __init__(self, site: Tuple[int, ...], step: int, time: float, last_state: np.ndarray,
                 replica: Optional[int] = None):
        self.site = tuple(int(c) for c in site)
        self.step = step
        self.time = time
        self.replica = replica
        self.last_state = np.asarray(last_state, dtype=float)
        where = f" in replica {replica}" if replica is not None else ""
        super().__init__(f"non-finite value at site {self.site}, step {step} (t={time:.6g}){where}")

    def to_dict(self) -> dict:
        return {
            "site": list(self.site),
            "step": self.step,
            "time": self.time,
            "replica": self.replica,
            "last_state": self.last_state.tolist(),
        }


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "exponential"
    dt: float = DEFAULT_DT
    T: float = 1.0
    zero_threshold: float = DEFAULT_ZERO_THRESHOLD

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.T < 0:
            raise ValueError(f"T must be nonnegative, got {self.T}")
        if self.T > 0 and self.dt > self.T * (1.0 + 1e-12):
            raise ValueError(f"dt = {self.dt} exceeds the horizon T = {self.T}")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ValueError(f"T / dt = {steps:.6g} is not an integer step count")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    def with_horizon(self, T: float) -> "SchemeConfig":
        return SchemeConfig(self.scheme, self.dt, T, self.zero_threshold)

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "dt": self.dt, "T": self.T, "zero_threshold": self.zero_threshold}


def euler_update(spec: ModelSpec, X: np.ndarray, dZ: np.ndarray, dt: float) -> np.ndarray:
    return X + (spec.drift_values(X) + spec.interaction(X)) * dt + dZ


def exponential_update(spec: ModelSpec, X: np.ndarray, dZ: np.ndarray, dt: float,
                       threshold: float = DEFAULT_ZERO_THRESHOLD) -> np.ndarray:
    z = spec.drift.ratio(X, threshold) * dt
    return np.exp(z) * X + exprel(z) * dt * spec.interaction(X) + dZ


def advance(spec: ModelSpec, X: np.ndarray, dZ: np.ndarray, dt: float, cfg: SchemeConfig) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        if cfg.scheme == "euler":
            return euler_update(spec, X, dZ, dt)
        return exponential_update(spec, X, dZ, dt, cfg.zero_threshold)


def _check_finite(new: np.ndarray, old: np.ndarray, cube: Cube, step: int, time: float,
                  replicas: bool = False) -> None:
    bad = ~np.isfinite(new)
    if not bad.any():
        return
    if replicas:
        replica, site = (int(v) for v in np.argwhere(bad)[0])
        raise SimulationBlowUpError(cube.point(site).coords, step, time, old[replica], replica)
    site = int(np.flatnonzero(bad)[0])
    raise SimulationBlowUpError(cube.point(site).coords, step, time, old)


def _step(state: LatticeState, spec: ModelSpec, increments, dt: float, cfg: SchemeConfig) -> LatticeState:
    if state.cube != spec.cube:
        raise ValueError(f"state lives on a cube of size {state.cube.size}, model on {spec.cube.size}")
    increments = np.asarray(increments, dtype=float)
    if increments.shape != (spec.size,):
        raise ValueError(f"expected {spec.size} increments, got shape {increments.shape}")
    new = advance(spec, state.values, increments, dt, cfg)
    _check_finite(new, state.values, spec.cube, step=0, time=state.time + dt)
    return LatticeState(spec.cube, new, state.time + dt)


def step_euler(state: LatticeState, spec: ModelSpec, increments, dt: float) -> LatticeState:
    return _step(state, spec, increments, dt, SchemeConfig("euler", dt, dt))


def step_exponential(state: LatticeState, spec: ModelSpec, increments, dt: float,
                     zero_threshold: float = DEFAULT_ZERO_THRESHOLD) -> LatticeState:
    return _step(state, spec, increments, dt, SchemeConfig("exponential", dt, dt, zero_threshold))


@dataclass
class Trajectory:
    """States on every grid time, with the noise that drove them."""
    cube: Cube
    grid: np.ndarray
    values: np.ndarray  # (len(grid), sites)
    noise: Optional[NoisePath]
    model_identity: str

    def __post_init__(self):
        if self.noise is not None and not np.array_equal(self.noise.grid, self.grid):
            raise ValueError("trajectory grid does not match its noise path grid")

    def __len__(self) -> int:
        return self.grid.size

    def state(self, k: int) -> LatticeState:
        return LatticeState(self.cube, self.values[k], float(self.grid[k]))

    @property
    def final(self) -> LatticeState:
        return self.state(self.grid.size - 1)

    def csv_header(self) -> List[str]:
        return ["time"] + [f"site_{p}" for p in range(self.cube.size)]

    def csv_rows(self):
        for t, row in zip(self.grid, self.values):
            yield [float(t)] + [float(v) for v in row]


def run_path(spec: ModelSpec, x0: LatticeState, noise: NoisePath, cfg: SchemeConfig,
             progress: bool = False) -> Trajectory:
    """Advance x0 through every step of a fixed noise path."""
    if x0.cube != spec.cube:
        raise ValueError(f"initial state lives on a cube of size {x0.cube.size}, model on {spec.cube.size}")
    if noise.increments.shape[0] != spec.size:
        raise ValueError(f"noise path covers {noise.increments.shape[0]} sites, model has {spec.size}")
    grid = noise.grid
    values = np.empty((grid.size, spec.size))
    values[0] = x0.values
    for k in tqdm(range(grid.size - 1), desc="Steps", disable=not progress):
        dt = grid[k + 1] - grid[k]
        values[k + 1] = advance(spec, values[k], noise.increments[:, k], dt, cfg)
        _check_finite(values[k + 1], values[k], spec.cube, k + 1, float(grid[k + 1]))
    return Trajectory(spec.cube, grid, values, noise, spec.identity())


def simulate(spec: ModelSpec, x0: LatticeState, cfg: SchemeConfig, seed: int, params: StableParams,
             workers: int = 1, progress: bool = False) -> Trajectory:
    noise = white_noise_path(params, spec.cube.site_tuples(), cfg.grid, seed, workers=workers)
    logger.debug("Simulating %s scheme, %d steps, seed %d", cfg.scheme, cfg.steps, seed)
    return run_path(spec, x0, noise, cfg, progress)


def coupled_simulate(spec: ModelSpec, x0: LatticeState, y0: LatticeState, cfg: SchemeConfig, seed: int,
                     params: StableParams, workers: int = 1) -> Tuple[Trajectory, Trajectory]:
    """Two copies of the dynamics driven by one noise path (synchronous coupling)."""
    if x0.cube != y0.cube:
        raise ValueError("coupled initial states must live on the same cube")
    noise = white_noise_path(params, spec.cube.site_tuples(), cfg.grid, seed, workers=workers)
    return run_path(spec, x0, noise, cfg), run_path(spec, y0, noise, cfg)


Observer = Callable[[List[np.ndarray], float], np.ndarray]


@dataclass
class EnsembleRun:
    """Observations recorded on a subgrid for a replica ensemble."""
    times: np.ndarray
    observations: np.ndarray  # (len(times), ...) whatever the observer returns
    final: List[np.ndarray] = field(default_factory=list)


class EnsembleSimulator:
    """
    Advance one or more replica ensembles (arrays of shape (replicas, sites))
    under common noise. Every state in the list sees the same increments, which
    realizes synchronous coupling for any number of copies.
    """

    def __init__(self, spec: ModelSpec, cfg: SchemeConfig, params: StableParams, seed: int, replicas: int,
                 workers: int = 1, noise_enabled: bool = True, progress: bool = False):
        self.spec = spec
        self.cfg = cfg
        self.params = params
        self.seed = seed
        self.replicas = replicas
        self.progress = progress
        self.noise = ReplicaNoise(params, seed, spec.cube.site_tuples(), replicas, workers=workers,
                                  enabled=noise_enabled)

    def run(self, initial: Sequence[np.ndarray], observe: Observer, record_every: int = 1,
            horizon: Optional[float] = None, record_steps: Optional[Iterable[int]] = None) -> EnsembleRun:
        """
        Observe the ensemble at time 0 and then every `record_every` steps (and at
        the horizon), or only at the given step indices when `record_steps` is set.
        """
        cfg = self.cfg if horizon is None else self.cfg.with_horizon(horizon)
        if record_every < 1:
            raise ValueError(f"record_every must be positive, got {record_every}")
        wanted = None if record_steps is None else {int(k) for k in record_steps}
        states = []
        for x in initial:
            x = np.asarray(x, dtype=float)
            if x.shape[-1] != self.spec.size:
                raise ValueError(f"initial state has {x.shape[-1]} sites, model has {self.spec.size}")
            states.append(np.broadcast_to(x, (self.replicas, self.spec.size)).copy())

        grid = cfg.grid
        dts = np.diff(grid)
        times = [0.0]
        observations = [np.asarray(observe(states, 0.0))]
        chunks = range(0, dts.size, CHUNK_STEPS)
        for chunk, start in enumerate(tqdm(chunks, desc="Time chunks", disable=not self.progress)):
            stop = min(start + CHUNK_STEPS, dts.size)
            increments = self.noise.chunk_increments(chunk, dts[start:stop])
            for offset, k in enumerate(range(start, stop)):
                t = float(grid[k + 1])
                for s, X in enumerate(states):
                    new = advance(self.spec, X, increments[offset], dts[k], cfg)
                    _check_finite(new, X, self.spec.cube, k + 1, t, replicas=True)
                    states[s] = new
                if wanted is not None:
                    record = (k + 1) in wanted
                else:
                    record = (k + 1) % record_every == 0 or k + 1 == dts.size
                if record:
                    times.append(t)
                    observations.append(np.asarray(observe(states, t)))
        return EnsembleRun(np.array(times), np.stack(observations), states)


def _affine_recurrence(log_e: np.ndarray, g: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """
    Solve X_{k+1} = exp(log_e[k]) X_k + g[k] for all k at once.

    Cumulative products are taken in segments whose log-range stays within
    SEGMENT_LOG so the rescaling by exp(-log P) never overflows.
    """
    steps, sites = g.shape
    out = np.empty((steps + 1, sites))
    out[0] = x0
    start = 0
    while start < steps:
        cum = np.cumsum(log_e[start:], axis=0)
        too_far = np.flatnonzero(cum.min(axis=1) < -SEGMENT_LOG)
        if too_far.size and too_far[0] == 0:
            out[start + 1] = np.exp(log_e[start]) * out[start] + g[start]
            start += 1
            continue
        stop = start + (int(too_far[0]) if too_far.size else steps - start)
        seg = cum[: stop - start]
        acc = np.cumsum(g[start:stop] * np.exp(-seg), axis=0)
        out[start + 1: stop + 1] = np.exp(seg) * (out[start] + acc)
        start = stop
    return out


@dataclass
class PicardHistory:
    distances: List[float] = field(default_factory=list)
    inner_iterations: List[int] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.distances)

    def to_dict(self) -> dict:
        return {
            "distances": self.distances,
            "inner_iterations": self.inner_iterations,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def picard_solve(spec: ModelSpec, x0: LatticeState, noise: NoisePath, max_iter: int = 50, tol: float = 1e-10,
                 zero_threshold: float = DEFAULT_ZERO_THRESHOLD, inner_max_iter: int = 500,
                 noise_quadrature: str = "right") -> Tuple[Trajectory, PicardHistory]:
    """
    Fixed-point construction of the mild solution on the noise grid.

    Starting from X^(0)(t) = x0, each outer iteration freezes the exponent
    L = J(X^(n))/X^(n) along the previous iterate and solves

        X_{k+1} = e^{L_k dt} X_k + phi1(L_k dt) dt I(X_k) + w_k dZ_k

    for X^(n+1), the interaction being resolved by an inner fixed point. The
    noise weight w_k is 1 ("right", the factor at the end of the step) or
    e^{L_k dt} ("left"). Stops when the sup distance between outer iterates on
    the grid drops below tol; non-convergence is logged and reported.
    """
    if x0.cube != spec.cube:
        raise ValueError(f"initial state lives on a cube of size {x0.cube.size}, model on {spec.cube.size}")
    if noise_quadrature not in ("right", "left"):
        raise ValueError(f"noise_quadrature must be 'right' or 'left', got {noise_quadrature!r}")
    grid = noise.grid
    dts = np.diff(grid)[:, None]
    dZ = noise.increments.T
    history = PicardHistory()

    current = np.broadcast_to(x0.values, (grid.size, spec.size)).copy()
    for _ in range(max_iter):
        z = spec.drift.ratio(current[:-1], zero_threshold) * dts
        weight = exprel(z) * dts
        shock = dZ * np.exp(z) if noise_quadrature == "left" else dZ

        inner = current
        inner_count = 0
        for inner_count in range(1, inner_max_iter + 1):
            g = weight * spec.interaction(inner[:-1]) + shock
            updated = _affine_recurrence(z, g, x0.values)
            if not np.all(np.isfinite(updated)):
                bad = np.argwhere(~np.isfinite(updated))[0]
                raise SimulationBlowUpError(spec.cube.point(int(bad[1])).coords, int(bad[0]),
                                            float(grid[bad[0]]), inner[max(int(bad[0]) - 1, 0)])
            change = float(np.max(np.abs(updated - inner)))
            inner = updated
            if change < 0.1 * tol:
                break

        distance = float(np.max(np.abs(inner - current)))
        history.distances.append(distance)
        history.inner_iterations.append(inner_count)
        current = inner
        if distance < tol:
            history.converged = True
            break
    if not history.converged:
        logger.warning("Picard iteration did not converge in %d iterations (last distance %.3g)",
                       max_iter, history.distances[-1] if history.distances else float("nan"))
    return Trajectory(spec.cube, grid, current, noise, spec.identity()), history
