"""
Symmetric alpha-stable noise for lattice systems.

Standard variables follow the convention E exp(i xi S) = exp(-|xi|^alpha) for
alpha < 2, and S ~ N(0, 1) for alpha = 2, so an increment over a step of length
dt is dt^(1/alpha) * S in both branches (variance dt at alpha = 2).

Every draw is built from two uniforms through the Chambers-Mallows-Stuck
transform. Uniforms come from counter-based Philox substreams: the key holds the
master seed and the high counter words hold (chunk, site key, stream tag), so a
value is a pure function of (seed, site, step, replica).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from utils.utils import sha256_to_uint64

logger = logging.getLogger(__name__)

CHUNK_STEPS = 16
NOISE_STREAM_TAG = 0
_UINT64_MASK = (1 << 64) - 1

SiteSpec = Union[int, Sequence[Sequence[int]]]


@dataclass(frozen=True)
class StableParams:
    """Law of the driving noise: the stability index alpha in (1, 2]."""
    alpha: float

    def __post_init__(self):
        alpha = float(self.alpha)
        if not np.isfinite(alpha) or not (1.0 < alpha <= 2.0):
            raise ValueError(f"alpha must lie in (1, 2], got {self.alpha}")
        object.__setattr__(self, "alpha", alpha)

    @property
    def is_gaussian(self) -> bool:
        return self.alpha == 2.0

    def scale(self, dt: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Scale of an increment over a step of length dt."""
        return np.power(dt, 1.0 / self.alpha)

    def char_fn(self, xi: float, t: float = 1.0) -> float:
        """Characteristic function of Z(t) at xi under this convention."""
        if self.is_gaussian:
            return float(np.exp(-t * xi * xi / 2.0))
        return float(np.exp(-t * abs(xi) ** self.alpha))


def stable_transform(u_angle: np.ndarray, u_exp: np.ndarray, alpha: float) -> np.ndarray:
    """
    Map two independent uniforms on [0, 1) to standard symmetric stable draws.

    V = pi (u_angle - 1/2) is uniform on (-pi/2, pi/2) and W = -log(1 - u_exp) is
    unit exponential. At alpha = 2 the transform is the Box-Muller variant
    sqrt(2W) sin(V), an exact N(0, 1).
    """
    v = np.pi * (np.asarray(u_angle, dtype=float) - 0.5)
    w = -np.log1p(-np.asarray(u_exp, dtype=float))
    if alpha == 2.0:
        return np.sqrt(2.0 * w) * np.sin(v)
    with np.errstate(divide="ignore", over="ignore"):
        head = np.sin(alpha * v) / np.power(np.cos(v), 1.0 / alpha)
        tail = np.power(np.cos((1.0 - alpha) * v) / w, (1.0 - alpha) / alpha)
    return head * tail


def sample_increment(params: StableParams, dt: float, stream: np.random.Generator) -> float:
    """One increment Z(t + dt) - Z(t) drawn from an explicit generator."""
    if not dt >= 0.0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    u = stream.random(2)
    if dt == 0.0:
        return 0.0
    return float(params.scale(dt) * stable_transform(u[0], u[1], params.alpha))


def sample_increments(params: StableParams, dt: float, size: int, stream: np.random.Generator) -> np.ndarray:
    """Vectorized sample_increment: `size` independent increments over dt."""
    if not dt >= 0.0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    u = stream.random((size, 2))
    if dt == 0.0:
        return np.zeros(size)
    return params.scale(dt) * stable_transform(u[:, 0], u[:, 1], params.alpha)


def empirical_char_fn(samples: Sequence[float], xi: float) -> float:
    """Real part of the empirical characteristic function (the law is symmetric)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empirical_char_fn needs at least one sample")
    return float(np.mean(np.cos(xi * samples)))


def site_key(coords: Sequence[int]) -> int:
    """64-bit substream key of a lattice site, derived from its absolute coordinates."""
    return sha256_to_uint64("site:" + ",".join(str(int(c)) for c in coords))


def resolve_sites(sites: SiteSpec) -> List[Tuple[int, ...]]:
    """Sites given as a count are numbered (0,), (1,), ... in one dimension."""
    if isinstance(sites, (int, np.integer)):
        if sites < 0:
            raise ValueError(f"site count must be nonnegative, got {sites}")
        return [(i,) for i in range(int(sites))]
    return [tuple(int(c) for c in coords) for coords in sites]


def validate_grid(grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("time grid must be a nonempty one-dimensional sequence")
    if grid[0] != 0.0:
        raise ValueError(f"time grid must start at 0, got {grid[0]}")
    if grid.size > 1 and not np.all(np.diff(grid) > 0.0):
        raise ValueError("time grid must be strictly increasing")
    return grid


class ReplicaNoise:
    """
    Counter-based noise for a block of replicas over a fixed set of sites.

    Steps are grouped in chunks of CHUNK_STEPS. One Philox stream per
    (site, chunk) fills a (replicas, CHUNK_STEPS, 2) block of uniforms in C order,
    so replica r always reads the same positions whatever the replica count.
    """

    def __init__(self, params: StableParams, seed: int, sites: SiteSpec, replicas: int,
                 workers: int = 1, enabled: bool = True, tag: int = NOISE_STREAM_TAG):
        if replicas < 1:
            raise ValueError(f"replicas must be positive, got {replicas}")
        self.params = params
        self.seed = int(seed) & _UINT64_MASK
        self.sites = resolve_sites(sites)
        self.site_keys = [site_key(coords) for coords in self.sites]
        self.replicas = int(replicas)
        self.workers = max(1, int(workers))
        self.enabled = enabled
        self.tag = int(tag) & _UINT64_MASK

    def _generator(self, key: int, chunk: int) -> np.random.Generator:
        # counter words, least significant first: (draw index, chunk, site key, tag)
        counter = (int(chunk) << 64) | (int(key) << 128) | (self.tag << 192)
        bit_generator = np.random.Philox(counter=counter, key=self.seed)
        return np.random.Generator(bit_generator)

    def uniforms(self, site_index: int, chunk: int) -> np.ndarray:
        """Uniform block of shape (replicas, CHUNK_STEPS, 2) for one site and chunk."""
        rng = self._generator(self.site_keys[site_index], chunk)
        return rng.random((self.replicas, CHUNK_STEPS, 2))

    def _site_increments(self, site_index: int, chunk: int, scales: np.ndarray) -> np.ndarray:
        u = self.uniforms(site_index, chunk)[:, :scales.size, :]
        draws = stable_transform(u[..., 0], u[..., 1], self.params.alpha)
        return (draws * scales[None, :]).T

    def chunk_increments(self, chunk: int, dts: np.ndarray) -> np.ndarray:
        """Increments of shape (len(dts), replicas, sites) for the steps of one chunk."""
        dts = np.asarray(dts, dtype=float)
        if dts.size > CHUNK_STEPS:
            raise ValueError(f"a chunk holds at most {CHUNK_STEPS} steps")
        out = np.zeros((dts.size, self.replicas, len(self.sites)))
        if not self.enabled or not self.sites or dts.size == 0:
            return out
        scales = self.params.scale(dts)
        if self.workers > 1 and len(self.sites) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                blocks = list(executor.map(lambda s: self._site_increments(s, chunk, scales),
                                           range(len(self.sites))))
        else:
            blocks = [self._site_increments(s, chunk, scales) for s in range(len(self.sites))]
        for s, block in enumerate(blocks):
            out[:, :, s] = block
        return out

    def increments(self, grid: np.ndarray) -> np.ndarray:
        """All increments on a grid, shape (steps, replicas, sites)."""
        dts = np.diff(validate_grid(grid))
        out = np.zeros((dts.size, self.replicas, len(self.sites)))
        for chunk, start in enumerate(range(0, dts.size, CHUNK_STEPS)):
            stop = min(start + CHUNK_STEPS, dts.size)
            out[start:stop] = self.chunk_increments(chunk, dts[start:stop])
        return out


@dataclass(frozen=True)
class NoisePath:
    """Per-site increments of white stable noise on a fixed time grid."""
    grid: np.ndarray
    increments: np.ndarray  # (sites, steps)
    seed: int
    params: StableParams
    sites: Tuple[Tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        self.grid.setflags(write=False)
        self.increments.setflags(write=False)

    @property
    def steps(self) -> int:
        return self.grid.size - 1

    def csv_rows(self):
        """Rows (site_index, step, increment) for a debugging dump."""
        for site_index in range(self.increments.shape[0]):
            for step in range(self.increments.shape[1]):
                yield site_index, step, float(self.increments[site_index, step])


def white_noise_path(params: StableParams, sites: SiteSpec, grid: Sequence[float], seed: int,
                     workers: int = 1) -> NoisePath:
    """
    Independent stable increments for every site and step of the grid.

    The path is replica 0 of ReplicaNoise, so ensemble runs and single
    trajectories driven by the same seed see the same noise.
    """
    grid = validate_grid(grid)
    resolved = resolve_sites(sites)
    if not resolved:
        increments = np.zeros((0, grid.size - 1))
    else:
        source = ReplicaNoise(params, seed, resolved, replicas=1, workers=workers)
        increments = np.ascontiguousarray(source.increments(grid)[:, 0, :].T)
    logger.debug("Generated noise path: %d sites, %d steps, seed %d", len(resolved), grid.size - 1, seed)
    return NoisePath(grid=grid.copy(), increments=increments, seed=int(seed), params=params,
                     sites=tuple(resolved))
