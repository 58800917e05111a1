import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from configs.gen_run_cfs import (SOFTWARE_VERSION, RunConfig, build_observable, build_scheme)
from experiments.experiments import (ExperimentReport, exp_contraction, exp_galerkin, exp_gradient_bound,
                                     exp_mixing, exp_moment_growth, exp_ou_uniform_bound, exp_propagation)
from integrator.integrator import SimulationBlowUpError, picard_solve, run_path
from lattice.lattice import Cube, GrowthBall, LatticePoint, LatticeState
from ledger.ledger import Ledger
from model.kernel_estimates import verify_bound
from model.model import validate_assumptions
from noise.stable_noise import StableParams, empirical_char_fn, sample_increments, white_noise_path
from utils.utils import compute_hash, file_sha256, two_sample_test, write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2


@dataclass
class RunResult:
    """Outcome of one configured run"""
    name: str
    status: int
    passed: Optional[bool]
    processing_time: float
    outputs: Dict[str, str] = field(default_factory=dict)
    summary: str = ""
    ledger_block: Optional[int] = None


class RunProcessor:
    """
    Execute one RunConfig into an output directory: CSV series, a JSON
    manifest that reproduces the run, and a block in the directory's ledger.
    """

    def __init__(self, config: RunConfig, out_dir: Path, workers: int = 1, progress: bool = True):
        self.config = config
        self.out_dir = Path(out_dir)
        self.workers = max(1, int(workers))
        self.progress = progress
        self.outputs: Dict[str, str] = {}
        self.ledger = Ledger(str(self.out_dir / "ledger.json"))

    @property
    def name(self) -> str:
        return self.config.experiment.name

    @property
    def seed(self) -> int:
        return self.config.noise.seed

    def _write_csv(self, filename: str, header, rows) -> None:
        path = write_csv(self.out_dir / filename, header, rows)
        self.outputs[filename] = file_sha256(path)

    def _write_json(self, filename: str, payload) -> None:
        path = write_json(self.out_dir / filename, payload)
        self.outputs[filename] = file_sha256(path)

    def _initial_state(self, values: Optional[List[float]], cube: Cube) -> LatticeState:
        if values is None:
            return LatticeState.zeros(cube)
        return LatticeState(cube, np.asarray(values, dtype=float))

    def _axis_sites(self, distances, d: int, N: int) -> List[LatticePoint]:
        """Sites along the first axis at the given distances, clipped to the cube."""
        sites = []
        for k in distances:
            if 0 <= k <= N:
                sites.append(LatticePoint((int(k),) + (0,) * (d - 1)))
        return sites

    def _points(self, coords, d: int) -> List[LatticePoint]:
        points = [LatticePoint(tuple(c)) for c in coords]
        for p in points:
            if p.d != d:
                raise ValueError(f"site {p.coords} has dimension {p.d}, the model has {d}")
        return points

    def _run_sample(self, settings) -> tuple:
        params = StableParams(self.config.noise.alpha)
        stream = np.random.Generator(np.random.Philox(key=self.seed))
        samples = sample_increments(params, settings.dt, settings.count, stream)
        self._write_csv("samples.csv", ["index", "increment"], enumerate(samples))

        tolerance = 4.0 / math.sqrt(settings.count)
        rows, char_ok = [], True
        for xi in settings.xi:
            empirical = empirical_char_fn(samples, xi)
            exact = params.char_fn(xi, settings.dt)
            error = abs(empirical - exact)
            char_ok &= error < tolerance
            rows.append([xi, settings.dt, empirical, exact, error, tolerance])
        self._write_csv("char_fn.csv", ["xi", "t", "empirical", "exact", "abs_error", "tolerance"], rows)

        scaled = sample_increments(params, settings.scaling_dt, settings.count, stream)
        unit = params.scale(settings.scaling_dt) * sample_increments(params, 1.0, settings.count, stream)
        scaling = two_sample_test(scaled, unit, level=0.01)

        if settings.path_sites and settings.path_steps:
            grid = np.linspace(0.0, settings.path_steps * settings.dt, settings.path_steps + 1)
            path = white_noise_path(params, settings.path_sites, grid, self.seed, workers=self.workers)
            self._write_csv("noise_path.csv", ["site_index", "step", "increment"], path.csv_rows())

        report = {
            "alpha": params.alpha,
            "count": settings.count,
            "char_fn_tolerance": tolerance,
            "scaling": {"t": settings.scaling_dt, "ks_statistic": scaling.statistic, "pvalue": scaling.pvalue,
                        "max_quantile_gap": scaling.max_quantile_gap},
            "verdicts": {"char_fn": bool(char_ok), "scaling": scaling.passed},
        }
        passed = bool(char_ok) and scaling.passed
        summary = (f"sample: {'PASS' if passed else 'FAIL'} {settings.count} draws at alpha={params.alpha}, "
                   f"char fn within {tolerance:.3g}: {bool(char_ok)}, scaling p={scaling.pvalue:.3g}")
        return passed, report, summary

    def _run_simulate(self, settings) -> tuple:
        spec = self.config.spec
        cfg = build_scheme(self.config.scheme)
        params = StableParams(self.config.noise.alpha)
        x0 = self._initial_state(settings.initial, spec.cube)
        noise = white_noise_path(params, spec.cube.site_tuples(), cfg.grid, self.seed, workers=self.workers)
        report = {"model": spec.describe(), "scheme": cfg.to_dict()}
        if settings.picard:
            trajectory, history = picard_solve(spec, x0, noise, settings.picard_max_iter, settings.picard_tol,
                                               cfg.zero_threshold)
            report["picard"] = history.to_dict()
            summary = (f"simulate (picard): {history.iterations} iterations, converged {history.converged}, "
                       f"last distance {history.distances[-1]:.3g}")
        else:
            trajectory = run_path(spec, x0, noise, cfg, progress=self.progress)
            summary = f"simulate ({cfg.scheme}): {cfg.steps} steps on {spec.size} sites"
        self._write_csv("trajectory.csv", trajectory.csv_header(), trajectory.csv_rows())
        report["final_sup"] = float(np.max(np.abs(trajectory.final.values))) if spec.size else 0.0
        return None, report, summary

    def _run_kernel_bound(self, settings) -> tuple:
        spec = self.config.spec
        region = Cube(spec.d, settings.N if settings.N is not None else spec.cube.N)
        result = verify_bound(spec.kernel, settings.c_values, settings.n_max, region, workers=self.workers,
                              pad_width=settings.pad_width, progress=self.progress)
        self._write_csv("kernel_bound.csv", result.csv_header(), result.csv_rows())
        return result.passed, result.to_dict(), result.summary()

    def _run_validate(self, settings) -> tuple:
        spec = self.config.spec
        grid = np.linspace(settings.grid_min, settings.grid_max, settings.grid_points)
        result = validate_assumptions(spec, grid)
        payload = result.to_dict()
        payload["derived"] = {"eta": spec.eta, "c": spec.c, "delta": spec.delta}
        self._write_json("validation.json", payload)
        summary = f"validate: {'PASS' if result.passed else 'FAIL'}\n{result.summary()}"
        return result.passed, payload, summary

    def _run_experiment(self, settings) -> ExperimentReport:
        config = self.config
        cfg = build_scheme(config.scheme)
        replicas = config.experiment.replicas
        common = {"workers": self.workers, "progress": self.progress}
        name = self.name

        if name == "ou-uniform-bound":
            return exp_ou_uniform_bound(config.noise.alpha, settings.eps, settings.T, cfg, replicas, self.seed,
                                        settings.x, settings.y, settings.noise_enabled, **common)

        spec = config.spec
        params = StableParams(config.noise.alpha)
        cube = spec.cube
        if name == "contraction":
            edge = GrowthBall(1.0, 1.0).boundary_profile(cube)
            x0 = edge if settings.x0 is None else self._initial_state(settings.x0, cube)
            y0 = LatticeState(cube, -edge.values) if settings.y0 is None else self._initial_state(settings.y0, cube)
            return exp_contraction(spec, x0, y0, settings.T, cfg, self.seed, replicas, params, **common)
        if name == "propagation":
            f = build_observable(settings.observable, spec.d)
            if settings.k_list is None:
                k_list = [k for k in self._axis_sites(range(1, 10), spec.d, cube.N) if not f.contains(k)]
            else:
                k_list = self._points(settings.k_list, spec.d)
            return exp_propagation(spec, f, settings.t_list, k_list, settings.h, cfg, replicas, self.seed, params,
                                   envelope_A=settings.envelope_A, **common)
        if name == "galerkin":
            f = build_observable(settings.observable, spec.d)
            return exp_galerkin(spec, settings.N_list, f, settings.t, cfg, replicas, self.seed, params,
                                threshold=settings.threshold, **common)
        if name == "moment-growth":
            if settings.sites is None:
                sites = self._axis_sites((0, 5, 10), spec.d, cube.N)
            else:
                sites = self._points(settings.sites, spec.d)
            return exp_moment_growth(spec, sites, settings.rho, settings.R, settings.T, cfg, replicas, self.seed,
                                     params, **common)
        if name == "mixing":
            f = build_observable(settings.observable, spec.d)
            if settings.initial_states is None:
                edge = GrowthBall(1.0, 1.0).boundary_profile(cube)
                x_list = [edge, LatticeState.zeros(cube), LatticeState(cube, -edge.values)]
            else:
                x_list = [self._initial_state(v, cube) for v in settings.initial_states]
            return exp_mixing(spec, f, x_list, settings.T, cfg, replicas, self.seed, params, **common)
        if name == "gradient-bound":
            f = build_observable(settings.observable, spec.d)
            x0 = self._initial_state(settings.initial, cube)
            return exp_gradient_bound(spec, f, x0, settings.t_list, settings.h, cfg, replicas, self.seed, params,
                                      **common)
        raise ValueError(f"unknown experiment {name!r}")

    def _dispatch(self) -> tuple:
        settings = self.config.experiment.settings()
        if self.name == "sample":
            return self._run_sample(settings)
        if self.name == "simulate":
            return self._run_simulate(settings)
        if self.name == "verify-kernel-bound":
            return self._run_kernel_bound(settings)
        if self.name == "validate":
            return self._run_validate(settings)
        report = self._run_experiment(settings)
        self._write_csv(f"{self.name}.csv", report.columns, report.rows)
        return report.passed, report.to_dict(), report.summary()

    def _manifest(self, start_time: datetime, passed: Optional[bool], report: dict, status: int) -> dict:
        manifest = {
            "config": self.config.model_dump(mode="json"),
            "seed": self.seed,
            "software_version": SOFTWARE_VERSION,
            "started_at": start_time.isoformat(),
            "wall_time_seconds": (datetime.now() - start_time).total_seconds(),
            "workers": self.workers,
            "exit_status": status,
            "passed": passed,
            "report": report,
            "outputs": dict(self.outputs),
        }
        if self.name != "sample" and self.name != "ou-uniform-bound":
            manifest["derived"] = self.config.derived()
        return manifest

    def _record(self, passed: Optional[bool], status: int) -> int:
        digest = compute_hash(self.config.to_json())
        block = self.ledger.add_run(self.name, self.seed, digest, passed, self.outputs, status)
        is_valid, _ = self.ledger.verify_chain()
        if not is_valid:
            logger.warning("Ledger %s failed verification after appending block %d",
                           self.ledger.ledger_file, block.header.block_number)
        return block.header.block_number

    def process(self) -> RunResult:
        """
        Run the configured subcommand or experiment.

        A blow-up writes blowup.json with the last finite state, is recorded in
        the ledger and is re-raised.
        """
        start_time = datetime.now()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        logger.info("Starting %s (seed %d) into %s", self.name, self.seed, self.out_dir)

        try:
            passed, report, summary = self._dispatch()
        except SimulationBlowUpError as e:
            logger.error("Simulation blew up: %s", e)
            self._write_json("blowup.json", e.to_dict())
            self._write_json("manifest.json", self._manifest(start_time, None, {"blowup": e.to_dict()}, EXIT_ERROR))
            self._record(None, EXIT_ERROR)
            raise

        status = EXIT_FAIL if passed is False else EXIT_PASS
        self._write_json("manifest.json", self._manifest(start_time, passed, report, status))
        block_number = self._record(passed, status)
        processing_time = (datetime.now() - start_time).total_seconds()
        logger.info("%s finished in %.2f seconds, ledger block %d", self.name, processing_time, block_number)

        return RunResult(
            name=self.name,
            status=status,
            passed=passed,
            processing_time=processing_time,
            outputs=dict(self.outputs),
            summary=summary,
            ledger_block=block_number,
        )
