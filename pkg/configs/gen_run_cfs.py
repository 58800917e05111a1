import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from integrator.integrator import SchemeConfig
from lattice.lattice import Cube, LatticePoint
from model.model import InteractionKernel, ModelSpec, SiteDrift, ValidationReport, validate_assumptions
from experiments.observables import Observable

SOFTWARE_VERSION = "0.1.0"
OUTPUT_ENV_VAR = "STABLE_LATTICE_OUT"
DEFAULT_OUTPUT_DIR = "results"

EXPERIMENT_NAMES = (
    "ou-uniform-bound", "contraction", "propagation", "galerkin", "moment-growth", "mixing", "gradient-bound",
)
RUN_NAMES = ("sample", "simulate", "verify-kernel-bound", "validate") + EXPERIMENT_NAMES


class ConfigError(ValueError):
    """Malformed, unknown or assumption-violating configuration."""

    def __init__(self, message: str, report: Optional[ValidationReport] = None):
        super().__init__(message)
        self.report = report


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelConfig(_Strict):
    kind: Literal["exp-decay-scaled", "finite-range", "custom-table"] = "exp-decay-scaled"
    beta: float = Field(0.5, ge=0)
    normalize: bool = False
    range: int = Field(1, ge=1)
    support_radius: int = Field(30, ge=1)
    entries: List[Tuple[List[int], List[int], float]] = Field(default_factory=list)


class DriftConfig(_Strict):
    kind: Literal["poly", "linear"] = "poly"
    eps: float = Field(0.5, ge=0)
    c0: float = Field(0.0, ge=0)
    n: int = Field(0, ge=0)
    rate: float = Field(0.5, ge=0)


class ModelConfig(_Strict):
    d: int = Field(1, ge=1)
    N: int = Field(10, ge=0)
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    drift: DriftConfig = Field(default_factory=DriftConfig)
    interaction: Literal["linear", "log-exp"] = "linear"


class NoiseConfig(_Strict):
    alpha: float
    seed: int = Field(ge=0, lt=2 ** 64)

    @field_validator("alpha")
    @classmethod
    def _alpha_range(cls, value: float) -> float:
        if not 1.0 < value <= 2.0:
            raise ValueError(f"alpha must lie in (1, 2], got {value}")
        return value


class SchemeSection(_Strict):
    kind: Literal["euler", "exponential"] = "exponential"
    dt: float = Field(1e-3, gt=0)
    T: float = Field(1.0, ge=0)
    zero_threshold: float = Field(1e-12, gt=0)


class ObservableConfig(_Strict):
    kind: Literal["coordinate-tanh", "product-window", "constant"] = "coordinate-tanh"
    support: Optional[List[List[int]]] = None
    width: float = Field(1.0, gt=0)
    value: float = 1.0


class SampleParams(_Strict):
    count: int = Field(100000, ge=1)
    dt: float = Field(1.0, ge=0)
    xi: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    scaling_dt: float = Field(4.0, gt=0)
    path_sites: int = Field(0, ge=0)
    path_steps: int = Field(0, ge=0)


class SimulateParams(_Strict):
    initial: Optional[List[float]] = None
    picard: bool = False
    picard_max_iter: int = Field(50, ge=1)
    picard_tol: float = Field(1e-10, gt=0)


class KernelBoundParams(_Strict):
    c_values: List[float] = Field(default_factory=lambda: [0.0, 1.0])
    n_max: int = Field(4, ge=0)
    N: Optional[int] = Field(None, ge=0)
    pad_width: int = Field(15, ge=1)


class ValidateParams(_Strict):
    grid_min: float = -100.0
    grid_max: float = 100.0
    grid_points: int = Field(10001, ge=2)


class OUParams(_Strict):
    eps: float = Field(0.5, gt=0)
    T: float = Field(50.0, gt=0)
    x: float = 1.0
    y: float = -1.0
    noise_enabled: bool = True


class ContractionParams(_Strict):
    T: float = Field(5.0, gt=0)
    x0: Optional[List[float]] = None
    y0: Optional[List[float]] = None


class PropagationParams(_Strict):
    t_list: List[float] = Field(default_factory=lambda: [0.5])
    k_list: Optional[List[List[int]]] = None
    h: float = Field(1e-3, gt=0)
    envelope_A: float = Field(0.25, gt=0, le=0.25)
    observable: ObservableConfig = Field(default_factory=ObservableConfig)


class GalerkinParams(_Strict):
    N_list: List[int] = Field(default_factory=lambda: [4, 8, 16])
    t: float = Field(1.0, ge=0)
    threshold: float = Field(0.05, gt=0)
    observable: ObservableConfig = Field(default_factory=ObservableConfig)


class MomentParams(_Strict):
    sites: Optional[List[List[int]]] = None
    rho: float = Field(1.0, ge=0)
    R: float = Field(1.0, ge=0)
    T: float = Field(20.0, ge=0)


class MixingParams(_Strict):
    T: float = Field(8.0, gt=0)
    initial_states: Optional[List[List[float]]] = None
    observable: ObservableConfig = Field(default_factory=ObservableConfig)


class GradientParams(_Strict):
    t_list: List[float] = Field(default_factory=lambda: [0.5, 1.0])
    h: float = Field(1e-3, gt=0)
    initial: Optional[List[float]] = None
    observable: ObservableConfig = Field(default_factory=ObservableConfig)


PARAMS_MODELS: Dict[str, Type[_Strict]] = {
    "sample": SampleParams,
    "simulate": SimulateParams,
    "verify-kernel-bound": KernelBoundParams,
    "validate": ValidateParams,
    "ou-uniform-bound": OUParams,
    "contraction": ContractionParams,
    "propagation": PropagationParams,
    "galerkin": GalerkinParams,
    "moment-growth": MomentParams,
    "mixing": MixingParams,
    "gradient-bound": GradientParams,
}


class ExperimentConfig(_Strict):
    name: Literal[RUN_NAMES]
    replicas: int = Field(1000, ge=1)
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_params(self) -> "ExperimentConfig":
        try:
            PARAMS_MODELS[self.name].model_validate(self.params)
        except ValidationError as e:
            raise ValueError(f"invalid params for {self.name}: {e}") from None
        return self

    def settings(self):
        return PARAMS_MODELS[self.name].model_validate(self.params)


class OutputConfig(_Strict):
    directory: Optional[str] = None


class RunConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    noise: NoiseConfig
    scheme: SchemeSection = Field(default_factory=SchemeSection)
    experiment: ExperimentConfig
    output: OutputConfig = Field(default_factory=OutputConfig)

    _spec: Optional[ModelSpec] = PrivateAttr(default=None)

    @property
    def spec(self) -> ModelSpec:
        if self._spec is None:
            self._spec = build_model(self.model)
        return self._spec

    def derived(self) -> Dict[str, float]:
        spec = self.spec
        return {"eta": spec.eta, "c": spec.c, "delta": spec.delta}

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def build_model(model: ModelConfig) -> ModelSpec:
    k = model.kernel
    if k.kind == "exp-decay-scaled":
        kernel = InteractionKernel.exp_decay(model.d, k.beta, k.normalize, k.support_radius)
    elif k.kind == "finite-range":
        kernel = InteractionKernel.finite_range(model.d, k.beta, k.range)
    else:
        kernel = InteractionKernel.custom_table(model.d, k.entries)
    dr = model.drift
    drift = SiteDrift.poly(dr.eps, dr.c0, dr.n) if dr.kind == "poly" else SiteDrift.linear(dr.rate)
    return ModelSpec(Cube(model.d, model.N), kernel, drift, model.interaction)


def build_scheme(scheme: SchemeSection) -> SchemeConfig:
    return SchemeConfig(scheme.kind, scheme.dt, scheme.T, scheme.zero_threshold)


def build_observable(config: ObservableConfig, d: int) -> Observable:
    support = config.support if config.support is not None else [[0] * d]
    sites = [LatticePoint(tuple(s)) for s in support]
    if config.kind == "coordinate-tanh":
        return Observable.coordinate_tanh(sites[0])
    if config.kind == "product-window":
        return Observable.product_window(sites, config.width)
    return Observable.constant(config.value)


def parse_config(text: str, validate: bool = True) -> RunConfig:
    """
    Parse and validate a JSON run configuration.

    With `validate` the model is checked against the standing assumptions and
    a failing report raises ConfigError with the report attached.
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e}") from e
    try:
        config = RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration:\n{e}") from e
    try:
        spec = config.spec
    except ValueError as e:
        raise ConfigError(f"invalid model: {e}") from e
    if validate:
        report = validate_assumptions(spec)
        if not report.passed:
            raise ConfigError("model violates the standing assumptions:\n" + report.summary(), report)
    return config


def config_from_manifest(text: str) -> RunConfig:
    """Rebuild the RunConfig recorded in a run manifest."""
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed manifest: {e}") from e
    if "config" not in manifest:
        raise ConfigError("manifest has no 'config' section")
    return parse_config(json.dumps(manifest["config"]))


def resolve_output_dir(cli_out: Optional[str], config: Optional[RunConfig]) -> Path:
    if cli_out:
        return Path(cli_out)
    if config is not None and config.output.directory:
        return Path(config.output.directory)
    return Path(os.environ.get(OUTPUT_ENV_VAR) or DEFAULT_OUTPUT_DIR)


class ConfigGenerator:
    DEFAULT_SEED = 20240601

    def __init__(self, config_dir: str = "configs/database"):
        self.config_dir = Path(config_dir)
        self.config_dir.mkdir(parents=True, exist_ok=True)

    def _save_config(self, config: Dict, filename: str) -> Path:
        """Save configuration to JSON file."""
        config_path = self.config_dir / f"{filename}.json"
        with open(config_path, 'w') as f:
            json.dump(config, f, indent=4)
        return config_path

    def _load_config(self, filename: str) -> Dict:
        """Load configuration from JSON file."""
        config_path = self.config_dir / f"{filename}.json"
        if not config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")
        with open(config_path, 'r') as f:
            return json.load(f)

    def default_config(self, name: str, seed: Optional[int] = None) -> Dict:
        """A ready-to-run configuration for one subcommand or experiment."""
        if name not in RUN_NAMES:
            raise ValueError(f"unknown run {name!r}, expected one of {RUN_NAMES}")
        config = RunConfig(
            noise=NoiseConfig(alpha=1.5, seed=self.DEFAULT_SEED if seed is None else seed),
            experiment=ExperimentConfig(name=name),
        )
        document = config.model_dump(mode="json")
        if name == "ou-uniform-bound":
            document["scheme"]["dt"] = 0.01
            document["experiment"]["replicas"] = 2000
        elif name == "contraction":
            document["experiment"]["replicas"] = 20
        elif name == "propagation":
            document["experiment"]["replicas"] = 10000
        elif name in ("moment-growth", "mixing"):
            document["scheme"]["dt"] = 0.01
        elif name == "verify-kernel-bound":
            document["model"]["N"] = 20
            document["model"]["kernel"]["beta"] = 1.0
        return document

    def generate_config(self, name: str, seed: Optional[int] = None, filename: Optional[str] = None,
                        overrides: Optional[Dict] = None) -> RunConfig:
        """Generate, validate and save a configuration."""
        document = self.default_config(name, seed)
        for section, values in (overrides or {}).items():
            if isinstance(values, dict) and isinstance(document.get(section), dict):
                document[section].update(values)
            else:
                document[section] = values
        config = parse_config(json.dumps(document))
        self._save_config(config.model_dump(mode="json"), filename or name)
        return config

    def generate_default_configs(self) -> List[Path]:
        paths = []
        for name in RUN_NAMES:
            self.generate_config(name)
            paths.append(self.config_dir / f"{name}.json")
        return paths

    def load_run_config(self, filename: str, validate: bool = True) -> RunConfig:
        """Load and validate a saved configuration."""
        return parse_config(json.dumps(self._load_config(filename)), validate=validate)
