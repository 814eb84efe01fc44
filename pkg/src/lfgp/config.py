"""Run configuration: a TOML file with named sections, unknown keys rejected.

Sections and their keys mirror the dataclasses below; every key is optional
and falls back to the dataclass default.  Example::

    [io]
    seed = 7
    data = "trials/"

    [estimator]
    window_len = 50

    [model]
    r = 2
    n_draws = 2000
"""

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError
from .kernels import KernelSpec, LengthScalePrior, ms_to_index
from .sampler import MCMCSettings, ModelConfig
from .sliding_window import TaperSpec

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


@dataclass
class IoSection:
    seed: int = 0
    data: str = ""  # directory of trial_<idx>_<label>.csv files
    chain: str = ""  # existing chain file for addfactor / separate
    sample_rate_hz: float = 1000.0


@dataclass
class EstimatorSection:
    window_len: int = 50
    tau: float = 0.5
    center: bool = True
    jitter: float = 1e-6


@dataclass
class ModelSection:
    r: int = 2
    kernel: str = "squared_exponential"
    length_scale_mode_ms: float = 100.0  # converted to samples at the data's rate
    length_scale_shape: float = 10.0
    loading_prior_var: float = 10.0
    noise_prior_shape: float = 1.0
    noise_prior_rate: float = 0.1
    horseshoe_global_scale: float = 0.1
    stride: int = 10
    n_draws: int = 2000
    n_burn: int = 500
    thin: int = 10
    proposal_sd: float = 0.2


@dataclass
class ExperimentSection:
    harness: str = "both"  # contraction | comparison | both
    scenarios: list = field(default_factory=lambda: ["square_wave", "piecewise_linear", "cubic_spline"])
    n_reps: int = 20
    cells: list = field(default_factory=lambda: [[1, 25], [10, 25], [1, 50], [10, 50]])
    contraction_reps: int = 3
    contraction_noise_sd: float = 1.0
    p: int = 10
    T: int = 1000
    r_true: int = 4
    n_knots: int = 6
    pca_k: int = 4
    lfgp_r: int = 4
    lfgp_stride: int = 10
    lfgp_window_len: int = 44  # LFGP input windows; the GP does the denoising
    ls_mode_ms: float = 50.0  # bench data are simulated at 1 kHz
    hmm_max_states: int = 10
    hmm_restarts: int = 5
    n_draws: int = 2000
    n_burn: int = 500
    thin: int = 10


@dataclass
class SimulateSection:
    design: str = "scenario"  # scenario | two_condition
    scenario: str = "cubic_spline"
    n: int = 2
    p: int = 3
    T: int = 200
    r_true: int = 2
    n_knots: int = 4
    effect: float = 1.0
    labels: list = field(default_factory=lambda: ["A", "B"])


@dataclass
class EvaluationSection:
    classifiers: list = field(default_factory=lambda: ["knn", "logistic"])
    k: int = 5
    folds: int = 5
    l2: float = 1.0


@dataclass
class BaselineSection:
    methods: list = field(default_factory=lambda: ["pca", "hmm"])
    pca_k: int = 4
    hmm_states: int = 0  # 0: grow until degenerate, up to hmm_max_states
    hmm_max_states: int = 10
    hmm_restarts: int = 5
    hmm_raw: bool = False  # fit zero-mean emissions on raw signals
    elbow_max_states: int = 0  # >0 emits per-S AIC for S = 1..elbow_max_states


SECTIONS = {
    "io": IoSection,
    "estimator": EstimatorSection,
    "model": ModelSection,
    "experiment": ExperimentSection,
    "simulate": SimulateSection,
    "evaluation": EvaluationSection,
    "baseline": BaselineSection,
}

# sections whose values determine a fitted chain
CHAIN_SECTIONS = ("estimator", "model")


@dataclass
class RunConfig:
    io: IoSection = field(default_factory=IoSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    model: ModelSection = field(default_factory=ModelSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)

    @property
    def seed(self):
        return self.io.seed

    def with_seed(self, seed):
        return replace(self, io=replace(self.io, seed=int(seed)))

    def as_dict(self):
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def hash(self):
        """Digest of every setting, used in output headers."""
        return _digest(self.as_dict())

    def chain_hash(self):
        """Digest of the settings a fitted chain depends on, plus the seed and data path."""
        d = self.as_dict()
        sub = {name: d[name] for name in CHAIN_SECTIONS}
        sub["seed"] = self.io.seed
        sub["data"] = self.io.data
        return _digest(sub)

    # -- typed views ------------------------------------------------------

    def taper(self):
        return TaperSpec(self.estimator.window_len, self.estimator.tau)

    def model_config(self, seed=None, sample_rate_hz=None):
        """Sampler settings; the length-scale mode is converted from ms to samples."""
        m = self.model
        mode = ms_to_index(m.length_scale_mode_ms, sample_rate_hz or self.io.sample_rate_hz)
        return ModelConfig(
            r=m.r,
            kernel=KernelSpec(m.kernel, 1.0),
            ls_prior=LengthScalePrior.from_mode(mode, m.length_scale_shape),
            loading_prior_var=m.loading_prior_var,
            noise_prior=(m.noise_prior_shape, m.noise_prior_rate),
            horseshoe_global_scale=m.horseshoe_global_scale,
            mcmc=MCMCSettings(m.n_draws, m.n_burn, m.thin, self.io.seed if seed is None else seed, m.proposal_sd),
        )


def _digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _coerce(section, key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"[{section}] {key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}] {key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {key} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"[{section}] {key} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"[{section}] {key} must be a list")
        return value
    return value


def config_from_dict(raw):
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    parts = {}
    for name, cls in SECTIONS.items():
        block = raw.get(name, {})
        if not isinstance(block, dict):
            raise ConfigError(f"[{name}] must be a table")
        defaults = cls()
        known = {f.name for f in fields(cls)}
        bad = set(block) - known
        if bad:
            raise ConfigError(f"unknown key(s) in [{name}]: {sorted(bad)}")
        kw = {k: _coerce(name, k, v, getattr(defaults, k)) for k, v in block.items()}
        parts[name] = cls(**kw)
    cfg = RunConfig(**parts)
    validate(cfg)
    return cfg


def load_config(path=None, seed=None):
    """Read a TOML config; ``seed`` overrides ``[io] seed`` when given."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    cfg = config_from_dict(raw)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


def validate(cfg):
    if cfg.io.seed < 0 or cfg.io.seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.model.stride < 1:
        raise ConfigError("[model] stride must be >= 1")
    if cfg.experiment.harness not in ("contraction", "comparison", "both"):
        raise ConfigError("[experiment] harness must be contraction, comparison or both")
    if cfg.simulate.design not in ("scenario", "two_condition"):
        raise ConfigError("[simulate] design must be scenario or two_condition")
    for clf in cfg.evaluation.classifiers:
        if clf not in ("knn", "logistic"):
            raise ConfigError(f"unknown classifier {clf!r}")
    for m in cfg.baseline.methods:
        if m not in ("pca", "hmm"):
            raise ConfigError(f"unknown baseline {m!r}")
    if (cfg.estimator.window_len - cfg.experiment.lfgp_window_len) % 2:
        raise ConfigError("[experiment] lfgp_window_len must differ from [estimator] window_len by an even number")
    for cell in cfg.experiment.cells:
        if not (isinstance(cell, list) and len(cell) == 2 and all(isinstance(c, int) and c > 0 for c in cell)):
            raise ConfigError("[experiment] cells must be [n, t] pairs of positive integers")
    # constructing the typed views runs their own checks
    cfg.taper()
    cfg.model_config()
    return cfg
