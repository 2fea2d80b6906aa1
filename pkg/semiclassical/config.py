"""
Run configuration: Django settings defaults <- JSON/TOML file <- --set overrides.
"""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
import copy
import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from django.conf import settings

from semiclassical.exceptions import ConfigError

logger = logging.getLogger(__name__)

SEED_STRATEGIES = ("auto", "stretch", "symmetric", "section")


@dataclass(frozen=True)
class GridSettings:
    n_r: int = 128
    n_theta: int = 128
    r_min: float = None
    r_max: float = None

    def validate(self):
        for name in ("n_r", "n_theta"):
            n = getattr(self, name)
            if n < 32 or n & (n - 1):
                raise ConfigError(f"grid.{name} must be a power of two >= 32, got {n}")
        if self.r_min is not None and self.r_max is not None and not 0.0 < self.r_min < self.r_max:
            raise ConfigError(f"grid radial box [{self.r_min}, {self.r_max}] is invalid")


@dataclass(frozen=True)
class PoSettings:
    seeds: tuple = ()
    e_min: float = 10.0
    e_max: float = None
    step: float = 50.0
    tol: float = 1e-9
    integ_tol: float = 1e-12
    max_jump: float = 0.25
    transverse_zero_point: bool = True
    alpha: tuple = (16.114, 14.123)
    section_scan: int = 6
    section_returns: tuple = (1, 2)

    def validate(self):
        if not 1e-14 < self.integ_tol < 1e-4:
            raise ConfigError(f"po.integ_tol {self.integ_tol} outside (1e-14, 1e-4)")
        if not 0.0 < self.tol < 1e-3:
            raise ConfigError(f"po.tol {self.tol} outside (0, 1e-3)")
        if self.step <= 0.0:
            raise ConfigError(f"po.step must be positive, got {self.step}")
        if len(self.alpha) != 2 or min(self.alpha) <= 0.0:
            raise ConfigError(f"po.alpha must hold two positive widths, got {self.alpha}")
        for seed in self.seeds:
            strategy = seed.get("strategy", "auto")
            if strategy not in SEED_STRATEGIES:
                raise ConfigError(f"unknown seed strategy '{strategy}' (expected one of {SEED_STRATEGIES})")
            if "energy" not in seed:
                raise ConfigError(f"seed {seed} needs an 'energy' in cm-1")
            if "theta" not in seed and "psi" not in seed:
                raise ConfigError(f"seed {seed} needs 'theta' or a section angle 'psi'")


@dataclass(frozen=True)
class SelectionSettings:
    e_ref: float = 3100.0
    c_b: float = 6.0
    sigma_sc: float = None
    n_basis: int = None
    density_nodes: int = 128

    def validate(self):
        if self.e_ref <= 0.0:
            raise ConfigError(f"selection.e_ref must be positive, got {self.e_ref}")
        if self.c_b < 0.0:
            raise ConfigError(f"selection.c_b must be non-negative, got {self.c_b}")


@dataclass(frozen=True)
class PropagationSettings:
    dt: float = None
    tube_tol: float = 1e-6
    tube_min_samples: int = 128
    tube_max_samples: int = 8192
    coherence_periods: int = 8
    sigma_cap: float = 5.0
    scars: bool = True

    def validate(self):
        if self.dt is not None and self.dt <= 0.0:
            raise ConfigError(f"propagation.dt must be positive, got {self.dt}")
        if not 0.0 < self.tube_tol < 1e-2:
            raise ConfigError(f"propagation.tube_tol {self.tube_tol} outside (0, 1e-2)")
        if self.tube_min_samples < 128 or self.tube_max_samples < self.tube_min_samples:
            raise ConfigError("propagation needs 128 <= tube_min_samples <= tube_max_samples")


@dataclass(frozen=True)
class AnalysisSettings:
    k_max: int = 10
    window: int = 5
    reference_states: int = 60
    certify: bool = True
    shift_tol: float = 0.1
    max_doublings: int = 2
    match_threshold: float = 0.5
    compare: bool = True

    def validate(self):
        if self.reference_states < 1:
            raise ConfigError("analysis.reference_states must be at least 1")
        if not 0.0 < self.match_threshold <= 1.0:
            raise ConfigError(f"analysis.match_threshold {self.match_threshold} outside (0, 1]")


SECTIONS = {
    "grid": GridSettings,
    "po": PoSettings,
    "selection": SelectionSettings,
    "propagation": PropagationSettings,
    "analysis": AnalysisSettings,
}


def _freeze(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    values = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(dict(v) if isinstance(v, dict) else v for v in value)
        values[key] = value
    return cls(**values)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class RunConfig:
    pes_path: str = None
    parity: str = "even"
    seed: int = 0
    output_dir: str = "runs/default"
    grid: GridSettings = field(default_factory=GridSettings)
    po: PoSettings = field(default_factory=PoSettings)
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    propagation: PropagationSettings = field(default_factory=PropagationSettings)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)

    def validate(self):
        if self.parity not in ("even", "odd"):
            raise ConfigError(f"parity must be 'even' or 'odd', got {self.parity!r}")
        if self.pes_path is not None and not Path(self.pes_path).is_file():
            raise ConfigError(f"PES file {self.pes_path} does not exist")
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        sections = {name: _freeze(kind, data.pop(name, {}) or {}) for name, kind in SECTIONS.items()}
        known = {f.name for f in fields(cls)} - set(SECTIONS)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run configuration keys: {sorted(unknown)}")
        try:
            config = cls(**data, **sections)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return config.validate()

    def to_dict(self):
        return _plain(asdict(self))

    def section_hash(self, name, *upstream):
        """sha256 of one configuration section plus upstream artifact hashes."""
        document = self.to_dict()
        payload = document[name] if name in SECTIONS else {k: v for k, v in document.items() if k not in SECTIONS}
        text = json.dumps({"section": payload, "pes": self.pes_path, "parity": self.parity,
                           "upstream": list(upstream)}, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()


def deep_merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(text):
    """'a.b.c=value' -> {'a': {'b': {'c': value}}}; value parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key=value")
    key, raw = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override '{text}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    document = value
    for part in reversed(parts):
        document = {part: document}
    return document


def read_document(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file {path} does not exist")
    try:
        if path.suffix == ".toml":
            with path.open("rb") as handle:
                return tomllib.load(handle)
        return json.loads(path.read_text())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def load_config(path=None, overrides=()):
    document = copy.deepcopy(getattr(settings, "SCARBASIS_DEFAULTS", {}))
    if path:
        document = deep_merge(document, read_document(path))
    for text in overrides:
        document = deep_merge(document, parse_override(text))
    config = RunConfig.from_dict(document)
    logger.debug(f"run configuration: {json.dumps(config.to_dict(), sort_keys=True)}")
    return config


def dump_config(config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return path
