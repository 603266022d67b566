"""Run configuration: TOML (or JSON) file, validated into RunConfig."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or missing configuration (a usage error)."""


@dataclass
class ModelConfig:
    kind: str = "potential"          # "potential" (Poschl-Teller) or "cubic"
    depth: int = 2
    g: float = 1.0
    quintic: float = 0.0
    generators: list = None


@dataclass
class GridConfig:
    L: float = 20.0
    n: int = 128


@dataclass
class SolitonConfig:
    p: list = None                    # prescribed momenta, or
    lam: list = None                  # prescribed multipliers
    amplitude: float = 0.3            # linear ground-state guess (potential model)
    branch: list = None               # values of lambda_0 for the branch table
    tol: float = 1e-10


@dataclass
class ChartConfig:
    family_radius: float = 0.006
    family_degree: int = 10
    epsilon: float = 1e-2             # probe scale |R| for the Darboux audit
    radius_factor: float = 0.1


@dataclass
class NormalFormConfig:
    N: int = None
    cap: int = None
    rho_order: int = None
    max_degree: int = None
    transport: bool = True
    removable_tol: float = 1e-8
    resonance_tol: float = 1e-9
    solve_tol: float = 1e-10
    oracle: bool = True
    oracle_n: int = 32
    oracle_L: float = 10.0
    oracle_eps: list = field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])


@dataclass
class AuditConfig:
    samples: int = 6
    probes: int = 20
    moser_tol: float = 1e-7
    symplectic_tol: float = 1e-5


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    soliton: SolitonConfig = field(default_factory=SolitonConfig)
    chart: ChartConfig = field(default_factory=ChartConfig)
    normalform: NormalFormConfig = field(default_factory=NormalFormConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    output: str = "out"
    seed: int = 0
    source: str = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d

    def digest(self) -> str:
        """sha256 of the canonical JSON form; source and output paths do not count."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def out_dir(self) -> Path:
        return Path(self.output)


_SECTIONS = {"model": ModelConfig, "grid": GridConfig, "soliton": SolitonConfig,
             "chart": ChartConfig, "normalform": NormalFormConfig, "audit": AuditConfig}


def from_dict(raw: dict, source=None) -> RunConfig:
    cfg = RunConfig(source=str(source) if source else None)
    raw = dict(raw)
    for name, cls in _SECTIONS.items():
        sec = raw.pop(name, {}) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        known = cls.__dataclass_fields__
        bad = sorted(set(sec) - set(known))
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {', '.join(bad)}")
        setattr(cfg, name, cls(**sec))
    for key in ("output", "seed"):
        if key in raw:
            setattr(cfg, key, raw.pop(key))
    if raw:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(raw))}")
    if cfg.source and not Path(cfg.output).is_absolute():
        cfg.output = str(Path(cfg.source).parent / cfg.output)
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(raw, source=path)


def _positive(name, v):
    if v is None:
        return
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
        raise ConfigError(f"{name} must be positive, got {v!r}")


def validate(cfg: RunConfig) -> RunConfig:
    m = cfg.model
    if m.kind not in ("potential", "cubic"):
        raise ConfigError(f"model.kind must be 'potential' or 'cubic', got {m.kind!r}")
    _positive("grid.L", cfg.grid.L)
    if not isinstance(cfg.grid.n, int) or cfg.grid.n < 8 or cfg.grid.n % 2:
        raise ConfigError("grid.n must be an even integer >= 8")
    s = cfg.soliton
    if (s.p is None) == (s.lam is None):
        raise ConfigError("give exactly one of soliton.p or soliton.lam")
    for name in ("tol",):
        _positive(f"soliton.{name}", getattr(s, name))
    for name in ("family_radius", "epsilon", "radius_factor"):
        _positive(f"chart.{name}", getattr(cfg.chart, name))
    nf = cfg.normalform
    for name in ("removable_tol", "resonance_tol", "solve_tol", "oracle_L"):
        _positive(f"normalform.{name}", getattr(nf, name))
    for name in ("N", "cap", "oracle_n"):
        _positive(f"normalform.{name}", getattr(nf, name))
    if nf.rho_order is not None and (not isinstance(nf.rho_order, int) or nf.rho_order < 0):
        raise ConfigError("normalform.rho_order must be a non-negative integer")
    if nf.max_degree is not None and (not isinstance(nf.max_degree, int) or nf.max_degree < 2):
        raise ConfigError("normalform.max_degree must be an integer >= 2")
    if not nf.oracle_eps or any(not (isinstance(e, (int, float)) and e > 0) for e in nf.oracle_eps):
        raise ConfigError("normalform.oracle_eps must be a non-empty list of positive numbers")
    a = cfg.audit
    for name in ("samples", "probes"):
        v = getattr(a, name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"audit.{name} must be a positive integer, got {v!r}")
    _positive("audit.moser_tol", a.moser_tol)
    _positive("audit.symplectic_tol", a.symplectic_tol)
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError("seed must be an integer")
    return cfg


def potential_default() -> dict:
    return {"model": {"kind": "potential"}, "grid": {"L": 20.0, "n": 128},
            "soliton": {"p": [0.06], "amplitude": 0.3}, "output": "out", "seed": 0}


def cubic_default() -> dict:
    return {"model": {"kind": "cubic"}, "grid": {"L": 20.0, "n": 256},
            "soliton": {"lam": [-1.0, 0.0], "branch": [-0.8, -1.0, -1.2]},
            "chart": {"family_radius": 0.1, "family_degree": 8},
            "output": "out", "seed": 0}
