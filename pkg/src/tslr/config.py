"""Run configuration from ``key=value`` files with validated values.

Resolution order is command-line flags, then the config file, then the
built-in defaults.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, TslrError
from .ingest import FilterRules
from .synth import SynthSpec

__all__ = ["RunConfig", "parse_kv", "load_config", "coerce", "synth_spec_from_file"]


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run. Components are 1-based, as on the command line."""

    rank: int = 5
    lam: float = 1e5
    seed: int = 0
    threads: int = 1
    max_outer: int = 200
    rel_tol: float = 1e-5
    init_iter: int = 200
    smooth_basis_step: bool = True
    sample_minutes: float = 10.0
    max_sleep_hours: float = 16.0
    max_awake_hours: float = 20.0
    night_start_hour: float = 21.0
    night_end_hour: float = 7.0
    isolation_gap_days: int = 5
    max_missing_fraction: float = 0.9
    components: tuple[int, ...] = (1, 2, 3)
    percentile: float = 98.0
    k: int = 2
    restarts: int = 10
    metric: str = "mae"
    min_observed_fraction: float = 0.7
    sigma: float | None = None
    cv_folds: int = 5
    sigma_grid_size: int = 10

    def __post_init__(self):
        positive = ("rank", "threads", "max_outer", "init_iter", "sample_minutes", "k", "restarts", "sigma_grid_size")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.rel_tol < 0:
            raise ConfigError("rel_tol must be nonnegative")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if not self.components or min(self.components) < 1:
            raise ConfigError("components are 1-based and nonempty")
        if not 0.0 < self.percentile < 100.0:
            raise ConfigError("percentile must lie in (0, 100)")
        if self.metric not in ("mae", "rmse"):
            raise ConfigError("metric must be mae or rmse")
        if not 0.0 < self.min_observed_fraction <= 1.0:
            raise ConfigError("min_observed_fraction must lie in (0, 1]")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if 1440 % self.sample_minutes:
            raise ConfigError("sample_minutes must divide a day")
        self.rules()  # validates the filter thresholds

    def rules(self) -> FilterRules:
        return FilterRules(**{f.name: getattr(self, f.name) for f in fields(FilterRules)})

    def items(self):
        """``(file key, value)`` pairs in declaration order."""
        return [(_file_key(k), v) for k, v in asdict(self).items()]

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# ``lambda`` is a keyword in Python
_ALIASES = {"lambda": "lam"}


def _file_key(name: str) -> str:
    return "lambda" if name == "lam" else name


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys may not repeat."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if k in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {k!r}")
        out[k] = v
    return out


def _convert(name: str, typ, raw):
    if not isinstance(raw, str):
        return raw
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if typ.startswith("bool"):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float | None"):
            return None if raw.lower() in ("auto", "none", "") else float(raw)
        if typ.startswith("float"):
            return float(raw)
        if typ.startswith("tuple[int"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from None
    return raw


def coerce(cls, mapping: dict[str, str]):
    """Build dataclass ``cls`` from string values, rejecting unknown keys."""
    known = {f.name: f.type for f in fields(cls)}
    kw = {}
    for key, raw in mapping.items():
        name = _ALIASES.get(key, key)
        if name not in known:
            raise ConfigError(f"unknown key {key!r}")
        kw[name] = _convert(key, known[name], raw)
    try:
        return cls(**kw)
    except TslrError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    if path is None:
        return base
    values = parse_kv(Path(path).read_text(encoding="utf-8"), str(path))
    merged = {_file_key(k): v for k, v in asdict(base).items()}
    merged.update(values)
    return coerce(RunConfig, merged)


def synth_spec_from_file(path=None, **overrides) -> SynthSpec:
    values = {} if path is None else parse_kv(Path(path).read_text(encoding="utf-8"), str(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return coerce(SynthSpec, values)
