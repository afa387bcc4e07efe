"""Flat ``key = value`` run configuration shared by every CLI command."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .methods import METHODS

MODEL_NAMES = ("linear", "bump", "cycle", "bivariate")
FULL_SCALE = {"replicates": 1000, "bootstrap": 400}
U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit status 2."""


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run, each with a default.

    models          simulation designs (comma list)             linear,bump,cycle,bivariate
    estimators      estimators to run (comma list)              full,resp,sqri,pfi,hdfi,npi
    n               units per simulated sample                  200
    replicates      Monte Carlo replicates R                    200
    imputations     imputed values per missing unit J           10
    bootstrap       bootstrap replicates B (0 disables)         200
    seed            master seed, 0 .. 2**64-1                   0
    level           confidence level                            0.95
    coverage        also run the coverage study (simulate)      false
    out             output directory                            sqri-out
    method          estimator for the estimate command          sqri
    imputed         imputation CSV to reuse (estimate)          (none)
    mechanism       casestudy deletion: logistic or none        logistic
    case_seeds      deletion seeds swept by casestudy           1
    case_imputations  J used by casestudy                       100
    lambda_grid     smoothing grid override (comma list)        (n_obs-scaled default)
    bandwidth_a     response bandwidth of the density kernel    (Silverman)
    bandwidth_b     covariate bandwidth of the density kernel   (Silverman)
    npi_bandwidth   kernel-imputation bandwidth                 (cross-validated)
    donor_count     hot-deck donor pool size                    20
    full_scale      R=1000 and B=400 instead of the defaults    false
    """

    models: tuple = MODEL_NAMES
    estimators: tuple = METHODS
    n: int = 200
    replicates: int = 200
    imputations: int = 10
    bootstrap: int = 200
    seed: int = 0
    level: float = 0.95
    coverage: bool = False
    out: str = "sqri-out"
    method: str = "sqri"
    imputed: str = ""
    mechanism: str = "logistic"
    case_seeds: int = 1
    case_imputations: int = 100
    lambda_grid: tuple = ()
    bandwidth_a: float = 0.0
    bandwidth_b: float = 0.0
    npi_bandwidth: float = 0.0
    donor_count: int = 20
    full_scale: bool = False

    def __post_init__(self):
        check = _validate(self)
        if check:
            raise ConfigError(check)

    @property
    def effective_replicates(self) -> int:
        return FULL_SCALE["replicates"] if self.full_scale else self.replicates

    @property
    def effective_bootstrap(self) -> int:
        return FULL_SCALE["bootstrap"] if self.full_scale else self.bootstrap

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        """Serialization that :func:`parse_config` reads back to an equal config."""
        return "".join(f"{f.name} = {_render(getattr(self, f.name))}\n"
                       for f in dataclasses.fields(self))


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _validate(c: RunConfig) -> str | None:
    bad_models = [m for m in c.models if m not in MODEL_NAMES]
    if not c.models or bad_models:
        return f"models: unknown {bad_models or 'empty list'}; choose from {MODEL_NAMES}"
    bad = [m for m in c.estimators if m not in METHODS]
    if not c.estimators or bad:
        return f"estimators: unknown {bad or 'empty list'}; choose from {METHODS}"
    if c.method not in METHODS:
        return f"method: unknown {c.method!r}; choose from {METHODS}"
    if c.n < 2 or c.replicates < 1 or c.imputations < 1 or c.case_seeds < 1 \
            or c.case_imputations < 1:
        return "n >= 2 and positive replicates, imputations, case_seeds, case_imputations required"
    if c.bootstrap != 0 and c.bootstrap < 50:
        return "bootstrap must be 0 (disabled) or at least 50"
    if not 0 <= c.seed <= U64_MAX:
        return "seed must lie in 0 .. 2**64-1"
    if not 0 < c.level < 1:
        return "level must lie in (0, 1)"
    if c.mechanism not in ("logistic", "none"):
        return "mechanism must be logistic or none"
    if any(v < 0 for v in c.lambda_grid):
        return "lambda_grid values must be non-negative"
    if c.bandwidth_a < 0 or c.bandwidth_b < 0 or c.npi_bandwidth < 0:
        return "bandwidths must be non-negative (0 selects automatically)"
    if (c.bandwidth_a > 0) != (c.bandwidth_b > 0):
        return "bandwidth_a and bandwidth_b must be given together"
    if c.donor_count < 1:
        return "donor_count must be positive"
    return None


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name: str, text: str):
    kind = type(_FIELDS[name].default)
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text, 10)
        if kind is float:
            return float(text)
        if kind is tuple:
            items = [t.strip() for t in text.split(",") if t.strip()]
            if name == "lambda_grid":
                return tuple(float(t) for t in items)
            return tuple(items)
        return text
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {kind.__name__}") from None


def parse_config(text: str, source="<config>") -> dict:
    """Key/value pairs from config text; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}: line {lineno}: duplicate key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values.update(parse_config(text, str(path)))
    for key, v in overrides.items():
        if v is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, v) if isinstance(v, str) and \
            type(_FIELDS[key].default) is not str else v
    return RunConfig(**values)
