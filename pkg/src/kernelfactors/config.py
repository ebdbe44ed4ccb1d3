"""Run configuration: YAML files validated into a frozen ``RunConfig``.

Validation errors carry the line number of the offending key so a user can
fix the file without guessing.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data_ingest import EVALUATION_TARGETS, parse_month
from .evaluation import DEFAULT_GAMMA_GRID, MethodSpec, default_methods
from .kernels import KernelSpec

__all__ = ["ConfigError", "MonteCarloConfig", "RunConfig", "load_config", "parse_method", "DEFAULT_HORIZONS"]

DEFAULT_HORIZONS = (1, 3, 6, 9, 12, 18, 24)

# shorthand method names accepted in config files
METHOD_ALIASES = {
    "pca": lambda grid: MethodSpec("pca"),
    "spc": lambda grid: MethodSpec("spc"),
    "pc2": lambda grid: MethodSpec("pc2"),
    "kpca_linear": lambda grid: MethodSpec("kpca", KernelSpec.linear()),
    "kpca_poly2": lambda grid: MethodSpec("kpca", KernelSpec.polynomial(2, 1.0)),
    "kpca_sigmoid": lambda grid: MethodSpec("kpca", KernelSpec.sigmoid(1.0, c0=1.0), grid),
    "kpca_rbf": lambda grid: MethodSpec("kpca", KernelSpec.rbf(1.0), grid),
}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source and line:
            where = f"{source}:{line}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class MonteCarloConfig:
    consistency_grid: tuple[tuple[int, int], ...] = ((50, 50), (100, 100), (200, 200))
    consistency_replications: int = 20
    n_factors: int = 3
    concentration_t_grid: tuple[int, ...] = (50, 100, 200)
    concentration_replications: int = 50
    concentration_gamma: float = 1.0
    forecast_seeds: int = 0
    forecast_horizons: tuple[int, ...] = (6, 12)


@dataclass(frozen=True)
class RunConfig:
    data_path: Path | None = None
    targets: tuple[str, ...] = tuple(t.name for t in EVALUATION_TARGETS)
    horizons: tuple[int, ...] = DEFAULT_HORIZONS
    methods: tuple[MethodSpec, ...] = field(default_factory=lambda: tuple(default_methods()))
    window_base: int = 120
    maxima: tuple[int, int, int] = (6, 6, 6)
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    output_dir: Path = Path("output")
    seed: int = 0
    start: str | None = "1960-01"
    end: str | None = None
    first_target: str | None = "1970-01"
    cv_stride: int = 1
    jobs: int = 1
    montecarlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)

    def __post_init__(self):
        if not self.targets:
            raise ConfigError("targets must be non-empty")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ConfigError("horizons must be a non-empty list of positive integers")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        if len(self.maxima) != 3 or any(m < 1 for m in self.maxima):
            raise ConfigError("maxima must be three positive integers")
        if self.window_base <= max(self.horizons) + 1:
            raise ConfigError(f"window_base {self.window_base} leaves no window at horizon {max(self.horizons)}")
        if self.cv_stride < 1 or self.jobs < 1:
            raise ConfigError("cv_stride and jobs must be >= 1")

    def to_dict(self) -> dict:
        """Plain-data echo suitable for a manifest."""
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "methods":
                v = [_method_dict(m) for m in v]
            elif f.name == "montecarlo":
                v = {k: _plain(x) for k, x in dataclasses.asdict(v).items()}
            else:
                v = _plain(v)
            out[f.name] = v
        return out


def _plain(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _method_dict(m: MethodSpec) -> dict:
    d = {"name": m.name, "label": m.label}
    if m.kernel is not None:
        k = m.kernel
        d["kernel"] = {"family": k.family, "c0": k.c0, "degree": k.degree, "offset": k.offset}
        if not m.gamma_grid:
            d["kernel"]["gamma"] = k.gamma
    if m.gamma_grid:
        d["gamma_grid"] = list(m.gamma_grid)
    return d


def parse_method(entry, gamma_grid=DEFAULT_GAMMA_GRID) -> MethodSpec:
    """Build a ``MethodSpec`` from an alias string or a mapping.

    Mappings look like ``{name: kpca, kernel: rbf, gamma_grid: [...]}``;
    kernel options ``c0``, ``degree``, ``offset`` and ``gamma`` may be given
    alongside.
    """
    if isinstance(entry, str):
        if entry not in METHOD_ALIASES:
            raise ValueError(f"unknown method {entry!r}; expected one of {sorted(METHOD_ALIASES)}")
        return METHOD_ALIASES[entry](tuple(gamma_grid))
    if not isinstance(entry, dict):
        raise ValueError("a method must be a name or a mapping")
    entry = dict(entry)
    name = entry.pop("name", None)
    if name != "kpca":
        if entry:
            raise ValueError(f"method {name!r} takes no options, got {sorted(entry)}")
        return parse_method(str(name), gamma_grid)
    family = entry.pop("kernel", None)
    if family is None:
        raise ValueError("kpca needs a kernel")
    grid = entry.pop("gamma_grid", None)
    kernel = KernelSpec(str(family), **{k: entry.pop(k) for k in ("gamma", "c0", "degree", "offset") if k in entry})
    if entry:
        raise ValueError(f"unknown method options {sorted(entry)}")
    if kernel.uses_gamma:
        grid = tuple(gamma_grid) if grid is None else tuple(float(g) for g in grid)
    elif grid:
        raise ValueError(f"kernel {family!r} has no gamma to cross-validate")
    return MethodSpec("kpca", kernel, grid or ())


def _key_lines(node) -> dict[str, int]:
    if not isinstance(node, yaml.MappingNode):
        return {}
    lines = {}
    for k, v in node.value:
        lines[k.value] = k.start_mark.line + 1
        if isinstance(v, yaml.MappingNode):
            lines.update({f"{k.value}.{kk.value}": kk.start_mark.line + 1 for kk, _ in v.value})
    return lines


def _int_tuple(v, what: str) -> tuple[int, ...]:
    if isinstance(v, (int, str)):
        v = [v]
    try:
        out = tuple(int(x) for x in v)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be integers") from None
    if any(isinstance(x, bool) or float(x) != int(x) for x in v):
        raise ValueError(f"{what} must be integers")
    return out


def _parse_montecarlo(raw, lines, source) -> MonteCarloConfig:
    if not isinstance(raw, dict):
        raise ConfigError("montecarlo must be a mapping", lines.get("montecarlo"), source)
    known = {f.name for f in dataclasses.fields(MonteCarloConfig)}
    kwargs = {}
    for key, v in raw.items():
        line = lines.get(f"montecarlo.{key}", lines.get("montecarlo"))
        if key not in known:
            raise ConfigError(f"unknown montecarlo key {key!r}", line, source)
        if key == "consistency_grid":
            if not v:
                raise ConfigError("consistency_grid must be non-empty", line, source)
            try:
                v = tuple(tuple(int(x) for x in pair) for pair in v)
            except (TypeError, ValueError):
                v = ()
            if any(len(pair) != 2 or min(pair) < 1 for pair in v) or not v:
                raise ConfigError("consistency_grid entries must be [T, N] pairs", line, source)
            kwargs[key] = v
            continue
        try:
            if key in ("concentration_t_grid", "forecast_horizons"):
                v = _int_tuple(v, key)
                if not v or min(v) < 1:
                    raise ValueError(f"{key} must be non-empty positive integers")
            elif key == "concentration_gamma":
                v = float(v)
                if not v > 0:
                    raise ValueError("concentration_gamma must be positive")
            else:
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ValueError(f"{key} must be an integer")
                if v < (0 if key == "forecast_seeds" else 1):
                    raise ValueError(f"{key} is out of range")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), line, source) from None
        kwargs[key] = v
    return MonteCarloConfig(**kwargs)


def config_from_mapping(raw: dict, lines: dict[str, int] | None = None, source: str | None = None,
                        base_dir: Path | None = None) -> RunConfig:
    """Validate a parsed mapping; ``lines`` maps top-level keys to line numbers."""
    lines = lines or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of keys to values", 1, source)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", lines.get(key), source)

    kwargs = {}
    current = None
    try:
        for key in ("seed", "window_base", "cv_stride", "jobs"):
            if key in raw:
                current = key
                value = raw[key]
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ValueError(f"{key} must be an integer")
                if value < 1 and key != "seed":
                    raise ValueError(f"{key} must be >= 1")
                kwargs[key] = value
        if "gamma_grid" in raw:
            current = "gamma_grid"
            grid = tuple(float(g) for g in raw["gamma_grid"])
            if not grid or min(grid) <= 0:
                raise ValueError("gamma_grid must be non-empty positive numbers")
            kwargs["gamma_grid"] = grid
        grid = kwargs.get("gamma_grid", DEFAULT_GAMMA_GRID)
        if "methods" in raw:
            current = "methods"
            entries = raw["methods"]
            if not isinstance(entries, list):
                raise ValueError("methods must be a list")
            kwargs["methods"] = tuple(parse_method(e, grid) for e in entries)
        elif "gamma_grid" in kwargs:
            kwargs["methods"] = tuple(default_methods(grid))
        if "targets" in raw:
            current = "targets"
            t = raw["targets"]
            if isinstance(t, str):
                t = [t]
            if not isinstance(t, list) or not all(isinstance(x, str) for x in t):
                raise ValueError("targets must be a list of series names")
            if not t:
                raise ValueError("targets must be non-empty")
            kwargs["targets"] = tuple(t)
        if "horizons" in raw:
            current = "horizons"
            kwargs["horizons"] = _int_tuple(raw["horizons"], "horizons")
            if not kwargs["horizons"] or min(kwargs["horizons"]) < 1:
                raise ValueError("horizons must be a non-empty list of positive integers")
        if "maxima" in raw:
            current = "maxima"
            kwargs["maxima"] = _int_tuple(raw["maxima"], "maxima")
            if len(kwargs["maxima"]) != 3 or min(kwargs["maxima"]) < 1:
                raise ValueError("maxima must be three positive integers")
        for key in ("start", "end", "first_target"):
            if key in raw:
                current = key
                v = raw[key]
                kwargs[key] = None if v is None else str(v)
                if v is not None:
                    try:
                        parse_month(str(v))
                    except ValueError as exc:
                        raise ValueError(f"{key}: {exc}") from None
        for key in ("data_path", "output_dir"):
            if key in raw:
                current = key
                if raw[key] is None:
                    if key == "output_dir":
                        raise ValueError("output_dir may not be empty")
                    kwargs[key] = None
                    continue
                p = Path(str(raw[key]))
                if base_dir is not None and not p.is_absolute():
                    p = base_dir / p
                kwargs[key] = p
        if "montecarlo" in raw:
            current = "montecarlo"
            kwargs["montecarlo"] = _parse_montecarlo(raw["montecarlo"] or {}, lines, source)
        current = None
        return RunConfig(**kwargs)
    except ConfigError as exc:
        if exc.line is None and current is not None:
            raise ConfigError(str(exc), lines.get(current), source) from None
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), lines.get(current) if current else None, source) from None


def load_config(path) -> RunConfig:
    """Read and validate a YAML config.

    Relative ``data_path`` and ``output_dir`` entries resolve against the
    config file's directory.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, str(path)) from None
    if raw is None:
        raw = {}
    return config_from_mapping(raw, _key_lines(node), str(path), path.parent)
