"""INI experiment configs: ``[experiment]``, ``[data]``, ``[train]`` and ``[bound]`` sections.

Values can be overridden from the command line with ``section.key=value``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields

from .bound import MAX_ATOMS, MAX_DU, MAX_DX, BoundConfig
from .classifier import TrainConfig
from .errors import ConfigError, DeskScaleError

DEFAULT_LAMBDAS = (0.0, 0.001, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
DEFAULT_RBM_LAMBDAS = tuple(10.0 ** (-5 + 5 * i / 8) for i in range(9))

DATA_KINDS = ("mnist", "cifar10", "synthetic", "cache")


@dataclass
class DataConfig:
    kind: str = "synthetic"
    path: str = ""  # MNIST directory, CIFAR batch files (comma separated) or cache stem
    n_train: int = 2000
    n_test: int = 20000
    subset_seed: int = -1  # -1 -> experiment seed
    synthetic: str = "benchmark"  # benchmark | uniform
    synthetic_dim: int = 2
    test_batches: str = ""  # CIFAR-10 test batch file(s)


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs"
    replicates: int = 3
    lambdas: tuple = ()
    jobs: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bound: BoundConfig = field(default_factory=BoundConfig)

    @property
    def lambda_grid(self):
        if self.lambdas:
            return tuple(sorted(self.lambdas))
        return DEFAULT_RBM_LAMBDAS if self.train.encoder == "rbm" else DEFAULT_LAMBDAS

    @property
    def data_seed(self):
        return self.seed if self.data.subset_seed < 0 else self.data.subset_seed

    def check_desk_scale(self):
        """Bound-lab limits; raised before any data is loaded or model trained."""
        if self.data.kind != "synthetic":
            raise DeskScaleError("bound evaluation needs a synthetic source")
        d = self.data.synthetic_dim
        if d > MAX_DX:
            raise DeskScaleError(f"d_x={d} exceeds the bound-lab limit {MAX_DX}")
        if self.train.d_u > MAX_DU:
            raise DeskScaleError(f"d_u={self.train.d_u} exceeds the bound-lab limit {MAX_DU}")
        if self.train.encoder == "rbm":
            raise DeskScaleError("bound evaluation needs a continuous (gaussian or lognormal) encoder")
        worst = max(self.bound.per_axis) ** d
        if worst > MAX_ATOMS:
            raise DeskScaleError(f"K={worst} exceeds the {MAX_ATOMS}-atom limit")


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _coerce(cls_fields, key, raw, section):
    if key not in cls_fields:
        raise ConfigError(f"unknown key {section}.{key}")
    f = cls_fields[key]
    default = f.default
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return _ints(raw) if default and isinstance(default[0], int) else _floats(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc


def _section(parser, name, cls, overrides):
    cls_fields = {f.name: f for f in fields(cls)}
    # tuples with empty defaults are typed by name
    kwargs = {}
    items = dict(parser.items(name)) if parser.has_section(name) else {}
    items.update(overrides.get(name, {}))
    for key, raw in items.items():
        if key in ("per_axis",):
            kwargs[key] = _ints(raw)
        elif key in ("betas",):
            kwargs[key] = _floats(raw)
        else:
            kwargs[key] = _coerce(cls_fields, key, raw, name)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


SECTIONS = ("experiment", "data", "train", "bound")


def parse_overrides(pairs) -> dict:
    out: dict = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        if "." not in key:
            raise ConfigError(f"override key {key!r} needs a section prefix, e.g. train.lam")
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r} in override")
        out.setdefault(section, {})[name.strip()] = value
    return out


def load_config(path=None, overrides=(), seed=None, text=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            with open(path) as fh:
                parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for s in parser.sections():
        if s not in SECTIONS:
            raise ConfigError(f"unknown section [{s}]")
    ov = parse_overrides(overrides)

    exp = dict(parser.items("experiment")) if parser.has_section("experiment") else {}
    exp.update(ov.get("experiment", {}))
    known = {"seed", "out", "replicates", "lambdas", "jobs"}
    for k in exp:
        if k not in known:
            raise ConfigError(f"unknown key experiment.{k}")
    try:
        base_seed = int(exp.get("seed", 0)) if seed is None else int(seed)
        replicates = int(exp.get("replicates", 3))
        lambdas = _floats(exp["lambdas"]) if "lambdas" in exp else ()
        jobs = int(exp.get("jobs", 1))
    except ValueError as exc:
        raise ConfigError(f"bad value in [experiment]: {exc}") from exc
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    if any(l < 0 or not math.isfinite(l) for l in lambdas):
        raise ConfigError("lambda grid must be nonnegative and finite")

    data = _section(parser, "data", DataConfig, ov)
    if data.kind not in DATA_KINDS:
        raise ConfigError(f"unknown data kind {data.kind!r}; expected one of {DATA_KINDS}")
    train_ov = dict(ov)
    train_ov.setdefault("train", {})
    train_ov["train"] = {**train_ov["train"], "seed": str(base_seed)}
    train = _section(parser, "train", TrainConfig, train_ov)
    bound = _section(parser, "bound", BoundConfig, ov)
    return ExperimentConfig(base_seed, exp.get("out", "runs"), replicates, lambdas, jobs, data, train, bound)
