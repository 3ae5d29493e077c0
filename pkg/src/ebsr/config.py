"""Plain-text run configuration: ``[model]``, ``[train]``, ``[eval]`` and ``[paths]`` sections.

Every key has a default; unknown sections or keys are errors.  ``dumps``
emits the canonical form (all keys, fixed order), and parsing that text
gives back an equal configuration.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .network import ConfigError, ModelConfig
from .training import TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _opt_str(s: str):
    return None if s.strip().lower() in ("", "none") else s.strip()


def _bits(s: str):
    if s.strip().lower() in ("", "none"):
        return None
    parts = s.replace("x", ",").split(",")
    return tuple(int(p) for p in parts)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class EvalSettings:
    dataset: str | None = None
    shave: int | None = None  # None: shave = scale
    y_only: bool = True


@dataclass
class PathSettings:
    train_dir: str | None = None
    out_dir: str = "runs"
    synthetic_images: int = 0
    synthetic_size: int = 192
    synthetic_seed: int = 0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    paths: PathSettings = field(default_factory=PathSettings)


_PARSERS = {
    "model": {
        "blocks": int, "channels": int, "scale": int, "variant": str, "sq_bits": _bits,
        "reduction": int, "rho": float, "tail": str, "shift_mode": str, "ste_mode": str, "seed": int,
    },
    "train": {
        "patch": int, "batch": int, "lr0": float, "halve_every": int, "beta1": float, "beta2": float,
        "eps": float, "steps": int, "steps_per_epoch": _opt_int, "seed": int, "fixed_batch": _bool,
        "augment": _bool, "checkpoint_every": int, "log_every": int,
    },
    "eval": {"dataset": _opt_str, "shave": _opt_int, "y_only": _bool},
    "paths": {
        "train_dir": _opt_str, "out_dir": str, "synthetic_images": int, "synthetic_size": int,
        "synthetic_seed": int,
    },
}


def _section_values(cfg: RunConfig, section: str) -> dict:
    if section == "model":
        d = {f.name: getattr(cfg.model, f.name) for f in fields(ModelConfig)}
        d["seed"] = cfg.seed
        return d
    if section == "train":
        t = cfg.train
        d = {k: getattr(t, k) for k in _PARSERS["train"] if hasattr(t, k)}
        d["beta1"], d["beta2"] = t.betas
        return d
    obj = cfg.eval if section == "eval" else cfg.paths
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def loads(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values: dict[str, dict] = {s: {} for s in _PARSERS}
    for section in cp.sections():
        if section not in _PARSERS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _PARSERS[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = _PARSERS[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {exc}") from exc

    mv = dict(values["model"])
    seed = mv.pop("seed", 0)
    try:
        model = ModelConfig(**mv)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    tv = dict(values["train"])
    betas = (tv.pop("beta1", 0.9), tv.pop("beta2", 0.999))
    train = TrainConfig(betas=betas, **tv)
    if train.steps < 0 or train.batch < 1 or train.patch < 1 or train.lr0 <= 0:
        raise ConfigError(f"{source}: train.steps must be >= 0, batch/patch >= 1 and lr0 > 0")
    return RunConfig(model, seed, train, EvalSettings(**values["eval"]), PathSettings(**values["paths"]))


def load(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return loads(p.read_text(), source=str(p))


def dumps(cfg: RunConfig) -> str:
    """Canonical text form: every section and key, in schema order."""
    out = []
    for section, keys in _PARSERS.items():
        vals = _section_values(cfg, section)
        out.append(f"[{section}]")
        out += [f"{k} = {_fmt(vals[k])}" for k in keys]
        out.append("")
    return "\n".join(out)
