"""Strict INI experiment configuration.

Every key has a declared type and default. Unknown sections or keys, and values
that fail to parse, raise :class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(conv: Callable) -> Callable:
    def parse(s: str):
        items = [p.strip() for p in s.split(",") if p.strip()]
        return tuple(conv(p) for p in items)
    return parse


def _optional(conv: Callable) -> Callable:
    def parse(s: str):
        return None if s.strip().lower() in ("", "none") else conv(s)
    return parse


def _finite_float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"not a finite number: {s!r}")
    return v


def _choice(*options: str) -> Callable:
    def parse(s: str):
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {v!r}")
        return v
    return parse


def _choices(*options: str) -> Callable:
    one = _choice(*options)
    return _list(one)


_PATH = "path"
_ESTIMATORS = ("dv", "jsd", "infonce")

# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple[Any, str]]] = {
    "run": {
        "seed": (int, "0"),
        "dtype": (_choice("float32", "float64"), "float32"),
        "out_dir": (_PATH, "runs/out"),
    },
    "data": {
        "corr": (_list(_finite_float), "0, 0.3, 0.6, 0.9"),
        "dim": (int, "1"),
        "shuffled": (_bool, "false"),
        "n_train": (int, "4000"),
        "n_eval": (int, "2000"),
        "image_size": (int, "16"),
        "n_classes": (int, "8"),
        "patch_noise": (_finite_float, "3.0"),
        "pixel_noise": (_finite_float, "1.0"),
        "sizes": (_list(int), "8, 16, 32, 64, 128"),
        "draws": (int, "1000"),
        "dropout_rates": (_list(_finite_float), "0.3, 0.5, 0.7"),
        "rhos": (_list(_finite_float), "0, 0.5, 0.9, 0.99"),
        "features": (_PATH, ""),
        "labels": (_PATH, ""),
    },
    "model": {
        "critic": (_choice("concat", "separable"), "concat"),
        "hidden": (_list(int), "64, 64"),
        "widths": (_list(int), "32, 64"),
        "encoder_hidden": (int, "256"),
        "out_dim": (int, "64"),
        "scorer_width": (int, "256"),
        "global_scorer_width": (int, "128"),
        "coord_hidden": (_list(int), "512, 512"),
        "ndm_preprocess": (_choice("rank", "standardize", "none"), "rank"),
    },
    "objective": {
        "alpha": (_finite_float, "0"),
        "beta": (_finite_float, "1"),
        "gamma": (_finite_float, "0.1"),
        "estimator": (_choice(*_ESTIMATORS), "infonce"),
        "estimators": (_choices(*_ESTIMATORS), "dv, jsd, infonce"),
        "scorer": (_choice("concat-convolve", "encode-dot"), "encode-dot"),
        "occlude": (_bool, "false"),
        "abs_coord": (_finite_float, "0"),
        "rel_coord": (_finite_float, "0"),
        "negatives": (_optional(int), "none"),
        "negative_counts": (_list(int), "1, 4, 16, 64"),
    },
    "optimizer": {
        "lr0": (_finite_float, "1e-3"),
        "schedule": (_choice("constant", "exponential"), "constant"),
        "decay_rate": (_finite_float, "0.5"),
        "decay_interval": (int, "1000"),
        "steps": (int, "500"),
        "batch_size": (int, "64"),
        "prior_lr": (_optional(_finite_float), "none"),
        "beta1": (_finite_float, "0.9"),
        "beta2": (_finite_float, "0.999"),
    },
    "eval": {
        "probes": (_choices("linear", "mlp200"), "linear"),
        "probe_epochs": (int, "30"),
        "random_baseline": (_bool, "true"),
        "ndm": (_bool, "false"),
        "mine": (_bool, "false"),
        "mine_steps": (int, "300"),
        "gradcheck_seeds": (int, "20"),
        "gradcheck_tol": (_finite_float, "1e-4"),
    },
}

# Defaults that differ by subcommand; applied below the file and --set layers.
SUBCOMMAND_DEFAULTS: dict[str, dict[str, str]] = {
    "train-dim": {"optimizer.steps": "800", "optimizer.batch_size": "32"},
    "ndm": {"model.hidden": "512, 512", "optimizer.lr0": "1e-4", "optimizer.steps": "600",
            "optimizer.batch_size": "128"},
    "negsweep": {"data.corr": "0.9", "objective.estimators": "infonce, jsd", "optimizer.batch_size": "72"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict            # section -> {key: parsed value}
    source: str | None      # config path, if any

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def snapshot(self) -> dict:
        """JSON-friendly copy (tuples become lists)."""
        return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in kv.items()}
                for s, kv in self.values.items()}


def _check_key(section: str, key: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(section, "unknown section")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{section}.{key}", "unknown key")


def parse_override(text: str) -> tuple[str, str, str]:
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(text, "override must look like section.key=value")
    dotted, value = text.split("=", 1)
    section, key = dotted.strip().split(".", 1)
    _check_key(section, key)
    return section, key, value.strip()


def load_config(path=None, overrides=(), subcommand: str | None = None, base_dir=None) -> ExperimentConfig:
    """Merge schema defaults, subcommand defaults, the INI file and ``section.key=value`` overrides.

    Relative paths from the file resolve against its directory; paths from
    defaults or overrides resolve against ``base_dir`` (default: the working
    directory).
    """
    raw = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for dotted, text in SUBCOMMAND_DEFAULTS.get(subcommand or "", {}).items():
        s, k = dotted.split(".", 1)
        raw[s][k] = text

    cwd = Path(base_dir) if base_dir is not None else Path.cwd()
    roots = {}
    if path is not None:
        p = Path(path)
        parser = configparser.ConfigParser(interpolation=None, strict=True, default_section="\x00none")
        parser.optionxform = str
        try:
            with open(p, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError("--config", f"no such file: {p}") from None
        except configparser.Error as exc:
            raise ConfigError("--config", str(exc).replace("\n", " ")) from None
        for section in parser.sections():
            for key, value in parser.items(section):
                _check_key(section, key)
                raw[section][key] = value
                roots[(section, key)] = p.resolve().parent

    for text in overrides:
        s, k, v = parse_override(text)
        raw[s][k] = v
        roots.pop((s, k), None)

    values: dict[str, dict] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, _) in keys.items():
            text = raw[section][key]
            if conv == _PATH:
                root = roots.get((section, key), cwd)
                values[section][key] = str((root / text.strip()).resolve()) if text.strip() else ""
                continue
            try:
                values[section][key] = conv(text)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}.{key}", str(exc)) from None
    return ExperimentConfig(values, str(Path(path).resolve()) if path is not None else None)
