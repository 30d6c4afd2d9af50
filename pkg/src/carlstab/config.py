"""Experiment configuration: one INI file, schema-validated, CLI-overridable.

Every physical and numerical knob lives in the config: grid, time grid,
observation boxes, weight parameters, coefficient draws, per-suite corpus
sizes, and the run seed.  `--set section.key=value` overrides individual
entries.  Validation failures carry field-level paths and map to exit code 2
at the CLI.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from .errors import ConfigError


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _parse_interval(text: str) -> tuple[float, float]:
    lo, _, hi = text.partition(":")
    return float(lo), float(hi)


_PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": str,
    "int_list": _parse_int_list,
    "float_list": _parse_float_list,
    "interval": _parse_interval,
}

# section -> key -> (type, default)
SCHEMA = {
    "grid": {
        "d": ("int", 1),
        "n": ("int", 15),
    },
    "time": {
        "t_final": ("float", 1.0),
        "steps": ("int", 512),
    },
    "domain": {
        "omega": ("interval", (0.2, 0.8)),
        "omega0": ("interval", (0.35, 0.65)),
    },
    "weights": {
        "lambda": ("float", 2.0),
        "c0": ("float", 2.0),
        "kappa": ("float", 1.1),
        "tau": ("float", 3.0),
        "delta": ("float", 0.5),
        "epsilon": ("float", 0.5),
        "tau0": ("float", 1.0),
        "hat_margin": ("float", 0.1),
    },
    "coefficients": {
        "time_dependent": ("bool", False),
        "gamma_amp": ("float", 0.4),
        "b_amp": ("float", 0.0),
        "c_amp": ("float", 1.0),
    },
    "verify_ops": {
        "fields": ("int", 200),
        "n_min": ("int", 3),
        "n_max": ("int", 20),
    },
    "converge": {
        "spatial_grids": ("int_list", (7, 15, 31)),
        "spatial_steps": ("int", 2048),
        "temporal_steps": ("int_list", (32, 64, 128)),
        "manufactured_steps": ("int", 4096),
        "t_final": ("float", 0.25),
    },
    "energy": {
        "runs": ("int", 100),
        "steps": ("int", 128),
        "b_amp": ("float", 0.5),
    },
    "carleman": {
        "runs": ("int", 50),
        "grids": ("int_list", (15, 31)),
        "steps": ("int", 256),
        "tau_min": ("float", 2.2),
        "tau_max": ("float", 3.8),
        "b_amp": ("float", 0.3),
        "feasibility_grids": ("int_list", (15, 31, 63)),
        "feasibility_taus": ("float_list", (2.5, 4.0, 8.0)),
        "feasibility_deltas": ("float_list", (0.125, 0.25, 0.5)),
        "feasibility_runs": ("int", 2),
        "feasibility_tau1": ("float", 2.5),
        "feasibility_eps0": ("float", 0.5),
    },
    "stability": {
        "runs": ("int", 50),
        "grids": ("int_list", (15, 31)),
        "steps": ("int", 256),
        "decay_grids": ("int_list", (15, 31, 63)),
        "decay_steps": ("int", 256),
        "tau1": ("float", 2.5),
        "eps0": ("float", 0.5),
        "decay_lambda": ("float", 1.0),
    },
    "reconstruct": {
        "n": ("int", 15),
        "steps": ("int", 256),
        "beta": ("float", 1e-10),
        "noise": ("float", 0.0),
        "beta_sweep_decades": ("int", 6),
        "coeff_n": ("int", 31),
        "coeff_steps": ("int", 2048),
        "coeff_alpha": ("float", 0.02),
        "coeff_t_final": ("float", 0.2),
    },
    "run": {
        "seed": ("int", 20240901),
        "workers": ("int", 1),
        "out": ("str", "runs"),
    },
}


@dataclass
class Config:
    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def snapshot_text(self) -> str:
        """Fully resolved INI text; re-running from it reproduces the run."""
        buf = io.StringIO()
        for section in SCHEMA:
            buf.write(f"[{section}]\n")
            for key in SCHEMA[section]:
                val = self.values[section][key]
                if isinstance(val, tuple) and len(val) == 2 and all(isinstance(v, float) for v in val) \
                        and SCHEMA[section][key][0] == "interval":
                    text = f"{val[0]!r}:{val[1]!r}"
                elif isinstance(val, tuple):
                    text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
                elif isinstance(val, float):
                    text = repr(val)
                else:
                    text = str(val)
                buf.write(f"{key} = {text}\n")
            buf.write("\n")
        return buf.getvalue()


def default_config() -> Config:
    return Config({s: {k: v for k, (_, v) in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(path: str | None = None, overrides=()) -> Config:
    """Load, override, and validate a configuration.

    Raises ConfigError listing every offending `section.key` with its reason.
    """
    cfg = default_config()
    problems = []
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found or unreadable: {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                problems.append(f"{section}: unknown section")
                continue
            for key, raw in parser.items(section):
                _apply(cfg, section, key, raw, problems)
    for ov in overrides:
        target, _, raw = ov.partition("=")
        if not _ or "." not in target:
            problems.append(f"{ov!r}: overrides take the form section.key=value")
            continue
        section, _, key = target.partition(".")
        if section not in SCHEMA:
            problems.append(f"{section}: unknown section")
            continue
        _apply(cfg, section, key.strip(), raw.strip(), problems)
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    _validate(cfg)
    return cfg


def _apply(cfg: Config, section: str, key: str, raw: str, problems: list):
    spec = SCHEMA[section].get(key)
    if spec is None:
        problems.append(f"{section}.{key}: unknown key")
        return
    try:
        cfg.values[section][key] = _PARSERS[spec[0]](raw)
    except (ValueError, TypeError) as exc:
        problems.append(f"{section}.{key}: cannot parse {raw!r} as {spec[0]} ({exc})")


def _validate(cfg: Config):
    problems = []
    if not 1 <= cfg.get("grid", "d") <= 3:
        problems.append("grid.d: must be in [1, 3]")
    if cfg.get("grid", "n") < 1:
        problems.append("grid.n: must be >= 1")
    if cfg.get("time", "t_final") <= 0:
        problems.append("time.t_final: must be positive")
    if cfg.get("time", "steps") < 2 or cfg.get("time", "steps") % 2:
        problems.append("time.steps: must be even and >= 2 (mid-time frame needed)")
    lo, hi = cfg.get("domain", "omega")
    lo0, hi0 = cfg.get("domain", "omega0")
    if not 0.0 < lo < hi < 1.0:
        problems.append("domain.omega: must satisfy 0 < lo < hi < 1")
    elif not lo < lo0 < hi0 < hi:
        problems.append("domain.omega0: must be strictly inside domain.omega")
    if not 0 < cfg.get("weights", "delta") <= 0.5:
        problems.append("weights.delta: must be in (0, 1/2]")
    if cfg.get("weights", "lambda") < 1:
        problems.append("weights.lambda: must be >= 1")
    if cfg.get("weights", "tau") < 1:
        problems.append("weights.tau: must be >= 1")
    if cfg.get("run", "workers") < 1:
        problems.append("run.workers: must be >= 1")
    if cfg.get("reconstruct", "noise") < 0:
        problems.append("reconstruct.noise: must be >= 0")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
