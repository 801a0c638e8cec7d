"""Experiment configuration: flat ``section.key = value`` text files.

Values use Python literal syntax (numbers, quoted strings, lists, tuples) plus
``true``/``false``.  Unknown keys are rejected so that misspellings never fall
back to defaults silently.  ``dump`` writes the normalised form, which loads
back to an identical config.
"""

from __future__ import annotations

import ast
import re
import hashlib
import math
import os
from dataclasses import dataclass

import numpy as np

from ..coupling import ConditionError, ControlSpec, validate_control
from ..model import ModelParams, NoiseSpec, PhysicalParams, params_from_physical
from ..spectral import Grid, LayerWeights, SpectralField


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key or condition."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


_num = (int, float)

# key -> (accepted types, default); ``None`` default marks optional keys
SCHEMA: dict[str, tuple[tuple, object]] = {
    "grid.L": (_num, 2 * math.pi),
    "grid.N": ((int,), 32),
    "model.nu": (_num, 0.01),
    "model.r": (_num, 0.0),
    "model.beta": (_num, 0.0),
    "model.h1": (_num, 1.0),
    "model.h2": (_num, 1.0),
    "model.F1": (_num, None),
    "model.F2": (_num, None),
    "model.f0": (_num, None),
    "model.g": (_num, None),
    "model.rho1": (_num, None),
    "model.rho2": (_num, None),
    "forcing.pattern": ((str,), "zero"),
    "forcing.amplitude": (_num, 0.0),
    "forcing.k": ((int,), 1),
    "forcing.modes": ((list, tuple), []),
    "noise.law": ((str,), "power"),
    "noise.c": (_num, 0.0),
    "noise.s": (_num, 0.0),
    "noise.k_max": ((int,), None),
    "noise.sigma": ((list, tuple), []),
    "control.a": (_num, None),
    "control.n": ((int,), None),
    "semimetric.alpha": (_num, None),
    "semimetric.N_scale": (_num, 1.0),
    "semimetric.gamma": (_num, None),
    "run.dt": (_num, 0.01),
    "run.T": (_num, 1.0),
    "run.sample_every": ((int,), 1),
    "run.ensemble": ((int,), 1),
    "run.pairs": ((int,), 32),
    "run.seed": ((int,), 0),
    "run.threads": ((int,), None),
    "run.init_energy": (_num, 1.0),
    "run.init_slope": (_num, 2.0),
    "run.coincident": ((bool,), False),
    "run.k0_trials": ((int,), 1000),
    "run.tail_runs": ((int,), 1024),
    "run.tail_T": (_num, 1.0),
    "run.contraction_t": (_num, None),
    "run.contraction_samples": ((int,), 64),
    "output.dir": ((str,), "out"),
    "output.formats": ((list, tuple), ["csv", "checkpoint", "json"]),
}

FORMATS = {"csv", "checkpoint", "json"}
PHYSICAL = ("model.f0", "model.g", "model.rho1", "model.rho2")


def _parse_value(raw: str, key: str):
    text = raw.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise ConfigError(key, f"cannot parse value {raw!r}") from None


_COMMENT = re.compile(r"\s+#[^'\"]*$")


def parse_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        s = _COMMENT.sub("", s)
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = s.split("=", 1)
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "given twice")
        values[key] = _parse_value(raw, key)
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        v = self.values.get(key)
        return default if v is None else v

    # -- derived objects ---------------------------------------------------------
    @property
    def grid(self) -> Grid:
        return Grid(float(self["grid.L"]), int(self["grid.N"]))

    @property
    def weights(self) -> LayerWeights:
        v = self.values
        if v["model.f0"] is not None:
            return params_from_physical(PhysicalParams(
                v["model.f0"], v["model.g"], v["model.rho1"], v["model.rho2"],
                v["model.h1"], v["model.h2"]))
        h1, h2 = v["model.h1"], v["model.h2"]
        F1 = v["model.F1"] if v["model.F1"] is not None else 1.0
        F2 = v["model.F2"] if v["model.F2"] is not None else F1 * h1 / h2
        return LayerWeights(h1, h2, F1, F2)

    def forcing(self, grid: Grid) -> SpectralField:
        pat = self["forcing.pattern"]
        if pat == "zero":
            return SpectralField.zeros(grid)
        if pat == "kolmogorov":
            # A sin(k y): zero mean by construction
            y = grid.x[1]
            u = self["forcing.amplitude"] * np.sin(self["forcing.k"] * 2 * np.pi / grid.L * y)
            return SpectralField.from_physical(grid, u)
        modes = np.zeros(grid.n_modes, dtype=complex)
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(grid.jx, grid.jy))}
        for entry in self["forcing.modes"]:
            jx, jy, c_re, c_im = entry
            if (jx, jy) == (0, 0):
                continue  # mean component projected out
            if (jx, jy) in lookup:
                modes[lookup[(jx, jy)]] += c_re + 1j * c_im
            elif (-jx, -jy) in lookup:
                modes[lookup[(-jx, -jy)]] += c_re - 1j * c_im
            else:
                raise ConfigError("forcing.modes", f"wavevector ({jx}, {jy}) outside the resolved box")
        return SpectralField(grid, modes)

    def noise(self, grid: Grid) -> NoiseSpec:
        if self["noise.law"] == "power":
            return NoiseSpec.power_law(grid, self["noise.c"], self["noise.s"], self["noise.k_max"])
        return NoiseSpec.from_list(grid, self["noise.sigma"])

    def model(self) -> ModelParams:
        g = self.grid
        return ModelParams(g, self.weights, nu=float(self["model.nu"]), r=float(self["model.r"]),
                           beta=float(self["model.beta"]), dt=float(self["run.dt"]),
                           f=self.forcing(g))

    def control(self) -> ControlSpec:
        a = self["control.a"] if self["control.a"] is not None else self["model.r"]
        n = self["control.n"]
        if n is None:
            n = auto_n(self.grid, self["model.nu"], a)
        return ControlSpec(float(a), int(n))

    @property
    def threads(self) -> int:
        return self.get("run.threads", os.cpu_count() or 1)

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        return build(dict(self.explicit(), **overrides))

    def explicit(self) -> dict:
        return {k: v for k, v in self.values.items() if v is not None}

    def dump(self) -> str:
        lines = []
        for key in SCHEMA:
            v = self.values[key]
            if v is None:
                continue
            if isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, tuple):
                text = repr(list(v))
            else:
                text = repr(v)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()


def auto_n(grid: Grid, nu: float, a: float) -> int:
    """Smallest number of controlled modes with ``nu - 2 a / lambda_n > 0``."""
    ok = np.nonzero(nu - 2 * a / grid.lam > 0)[0]
    if not len(ok):
        raise ConfigError("condition_n", "no resolved mode satisfies nu - 2 a / lambda_n > 0")
    return int(ok[0]) + 1


def _check_types(values: dict):
    for key, v in values.items():
        types, _ = SCHEMA[key]
        if v is None:
            continue
        if isinstance(v, bool) and bool not in types:
            raise ConfigError(key, f"expected {types[0].__name__}, got bool")
        if not isinstance(v, types):
            raise ConfigError(key, f"expected {'/'.join(t.__name__ for t in types)}, got {type(v).__name__}")


def _positive(values, *keys):
    for k in keys:
        if not values[k] > 0:
            raise ConfigError(k, f"must be positive, got {values[k]}")


def build(given: dict) -> ExperimentConfig:
    for k in given:
        if k not in SCHEMA:
            raise ConfigError(k, "unknown key")
    values = {k: given.get(k, default) for k, (_, default) in SCHEMA.items()}
    _check_types(values)
    for k, (types, _) in SCHEMA.items():
        if types is _num and values[k] is not None:
            values[k] = float(values[k])
        if isinstance(values[k], tuple):
            values[k] = list(values[k])
    _validate(values)
    return ExperimentConfig(values)


def _validate(v: dict):
    try:
        Grid(float(v["grid.L"]), v["grid.N"])
    except ValueError as e:
        raise ConfigError("grid.N" if "N" in str(e) else "grid.L", str(e)) from None
    _positive(v, "model.nu", "run.dt", "model.h1", "model.h2", "run.sample_every", "run.ensemble",
              "run.pairs", "run.k0_trials", "run.tail_runs", "run.contraction_samples",
              "semimetric.N_scale")
    for k in ("model.r", "run.T", "run.tail_T", "run.init_energy", "run.seed"):
        if v[k] < 0:
            raise ConfigError(k, f"must be non-negative, got {v[k]}")
    if v["semimetric.N_scale"] < 1:
        raise ConfigError("semimetric.N_scale", "must be >= 1")
    if v["run.contraction_samples"] > 128:
        raise ConfigError("run.contraction_samples", "at most 128 samples per ensemble")
    if v["run.threads"] is not None and v["run.threads"] < 1:
        raise ConfigError("run.threads", "must be >= 1")
    for k in ("run.T", "run.tail_T"):
        steps = v[k] / v["run.dt"]
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(k, f"must be a multiple of run.dt = {v['run.dt']}")
    phys = [k for k in PHYSICAL if v[k] is not None]
    if phys:
        if len(phys) != len(PHYSICAL):
            missing = sorted(set(PHYSICAL) - set(phys))
            raise ConfigError(missing[0], "physical parameters must be given together")
        if v["model.F1"] is not None or v["model.F2"] is not None:
            raise ConfigError("model.F1", "give either F1/F2 or the physical parameters, not both")
        if not v["model.rho1"] < v["model.rho2"]:
            raise ConfigError("model.rho1", "rho1 < rho2 required (denser upper layer is physically impossible)")
        _positive(v, "model.f0", "model.g")
    for k in ("model.F1", "model.F2"):
        if v[k] is not None and not v[k] > 0:
            raise ConfigError(k, f"must be positive, got {v[k]}")
    if v["forcing.pattern"] not in ("zero", "kolmogorov", "modes"):
        raise ConfigError("forcing.pattern", "must be one of zero, kolmogorov, modes")
    for m in v["forcing.modes"]:
        if not (isinstance(m, (list, tuple)) and len(m) == 4):
            raise ConfigError("forcing.modes", "entries must be (jx, jy, re, im)")
    if v["noise.law"] not in ("power", "list"):
        raise ConfigError("noise.law", "must be 'power' or 'list'")
    if v["noise.c"] < 0:
        raise ConfigError("noise.c", "must be non-negative")
    if any((not isinstance(s, _num)) or s < 0 for s in v["noise.sigma"]):
        raise ConfigError("noise.sigma", "entries must be non-negative numbers")
    if v["noise.k_max"] is not None and v["noise.k_max"] < 1:
        raise ConfigError("noise.k_max", "must be >= 1")
    if not set(v["output.formats"]) <= FORMATS:
        raise ConfigError("output.formats", f"allowed formats are {sorted(FORMATS)}")
    if v["semimetric.alpha"] is not None and not 0 < v["semimetric.alpha"] <= 0.5:
        raise ConfigError("semimetric.alpha", "must lie in (0, 1/2]")
    if v["semimetric.gamma"] is not None and not v["semimetric.gamma"] > 0:
        raise ConfigError("semimetric.gamma", "must be positive")
    cfg = ExperimentConfig(v)
    try:
        weights = cfg.weights
        p = cfg.model()
        spec = cfg.noise(p.grid)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("model", str(e)) from None
    del weights
    a = v["control.a"] if v["control.a"] is not None else v["model.r"]
    if v["control.a"] is not None or v["control.n"] is not None:
        if not a > 0:
            raise ConfigError("control.a", "control gain must be positive (defaults to model.r)")
        cs = cfg.control()
        try:
            validate_control(cs, p, spec)
        except ConditionError as e:
            raise ConfigError(e.condition, str(e)) from None
    if v["semimetric.gamma"] is not None and spec.trace > 0:
        lim = p.grid.lambda1**2 * p.nu / (2 * spec.trace)
        if not v["semimetric.gamma"] < lim:
            raise ConfigError("semimetric.gamma", f"must be below lambda1^2 nu / (2 Tr Q) = {lim:.6g} (kappa2 > 0)")


def loads(text: str) -> ExperimentConfig:
    return build(parse_text(text))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read())


def parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(item, "override must be key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if key not in SCHEMA:
        raise ConfigError(key, "unknown key")
    return key, _parse_value(raw, key)
