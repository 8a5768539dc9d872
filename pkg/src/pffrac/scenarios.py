"""Benchmark presets and plain-text configuration overrides.

The two single-edge-notched presets share the material: lambda = 1.2115e5
N/mm^2, mu = 8.077e4 N/mm^2, G_c = 2.7 N/mm, kappa = 1e-10.  The mesh is
dyadic, so the published start resolutions (0.088 mm shear, 0.044 mm
tension) are realized as the closest achievable cell side (0.078125 mm at
5 pre-refinements, 0.0390625 mm at 6); epsilon and the estimator strip
couple to the realized value.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

from . import material as mat
from . import mesh as msh


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    lam: float = 1.2115e5       # N/mm^2
    mu: float = 8.077e4         # N/mm^2
    g_c: float = 2.7            # N/mm
    kappa: float = 1e-10
    dt: float = 1e-4            # s
    t_end: float = 0.0125       # s
    pre_refinements: int = 5
    eps_factor: float = 2.0
    theta: float = 0.5
    cycles: int = 1
    uniform_levels: Optional[int] = None
    h_start: float = field(default=None)   # realized cell side, mm
    epsilon: float = field(default=None)   # mm
    strip: float = field(default=None)     # mm

    def __post_init__(self):
        if self.h_start is None:
            side = msh.DOMAIN_SIZE / (msh.COARSE_DIVS * 2 ** self.pre_refinements)
            object.__setattr__(self, "h_start", side)
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", self.eps_factor * self.h_start)
        if self.strip is None:
            object.__setattr__(self, "strip", 4.0 * self.h_start)
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("theta must lie in (0, 1]")
        n = round(self.t_end / self.dt)
        if n < 1 or abs(n * self.dt - self.t_end) > 1e-12:
            raise ConfigError("dt must divide t_end")

    @property
    def n_steps(self) -> int:
        return round(self.t_end / self.dt)

    def times(self):
        return [k * self.dt for k in range(self.n_steps + 1)]

    def material(self) -> mat.MaterialParams:
        return mat.MaterialParams(mu=self.mu, lam=self.lam, g_c=self.g_c,
                                  kappa=self.kappa, epsilon=self.epsilon)


def preset(name: str) -> ScenarioConfig:
    """The single-edge-notched shear or tension benchmark."""
    if name == "shear":
        return ScenarioConfig(name="shear", dt=1e-4, t_end=0.0125,
                              pre_refinements=5)
    if name == "tension":
        return ScenarioConfig(name="tension", dt=1e-5, t_end=0.00676,
                              pre_refinements=6)
    raise ConfigError(f"unknown scenario {name!r}")


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key == "name":
        return raw
    if key in ("pre_refinements", "cycles", "uniform_levels"):
        return None if raw.lower() == "none" else int(raw)
    return float(raw)


def apply_overrides(config: ScenarioConfig, text: str) -> ScenarioConfig:
    """Apply ``key = value`` lines; unknown keys are errors.

    Overriding pre_refinements or eps_factor re-derives h_start, epsilon,
    and strip unless those are themselves overridden later in the file.
    """
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}")
    if not updates:
        return config
    # rederive the mesh-coupled quantities when their inputs change
    derived = ("h_start", "epsilon", "strip")
    if any(k in updates for k in ("pre_refinements", "eps_factor")):
        for k in derived:
            updates.setdefault(k, None)
    return replace(config, **updates)


def load_config_file(path, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if base is None:
        for line in text.splitlines():
            s = line.strip()
            if s.startswith("name"):
                base = preset(s.partition("=")[2].strip())
                break
        else:
            raise ConfigError("config file must name a scenario")
    return apply_overrides(base, text)
