"""Model configuration flags and prior scales, with a flat key=value format."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, fields, replace

from ..errors import InvalidConfig

CORE_FLAGS = ("use_ta", "use_ts", "use_jump", "use_step")
EXTENDED_FLAGS = ("use_lay", "use_float", "use_rim", "use_fade")

# which slope covers which shot type; jump/step vary by area, the rest are team-level
SLOPE_SHOT_TYPE = {
    "jump": "jump_shot",
    "step": "step_pull",
    "lay": "lay_up",
    "float": "floater",
    "rim": "rim_finishes",
    "fade": "fade_turn",
}
AREA_SLOPES = ("jump", "step")
TEAM_SLOPES = ("lay", "float", "rim", "fade")


@dataclass(frozen=True)
class ModelConfig:
    use_ta: bool = True
    use_ts: bool = True
    use_jump: bool = True
    use_step: bool = True
    use_lay: bool = False
    use_float: bool = False
    use_rim: bool = False
    use_fade: bool = False
    U_sd: float = 1.5
    U_slope: float = 1.0
    alpha_prec: float = 0.05
    V_cor: float = 0.7
    alpha_cor: float = 0.7
    fixed_effect_sd: float = 100.0
    ridge_sd: float = 31.62
    # one sum-to-zero per (area, season) across teams instead of one global sum
    strict_area_constraints: bool = False

    def __post_init__(self):
        for name in CORE_FLAGS + EXTENDED_FLAGS + ("strict_area_constraints",):
            object.__setattr__(self, name, bool(getattr(self, name)))
        if self.extended and not (self.use_ta and self.use_jump and self.use_step):
            raise InvalidConfig("extended team-level slopes require use_ta, use_jump and use_step")
        for name in ("U_sd", "U_slope", "fixed_effect_sd", "ridge_sd"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        for name in ("alpha_prec", "alpha_cor", "V_cor"):
            if not 0 < getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must lie in (0, 1)")

    @property
    def extended(self) -> bool:
        return any(getattr(self, f) for f in EXTENDED_FLAGS)

    @property
    def slopes(self) -> tuple[str, ...]:
        """Enabled slope names in canonical order."""
        flags = {"jump": self.use_jump, "step": self.use_step, "lay": self.use_lay,
                 "float": self.use_float, "rim": self.use_rim, "fade": self.use_fade}
        return tuple(m for m in SLOPE_SHOT_TYPE if flags[m])

    def flags(self, names=CORE_FLAGS + EXTENDED_FLAGS) -> tuple[int, ...]:
        return tuple(int(getattr(self, n)) for n in names)

    def label(self) -> str:
        on = [f for f in CORE_FLAGS + EXTENDED_FLAGS if getattr(self, f)]
        return "+".join(f[4:] for f in on) or "null"

    def with_priors(self, U_sd: float, U_slope: float) -> "ModelConfig":
        return replace(self, U_sd=U_sd, U_slope=U_slope)

    # -- key=value serialization ----------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={int(v) if isinstance(v, bool) else repr(float(v))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls.from_mapping(parse_kv(text))

    @classmethod
    def from_mapping(cls, kv: dict) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in kv.items():
            if key not in types:
                raise InvalidConfig(f"unknown config key {key!r}")
            if types[key] in ("bool", bool):
                kwargs[key] = _parse_bool(raw)
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return asdict(self)


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    s = str(raw).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"not a boolean: {raw!r}")


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def core_configs(U_sd: float = 1.5, U_slope: float = 1.0, **kw) -> list[ModelConfig]:
    """The 16 core structures, ordered by (use_ta, use_ts, use_jump, use_step)."""
    return [
        ModelConfig(**dict(zip(CORE_FLAGS, bits)), U_sd=U_sd, U_slope=U_slope, **kw)
        for bits in itertools.product((False, True), repeat=4)
    ]


def extended_configs(U_sd: float = 1.5, U_slope: float = 1.0, **kw) -> list[ModelConfig]:
    """The 32 extended structures: use_ts times the four team-level slope flags."""
    names = ("use_ts",) + EXTENDED_FLAGS
    return [
        ModelConfig(use_ta=True, use_jump=True, use_step=True, **dict(zip(names, bits)),
                    U_sd=U_sd, U_slope=U_slope, **kw)
        for bits in itertools.product((False, True), repeat=5)
    ]


MINIMAL = ModelConfig(use_ta=False, use_ts=False, use_jump=False, use_step=False)
FULL_CORE = ModelConfig()
