"""Run configuration: flat ``key = value`` files with dotted keys.

    # comment
    seed = 7
    data.dir = data
    text.filters_per_width = 128
    opt.image.epochs = 10
    policy.sweep = CP-3/2/1, CP-3/2/5

Command-line flags override file values; the environment is never read.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .fusion import PolicyConfig
from .optim import OptimizerSettings
from .tensor import ConfigError


def parse_value(raw: str):
    s = raw.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def parse_text(text: str) -> dict:
    """-> nested dict; later assignments win."""
    root: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        node = root
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"config line {lineno}: {key} conflicts with an earlier scalar")
        node[parts[-1]] = parse_value(value)
    return root


def _list(v, cast=str) -> list:
    if isinstance(v, (list, tuple)):
        return [cast(x) for x in v]
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return [cast(v)]
    return [cast(x.strip()) for x in str(v).split(",") if x.strip()]


def _blocks(v) -> tuple:
    """``2x32,2x64`` -> ((2, 32), (2, 64))."""
    out = []
    for item in _list(v):
        n, c = item.lower().split("x")
        out.append((int(n), int(c)))
    return tuple(out)


@dataclass
class TextSection:
    embed_dim: int = 100
    max_len: int = 40
    filter_widths: tuple = (3, 4, 5)
    filters_per_width: int = 128
    dropout_rate: float = 0.5
    q: float = 30.0


@dataclass
class ImageSection:
    input_size: int = 32
    conv_blocks: tuple = ((2, 32), (2, 64), (2, 128))
    fc_dims: tuple = (256,)
    q: float = 30.0


@dataclass
class FusionSection:
    head_layers: int = 1
    head_hidden: int = 256
    init_from_towers: bool = True
    q: float = 30.0


@dataclass
class RunConfig:
    seed: int = 7
    data_dir: str = "data"
    out: str = "run"
    split: tuple = (0.8, 0.1, 0.1)
    policy_dev_fraction: float = 0.2
    text: TextSection = field(default_factory=TextSection)
    image: ImageSection = field(default_factory=ImageSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    policy_sweep: list = field(default_factory=lambda: ["CP-3/2/1", "CP-3/2/5"])
    policy_hidden_units: int = 10
    opt_text: OptimizerSettings = field(default_factory=lambda: OptimizerSettings(epochs=10))
    opt_image: OptimizerSettings = field(default_factory=lambda: OptimizerSettings(epochs=10))
    opt_policy: OptimizerSettings = field(default_factory=lambda: OptimizerSettings(learning_rate=1e-2, epochs=20))
    opt_fusion: OptimizerSettings = field(default_factory=lambda: OptimizerSettings(epochs=5))
    base_dir: str = "."

    def policies(self) -> list[PolicyConfig]:
        return [PolicyConfig.parse(s, self.policy_hidden_units) for s in self.policy_sweep]

    def path(self, p: str) -> Path:
        pp = Path(p)
        return pp if pp.is_absolute() else Path(self.base_dir) / pp

    @property
    def data_path(self) -> Path:
        return self.path(self.data_dir)

    @property
    def out_path(self) -> Path:
        return self.path(self.out)

    def validate(self) -> None:
        if abs(sum(self.split) - 1) > 1e-9 or len(self.split) != 3:
            raise ConfigError(f"split fractions must be three numbers summing to 1, got {self.split}")
        if not 0 <= self.policy_dev_fraction < 1:
            raise ConfigError("policy_dev_fraction must be in [0, 1)")
        self.policies()


_SECTION_KEYS = {
    "text": (TextSection, {"filter_widths": lambda v: tuple(_list(v, int))}),
    "image": (ImageSection, {"conv_blocks": _blocks, "fc_dims": lambda v: tuple(_list(v, int))}),
    "fusion": (FusionSection, {}),
}


def _apply_section(obj, values: dict, converters: dict, name: str):
    known = {f.name for f in fields(obj)}
    updates = {}
    for k, v in values.items():
        if k not in known:
            raise ConfigError(f"unknown config key {name}.{k}")
        updates[k] = converters[k](v) if k in converters else v
    return replace(obj, **updates)


def from_dict(d: dict, base_dir: str = ".") -> RunConfig:
    cfg = RunConfig(base_dir=str(base_dir))
    for key, value in d.items():
        if key == "seed":
            cfg.seed = int(value)
        elif key == "out":
            cfg.out = str(value)
        elif key == "data":
            for k, v in value.items():
                if k == "dir":
                    cfg.data_dir = str(v)
                elif k == "split":
                    cfg.split = tuple(_list(v, float))
                else:
                    raise ConfigError(f"unknown config key data.{k}")
        elif key in _SECTION_KEYS:
            cls, conv = _SECTION_KEYS[key]
            setattr(cfg, key, _apply_section(getattr(cfg, key), value, conv, key))
        elif key == "policy":
            for k, v in value.items():
                if k == "sweep":
                    cfg.policy_sweep = _list(v)
                elif k == "hidden_units":
                    cfg.policy_hidden_units = int(v)
                elif k == "dev_fraction":
                    cfg.policy_dev_fraction = float(v)
                else:
                    raise ConfigError(f"unknown config key policy.{k}")
        elif key == "opt":
            for phase, settings in value.items():
                attr = f"opt_{phase}"
                if not hasattr(cfg, attr) or not isinstance(settings, dict):
                    raise ConfigError(f"unknown optimizer phase opt.{phase}")
                setattr(cfg, attr, _apply_section(getattr(cfg, attr), settings, {}, f"opt.{phase}"))
        else:
            raise ConfigError(f"unknown config key {key}")
    cfg.validate()
    return cfg


def load(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a config file (optional) and apply dotted-key overrides."""
    d: dict = {}
    base = "."
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(p)
        d = parse_text(p.read_text(encoding="utf-8"))
        base = str(p.parent)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = d
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return from_dict(d, base)


def dump(cfg: RunConfig) -> str:
    """Render ``cfg`` as a config file that ``load`` reads back."""
    lines = [
        f"seed = {cfg.seed}",
        f"data.dir = {cfg.data_dir}",
        f"data.split = {', '.join(f'{x:g}' for x in cfg.split)}",
        f"out = {cfg.out}",
    ]
    for section in ("text", "image", "fusion"):
        obj = getattr(cfg, section)
        for f in fields(obj):
            v = getattr(obj, f.name)
            if f.name == "conv_blocks":
                v = ", ".join(f"{n}x{c}" for n, c in v)
            elif isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{section}.{f.name} = {v}")
    lines.append(f"policy.sweep = {', '.join(cfg.policy_sweep)}")
    lines.append(f"policy.hidden_units = {cfg.policy_hidden_units}")
    lines.append(f"policy.dev_fraction = {cfg.policy_dev_fraction}")
    for phase in ("text", "image", "policy", "fusion"):
        s = getattr(cfg, f"opt_{phase}")
        for f in fields(s):
            lines.append(f"opt.{phase}.{f.name} = {getattr(s, f.name)}")
    return "\n".join(lines) + "\n"
