"""Tool-wide defaults, overridable from a ``key=value`` file, flags and the environment."""
import os
from dataclasses import asdict, dataclass, fields

WORKERS_ENV = "PARSPEECH_WORKERS"


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ToolConfig:
    sample_rate: int = 16000
    frame_period: float = 0.01
    workers: int = 1
    seed: int = 0

    def items(self):
        return asdict(self).items()

    def replace(self, **overrides):
        values = asdict(self)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ToolConfig(**values)


def parse_key_values(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_tool_config(path=None, **overrides):
    """Defaults, then the environment worker count, then the file, then explicit overrides."""
    types = {f.name: f.type for f in fields(ToolConfig)}
    casts = {"int": int, "float": float, int: int, float: float}
    values = {"workers": default_workers()}
    if path:
        with open(path) as f:
            for key, value in parse_key_values(f.read()).items():
                if key not in types:
                    raise ValueError(f"unknown config key {key!r}")
                values[key] = casts[types[key]](value)
    return ToolConfig().replace(**values).replace(**overrides)
