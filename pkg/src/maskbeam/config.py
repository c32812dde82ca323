"""Flat key=value run configuration with command-line overrides.

A config file holds `key = value` lines (# comments and blank lines are
ignored); every key has a default visible via the describe subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .stft import StftConfig

MODES = ("noisy", "messl", "das", "lstm", "messl+lstm")


@dataclass
class RunConfig:
    # STFT framing
    window_size: int = 1024
    hop_size: int = 256
    window_kind: str = "sqrt_hann"
    # spatial clustering
    em_sources: int = 2
    em_iterations: int = 20
    em_tdoa_span: float = 0.0  # 0 -> window_size / 8
    em_tdoa_step: float = 0.5
    em_pair_pooling: bool = False
    # system selection
    mode: str = "messl+lstm"
    model_path: str = ""
    reference_channel: int = 4
    exclude_channels: tuple = ()
    # refiner architecture / training
    refiner_layers: int = 2
    refiner_units: int = 64
    dropout_rate: float = 0.5
    l2_coefficient: float = 1e-4
    learning_rate: float = 1e-3
    epochs: int = 100
    patience: int = 5
    batch_size: int = 8
    feature_norm: str = "corpus"  # or "utterance"
    # misc
    seed: int = 0
    cache_dir: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.feature_norm not in ("corpus", "utterance"):
            raise ValueError(f"feature_norm must be corpus or utterance, got {self.feature_norm!r}")
        if self.reference_channel in self.exclude_channels:
            raise ValueError("the reference channel cannot be excluded")

    def stft(self) -> StftConfig:
        return StftConfig(self.window_size, self.hop_size, self.window_kind)

    def tdoa_span(self):
        return self.em_tdoa_span if self.em_tdoa_span > 0 else self.window_size / 8.0


def _coerce(name, kind, raw):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip() != "")
        return kind(raw)
    except ValueError as err:
        raise ValueError(f"cannot parse {name}={raw!r} as {kind.__name__}") from err


_FIELD_TYPES = {
    f.name: (bool if isinstance(f.default, bool) else type(f.default))
    for f in fields(RunConfig)
}
_FIELD_TYPES["exclude_channels"] = tuple


def parse_assignments(pairs, base: RunConfig = None) -> RunConfig:
    """Apply `key=value` strings on top of a base config."""
    values = {f.name: getattr(base, f.name) for f in fields(RunConfig)} if base else {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"expected key=value, got {pair!r}")
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(key, _FIELD_TYPES[key], raw)
    return RunConfig(**values)


def load_config(path=None, overrides=()) -> RunConfig:
    """Config file (optional) plus override assignments, defaults elsewhere."""
    assignments = []
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {line!r}")
            assignments.append(stripped)
    cfg = parse_assignments(assignments, RunConfig())
    return parse_assignments(overrides, cfg)


def describe(cfg: RunConfig = None) -> str:
    """All settings as key = value lines (the file format itself)."""
    cfg = cfg or RunConfig()
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
