"""Experiment configuration: nested dataclasses <-> YAML with unit-suffixed keys."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .channel import ChannelSpec
from .csi_synth import NUM_CLASSES, SceneSpec
from .dfs import PipelineConfig, StftConfig, num_frames
from .errors import ConfigError, DomainError
from .nn import TrainConfig


@dataclass(frozen=True)
class QuantizerConfig:
    clip: float = 3.0


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneSpec = field(default_factory=lambda: SceneSpec(num_paths=2))
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    train_device: TrainConfig = field(default_factory=TrainConfig)
    train_server: TrainConfig = field(default_factory=TrainConfig)
    split_ratio: float = 0.9
    n_events: int = 600
    base_seed: int = 7
    baselines: tuple = ("single_view", "multi_view")
    single_view_device: int = 0

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.n_events < NUM_CLASSES or self.n_events % NUM_CLASSES:
            raise ConfigError(f"n_events must be a positive multiple of {NUM_CLASSES}")
        if self.channel.num_devices != self.scene.num_devices:
            raise ConfigError("channel.num_devices must equal scene.num_devices")
        for b in self.baselines:
            if b not in ("single_view", "multi_view"):
                raise ConfigError(f"unknown baseline {b!r}")
        if not 0 <= self.single_view_device < self.scene.num_devices:
            raise ConfigError("single_view_device out of range")
        self.check_pipeline()

    def check_pipeline(self):
        f_s = self.scene.sample_rate_hz
        st = self.pipeline.stft
        if not 0 < self.pipeline.band_low_hz < self.pipeline.band_high_hz < f_s / 2:
            raise ConfigError(f"filter band invalid at sample rate {f_s:g} Hz")
        if st.max_freq_hz > f_s / 2:
            raise ConfigError(f"max_freq_hz {st.max_freq_hz} above Nyquist {f_s / 2:g}")
        S = self.scene.num_samples
        if st.window_len > S:
            raise ConfigError(f"STFT window {st.window_len} longer than series ({S} samples)")
        if num_frames(S, st.window_len, st.hop) == 0:
            raise ConfigError("STFT config yields zero frames")
        if self.pipeline.kernel_len >= S:
            raise ConfigError("filter kernel longer than series")

    @property
    def spectro_shape(self):
        st = self.pipeline.stft
        return num_frames(self.scene.num_samples, st.window_len, st.hop), st.num_freq_bins

    def device_train_config(self, device_id: int) -> TrainConfig:
        return dataclasses.replace(self.train_device, seed=self.base_seed + device_id)

    def server_train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train_server, seed=self.base_seed + 1000)

    def baseline_train_config(self, tag: int) -> TrainConfig:
        return dataclasses.replace(self.train_server, seed=self.base_seed + 2000 + tag)


def to_dict(cfg) -> dict:
    def conv(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: conv(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [conv(v) for v in obj]
        return obj
    return conv(cfg)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys under {path or 'top level'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = _NESTED.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{path}{name}.")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = _coerce(value)
    try:
        return cls(**kwargs)
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(value):
    # YAML 1.1 reads exponent floats without a dot (1e-3) as strings
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    return value


_NESTED = {
    (ExperimentConfig, "scene"): SceneSpec,
    (ExperimentConfig, "pipeline"): PipelineConfig,
    (ExperimentConfig, "channel"): ChannelSpec,
    (ExperimentConfig, "quantizer"): QuantizerConfig,
    (ExperimentConfig, "train_device"): TrainConfig,
    (ExperimentConfig, "train_server"): TrainConfig,
    (PipelineConfig, "stft"): StftConfig,
}


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.sub=value`` strings; values are parsed as YAML scalars."""
    data = yaml.safe_load(yaml.safe_dump(data))  # deep copy
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r}: unknown key")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=()) -> ExperimentConfig:
    data = to_dict(ExperimentConfig())
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data = _merge(data, loaded)
    return from_dict(apply_overrides(data, overrides))


def _merge(base, new):
    out = dict(base)
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
