"""Synthetic multi-view WiFi CSI with class-specific Doppler trajectories.

Each event is one gesture observed by ``K`` devices. All devices share the
same Doppler track realization; path gains and delay phases are drawn per
device, so the views differ in geometry but not in motion.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DomainError

NUM_CLASSES = 6
CLASS_NAMES = ("push-pull", "sweep", "clap", "slide", "draw zig-zag", "draw N")
MAX_DOPPLER_HZ = 60.0
JITTER = 0.10


@dataclass(frozen=True)
class SceneSpec:
    num_devices: int = 3
    num_antennas: int = 3
    num_subcarriers: int = 30
    num_paths: int = 3
    sample_interval_s: float = 1e-3
    duration_s: float = 2.0
    carrier_freq_hz: float = 5.825e9  # documentation only
    static_path_gain: float = 1.0
    dynamic_path_gain: float = 0.5
    phase_error_std_rad: float = 0.5
    noise_std: float = 0.02

    def __post_init__(self):
        if self.num_devices < 1:
            raise DomainError("num_devices must be >= 1")
        if self.num_antennas < 2:
            raise DomainError("num_antennas must be >= 2")
        if self.num_subcarriers < 1:
            raise DomainError("num_subcarriers must be >= 1")
        if self.num_paths < 2:
            raise DomainError("num_paths must be >= 2 (one static, one dynamic)")
        if self.sample_interval_s <= 0 or self.duration_s <= 0:
            raise DomainError("sample_interval_s and duration_s must be positive")
        if min(self.static_path_gain, self.dynamic_path_gain, self.noise_std,
               self.phase_error_std_rad) < 0:
            raise DomainError("gains and noise levels must be non-negative")
        num_samples(self.duration_s, self.sample_interval_s)

    @property
    def num_samples(self) -> int:
        return num_samples(self.duration_s, self.sample_interval_s)

    @property
    def sample_rate_hz(self) -> float:
        return 1.0 / self.sample_interval_s


def num_samples(duration_s: float, dt: float) -> int:
    """S = T / dt, which must be a positive integer."""
    ratio = duration_s / dt
    s = int(round(ratio))
    if s < 1 or abs(ratio - s) > 1e-9 * max(1.0, ratio):
        raise DomainError(f"duration {duration_s} s is not a positive multiple of {dt} s")
    return s


@dataclass(frozen=True)
class DopplerTrack:
    class_id: int
    samples: np.ndarray  # instantaneous DFS in Hz, length S
    sample_interval_s: float


@dataclass(frozen=True)
class CsiTensor:
    data: np.ndarray  # complex, (S, N, M)
    device_id: int
    label: int


def template(class_id: int, tau, duration_s: float):
    """Noise-free DFS template (Hz) of a gesture class at times ``tau``."""
    tau = np.asarray(tau, dtype=float)
    T = duration_s
    if class_id == 0:  # push-pull
        return 40.0 * np.sin(2 * np.pi * 1.0 * tau)
    if class_id == 1:  # sweep: linear chirp 10 -> 50 Hz
        return 10.0 + 40.0 * tau / T
    if class_id == 2:  # clap: two bursts of opposite sign
        w = T / 20
        return (50.0 * np.exp(-0.5 * ((tau - T / 3) / w) ** 2)
                - 50.0 * np.exp(-0.5 * ((tau - 2 * T / 3) / w) ** 2))
    if class_id == 3:  # slide: 25 Hz, sign flip halfway
        return np.where(tau < T / 2, 25.0, -25.0)
    if class_id == 4:  # zig-zag: +-35 Hz triangle at 2 Hz
        return 35.0 * (2 / np.pi) * np.arcsin(np.sin(2 * np.pi * 2.0 * tau))
    if class_id == 5:  # draw N: 10 -> 45 -> 10 -> 45 Hz
        return np.interp(tau, [0, T / 3, 2 * T / 3, T], [10.0, 45.0, 10.0, 45.0])
    raise DomainError(f"class_id must be in 0..{NUM_CLASSES - 1}, got {class_id}")


def template_signature(class_id: int, duration_s: float = 2.0, n: int = 20000):
    """(mean |f|, modulation rate) of a template, both in Hz.

    The modulation rate counts slope reversals and reports them as the
    frequency of an equivalent oscillation (two reversals per period).
    """
    tau = (np.arange(n) + 0.5) * duration_s / n
    f = template(class_id, tau, duration_s)
    slope = np.diff(f)
    slope = slope[np.abs(slope) > 1e-12 * np.max(np.abs(f))]
    reversals = np.count_nonzero(np.diff(np.sign(slope)))
    return float(np.mean(np.abs(f))), reversals / (2 * duration_s)


def gen_doppler_track(class_id: int, duration_s: float, dt: float,
                      rng: np.random.Generator) -> DopplerTrack:
    if not 0 <= class_id < NUM_CLASSES:
        raise DomainError(f"class_id must be in 0..{NUM_CLASSES - 1}, got {class_id}")
    S = num_samples(duration_s, dt)
    amp = 1.0 + rng.uniform(-JITTER, JITTER)
    rate = 1.0 + rng.uniform(-JITTER, JITTER)
    t = np.arange(S) * dt
    tau = np.clip(rate * t, 0.0, duration_s)
    samples = amp * template(class_id, tau, duration_s)
    return DopplerTrack(class_id, samples, dt)


def synth_csi(scene: SceneSpec, track: DopplerTrack, device_id: int,
              rng: np.random.Generator, *, return_phase_error: bool = False):
    """One device's CSI for one event, shape (S, N, M).

    Path 0 is static; dynamic path ``l`` carries the track scaled by
    ``1/l``. The timing phase error is one draw per (t, m), shared by
    every antenna, and rotates the whole noisy sample.
    """
    S, N, M, L = (scene.num_samples, scene.num_antennas,
                  scene.num_subcarriers, scene.num_paths)
    if track.samples.shape != (S,):
        raise DomainError(f"track length {track.samples.shape} does not match S={S}")

    sub = 1.0 + 0.05 * np.arange(M) / M
    gains = np.empty((L, N))
    gains[0] = scene.static_path_gain
    gains[1:] = rng.uniform(0.5, 1.0, size=(L - 1, N)) * scene.dynamic_path_gain
    alpha = gains[:, :, None] * sub[None, None, :]  # (L, N, M)
    delay_phase = rng.uniform(0.0, 2 * np.pi, size=(L, N))

    # integrated phase: instantaneous frequency equals the track
    base = np.concatenate(([0.0], np.cumsum(track.samples[:-1]))) * 2 * np.pi * scene.sample_interval_s
    doppler_phase = np.zeros((S, L))
    for l in range(1, L):
        doppler_phase[:, l] = base / l

    paths = np.exp(1j * (doppler_phase[:, :, None] + delay_phase[None, :, :]))  # (S, L, N)
    h = np.einsum("sla,lam->sam", paths, alpha)

    noise = rng.standard_normal((2, S, N, M))
    h = h + scene.noise_std / np.sqrt(2) * (noise[0] + 1j * noise[1])
    eps = scene.phase_error_std_rad * rng.standard_normal((S, M))
    h = h * np.exp(1j * eps)[:, None, :]

    out = CsiTensor(h, device_id, track.class_id)
    if return_phase_error:
        return out, eps
    return out


@dataclass(frozen=True)
class Event:
    views: tuple  # K CsiTensors ordered by device id
    label: int
    track: DopplerTrack


class LabeledCsiSet:
    """Balanced, seeded set of multi-view events.

    Events are materialized on access: event ``i`` is a pure function of
    ``(scene, seed, i)``, so the full CSI payload never has to sit in memory.
    """

    def __init__(self, scene: SceneSpec, n_events: int, seed: int):
        if n_events < 1 or n_events % NUM_CLASSES:
            raise DomainError(f"n_events must be a positive multiple of {NUM_CLASSES}")
        self.scene = scene
        self.n_events = n_events
        self.seed = seed
        self.labels = np.arange(n_events) % NUM_CLASSES

    def __len__(self):
        return self.n_events

    def __getitem__(self, i: int) -> Event:
        if not 0 <= i < self.n_events:
            raise IndexError(i)
        label = int(self.labels[i])
        ss = np.random.SeedSequence(self.seed, spawn_key=(i,))
        children = ss.spawn(self.scene.num_devices + 1)
        track = gen_doppler_track(label, self.scene.duration_s, self.scene.sample_interval_s,
                                  np.random.default_rng(children[0]))
        views = tuple(
            synth_csi(self.scene, track, k, np.random.default_rng(children[k + 1]))
            for k in range(self.scene.num_devices)
        )
        return Event(views, label, track)

    def __iter__(self) -> Iterator[Event]:
        for i in range(self.n_events):
            yield self[i]

    @property
    def events(self):
        return self


def make_dataset(scene: SceneSpec, n_events: int, seed: int) -> LabeledCsiSet:
    return LabeledCsiSet(scene, n_events, seed)
