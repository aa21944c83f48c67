"""Shannon-capacity link budget, capacity-aware latent width, upload latency.

Calibration (reverse-engineered from the reference latency table, not
stated with it): 64 bits per transmitted value, a per-sample time budget
of 1.44e-5 s, an equal OFDMA split for the multi-device schemes, and the
full band for the single-view baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DomainError, InsufficientCapacityError

SNR_SWEEP_DB = (5.0, 10.0, 15.0, 20.0, 25.0)
REFERENCE_DIMS = (2895, 121)  # S_T, S_F of the reference deployment


@dataclass(frozen=True)
class ChannelSpec:
    total_bandwidth_hz: float = 40e6
    num_devices: int = 3
    snr_db: float = 10.0
    bits_per_element: int = 64
    samples_per_transmission: int = 1
    sample_time_budget_s: float = 1.44e-5

    def __post_init__(self):
        if self.total_bandwidth_hz <= 0:
            raise DomainError("total_bandwidth_hz must be positive")
        if self.num_devices < 1:
            raise DomainError("num_devices must be >= 1")
        if self.bits_per_element < 1 or self.samples_per_transmission < 1:
            raise DomainError("bits_per_element and samples_per_transmission must be >= 1")
        if self.sample_time_budget_s <= 0:
            raise DomainError("sample_time_budget_s must be positive")

    @property
    def device_bandwidth_hz(self) -> float:
        return equal_split(self.total_bandwidth_hz, self.num_devices)

    @property
    def time_budget_s(self) -> float:
        return self.samples_per_transmission * self.sample_time_budget_s


@dataclass(frozen=True)
class LinkBudget:
    capacity_bps: float
    dim: int
    payload_bits: int
    latency_s: float


def shannon_capacity(bandwidth_hz: float, snr_db: float) -> float:
    if bandwidth_hz <= 0:
        raise DomainError("bandwidth must be positive")
    if snr_db == -math.inf:
        return 0.0
    return bandwidth_hz * math.log2(1.0 + 10.0 ** (snr_db / 10.0))


def equal_split(total_bandwidth_hz: float, num_devices: int) -> float:
    if num_devices < 1:
        raise DomainError("num_devices must be >= 1")
    return total_bandwidth_hz / num_devices


def encoded_dim(capacity_bps: float, bits_per_element: int, samples_per_transmission: int,
                time_budget_s: float) -> int:
    """d_k = floor(C_k * t_budget / (n_k * L)); zero is an error, never clamped."""
    if min(capacity_bps, bits_per_element, samples_per_transmission, time_budget_s) <= 0:
        raise DomainError("all link-budget inputs must be positive")
    d = math.floor(capacity_bps * time_budget_s / (bits_per_element * samples_per_transmission))
    if d < 1:
        raise InsufficientCapacityError(
            f"capacity {capacity_bps:.4g} b/s x {time_budget_s:.3g} s cannot carry one "
            f"{bits_per_element}-bit element per sample for {samples_per_transmission} samples")
    return d


def raw_payload_bits(n_frames: int, n_freq: int, bits_per_value: int = 64) -> int:
    if min(n_frames, n_freq, bits_per_value) < 1:
        raise DomainError("payload dimensions must be positive")
    return n_frames * n_freq * bits_per_value


def upload_latency(payload_bits: float, capacity_bps: float) -> float:
    if capacity_bps <= 0:
        raise DomainError("capacity must be positive")
    return payload_bits / capacity_bps


def link_budget(spec: ChannelSpec) -> LinkBudget:
    """Per-device budget for one encoded sample under the equal split."""
    cap = shannon_capacity(spec.device_bandwidth_hz, spec.snr_db)
    d = encoded_dim(cap, spec.bits_per_element, spec.samples_per_transmission, spec.time_budget_s)
    bits = d * spec.bits_per_element
    return LinkBudget(cap, d, bits, upload_latency(bits, cap))


def bit_budget_ok(dim: int, spec: ChannelSpec) -> bool:
    """d_k * n_k * L <= floor(C_k * t_budget), integer comparison."""
    cap = shannon_capacity(spec.device_bandwidth_hz, spec.snr_db)
    return dim * spec.bits_per_element * spec.samples_per_transmission <= math.floor(cap * spec.time_budget_s)


@dataclass
class LatencyTable:
    snr_db: list
    single_view_s: list
    multi_view_s: list
    ade_mi_s: list
    dims: list
    meta: dict = field(default_factory=dict)

    def rows(self):
        yield ["scheme"] + [f"{s:g} dB" for s in self.snr_db]
        yield ["single-view (s)"] + self.single_view_s
        yield ["multi-view (s)"] + self.multi_view_s
        yield ["ade-mi (s)"] + self.ade_mi_s
        yield ["d_k"] + self.dims

    def to_csv(self) -> str:
        return "\n".join(",".join(str(v) if not isinstance(v, float) else repr(v) for v in r)
                         for r in self.rows()) + "\n"

    def to_text(self) -> str:
        out = []
        for r in self.rows():
            cells = [f"{v:.4g}" if isinstance(v, float) else str(v) for v in r]
            out.append(f"{cells[0]:<16}" + "".join(f"{c:>12}" for c in cells[1:]))
        return "\n".join(out) + "\n"


def latency_sweep(spec: ChannelSpec, spectro_dims=REFERENCE_DIMS, snrs=SNR_SWEEP_DB) -> LatencyTable:
    """Upload latency per scheme across SNR.

    single-view: one raw spectrogram over the full band; multi-view: each of
    K devices sends one raw spectrogram over B/K at the same time; ADE-MI:
    each device sends d_k elements over B/K, latency is the slowest device.
    """
    n_t, n_f = spectro_dims
    raw = raw_payload_bits(n_t, n_f, spec.bits_per_element)
    single, multi, ade, dims = [], [], [], []
    for snr in snrs:
        s = ChannelSpec(spec.total_bandwidth_hz, spec.num_devices, snr, spec.bits_per_element,
                        spec.samples_per_transmission, spec.sample_time_budget_s)
        single.append(upload_latency(raw, shannon_capacity(s.total_bandwidth_hz, snr)))
        cap_k = shannon_capacity(s.device_bandwidth_hz, snr)
        multi.append(max(upload_latency(raw, cap_k) for _ in range(s.num_devices)))
        lb = link_budget(s)
        ade.append(max(lb.latency_s for _ in range(s.num_devices)))
        dims.append(lb.dim)
    return LatencyTable(list(snrs), single, multi, ade, dims,
                        {"raw_payload_bits": raw, "spectro_dims": (n_t, n_f)})


def payload_ratio(spectro_dims=REFERENCE_DIMS, dim: int = 10) -> float:
    """Raw spectrogram elements per latent element (bit widths cancel)."""
    n_t, n_f = spectro_dims
    return n_t * n_f / dim
