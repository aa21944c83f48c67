"""CSI -> Doppler spectrogram: conjugate multiplication, band-pass, PCA, STFT."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .csi_synth import CsiTensor
from .errors import ConvergenceError, DomainError


@dataclass(frozen=True)
class CsiMatrix:
    """Conjugate-multiplied CSI, S x ((N-1)*M).

    Columns are antenna-pair-major, subcarrier-minor: column ``p*M + m``
    holds the p-th non-reference antenna at subcarrier m.
    """
    data: np.ndarray
    sample_rate_hz: float


@dataclass(frozen=True)
class PrincipalSeries:
    data: np.ndarray
    sigma1: float
    iterations: int = 0


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 256
    hop: int = 16
    num_freq_bins: int = 121
    max_freq_hz: float = 60.0

    def __post_init__(self):
        if not 0 < self.hop <= self.window_len:
            raise DomainError("need 0 < hop <= window_len")
        if self.num_freq_bins < 1 or self.num_freq_bins % 2 == 0:
            raise DomainError("num_freq_bins must be odd")
        if self.max_freq_hz <= 0:
            raise DomainError("max_freq_hz must be positive")

    @property
    def freq_axis(self) -> np.ndarray:
        return np.linspace(-self.max_freq_hz, self.max_freq_hz, self.num_freq_bins)


@dataclass(frozen=True)
class DfsSpectrogram:
    data: np.ndarray  # (S_T, S_F), power, >= 0
    freq_axis: np.ndarray
    time_axis: np.ndarray


@dataclass(frozen=True)
class PipelineConfig:
    ref_antenna: int = 0
    band_low_hz: float = 2.0
    band_high_hz: float = 60.0
    kernel_len: int = 255
    pca_tol: float = 1e-10
    pca_max_iter: int = 5000
    pca_seed: int = 0
    stft: StftConfig = field(default_factory=StftConfig)


def conjugate_multiply(csi: CsiTensor, ref_antenna: int = 0,
                       sample_rate_hz: float = 1000.0) -> CsiMatrix:
    h = csi.data
    if h.ndim != 3:
        raise DomainError(f"expected (S, N, M) CSI, got shape {h.shape}")
    S, N, M = h.shape
    if N < 2:
        raise DomainError("conjugate multiplication needs at least two antennas")
    if not 0 <= ref_antenna < N:
        raise DomainError(f"ref_antenna {ref_antenna} out of range for N={N}")
    others = [a for a in range(N) if a != ref_antenna]
    prod = h[:, others, :] * np.conj(h[:, ref_antenna, :])[:, None, :]
    return CsiMatrix(prod.reshape(S, (N - 1) * M), sample_rate_hz)


def bandpass_kernel(f_s: float, f_low: float, f_high: float, kernel_len: int = 255) -> np.ndarray:
    """Hamming windowed-sinc band-pass with an exact DC null."""
    if not 0 < f_low < f_high < f_s / 2:
        raise DomainError(f"invalid band [{f_low}, {f_high}] Hz at f_s={f_s} Hz")
    if kernel_len < 3 or kernel_len % 2 == 0:
        raise DomainError("kernel_len must be odd and >= 3")
    h = signal.firwin(kernel_len, [f_low, f_high], pass_zero=False, fs=f_s)
    w = signal.get_window("hamming", kernel_len, fftbins=False)
    # the sinc design leaks ~ -12 dB at DC for a 2 Hz edge; remove it
    return h - h.sum() * w / w.sum()


def bandpass_filter(series, f_s: float, f_low: float, f_high: float,
                    kernel_len: int = 255) -> np.ndarray:
    """Zero-phase band-pass along axis 0 (forward pass, then time-reversed pass).

    Edges use odd extension so slow trends do not produce boundary steps.
    """
    h = bandpass_kernel(f_s, f_low, f_high, kernel_len)
    x = np.asarray(series)
    if x.shape[0] < 2:
        raise DomainError("need at least two samples to filter")
    kern = h.reshape((-1,) + (1,) * (x.ndim - 1))
    p = min(kernel_len, x.shape[0] - 1)
    left = 2 * x[:1] - x[p:0:-1]
    right = 2 * x[-1:] - x[-2:-p - 2:-1]
    ext = np.concatenate([left, x, right], axis=0)
    y = signal.fftconvolve(ext, kern, mode="same", axes=0)
    y = signal.fftconvolve(y[::-1], kern, mode="same", axes=0)[::-1]
    return np.ascontiguousarray(y[p:p + x.shape[0]])


def frequency_response(kernel: np.ndarray, freqs_hz, f_s: float, zero_phase: bool = True):
    """Magnitude response at ``freqs_hz``; squared when applied forward+reversed."""
    _, H = signal.freqz(kernel, worN=np.atleast_1d(np.asarray(freqs_hz, float)), fs=f_s)
    mag = np.abs(H)
    return mag ** 2 if zero_phase else mag


def dump_kernel_csv(path, kernel: np.ndarray, f_s: float):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tap", "time_s", "coefficient"])
        center = (len(kernel) - 1) // 2
        for i, c in enumerate(kernel):
            w.writerow([i, (i - center) / f_s, repr(float(c))])


def _fix_phase(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return v * (np.conj(v[i]) / np.abs(v[i]))


def first_principal_component(F, tol: float = 1e-10, max_iter: int = 5000,
                              seed: int = 0) -> PrincipalSeries:
    """Project F onto its leading right singular vector.

    Power iteration on the Gram matrix F^H F; stops when the eigen-residual
    ||G v - rho v|| / rho drops below ``tol``. The entry of v with largest
    modulus is rotated to be real and positive.
    """
    F = np.asarray(F.data if isinstance(F, CsiMatrix) else F)
    if F.ndim != 2:
        raise DomainError("expected a 2-D matrix")
    G = F.conj().T @ F
    if not np.any(G):
        raise DomainError("matrix is zero; principal component undefined")
    rng = np.random.default_rng(seed)
    n = G.shape[0]
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    residual = np.inf
    for it in range(1, max_iter + 1):
        w = G @ v
        rho = np.real(np.vdot(v, w))
        residual = np.linalg.norm(w - rho * v) / abs(rho) if rho != 0 else np.inf
        v = w / np.linalg.norm(w)
        if residual <= tol:
            break
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", residual)
    v = _fix_phase(v)
    rho = np.real(np.vdot(v, G @ v))
    return PrincipalSeries(F @ v, float(np.sqrt(max(rho, 0.0))), it)


def num_frames(S: int, W: int, hop: int) -> int:
    """S_T = ceil((S - W) / hop)."""
    if W > S:
        raise DomainError(f"window {W} longer than series {S}")
    if hop <= 0:
        raise DomainError("hop must be positive")
    return -(-(S - W) // hop)


def stft_spectrogram(c, cfg: StftConfig, f_s: float) -> DfsSpectrogram:
    """Hann-windowed power spectrogram on a symmetric Doppler grid.

    Bins are evaluated directly at ``cfg.freq_axis`` (S_F points across
    [-f_max, f_max]), so the grid does not depend on the window length.
    Frame i covers samples [i*hop, i*hop + W).
    """
    x = np.asarray(c.data if isinstance(c, PrincipalSeries) else c)
    W, hop = cfg.window_len, cfg.hop
    if x.ndim != 1 or x.shape[0] < W:
        raise DomainError(f"series of length {x.shape[0]} shorter than window {W}")
    n_t = num_frames(x.shape[0], W, hop)
    if n_t == 0:
        raise DomainError("configuration yields zero STFT frames (S == W)")
    if cfg.max_freq_hz > f_s / 2:
        raise DomainError(f"max_freq_hz {cfg.max_freq_hz} exceeds Nyquist {f_s / 2}")
    frames = sliding_window_view(x, W)[::hop][:n_t]
    win = signal.windows.hann(W, sym=False)
    freqs = cfg.freq_axis
    basis = np.exp(-2j * np.pi * np.outer(np.arange(W), freqs) / f_s)
    spec = (frames * win) @ basis
    power = spec.real ** 2 + spec.imag ** 2
    times = (np.arange(n_t) * hop + W / 2) / f_s
    return DfsSpectrogram(power, freqs, times)


def dfs_spectrogram(csi: CsiTensor, f_s: float, cfg: PipelineConfig | None = None) -> DfsSpectrogram:
    """Full chain for one device's CSI."""
    cfg = cfg or PipelineConfig()
    F = conjugate_multiply(csi, cfg.ref_antenna, f_s)
    filtered = bandpass_filter(F.data, f_s, cfg.band_low_hz, cfg.band_high_hz, cfg.kernel_len)
    pc = first_principal_component(filtered, cfg.pca_tol, cfg.pca_max_iter, cfg.pca_seed)
    return stft_spectrogram(pc, cfg.stft, f_s)


def max_normalize(power: np.ndarray) -> np.ndarray:
    """Scale each spectrogram (leading axis = sample) so its peak is 1."""
    p = np.asarray(power, dtype=float)
    peak = p.reshape(p.shape[0], -1).max(axis=1)
    peak = np.where(peak > 0, peak, 1.0)
    return p / peak.reshape((-1,) + (1,) * (p.ndim - 1))
