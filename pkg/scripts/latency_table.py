"""Upload latency per scheme across SNR at the reference spectrogram size."""
from ademi.channel import REFERENCE_DIMS, ChannelSpec, payload_ratio, latency_sweep

if __name__ == "__main__":
    t = latency_sweep(ChannelSpec(), REFERENCE_DIMS)
    print(t.to_text(), end="")
    print(f"raw/latent payload ratio at d_k=10: {payload_ratio(REFERENCE_DIMS, 10):.4g}")
