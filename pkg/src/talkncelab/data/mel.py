"""Log-mel front end whose frame count is tied to the video frame count.

The hop is ``sample_rate / (4 * fps)`` so that ``T`` video frames map to
exactly ``4T`` mel frames (160 samples at 16 kHz / 25 fps).
"""

from __future__ import annotations

import numpy as np

LOG_FLOOR = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-style filters, unit peak height, shape (n_mels, n_fft//2 + 1)."""
    fmax = sample_rate_hz / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate_hz / 2.0, n_fft // 2 + 1)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def frontend_params(sample_rate_hz: int, fps: float) -> dict:
    hop = int(round(sample_rate_hz / (4.0 * fps)))
    win = int(round(0.025 * sample_rate_hz))
    n_fft = 1 << (win - 1).bit_length()
    return {"hop": hop, "win": win, "n_fft": n_fft}


def mel_frontend(waveform, sample_rate_hz: int, T: int, fps: float = 25.0,
                 n_mels: int = 13) -> np.ndarray:
    """Return a (4T, n_mels) log-mel matrix for a waveform covering T video frames."""
    wav = np.asarray(waveform, dtype=np.float64)
    need = int(np.ceil(T / fps * sample_rate_hz))
    if wav.ndim != 1 or wav.shape[0] < need:
        raise ValueError(
            f"waveform has {wav.shape[0] if wav.ndim == 1 else wav.shape} samples, "
            f"need at least {need} for T={T} at {fps} fps"
        )
    p = frontend_params(sample_rate_hz, fps)
    hop, win, n_fft = p["hop"], p["win"], p["n_fft"]
    n_frames = 4 * T

    # Centred frames; zero padding keeps the last frame defined.
    padded = np.pad(wav, (n_fft // 2, n_fft))
    starts = np.arange(n_frames) * hop
    frames = padded[starts[:, None] + np.arange(n_fft)[None, :]]
    window = np.zeros(n_fft)
    off = (n_fft - win) // 2
    window[off:off + win] = np.hanning(win)
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    mel = power @ mel_filterbank(n_mels, n_fft, sample_rate_hz).T
    return np.log(mel + LOG_FLOOR)
