"""
Two-phase decode-and-forward link: 4-QAM Gray symbols, Rayleigh gains, AWGN.

Symbol k carries the bit pair (b[2k], b[2k+1]):
    Re{x[k]} = 1 - 2 b[2k+1],  Im{x[k]} = 1 - 2 b[2k]
Both branches see the same x; the relay is assumed to forward it error free.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ldpc import encode

logger = logging.getLogger(__name__)

SYMBOL_ENERGY = 2.0
CONSTELLATION = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j])


@dataclass(frozen=True)
class ChannelRealization:
    h1: complex
    h2: complex

    def __post_init__(self):
        if not (np.isfinite(self.h1) and np.isfinite(self.h2)):
            raise ValueError("channel gains must be finite")


@dataclass(frozen=True, eq=False)
class RelayFrame:
    """One coherence block: the transmitted bits and what both branches received"""
    tx_bits: np.ndarray
    x: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    channel: ChannelRealization
    noise_var: float

    def __post_init__(self):
        if 2 * len(self.x) != len(self.tx_bits):
            raise ValueError("a frame carries two bits per symbol")
        if len(self.r1) != len(self.x) or len(self.r2) != len(self.x):
            raise ValueError("received vectors must match the symbol count")

    @property
    def num_symbols(self):
        return len(self.x)


@dataclass(frozen=True)
class FrameParams:
    """Per-frame draw settings; n_symbols applies only to uncoded frames"""
    noise_var: float
    sigma1_sq: float = 0.5
    sigma2_sq: float = 1.0
    n_symbols: int = 20


def make_rng(seed, *stream):
    """Counter-based generator keyed by (seed, *stream); substreams never overlap"""
    key = [int(seed), *(int(s) for s in stream)]
    if any(k < 0 for k in key):
        raise ValueError("seed and stream indices must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def snr_db_to_noise_var(snr_db, sigma1_sq=0.5, symbol_energy=SYMBOL_ENERGY):
    """noise_var such that E_s * sigma1^2 / noise_var equals the requested SNR"""
    return symbol_energy * sigma1_sq / 10.0 ** (snr_db / 10.0)


def estimate_snr_db(frames):
    """Direct-link SNR measured from realized signal and noise samples"""
    signal = np.concatenate([f.channel.h1 * f.x for f in frames])
    noise = np.concatenate([f.r1 - f.channel.h1 * f.x for f in frames])
    noise_power = np.mean(np.abs(noise) ** 2)
    if noise_power == 0:
        return np.inf
    return float(10.0 * np.log10(np.mean(np.abs(signal) ** 2) / noise_power))


def modulate_qam4_gray(bits):
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1 or len(bits) % 2:
        raise ValueError("QAM4 needs an even number of bits")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    return (1 - 2 * bits[1::2]) + 1j * (1 - 2 * bits[0::2])


def demodulate_hard(symbols):
    """Sign slicing per component; an exact zero slices to bit 0"""
    symbols = np.asarray(symbols, dtype=complex)
    bits = np.empty(2 * len(symbols), dtype=np.uint8)
    bits[0::2] = symbols.imag < 0
    bits[1::2] = symbols.real < 0
    return bits


def _complex_normal(rng, size):
    """CN(0, 1) samples: variance 1/2 per real dimension"""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def draw_channel(sigma1_sq, sigma2_sq, rng):
    if sigma1_sq < 0 or sigma2_sq < 0:
        raise ValueError("channel variances must be non-negative")
    h = _complex_normal(rng, 2)
    return ChannelRealization(h1=complex(np.sqrt(sigma1_sq) * h[0]),
                              h2=complex(np.sqrt(sigma2_sq) * h[1]))


def transmit(x, channel, noise_var, rng):
    """r_i = h_i x + n_i with n_i ~ CN(0, noise_var), independent per branch"""
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    x = np.asarray(x, dtype=complex)
    noise = _complex_normal(rng, (2, len(x)))
    scale = np.sqrt(noise_var)
    return channel.h1 * x + scale * noise[0], channel.h2 * x + scale * noise[1]


def make_frame(code, rng, params):
    """Draw bits, channel and noise for one frame.

    code is an Encoder (one random codeword per frame) or None (uncoded,
    2 * params.n_symbols random bits). Draw order is bits, channel, noise, so
    frames from the same rng state differ only in noise scale when
    params.noise_var changes.
    """
    if code is None:
        if params.n_symbols < 1:
            raise ValueError("uncoded frames need at least one symbol")
        tx_bits = rng.integers(0, 2, size=2 * params.n_symbols, dtype=np.uint8)
    else:
        if code.n % 2:
            raise ValueError(f"code length {code.n} does not fill whole QAM4 symbols")
        message = rng.integers(0, 2, size=code.message_length, dtype=np.uint8)
        tx_bits = encode(code, message)

    x = modulate_qam4_gray(tx_bits)
    channel = draw_channel(params.sigma1_sq, params.sigma2_sq, rng)
    r1, r2 = transmit(x, channel, params.noise_var, rng)
    return RelayFrame(tx_bits=tx_bits, x=x, r1=r1, r2=r2, channel=channel,
                      noise_var=float(params.noise_var))
