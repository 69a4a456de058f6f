"""Lossy uplink: B-bit gradient quantization plus additive Gaussian noise.

Noise variance follows the gradient-SNR definition used throughout the
simulator,

    snr_db = 20 * log10(||g||_2^2 / sigma^2)   =>   sigma^2 = ||g||_2^2 / 10**(snr_db / 20),

applied per coordinate. Datasets sent by passive clients are noised sample
by sample, each input image being one transmitted vector. Two dataset modes
exist:

``per-symbol`` (default)
    the formula is applied to the mean symbol power ``||x||^2 / n``, so an
    image sees the same per-pixel SNR whatever its size;
``per-sample``
    the formula is applied to ``||x||^2`` exactly as for gradients, which
    leaves pixels with noise several times their own magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Shard
from .nn import QUANTIZED, QUANTIZED_NOISED, GradientVector

# RNG stream tags; every stream is keyed by (seed, tag, client, round)
STREAM_MINIBATCH = 0
STREAM_GRAD_NOISE = 1
STREAM_DATA_NOISE = 2
STREAM_INIT = 3
STREAM_SPLIT = 4

DATA_NOISE_MODES = ("per-symbol", "per-sample")


def stream(seed: int, tag: int, client: int = 0, round_: int = 0) -> np.random.Generator:
    """Independent generator for one (purpose, client, round) cell."""
    return np.random.default_rng(np.random.SeedSequence([seed, tag, client, round_]))


@dataclass(frozen=True)
class ChannelConfig:
    bits: int = 32
    snr_db: float = float("inf")
    noise: bool = True
    data_noise: str = "per-symbol"

    def __post_init__(self):
        if not 1 <= self.bits <= 32:
            raise ValueError(f"bits must be in 1..32, got {self.bits}")
        if self.data_noise not in DATA_NOISE_MODES:
            raise ValueError(f"data_noise must be one of {DATA_NOISE_MODES}")

    @property
    def noiseless(self) -> "ChannelConfig":
        return replace(self, noise=False)


def _vec(g) -> np.ndarray:
    return g.g if isinstance(g, GradientVector) else np.asarray(g, dtype=np.float64)


def quantize(g, bits: int) -> GradientVector:
    """Nearest of ``2**bits`` evenly spaced levels spanning ``[-s, s]``, ``s = max|g|``."""
    v = _vec(g)
    client = g.client if isinstance(g, GradientVector) else None
    s = float(np.max(np.abs(v))) if v.size else 0.0
    if s == 0.0:
        return GradientVector(v.copy(), QUANTIZED, client)
    top = float(2**bits - 1)
    # work on v / s in [-1, 1]; a level spacing of 2s / top underflows for tiny s
    idx = np.clip(np.rint((v / s + 1.0) * (top / 2.0)), 0.0, top)
    # level 0 and level top are exactly -s and +s; no drift from idempotent re-quantization
    q = np.where(idx == top, s, np.where(idx == 0.0, -s, s * (2.0 * idx / top - 1.0)))
    return GradientVector(q, QUANTIZED, client)


def noise_sigma(g, snr_db: float) -> float:
    """Per-coordinate noise variance for a transmitted vector."""
    energy = float(np.dot(_vec(g), _vec(g)))
    if energy == 0.0 or snr_db == float("inf"):
        return 0.0
    return energy / 10.0 ** (snr_db / 20.0)


def transmit_gradient(g, config: ChannelConfig, rng: np.random.Generator) -> GradientVector:
    """What the server receives: ``Q_B(g) + w`` with ``w ~ N(0, sigma^2 I)``."""
    v = _vec(g)
    client = g.client if isinstance(g, GradientVector) else None
    q = quantize(v, config.bits).g
    if config.noise:
        var = noise_sigma(v, config.snr_db)
        if var > 0.0:
            q = q + rng.normal(0.0, np.sqrt(var), size=q.shape)
    return GradientVector(q, QUANTIZED_NOISED, client)


def transmit_dataset(shard: Shard, config: ChannelConfig, rng: np.random.Generator) -> Shard:
    """Copy of ``shard`` with Gaussian noise on its inputs; labels untouched.

    Samples are noised in order, each drawing ``U_x * V_x`` normals from
    ``rng``, so sending a shard in consecutive pieces with one generator
    yields the same noisy data as sending it whole.
    """
    if not config.noise or config.snr_db == float("inf"):
        return Shard(shard.client, shard.inputs.copy(), shard.labels.copy())
    x = shard.inputs.reshape(len(shard), -1)
    energy = np.einsum("ij,ij->i", x, x)
    if config.data_noise == "per-symbol":
        energy = energy / x.shape[1]
    var = energy / 10.0 ** (config.snr_db / 20.0)
    w = rng.standard_normal(x.shape) * np.sqrt(var)[:, None]
    noisy = (x + w).reshape(shard.inputs.shape)
    return Shard(shard.client, noisy, shard.labels.copy())
