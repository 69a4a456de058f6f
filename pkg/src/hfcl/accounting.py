"""Communication overhead formulas, link delay and min-max bandwidth allocation.

Overheads are counted in transmitted symbols using Python integers, so no
product can overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

SYMBOLS_PER_BLOCK = 1000


@dataclass(frozen=True)
class LinkSpec:
    client: int
    symbols: int  # d_k
    snr: float  # linear
    bandwidth: float = 0.0  # Hz

    @property
    def rate(self) -> float:
        return self.bandwidth * math.log1p(self.snr)


@dataclass(frozen=True)
class OverheadReport:
    T: int
    P: int
    K: int
    L: int
    shard_symbols: tuple[int, ...]  # d_k for every client, in client order
    cl: int = field(init=False)
    fl: int = field(init=False)
    hfcl: int = field(init=False)

    def __post_init__(self):
        total = sum(self.shard_symbols)
        object.__setattr__(self, "cl", overhead_cl(total))
        object.__setattr__(self, "fl", overhead_fl(self.T, self.P, self.K))
        object.__setattr__(
            self, "hfcl", overhead_hfcl(self.T, self.P, self.K, self.L, self.shard_symbols[: self.L])
        )

    def blocks(self) -> dict[str, float]:
        return {k: to_blocks(getattr(self, k)) for k in ("cl", "fl", "hfcl")}


def _check_int(name: str, value: int, low: int = 0) -> int:
    if int(value) != value or value < low:
        raise ValueError(f"{name} must be an integer >= {low}, got {value!r}")
    return int(value)


def to_blocks(symbols: int, per_block: int = SYMBOLS_PER_BLOCK) -> float:
    return symbols / per_block


def overhead_cl(total_symbols: int) -> int:
    return _check_int("total_symbols", total_symbols)


def overhead_fl(T: int, P: int, K: int) -> int:
    return 2 * _check_int("T", T, 1) * _check_int("P", P, 1) * _check_int("K", K, 1)


def overhead_hfcl(T: int, P: int, K: int, L: int, passive_symbols: int | Sequence[int]) -> int:
    """Passive dataset uploads plus gradient exchange for ``K - L`` active clients.

    ``passive_symbols`` is either the per-client list for the ``L`` passive
    clients or a single per-client count assumed uniform.
    """
    K = _check_int("K", K, 1)
    L = _check_int("L", L)
    if L > K:
        raise ValueError(f"L={L} exceeds K={K}")
    if isinstance(passive_symbols, (int,)):
        data = L * _check_int("passive_symbols", passive_symbols)
    else:
        counts = [_check_int("passive_symbols", d) for d in passive_symbols]
        if len(counts) != L:
            raise ValueError(f"{len(counts)} passive symbol counts for L={L}")
        data = sum(counts)
    return data + 2 * _check_int("T", T, 1) * _check_int("P", P, 1) * (K - L)


def delay(link: LinkSpec) -> float:
    """Seconds to push ``link.symbols`` at rate ``B ln(1 + snr)``."""
    if link.symbols == 0:
        return 0.0
    if link.bandwidth <= 0:
        raise ZeroDivisionError(f"client {link.client} has no bandwidth")
    if link.snr <= 0:
        raise ValueError(f"client {link.client} has non-positive SNR")
    return link.symbols / link.rate


def allocate_bandwidth(links: Sequence[LinkSpec], total: float) -> list[LinkSpec]:
    """Split ``total`` Hz so every busy link finishes at the same time.

    ``B_k`` is proportional to ``d_k / ln(1 + snr_k)``, which minimizes the
    largest delay. Links with nothing to send get zero bandwidth.
    """
    if not links:
        raise ValueError("no links to allocate")
    if total <= 0:
        raise ValueError("total bandwidth must be positive")
    need = []
    for link in links:
        if link.symbols < 0:
            raise ValueError(f"client {link.client} has negative demand")
        if link.symbols and link.snr <= 0:
            raise ValueError(f"client {link.client} has non-positive SNR")
        need.append(link.symbols / math.log1p(link.snr) if link.symbols else 0.0)
    norm = math.fsum(need)
    if norm == 0:
        return [LinkSpec(l.client, l.symbols, l.snr, 0.0) for l in links]
    return [LinkSpec(l.client, l.symbols, l.snr, total * c / norm) for l, c in zip(links, need)]


def max_delay(links: Sequence[LinkSpec]) -> float:
    return max((delay(l) for l in links), default=0.0)
