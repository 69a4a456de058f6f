"""Training protocols: CL, FL, HFCL, HFCL-SDT and active-only FL.

All modes share one round loop. Clients ``1..L`` are passive (their data is
uploaded and the server computes their gradients); clients ``L+1..K`` are
active (they compute gradients locally and send them over the lossy
channel). CL is the loop with every client passive, FL the loop with none.

Randomness is drawn from per-(purpose, client, round) streams, so the same
client sees the same mini-batch partitions and noise regardless of which
mode it is simulated under.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .accounting import LinkSpec, allocate_bandwidth, max_delay
from .channel import (
    STREAM_DATA_NOISE,
    STREAM_GRAD_NOISE,
    STREAM_INIT,
    STREAM_MINIBATCH,
    ChannelConfig,
    stream,
    transmit_dataset,
    transmit_gradient,
)
from .data import Shard, concat, symbol_count
from .nn import GradientVector, ModelParams, ModelSpec, TrainingConfig


class ConfigurationError(ValueError):
    """A protocol was asked to run with an impossible client split."""


@dataclass(frozen=True)
class ClientRoster:
    shards: tuple[Shard, ...]  # shards[k - first] belongs to client k
    L: int
    first: int = 1

    def __post_init__(self):
        object.__setattr__(self, "shards", tuple(self.shards))
        if not 0 <= self.L <= self.K:
            raise ConfigurationError(f"need 0 <= L <= K, got L={self.L}, K={self.K}")

    @property
    def K(self) -> int:
        return len(self.shards)

    @property
    def passive(self) -> tuple[int, ...]:
        return tuple(range(self.first, self.first + self.L))

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(range(self.first + self.L, self.first + self.K))

    def shard(self, k: int) -> Shard:
        return self.shards[k - self.first]


@dataclass(frozen=True)
class LinkConfig:
    """Uplink used only for delay reporting."""

    bandwidth_hz: float = 1e6
    snr_db: float = 10.0

    @property
    def snr(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)


@dataclass
class RoundLedger:
    t: int
    symbols: dict[int, int]
    grad_norm: float
    train_loss: float
    val_acc: float
    cumulative: int
    max_delay: float


@dataclass
class RunResult:
    params: ModelParams
    ledger: list[RoundLedger]
    trajectory: list[np.ndarray] = field(default_factory=list)

    @property
    def total_symbols(self) -> int:
        return self.ledger[-1].cumulative if self.ledger else 0

    @property
    def final_accuracy(self) -> float:
        return self.ledger[-1].val_acc


@dataclass
class SdtState:
    """Server-side view of one passive client's sequential upload."""

    shard: Shard
    block: int  # samples per block
    rng: np.random.Generator
    channel: ChannelConfig
    received: list[Shard] = field(default_factory=list)
    n_received: int = 0

    @property
    def N(self) -> int:
        return math.ceil(len(self.shard) / self.block)

    @property
    def done(self) -> bool:
        return self.n_received >= len(self.shard)

    def receive(self) -> int:
        """Take the next block; returns the symbols it cost."""
        if self.done:
            return 0
        start, stop = self.n_received, min(self.n_received + self.block, len(self.shard))
        piece = Shard(self.shard.client, self.shard.inputs[start:stop], self.shard.labels[start:stop])
        self.received.append(transmit_dataset(piece, self.channel, self.rng))
        self.n_received = stop
        return symbol_count(piece)

    def partial(self) -> Shard:
        return concat(self.received, client=self.shard.client)


def accuracy_pct(correct: int, total: int) -> float:
    return 100.0 * correct / total


def evaluate(params: ModelParams, validation: Shard) -> float:
    """Argmax accuracy in percent."""
    if len(validation) == 0:
        raise ValueError("empty validation set")
    pred = nn.forward(params, validation.inputs).argmax(axis=1)
    correct = int(np.sum(pred == validation.labels.argmax(axis=1)))
    return accuracy_pct(correct, len(validation))


def _group_mean(grads: Sequence[GradientVector], P: int) -> np.ndarray:
    if not grads:
        return np.zeros(P)
    total = np.zeros(P)
    for g in grads:
        if len(g) != P:
            raise nn.ShapeError(f"gradient length {len(g)} != {P}")
        total += g.g
    return total / len(grads)


def hfcl_aggregate(
    server_grads: Sequence[GradientVector],
    device_grads: Sequence[GradientVector],
    params: ModelParams,
    eta: float,
) -> ModelParams:
    """Step along the server-group mean plus the device-group mean.

    An empty group contributes nothing.
    """
    P = params.spec.P
    direction = _group_mean(server_grads, P) + _group_mean(device_grads, P)
    return nn.sgd_step(params, direction, eta)


def weighted_aggregate(
    server_grads: Sequence[GradientVector],
    device_grads: Sequence[GradientVector],
    params: ModelParams,
    eta: float,
    server_sizes: Sequence[int],
    device_sizes: Sequence[int],
) -> ModelParams:
    """Sample-count weighted mean over all clients (comparison variant)."""
    grads = list(server_grads) + list(device_grads)
    sizes = np.asarray(list(server_sizes) + list(device_sizes), dtype=np.float64)
    if len(grads) != len(sizes) or not grads:
        raise nn.ShapeError("one size per gradient required")
    direction = sum(w * g.g for w, g in zip(sizes, grads)) / sizes.sum()
    return nn.sgd_step(params, direction, eta)


def sdt_window_gradient(
    partial: Shard,
    t: int,
    N: int,
    P: int,
    params: ModelParams,
    minibatches: int,
    rng: np.random.Generator,
    total: int | None = None,
    batch_size: int | None = None,
    loss: str = "xent",
) -> GradientVector:
    """Gradient over the first ``min(t P, D_k)`` received samples.

    For ``t > N`` the whole shard has arrived and is used. The mean uses the
    true window size. Mini-batching happens inside the window, with at most
    one mini-batch per sample.
    """
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    window = len(partial) if t > N else min(t * P, len(partial))
    if total is not None and len(partial) != min(t * P, total):
        raise ValueError(f"round {t}: server holds {len(partial)} samples, expected {min(t * P, total)}")
    part = partial.head(window)
    return nn.minibatch_gradient(
        params, part.inputs, part.labels, min(minibatches, window), rng, batch_size, loss
    )


def _train(
    roster: ClientRoster,
    spec: ModelSpec,
    cfg: TrainingConfig,
    channel: ChannelConfig,
    *,
    sdt: bool = False,
    symbols_P: int | None = None,
    sdt_block: int | None = None,
    validation: Shard | None = None,
    train_eval: Shard | None = None,
    link: LinkConfig = LinkConfig(),
    aggregation: str = "literal",
    keep_trajectory: bool = False,
) -> RunResult:
    P_model = spec.P
    P_sym = symbols_P or P_model
    seed = cfg.seed
    params = nn.init_params(spec, stream(seed, STREAM_INIT))
    if train_eval is None:
        train_eval = concat(roster.shards)

    states = {
        k: SdtState(
            roster.shard(k),
            (sdt_block or P_sym) if sdt else len(roster.shard(k)),
            stream(seed, STREAM_DATA_NOISE, k),
            channel,
        )
        for k in roster.passive
    }

    ledger: list[RoundLedger] = []
    trajectory = [params.theta] if keep_trajectory else []
    cumulative = 0
    for t in range(1, cfg.rounds + 1):
        symbols: dict[int, int] = {}
        server_grads, device_grads = [], []

        for k in roster.passive:
            st = states[k]
            symbols[k] = st.receive()
            rng = stream(seed, STREAM_MINIBATCH, k, t)
            if sdt:
                g = sdt_window_gradient(
                    st.partial(), t, st.N, st.block, params, cfg.minibatches, rng,
                    total=len(st.shard), batch_size=cfg.batch_size, loss=cfg.loss,
                )
            else:
                data = st.partial()
                g = nn.minibatch_gradient(
                    params, data.inputs, data.labels, cfg.minibatches, rng, cfg.batch_size, cfg.loss
                )
            server_grads.append(GradientVector(g.g, g.provenance, k))

        for k in roster.active:
            shard = roster.shard(k)
            g = nn.minibatch_gradient(
                params, shard.inputs, shard.labels, cfg.minibatches,
                stream(seed, STREAM_MINIBATCH, k, t), cfg.batch_size, cfg.loss,
            )
            g = GradientVector(g.g, g.provenance, k)
            device_grads.append(transmit_gradient(g, channel, stream(seed, STREAM_GRAD_NOISE, k, t)))
            symbols[k] = 2 * P_sym

        if aggregation == "literal":
            params = hfcl_aggregate(server_grads, device_grads, params, cfg.eta)
        elif aggregation == "weighted":
            params = weighted_aggregate(
                server_grads, device_grads, params, cfg.eta,
                [states[k].n_received for k in roster.passive],
                [len(roster.shard(k)) for k in roster.active],
            )
        else:
            raise ConfigurationError(f"unknown aggregation {aggregation!r}")

        uplink = [
            LinkSpec(k, P_sym if k in roster.active else symbols[k], link.snr)
            for k in sorted(symbols)
        ]
        round_delay = max_delay(allocate_bandwidth(uplink, link.bandwidth_hz)) if uplink else 0.0
        cumulative += sum(symbols.values())
        direction = _group_mean(server_grads, P_model) + _group_mean(device_grads, P_model)
        ledger.append(
            RoundLedger(
                t=t,
                symbols=symbols,
                grad_norm=float(np.linalg.norm(direction)),
                train_loss=nn.batch_loss(params, train_eval.inputs, train_eval.labels, cfg.loss),
                val_acc=evaluate(params, validation) if validation is not None else float("nan"),
                cumulative=cumulative,
                max_delay=round_delay,
            )
        )
        if keep_trajectory:
            trajectory.append(params.theta)
    return RunResult(params, ledger, trajectory)


def _as_shards(dataset) -> tuple[Shard, ...]:
    if isinstance(dataset, Shard):
        return (Shard(1, dataset.inputs, dataset.labels),)
    return tuple(dataset)


def run_cl(dataset, spec: ModelSpec, cfg: TrainingConfig, channel: ChannelConfig | None = None, **kw) -> RunResult:
    """Centralized training on data pooled at the server.

    ``dataset`` is a single shard or the list of client shards that were
    uploaded; the server averages per-shard mini-batch gradients each round.
    The upload goes through ``channel`` when one is given.
    """
    shards = _as_shards(dataset)
    channel = channel or ChannelConfig(noise=False)
    return _train(ClientRoster(shards, len(shards)), spec, cfg, channel, **kw)


def run_fl(roster: ClientRoster, spec: ModelSpec, cfg: TrainingConfig, channel: ChannelConfig, **kw) -> RunResult:
    if roster.L != 0:
        raise ConfigurationError(f"FL needs every client active, got L={roster.L}")
    return _train(roster, spec, cfg, channel, **kw)


def run_hfcl(roster: ClientRoster, spec: ModelSpec, cfg: TrainingConfig, channel: ChannelConfig, **kw) -> RunResult:
    return _train(roster, spec, cfg, channel, sdt=False, **kw)


def run_hfcl_sdt(roster: ClientRoster, spec: ModelSpec, cfg: TrainingConfig, channel: ChannelConfig, **kw) -> RunResult:
    return _train(roster, spec, cfg, channel, sdt=True, **kw)


def run_fl_active_only(
    roster: ClientRoster, spec: ModelSpec, cfg: TrainingConfig, channel: ChannelConfig, **kw
) -> RunResult:
    """FL over the active clients alone; passive data is never used for training."""
    if roster.L >= roster.K:
        raise ConfigurationError(
            f"active-only FL has no clients to train with when L=K={roster.K}"
        )
    active = [roster.shard(k) for k in roster.active]
    kw.setdefault("train_eval", concat(roster.shards))
    return _train(ClientRoster(active, 0, first=roster.first + roster.L), spec, cfg, channel, **kw)
