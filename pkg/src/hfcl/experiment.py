"""Experiment configs, single runs and sweeps.

A config is a flat ``key=value`` text file whose keys are the field names of
:class:`ExperimentConfig`. A run writes a CSV with header
``round,train_loss,val_acc_pct,cum_symbols,cum_blocks,max_delay_s``, one
row per completed round, followed by a single ``#``-prefixed JSON line with
the closed-form overhead total, the ledger total and a final-model summary.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import accounting as acc
from . import data as hdata
from . import nn
from .channel import DATA_NOISE_MODES, STREAM_SPLIT, ChannelConfig, stream
from .federation import (
    ClientRoster,
    ConfigurationError,
    LinkConfig,
    RunResult,
    run_cl,
    run_fl,
    run_fl_active_only,
    run_hfcl,
    run_hfcl_sdt,
)

MODES = ("cl", "fl", "fl-active-only", "hfcl", "hfcl-sdt")
MODELS = ("desk-mlp", "paper-cnn-count")
CSV_HEADER = "round,train_loss,val_acc_pct,cum_symbols,cum_blocks,max_delay_s"
SWEEP_VARS = {"passive": "passive", "L": "passive", "bits": "bits", "B": "bits", "snr_db": "snr_db"}

_DATA_DIR = Path(__file__).resolve().parents[2] / "data"
BUNDLED_IMAGES = _DATA_DIR / "mnist10k-images-idx3-ubyte.gz"
BUNDLED_LABELS = _DATA_DIR / "mnist10k-labels-idx1-ubyte.gz"

REFERENCE_P = 4352


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "hfcl"
    clients: int = 10  # K
    passive: int = 5  # L
    rounds: int = 50  # T
    bits: int = 5  # B
    snr_db: float = 20.0
    eta: float = 0.2
    minibatches: int = 1  # M_B
    batch_size: int | None = None
    model: str = "desk-mlp"
    images: str | None = None  # None: bundled 10k subset
    labels: str | None = None
    downsample: bool = True
    seed: int = 0
    out: str | None = None
    n_train: int = 1000
    n_val: int = 500
    hidden: int = 32
    noise: bool = True
    data_noise: str = "per-symbol"
    aggregation: str = "literal"
    sdt_block: int | None = None
    bandwidth_hz: float = 1e6
    link_snr_db: float = 10.0
    loss: str = "xent"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {', '.join(MODELS)}; got {self.model!r}")
        if self.clients < 1:
            raise ConfigurationError("clients must be >= 1")
        if not 0 <= self.passive <= self.clients:
            raise ConfigurationError(f"passive must be in 0..{self.clients}, got {self.passive}")
        if self.mode == "fl" and self.passive != 0:
            raise ConfigurationError(f"mode fl requires passive=0, got {self.passive}")
        if self.mode == "fl-active-only" and self.passive >= self.clients:
            raise ConfigurationError(
                f"mode fl-active-only requires passive < clients, got {self.passive} >= {self.clients}"
            )
        if self.n_train < self.clients:
            raise ConfigurationError("n_train must be at least the number of clients")
        if self.n_val < 1:
            raise ConfigurationError("n_val must be >= 1")
        if self.data_noise not in DATA_NOISE_MODES:
            raise ConfigurationError(f"data_noise must be one of {DATA_NOISE_MODES}")
        if self.aggregation not in ("literal", "weighted"):
            raise ConfigurationError("aggregation must be literal or weighted")
        if self.sdt_block is not None and self.sdt_block < 1:
            raise ConfigurationError("sdt_block must be >= 1")
        try:
            self.training()
            self.channel()
        except ValueError as e:
            raise ConfigurationError(str(e)) from None

    def training(self) -> nn.TrainingConfig:
        return nn.TrainingConfig(
            eta=self.eta, minibatches=self.minibatches, batch_size=self.batch_size,
            rounds=self.rounds, seed=self.seed, loss=self.loss,
        )

    def channel(self) -> ChannelConfig:
        return ChannelConfig(bits=self.bits, snr_db=self.snr_db, noise=self.noise, data_noise=self.data_noise)

    def link(self) -> LinkConfig:
        return LinkConfig(bandwidth_hz=self.bandwidth_hz, snr_db=self.link_snr_db)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


# -- config text format ------------------------------------------------------

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key: str, text: str):
    """Parse ``text`` as the type of config field ``key``."""
    if key not in _FIELDS:
        raise ConfigurationError(f"unknown config key {key!r}")
    kind = str(_FIELDS[key].type)
    text = text.strip()
    if "None" in kind and text.lower() in ("none", ""):
        return None
    try:
        if kind.startswith("bool"):
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from None
    return text


def dumps_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k}={_format_value(getattr(cfg, k))}\n" for k in _FIELDS)


def loads_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigurationError(f"line {n}: duplicate key {key!r}")
        values[key] = parse_value(key, value)
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load_config(path) -> ExperimentConfig:
    return loads_config(Path(path).read_text())


# -- data --------------------------------------------------------------------


def load_data(cfg: ExperimentConfig) -> tuple[list[hdata.Shard], hdata.Shard]:
    """Client shards and a disjoint validation split, both seeded by ``cfg.seed``."""
    images = Path(cfg.images) if cfg.images else BUNDLED_IMAGES
    labels = Path(cfg.labels) if cfg.labels else BUNDLED_LABELS
    pool = hdata.load_idx(images, labels)
    need = cfg.n_train + cfg.n_val
    if need > len(pool):
        raise ConfigurationError(f"n_train + n_val = {need} exceeds the {len(pool)} samples available")
    order = stream(cfg.seed, STREAM_SPLIT).permutation(len(pool))
    train = hdata.subset(pool, order[: cfg.n_train])
    val = hdata.subset(pool, order[cfg.n_train : need])
    if cfg.downsample:
        train, val = hdata.downsample(train), hdata.downsample(val)
    return hdata.partition_iid(train, cfg.clients, cfg.seed), val


def model_for(cfg: ExperimentConfig, sample_shape) -> tuple[nn.ModelSpec, int | None]:
    """Trainable spec plus the parameter count used for symbol accounting."""
    spec = nn.desk_mlp_spec(int(np.prod(sample_shape)), cfg.hidden)
    return spec, (REFERENCE_P if cfg.model == "paper-cnn-count" else None)


def formula_total(cfg: ExperimentConfig, shards: Sequence[hdata.Shard], P: int) -> int:
    d = [hdata.symbol_count(s) for s in shards]
    K, L, T = cfg.clients, cfg.passive, cfg.rounds
    if cfg.mode == "cl":
        return acc.overhead_cl(sum(d))
    if cfg.mode == "fl":
        return acc.overhead_fl(T, P, K)
    if cfg.mode == "fl-active-only":
        return acc.overhead_fl(T, P, K - L)
    passive = d[:L]
    if cfg.mode == "hfcl-sdt":
        # a run shorter than N rounds stops before every block has been sent
        block = cfg.sdt_block or P
        passive = [
            min(T * block, len(s)) * (s.symbol_count // len(s)) for s in shards[:L]
        ]
    return acc.overhead_hfcl(T, P, K, L, passive)


# -- running -----------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    round: int
    train_loss: float
    val_acc_pct: float
    cum_symbols: int
    cum_blocks: float
    max_delay_s: float

    def line(self) -> str:
        return ",".join(
            [str(self.round), repr(self.train_loss), repr(self.val_acc_pct),
             str(self.cum_symbols), repr(self.cum_blocks), repr(self.max_delay_s)]
        )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    footer: dict
    theta: np.ndarray

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].val_acc_pct

    def text(self) -> str:
        body = "".join(r.line() + "\n" for r in self.rows)
        return CSV_HEADER + "\n" + body + "# " + json.dumps(self.footer, sort_keys=True) + "\n"


def execute(cfg: ExperimentConfig, shards: Sequence[hdata.Shard], validation: hdata.Shard) -> RunResult:
    spec, symbols_P = model_for(cfg, shards[0].inputs.shape[1:])
    train = cfg.training()
    chan = cfg.channel()
    kw = dict(validation=validation, link=cfg.link(), aggregation=cfg.aggregation, symbols_P=symbols_P)
    roster = ClientRoster(tuple(shards), cfg.passive)
    if cfg.mode == "cl":
        return run_cl(list(shards), spec, train, chan, **kw)
    if cfg.mode == "fl":
        return run_fl(roster, spec, train, chan, **kw)
    if cfg.mode == "fl-active-only":
        return run_fl_active_only(roster, spec, train, chan, **kw)
    if cfg.mode == "hfcl":
        return run_hfcl(roster, spec, train, chan, **kw)
    return run_hfcl_sdt(roster, spec, train, chan, sdt_block=cfg.sdt_block, **kw)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run one configuration; writes ``cfg.out`` when set."""
    shards, validation = load_data(cfg)
    result = execute(cfg, shards, validation)
    spec, symbols_P = model_for(cfg, shards[0].inputs.shape[1:])
    P = symbols_P or spec.P
    rows = [
        MetricsRow(
            r.t, r.train_loss, r.val_acc, r.cumulative,
            r.cumulative / acc.SYMBOLS_PER_BLOCK, r.max_delay,
        )
        for r in result.ledger
    ]
    formula = formula_total(cfg, shards, P)
    ledger_total = result.total_symbols
    theta = result.params.theta
    footer = {
        "mode": cfg.mode,
        "K": cfg.clients,
        "L": cfg.passive,
        "T": cfg.rounds,
        "P_model": spec.P,
        "P_symbols": P,
        "formula_symbols": formula,
        "ledger_symbols": ledger_total,
        "formula_blocks": acc.to_blocks(formula),
        "totals_match": formula == ledger_total,
        "final_val_acc_pct": rows[-1].val_acc_pct,
        "final_train_loss": rows[-1].train_loss,
        "theta_norm": float(np.linalg.norm(theta)),
        "theta_sha256": hashlib.sha256(theta.tobytes()).hexdigest(),
        "config": {k: _format_value(getattr(cfg, k)) for k in _FIELDS if k != "out"},
    }
    out = ExperimentResult(cfg, rows, footer, theta)
    if formula != ledger_total:
        raise RuntimeError(f"ledger total {ledger_total} != closed-form total {formula}")
    if cfg.out:
        write_atomic(cfg.out, out.text())
    return out


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_metrics(path) -> tuple[list[dict], dict]:
    """Rows and footer of a metrics file."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: not a metrics file")
    keys = CSV_HEADER.split(",")
    rows, footer = [], None
    for line in lines[1:]:
        if line.startswith("#"):
            footer = json.loads(line[1:])
        else:
            rows.append(dict(zip(keys, (float(v) for v in line.split(",")))))
    return rows, footer


# -- sweeps ------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    value: float
    mean: float
    std: float
    accuracies: tuple[float, ...]


def _cell_path(out_dir: Path, var: str, value, seed: int) -> Path:
    return out_dir / f"{var}={_format_value(value)}_seed={seed}.csv"


def _run_cell(cfg: ExperimentConfig) -> float:
    return run_experiment(cfg).final_accuracy


def sweep(
    template: ExperimentConfig,
    var: str,
    values: Sequence,
    seeds: Sequence[int],
    out_dir=None,
    jobs: int = 1,
) -> list[SweepCell]:
    """Mean and sample standard deviation of final accuracy per value."""
    if var not in SWEEP_VARS:
        raise ConfigurationError(f"cannot sweep {var!r}; choose from passive (L), bits (B), snr_db")
    if not values or not seeds:
        raise ConfigurationError("sweep needs at least one value and one seed")
    key = SWEEP_VARS[var]
    values = [parse_value(key, str(v)) for v in values]
    out_dir = Path(out_dir) if out_dir else None
    cells = []
    for v in values:
        for s in seeds:
            out = str(_cell_path(out_dir, key, v, s)) if out_dir else None
            cells.append(template.replace(**{key: v, "seed": int(s), "out": out}))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            accs = list(pool.map(_run_cell, cells))
    else:
        accs = [_run_cell(c) for c in cells]

    table, n = [], len(seeds)
    for i, v in enumerate(values):
        a = accs[i * n : (i + 1) * n]
        std = float(np.std(a, ddof=1)) if n > 1 else 0.0
        table.append(SweepCell(v, float(np.mean(a)), std, tuple(a)))
    return table


def format_table(var: str, table: Sequence[SweepCell]) -> str:
    lines = [f"{SWEEP_VARS.get(var, var)},mean_acc_pct,std_acc_pct,n"]
    for c in table:
        lines.append(f"{_format_value(c.value)},{c.mean:.4f},{c.std:.4f},{len(c.accuracies)}")
    return "\n".join(lines) + "\n"
