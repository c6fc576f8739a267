"""Layer entropy, perplexity, accuracy and newline-delimited metric records."""

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def _binary_entropy(p):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p * np.log2(p) - (1.0 - p) * np.log2(1.0 - p)
    return np.where((p <= 0) | (p >= 1), 0.0, h)


def layer_entropy(duty):
    """Sum of per-cell binary entropies of the duty cycles, in bits."""
    duty = np.asarray(duty, dtype=np.float64)
    if np.any(duty < 0) or np.any(duty > 1):
        raise ValueError("duty cycles must lie in [0, 1]")
    return float(np.sum(_binary_entropy(duty)))


def max_entropy(k, m, n=1):
    """Entropy of a layer whose every cell fires at the target sparsity k/(m n)."""
    cells = m * n
    if not 0 < k <= cells:
        raise ValueError(f"invalid sparsity k={k} for {cells} cells")
    return float(cells * _binary_entropy(k / cells))


def perplexity(log_probs):
    """exp of the mean negative natural-log probability."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.size == 0:
        raise ValueError("no log-probabilities")
    if np.any(~np.isfinite(log_probs)) or np.any(log_probs > 1e-12):
        raise ValueError("log-probabilities must be finite and <= 0 (probabilities in (0, 1])")
    return float(np.exp(-np.mean(log_probs)))


def accuracy(predicted, truth):
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise ValueError("empty prediction stream")
    return float(np.mean(predicted == truth))


class DutyAccumulator:
    """Stand-alone duty-cycle EMA, e.g. for entropy of an evaluation stream."""

    def __init__(self, n_cells, rate):
        self.duty = np.zeros(n_cells)
        self.rate = rate

    def update(self, winners):
        winners = np.asarray(winners, dtype=np.float64).reshape(-1, self.duty.size).mean(axis=0)
        self.duty = (1.0 - self.rate) * self.duty + self.rate * winners

    def entropy(self):
        return layer_entropy(self.duty)


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class MetricRecord:
    step: int
    values: dict
    run_id: str
    config_hash: str
    timestamp: float = field(default_factory=time.time)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


class OrderError(ValueError):
    pass


class MetricsWriter:
    """JSON-lines sink for one run, appended to as the run progresses.

    The file name embeds the run identifier and config hash, so two runs never
    share a file.
    """

    def __init__(self, directory, run_id, config, flush_every=1):
        self.run_id = run_id
        self.config_hash = config_hash(config)
        self.path = Path(directory) / f"metrics-{run_id}-{self.config_hash}.jsonl"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self.flush_every = max(1, int(flush_every))
        self._pending = 0
        self.last_step = None

    def emit(self, step, **values):
        if self.last_step is not None and step < self.last_step:
            raise OrderError(f"step {step} emitted after step {self.last_step}")
        clean = {k: _plain(v) for k, v in values.items()}
        record = MetricRecord(int(step), clean, self.run_id, self.config_hash)
        self._fh.write(record.to_json() + "\n")
        self.last_step = step
        self._pending += 1
        if self._pending >= self.flush_every:
            self.flush()
        return record

    def flush(self):
        self._fh.flush()
        self._pending = 0

    def close(self):
        if not self._fh.closed:
            self.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    with open(path) as fh:
        return [MetricRecord.from_json(line) for line in fh if line.strip()]


def _plain(value):
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value
