"""The boosted recurrent sparse memory layer.

Every operation accepts an optional leading batch axis; cells are stored
flattened (``c = m * n``) with cell ``j`` of group ``i`` at flat index ``i * n + j``.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dense import DTYPE, DimensionError, init_weights

PARTITION_KINDS = ("feed-forward", "recurrent", "integrated")
STRATEGIES = ("boost", "inhibition", "none")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    """Contiguous blocks of cells, each with its own winner budget.

    ``blocks`` is a sequence of ``(kind, size)`` pairs in cell order.
    """

    blocks: tuple

    def __post_init__(self):
        blocks = tuple((str(kind), int(size)) for kind, size in self.blocks)
        for kind, size in blocks:
            if kind not in PARTITION_KINDS:
                raise ConfigError(f"unknown partition kind {kind!r}")
            if size < 1:
                raise ConfigError("partition sizes must be positive")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_fractions(cls, fractions, n_cells):
        """Build from ``{kind: fraction}``; rounding error goes to the largest block."""
        kinds = list(fractions)
        sizes = [int(np.floor(fractions[kind] * n_cells)) for kind in kinds]
        sizes[int(np.argmax(sizes))] += n_cells - sum(sizes)
        return cls(tuple(zip(kinds, sizes)))

    @property
    def n_cells(self):
        return sum(size for _, size in self.blocks)

    def winners(self, k):
        """Per-block winner counts ``floor(k * m_p / total)`` plus remainder.

        The remainder ``k - sum(floors)`` is handed out one winner at a time to
        blocks in descending size order (lowest index first among equal sizes).
        """
        total = self.n_cells
        sizes = [size for _, size in self.blocks]
        k_p = [k * size // total for size in sizes]
        order = sorted(range(len(sizes)), key=lambda p: (-sizes[p], p))
        remainder = k - sum(k_p)
        for p in order[:remainder]:
            k_p[p] += 1
        for p, (kp, size) in enumerate(zip(k_p, sizes)):
            if kp < 1:
                raise ConfigError(f"partition {p} receives no winners (k={k}, size={size})")
            if kp > size:
                raise ConfigError(f"partition {p} needs {kp} winners but has {size} cells")
        return k_p

    def slices(self):
        start = 0
        for _, size in self.blocks:
            yield slice(start, start + size)
            start += size

    def gates(self):
        """Per-cell (feed-forward, recurrent) input gates as 0/1 float arrays."""
        ff = np.zeros(self.n_cells, dtype=DTYPE)
        rec = np.zeros(self.n_cells, dtype=DTYPE)
        for (kind, _), sl in zip(self.blocks, self.slices()):
            ff[sl] = kind != "recurrent"
            rec[sl] = kind != "feed-forward"
        return ff, rec


@dataclass(frozen=True)
class LayerGeometry:
    m: int
    n: int
    k: int
    d_in: int
    partitions: Optional[PartitionSpec] = None

    def __post_init__(self):
        for name in ("m", "n", "k", "d_in"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.k > self.m:
            raise ConfigError(f"k={self.k} exceeds group count m={self.m}")
        if self.partitions is not None:
            if self.n != 1:
                raise ConfigError("functional partitions require a flattened layer (n=1)")
            if self.partitions.n_cells != self.n_cells:
                raise ConfigError(
                    f"partitions cover {self.partitions.n_cells} cells, layer has {self.n_cells}"
                )
            self.partitions.winners(self.k)

    @property
    def n_cells(self):
        return self.m * self.n

    @property
    def flattened(self):
        return self.n == 1

    @property
    def sparsity(self):
        return self.k / self.n_cells


@dataclass
class LayerWeights:
    w_a: np.ndarray
    w_b: np.ndarray
    w_d: np.ndarray
    delta: Optional[np.ndarray] = None

    @classmethod
    def initialize(cls, geometry, rng, trainable_decay=False, epsilon=0.85, dtype=DTYPE):
        c = geometry.n_cells
        w_a = init_weights((geometry.m, geometry.d_in), "uniform-scaled", rng, dtype)
        w_b = init_weights((c, c), "uniform-scaled", rng, dtype)
        w_d = init_weights((geometry.d_in, geometry.m), "uniform-scaled", rng, dtype)
        delta = None
        if trainable_decay:
            # start every cell at the fixed-decay value
            delta = np.full(c, np.log(epsilon / (1.0 - epsilon)), dtype=dtype)
        return cls(w_a, w_b, w_d, delta)

    def as_dict(self):
        out = {"w_a": self.w_a, "w_b": self.w_b, "w_d": self.w_d}
        if self.delta is not None:
            out["delta"] = self.delta
        return out

    def copy(self):
        return LayerWeights(**{k: v.copy() for k, v in self.as_dict().items()})


@dataclass
class LayerState:
    """Per-sequence recurrent state for a batch of ``B`` sequences.

    ``psi`` is the memory trace and ``x_b`` its normalization (the next
    recurrent input). ``psi_prev`` / ``y_prev`` are the two quantities ``psi``
    was merged from; they are kept so the decay can be re-applied inside the
    next step, which is the only path by which the decay receives gradient.
    """

    psi: np.ndarray
    x_b: np.ndarray
    psi_prev: np.ndarray
    y_prev: np.ndarray
    inhibition: np.ndarray

    @classmethod
    def zeros(cls, batch_size, n_cells, dtype=DTYPE):
        z = lambda: np.zeros((batch_size, n_cells), dtype=dtype)  # noqa: E731
        return cls(z(), z(), z(), z(), z())

    @property
    def batch_size(self):
        return self.psi.shape[0]

    def copy(self):
        return replace(self, **{f: getattr(self, f).copy() for f in self.__dataclass_fields__})

    def clear(self, rows):
        """Zero the memory of the selected sequences (boolean mask or indices)."""
        for name in self.__dataclass_fields__:
            getattr(self, name)[rows] = 0.0


@dataclass
class StepOutput:
    x_a: np.ndarray
    psi: np.ndarray
    psi_prev: np.ndarray
    y_prev: np.ndarray
    decay: np.ndarray
    x_b: np.ndarray
    z_a: np.ndarray
    z_b: np.ndarray
    boost: np.ndarray
    sigma: np.ndarray
    mask_group: np.ndarray
    mask_cell: np.ndarray
    y: np.ndarray
    y_group: np.ndarray
    x_hat: np.ndarray
    group_argmax: np.ndarray = field(repr=False)

    @property
    def winners(self):
        """Flat boolean mask of winning cells, shape (B, c)."""
        return (self.mask_cell * self.mask_group[..., None]).reshape(self.y.shape[0], -1) > 0


# -- individual operations ---------------------------------------------------


def ff_contribution(w_a, x_a):
    x_a = np.asarray(x_a, dtype=w_a.dtype)
    if x_a.shape[-1] != w_a.shape[1]:
        raise DimensionError(f"input has {x_a.shape[-1]} features, w_a expects {w_a.shape[1]}")
    return x_a @ w_a.T


def rec_contribution(w_b, x_b, m, n):
    x_b = np.asarray(x_b, dtype=w_b.dtype)
    if x_b.shape[-1] != w_b.shape[1] or w_b.shape[0] != m * n:
        raise DimensionError(f"recurrent input {x_b.shape} incompatible with w_b {w_b.shape}")
    return (x_b @ w_b.T).reshape(x_b.shape[:-1] + (m, n))


def combine_boost(z_a, z_b, b):
    """sigma_ij = (z_a_i + z_b_ij) * b_ij with z_a broadcast across a group's cells.

    ``b`` may be given per cell either flat (..., m*n) or shaped (..., m, n).
    """
    z_b = np.asarray(z_b)
    b = np.asarray(b, dtype=z_b.dtype)
    m, n = z_b.shape[-2:]
    if b.ndim and b.shape[-2:] != (m, n):
        b = b.reshape(b.shape[:-1] + (m, n))
    if np.any(b <= 0):
        raise ValueError("boost factors must be positive")
    return (np.asarray(z_a)[..., None] + z_b) * b


def _topk_indices(scores, k):
    """Indices of the k largest entries along the last axis, lowest index on ties."""
    if np.isnan(scores).any():
        raise FloatingPointError("NaN in selection scores")
    return np.argsort(-scores, axis=-1, kind="stable")[..., :k]


def topk_masks(sigma, k):
    """Return (group mask (..., m), cell mask (..., m, n)).

    The cell mask marks each group's strongest cell; the group mask marks the
    ``k`` groups whose strongest cell is largest.
    """
    sigma = np.asarray(sigma)
    best = np.argmax(sigma, axis=-1)
    strength = np.max(sigma, axis=-1)
    lam = np.zeros(strength.shape, dtype=sigma.dtype)
    np.put_along_axis(lam, _topk_indices(strength, k), 1.0, axis=-1)
    pi = np.zeros(sigma.shape, dtype=sigma.dtype)
    np.put_along_axis(pi, best[..., None], 1.0, axis=-1)
    return lam, pi


def partitioned_topk(sigma, partitions, k):
    """Top-k applied within each partition block of a flattened layer.

    ``sigma`` must already hold each block's gated score (feed-forward-only
    blocks carry only the boosted feed-forward term, and so on).
    Returns masks shaped like :func:`topk_masks`.
    """
    sigma = np.asarray(sigma)
    scores = sigma[..., 0]
    lam = np.zeros(scores.shape, dtype=sigma.dtype)
    for sl, kp in zip(partitions.slices(), partitions.winners(k)):
        idx = _topk_indices(scores[..., sl], kp) + sl.start
        np.put_along_axis(lam, idx, 1.0, axis=-1)
    return lam, np.ones(sigma.shape, dtype=sigma.dtype)


def activate(sigma, mask_group, mask_cell):
    return np.tanh(sigma * mask_group[..., None] * mask_cell)


def group_max(y):
    return np.max(y, axis=-1)


def decode(w_d, y_group):
    y_group = np.asarray(y_group, dtype=w_d.dtype)
    if y_group.shape[-1] != w_d.shape[1]:
        raise DimensionError(f"group activity {y_group.shape} incompatible with w_d {w_d.shape}")
    return y_group @ w_d.T


def update_memory(psi, y, decay, ceiling=0.99):
    """psi' = max(psi * decay, clamp(y, 0, 1^-)) elementwise.

    tanh rounds to exactly 1.0 for large inputs, so activity entering the
    trace is capped at the largest float below one to keep psi < 1.
    """
    decay = np.asarray(decay)
    if np.any(decay < 0) or np.any(decay > ceiling):
        raise ValueError(f"decay must lie in [0, {ceiling}]")
    y = np.asarray(y)
    top = np.nextafter(np.array(1.0, dtype=y.dtype), 0)
    return np.maximum(np.asarray(psi) * decay, np.clip(y, 0.0, top))


def normalize_recurrent(psi):
    """Scale the memory trace to sum to one; an empty trace maps to zeros."""
    psi = np.asarray(psi, dtype=DTYPE)
    if np.any(psi < 0):
        raise ValueError("memory trace must be non-negative")
    total = psi.sum(axis=-1, keepdims=True)
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, psi / safe, 0.0)


def update_duty(duty, winners, rate):
    """Exponential moving average of winner membership.

    ``winners`` may be batched (B, c); the batch mean is used so that the duty
    cycle stays a per-cell statistic shared by all sequences.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError("duty-cycle rate must lie in (0, 1)")
    winners = np.asarray(winners, dtype=DTYPE)
    if winners.ndim > 1:
        winners = winners.reshape(-1, winners.shape[-1]).mean(axis=0)
    return (1.0 - rate) * np.asarray(duty) + rate * winners


def compute_boost(duty, beta, target_density):
    if beta < 0:
        raise ValueError("boost strength must be non-negative")
    return np.exp(beta * (target_density - np.asarray(duty)))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- composed layer ----------------------------------------------------------


class RSMLayer:
    """One bRSM layer: weights plus the layer-wide duty/boost statistics.

    Per-sequence memory lives in :class:`LayerState` objects passed to
    :meth:`step`, so several independent streams can share one layer.
    """

    def __init__(
        self,
        geometry,
        weights,
        *,
        epsilon=0.85,
        decay_ceiling=0.99,
        duty_rate=0.005,
        boost_strength=1.2,
        strategy="boost",
        inhibition_decay=0.5,
        inhibition_strength=10.0,
    ):
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}")
        if not 0.0 <= epsilon <= decay_ceiling < 1.0:
            raise ConfigError("need 0 <= epsilon <= decay_ceiling < 1")
        self.geometry = geometry
        self.weights = weights
        self.epsilon = float(epsilon)
        self.decay_ceiling = float(decay_ceiling)
        self.duty_rate = float(duty_rate)
        self.strategy = strategy
        self.boost_strength = float(boost_strength) if strategy == "boost" else 0.0
        self.inhibition_decay = float(inhibition_decay)
        self.inhibition_strength = float(inhibition_strength)
        self.duty = np.zeros(geometry.n_cells, dtype=weights.w_a.dtype)
        if geometry.partitions is not None:
            self._ff_gate, self._rec_gate = geometry.partitions.gates()
        else:
            self._ff_gate = self._rec_gate = None

    @property
    def trainable_decay(self):
        return self.weights.delta is not None

    def decay(self):
        if self.weights.delta is None:
            return np.full(self.geometry.n_cells, self.epsilon, dtype=self.weights.w_a.dtype)
        return np.minimum(sigmoid(self.weights.delta), self.decay_ceiling)

    def boost(self):
        return compute_boost(self.duty, self.boost_strength, self.geometry.sparsity)

    def new_state(self, batch_size=1):
        return LayerState.zeros(batch_size, self.geometry.n_cells, self.weights.w_a.dtype)

    def step(self, x_a, state, *, update_duty_cycle=True):
        """Advance every sequence in ``state`` by one input; returns (StepOutput, state')."""
        g = self.geometry
        w = self.weights
        x_a = np.atleast_2d(np.asarray(x_a, dtype=w.w_a.dtype))
        if x_a.shape[0] != state.batch_size:
            raise DimensionError(f"batch of {x_a.shape[0]} inputs for {state.batch_size} sequences")

        decay = self.decay()
        psi = update_memory(state.psi_prev, state.y_prev, decay, self.decay_ceiling)
        x_b = normalize_recurrent(psi)

        z_a = ff_contribution(w.w_a, x_a)
        z_b = rec_contribution(w.w_b, x_b, g.m, g.n)
        b = self.boost().reshape(g.m, g.n)
        if self._ff_gate is not None:
            pre_a = z_a[..., None] * self._ff_gate.reshape(g.m, g.n)
            pre_b = z_b * self._rec_gate.reshape(g.m, g.n)
            sigma = (pre_a + pre_b) * b
        else:
            sigma = combine_boost(z_a, z_b, b)

        scores = sigma
        if self.strategy == "inhibition":
            scores = sigma - self.inhibition_strength * state.inhibition.reshape(sigma.shape)
        if g.partitions is not None:
            lam, pi = partitioned_topk(scores, g.partitions, g.k)
        else:
            lam, pi = topk_masks(scores, g.k)

        y = activate(sigma, lam, pi)
        y_group = group_max(y)
        x_hat = decode(w.w_d, y_group)

        out = StepOutput(
            x_a=x_a, psi=psi, psi_prev=state.psi_prev, y_prev=state.y_prev, decay=decay,
            x_b=x_b, z_a=z_a, z_b=z_b, boost=b, sigma=sigma, mask_group=lam, mask_cell=pi,
            y=y, y_group=y_group, x_hat=x_hat, group_argmax=np.argmax(y, axis=-1),
        )

        y_flat = update_memory(0.0, y.reshape(state.batch_size, -1), 0.0)
        new_psi = update_memory(psi, y_flat, decay, self.decay_ceiling)
        winners = out.winners
        inhibition = state.inhibition
        if self.strategy == "inhibition":
            inhibition = np.maximum(inhibition * self.inhibition_decay, winners)
        new_state = LayerState(
            psi=new_psi,
            x_b=normalize_recurrent(new_psi),
            psi_prev=psi,
            y_prev=y_flat,
            inhibition=inhibition,
        )
        if update_duty_cycle:
            self.duty = update_duty(self.duty, winners, self.duty_rate)
        return out, new_state
