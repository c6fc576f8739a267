"""Stochastic sequential grammars: fixed sub-sequences of labels concatenated
in uniformly random order with no boundary markers.

The Bayes-optimal next-label predictor for such a stream is a filter over the
hidden (sub-sequence, position) state. :class:`BeliefAutomaton` memoizes that
filter so both the exact ceiling (an expectation over reachable beliefs) and
the Monte Carlo estimate (the filter run on sampled streams) are cheap.
"""

from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

PAPER_8X9 = (
    (2, 4, 0, 7, 8, 1, 6, 1, 8),
    (2, 7, 4, 9, 5, 9, 3, 1, 0),
    (5, 7, 3, 4, 1, 3, 1, 6, 4),
    (1, 3, 7, 5, 2, 5, 5, 3, 4),
    (2, 9, 1, 9, 2, 8, 3, 2, 7),
    (1, 2, 6, 4, 8, 3, 5, 0, 3),
    (3, 8, 0, 5, 6, 4, 1, 3, 9),
    (4, 7, 5, 3, 7, 6, 7, 2, 4),
)

BUILTIN_GRAMMARS = {
    "paper-8x9": PAPER_8X9,
    "two-by-four": ((0, 1, 2, 3), (0, 3, 2, 1)),
}


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Grammar:
    sub_sequences: tuple
    alphabet_size: int = 10

    def __post_init__(self):
        seqs = tuple(tuple(int(v) for v in s) for s in self.sub_sequences)
        if not seqs:
            raise GrammarError("grammar needs at least one sub-sequence")
        lengths = {len(s) for s in seqs}
        if len(lengths) != 1 or 0 in lengths:
            raise GrammarError("sub-sequences must share one non-zero length")
        labels = {v for s in seqs for v in s}
        if min(labels) < 0 or max(labels) >= self.alphabet_size:
            raise GrammarError(f"labels must lie in [0, {self.alphabet_size})")
        object.__setattr__(self, "sub_sequences", seqs)

    @property
    def m(self):
        return len(self.sub_sequences)

    @property
    def n(self):
        return len(self.sub_sequences[0])

    def to_text(self):
        return "".join(", ".join(str(v) for v in s) + "\n" for s in self.sub_sequences)

    @classmethod
    def from_text(cls, text, alphabet_size=10):
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([int(tok) for tok in line.replace(",", " ").split()])
            except ValueError as exc:
                raise GrammarError(f"line {lineno}: {exc}") from None
        return cls(tuple(map(tuple, rows)), alphabet_size)

    @classmethod
    def builtin(cls, name):
        try:
            return cls(BUILTIN_GRAMMARS[name])
        except KeyError:
            raise GrammarError(f"unknown builtin grammar {name!r}") from None


def load_grammar(source):
    """Builtin name or path to a grammar text file."""
    if source in BUILTIN_GRAMMARS:
        return Grammar.builtin(source)
    with open(source) as fh:
        return Grammar.from_text(fh.read())


def gen_grammar(m, n, rng, distinct_prefix=False, alphabet_size=10):
    if m < 1 or n < 1:
        raise GrammarError("m and n must be >= 1")
    prefix_len = min(2, n)
    if distinct_prefix and m > alphabet_size**prefix_len:
        raise GrammarError(f"cannot give {m} sub-sequences distinct {prefix_len}-label prefixes")
    seqs, prefixes = [], set()
    while len(seqs) < m:
        seq = tuple(int(v) for v in rng.integers(alphabet_size, size=n))
        if distinct_prefix:
            if seq[:prefix_len] in prefixes:
                continue
            prefixes.add(seq[:prefix_len])
        seqs.append(seq)
    return Grammar(tuple(seqs), alphabet_size)


def sample_stream(grammar, length, rng):
    """Concatenate uniformly chosen sub-sequences and truncate to ``length`` labels."""
    if length < 1:
        raise ValueError("length must be >= 1")
    out = []
    while len(out) < length:
        out.extend(grammar.sub_sequences[int(rng.integers(grammar.m))])
    return np.array(out[:length], dtype=np.int64)


class GrammarStream:
    """``batch`` independent endless label streams from one grammar."""

    def __init__(self, grammar, batch, rng):
        self.table = np.array(grammar.sub_sequences, dtype=np.int64)
        self.rng = rng
        self.seq = rng.integers(grammar.m, size=batch)
        self.pos = np.zeros(batch, dtype=np.int64)

    def __iter__(self):
        return self

    def __next__(self):
        labels = self.table[self.seq, self.pos]
        self.pos += 1
        done = self.pos == self.table.shape[1]
        if done.any():
            self.pos[done] = 0
            self.seq[done] = self.rng.integers(self.table.shape[0], size=int(done.sum()))
        return labels


class BeliefAutomaton:
    """Memoized Bayes filter over hidden (sub-sequence, position) states.

    A node is the predictive distribution over the hidden state of the *next*
    item; node 0 is the stationary (uniform) distribution.
    """

    def __init__(self, grammar, key_decimals=12):
        self.grammar = grammar
        m, n = grammar.m, grammar.n
        self.labels = np.array(grammar.sub_sequences, dtype=np.int64).reshape(-1)
        self.n_states = m * n
        succ = np.zeros((self.n_states, self.n_states))
        for s in range(m):
            for p in range(n):
                h = s * n + p
                if p + 1 < n:
                    succ[h, h + 1] = 1.0
                else:
                    succ[h, np.arange(m) * n] = 1.0 / m
        self.succ = succ
        self.decimals = key_decimals
        self.nodes = []
        self.index = {}
        self.predictive = []
        self.children = []
        self._add(np.full(self.n_states, 1.0 / self.n_states))

    def _key(self, dist):
        nz = np.flatnonzero(dist > 10.0 ** (-self.decimals))
        return tuple(zip(nz.tolist(), np.round(dist[nz], self.decimals).tolist()))

    def _add(self, dist):
        key = self._key(dist)
        node = self.index.get(key)
        if node is None:
            node = len(self.nodes)
            self.index[key] = node
            self.nodes.append(dist)
            pred = np.bincount(self.labels, weights=dist, minlength=self.grammar.alphabet_size)
            self.predictive.append(pred / pred.sum())
            self.children.append({})
        return node

    def label_distribution(self, node):
        return self.predictive[node]

    def best_label(self, node):
        return int(np.argmax(self.predictive[node]))

    def observe(self, node, label):
        """Node reached after observing ``label`` while in ``node``."""
        child = self.children[node].get(label)
        if child is None:
            dist = self.nodes[node] * (self.labels == label)
            total = dist.sum()
            if total <= 0:
                raise GrammarError(f"label {label} impossible under current belief")
            child = self._add((dist / total) @ self.succ)
            self.children[node][label] = child
        return child


def ceiling_exact(grammar, tol=1e-13, max_steps=100_000, prune=1e-15, patience=None):
    """Stationary per-step accuracy of the Bayes-optimal next-label predictor.

    Propagates the probability of every reachable belief node forward from the
    stationary prior. The expected accuracy at time t is non-decreasing in t
    (more history never hurts the Bayes predictor) so iteration stops once it
    changes by less than ``tol`` for ``patience`` consecutive steps.
    """
    auto = BeliefAutomaton(grammar)
    patience = patience or 2 * grammar.n + 2
    dist = {0: 1.0}
    prev = None
    quiet = 0
    acc = 0.0
    for _ in range(max_steps):
        acc = 0.0
        nxt = defaultdict(float)
        for node, prob in dist.items():
            pred = auto.label_distribution(node)
            acc += prob * pred.max()
            for label in np.flatnonzero(pred):
                child = auto.observe(node, int(label))
                nxt[child] += prob * pred[label]
        if prev is not None and abs(acc - prev) < tol:
            quiet += 1
            if quiet >= patience:
                break
        else:
            quiet = 0
        prev = acc
        dist = {k: v for k, v in nxt.items() if v > prune}
        total = sum(dist.values())
        dist = {k: v / total for k, v in dist.items()}
    return float(acc)


@dataclass
class MonteCarloEstimate:
    accuracy: float
    stderr: float
    steps: int


def bayes_predictions(grammar, labels, automaton=None):
    """Predicted next label before each element of ``labels`` (filter starts stationary)."""
    auto = automaton or BeliefAutomaton(grammar)
    node = 0
    preds = np.empty(len(labels), dtype=np.int64)
    for t, label in enumerate(labels.tolist()):
        preds[t] = auto.best_label(node)
        node = auto.observe(node, label)
    return preds


def ceiling_montecarlo(grammar, steps, rng, burn_in=1000, n_batches=100):
    """Empirical accuracy of the Bayes filter on a sampled stream.

    The standard error comes from batch means, since hits within a
    sub-sequence are correlated.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    labels = sample_stream(grammar, steps + burn_in, rng)
    preds = bayes_predictions(grammar, labels)
    hits = (preds == labels)[burn_in:].astype(float)
    n_batches = max(1, min(n_batches, len(hits)))
    batch_means = np.array([b.mean() for b in np.array_split(hits, n_batches)])
    stderr = batch_means.std(ddof=1) / np.sqrt(n_batches) if n_batches > 1 else 0.0
    return MonteCarloEstimate(float(hits.mean()), float(stderr), len(hits))


def ngram_predict(labels, order):
    """Running accuracy of an online count-based order-``order`` label predictor.

    Before each label the most frequent successor of the preceding ``order``
    labels is predicted (lowest label wins ties; unseen contexts are scored as
    misses). Returns the accuracy over all positions with a full context.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    labels = [int(v) for v in labels]
    counts = defaultdict(Counter)
    hits = total = 0
    for t in range(order, len(labels)):
        ctx = tuple(labels[t - order : t])
        seen = counts[ctx]
        if seen:
            best = max(seen.items(), key=lambda kv: (kv[1], -kv[0]))[0]
            hits += best == labels[t]
        total += 1
        seen[labels[t]] += 1
    return hits / total if total else 0.0
