"""Classifier readout and the output-distribution interpolation used for
language-model evaluation."""

from dataclasses import dataclass

import numpy as np

from .dense import DTYPE, DimensionError, init_weights

LEAKY_SLOPE = 0.01


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Classifier:
    """Two fully connected layers with a leaky rectifier between them.

    The input is treated as a constant: nothing here ever produces a gradient
    with respect to it, so training cannot reach the layer that produced it.
    """

    def __init__(self, n_inputs, n_hidden, n_classes, rng, dtype=DTYPE):
        self.n_inputs = int(n_inputs)
        self.n_classes = int(n_classes)
        self.params = {
            "w1": init_weights((n_hidden, n_inputs), "uniform-scaled", rng, dtype),
            "b1": np.zeros(n_hidden, dtype=dtype),
            "w2": init_weights((n_classes, n_hidden), "uniform-scaled", rng, dtype),
            "b2": np.zeros(n_classes, dtype=dtype),
        }

    def forward(self, hidden):
        """Return (logits, probabilities, cache) for a batch of hidden vectors."""
        hidden = np.atleast_2d(np.asarray(hidden, dtype=self.params["w1"].dtype))
        if hidden.shape[-1] != self.n_inputs:
            raise DimensionError(f"classifier expects {self.n_inputs} inputs, got {hidden.shape[-1]}")
        p = self.params
        a1 = hidden @ p["w1"].T + p["b1"]
        h1 = np.where(a1 > 0, a1, LEAKY_SLOPE * a1)
        logits = h1 @ p["w2"].T + p["b2"]
        return logits, softmax(logits), (hidden, a1, h1)

    def predict_proba(self, hidden):
        return self.forward(hidden)[1]

    def loss_and_grads(self, hidden, labels):
        """Mean cross-entropy over the batch and its parameter gradients."""
        labels = np.atleast_1d(np.asarray(labels))
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValueError(f"label outside [0, {self.n_classes})")
        _, probs, (x, a1, h1) = self.forward(hidden)
        batch = np.arange(len(labels))
        loss = -np.mean(np.log(np.maximum(probs[batch, labels], 1e-300)))

        g_logits = probs.copy()
        g_logits[batch, labels] -= 1.0
        g_logits /= len(labels)
        p = self.params
        g_h1 = g_logits @ p["w2"]
        g_a1 = g_h1 * np.where(a1 > 0, 1.0, LEAKY_SLOPE)
        grads = {
            "w2": g_logits.T @ h1,
            "b2": g_logits.sum(axis=0),
            "w1": g_a1.T @ x,
            "b1": g_a1.sum(axis=0),
        }
        return loss, grads, probs

    def train_step(self, hidden, labels, optimizer):
        loss, grads, probs = self.loss_and_grads(hidden, labels)
        optimizer.step(self.params, grads)
        return loss, probs


@dataclass
class MixWeights:
    """Interpolation weights; the model receives whatever mass is left."""

    uniform: float = 0.01
    cache: float = 0.0

    def __post_init__(self):
        if self.uniform < 0 or self.cache < 0 or self.uniform + self.cache > 1:
            raise ValueError("mix weights must be non-negative and sum to at most 1")

    @property
    def model(self):
        return 1.0 - self.uniform - self.cache


class WordCache:
    """Decaying per-token recency scores: decay everything, then set the seen token to 1."""

    def __init__(self, vocab_size, decay=0.99, batch_size=None):
        shape = (vocab_size,) if batch_size is None else (batch_size, vocab_size)
        self.scores = np.zeros(shape, dtype=DTYPE)
        self.decay = float(decay)

    @property
    def vocab_size(self):
        return self.scores.shape[-1]

    def update(self, token):
        token = np.asarray(token)
        if np.any(token < 0) or np.any(token >= self.vocab_size):
            raise KeyError(f"token {token} outside vocabulary of size {self.vocab_size}")
        self.scores *= self.decay
        if self.scores.ndim == 1:
            self.scores[int(token)] = 1.0
        else:
            self.scores[np.arange(self.scores.shape[0]), token] = 1.0
        return self

    def distribution(self):
        return normalize_scores(self.scores)


def normalize_scores(scores):
    """Scale non-negative scores to sum to one; all-zero rows become uniform."""
    scores = np.asarray(scores, dtype=DTYPE)
    total = scores.sum(axis=-1, keepdims=True)
    uniform = np.full_like(scores, 1.0 / scores.shape[-1])
    return np.where(total > 0, scores / np.where(total > 0, total, 1.0), uniform)


def mix_distributions(model_dist, cache, mix):
    """Weighted average of model, normalized cache and uniform distributions."""
    model_dist = np.asarray(model_dist, dtype=DTYPE)
    vocab = model_dist.shape[-1]
    cache_dist = cache.distribution() if isinstance(cache, WordCache) else normalize_scores(cache)
    return mix.model * model_dist + mix.cache * cache_dist + mix.uniform / vocab
