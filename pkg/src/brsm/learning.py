"""Time-local training for the bRSM layer.

Gradients come from the current step only: the previous memory trace and
previous activity are constants, the top-k masks and boost factors are
constants, and the classifier readout trains on its own loss with the layer's
activity as a fixed input.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .layer import sigmoid

log = logging.getLogger(__name__)


def mse_loss(x_hat, target):
    x_hat = np.asarray(x_hat)
    target = np.asarray(target)
    if x_hat.shape != target.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {target.shape}")
    return float(np.mean((x_hat - target) ** 2))


def mse_grad(x_hat, target):
    """d mean((x_hat - target)^2) / d x_hat."""
    return 2.0 * (x_hat - target) / x_hat.size


def backward_step(out, layer, loss_grad):
    """Gradients of one step's loss for every trainable layer tensor.

    ``out`` is the :class:`~brsm.layer.StepOutput` of the matching forward
    step and ``loss_grad`` is dL/dx_hat with the same (B, d_in) shape.
    """
    if out is None:
        raise ValueError("backward_step needs the retained step output")
    w = layer.weights
    g = layer.geometry
    loss_grad = np.asarray(loss_grad).reshape(out.x_hat.shape)
    batch = loss_grad.shape[0]

    grads = {"w_d": loss_grad.T @ out.y_group}
    g_group = loss_grad @ w.w_d

    g_y = np.zeros_like(out.y)
    np.put_along_axis(g_y, out.group_argmax[..., None], g_group[..., None], axis=-1)
    g_sigma = g_y * (1.0 - out.y**2) * out.mask_group[..., None] * out.mask_cell
    g_pre = g_sigma * out.boost
    if layer._ff_gate is not None:
        g_za = (g_pre * layer._ff_gate.reshape(g.m, g.n)).sum(axis=-1)
        g_zb = (g_pre * layer._rec_gate.reshape(g.m, g.n)).reshape(batch, -1)
    else:
        g_za = g_pre.sum(axis=-1)
        g_zb = g_pre.reshape(batch, -1)
    grads["w_a"] = g_za.T @ out.x_a
    grads["w_b"] = g_zb.T @ out.x_b

    if w.delta is not None:
        g_xb = g_zb @ w.w_b
        total = out.psi.sum(axis=-1, keepdims=True)
        inner = np.sum(g_xb * out.x_b, axis=-1, keepdims=True)
        g_psi = np.where(total > 0, (g_xb - inner) / np.where(total > 0, total, 1.0), 0.0)
        decayed_wins = out.psi_prev * out.decay > out.y_prev
        g_decay = np.sum(g_psi * out.psi_prev * decayed_wins, axis=0)
        s = sigmoid(w.delta)
        grads["delta"] = g_decay * s * (1.0 - s) * (s < layer.decay_ceiling)
    return grads


class Adam:
    """Adaptive-moment optimizer with bias correction, updating arrays in place."""

    def __init__(self, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self):
        out = {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}
        for name in self.m:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for key in ("lr", "beta1", "beta2", "eps"):
            setattr(self, key, float(state[key]))
        for key, value in state.items():
            if key.startswith("m/"):
                self.m[key[2:]] = np.array(value)
            elif key.startswith("v/"):
                self.v[key[2:]] = np.array(value)


def boost_schedule(beta, factor, epoch_boundary):
    if not 0.0 < factor <= 1.0:
        raise ValueError("boost factor must lie in (0, 1]")
    return beta * factor if epoch_boundary else beta


def maybe_forget(state, prob, rng):
    """Clear each sequence's memory with probability ``prob``; returns the cleared rows."""
    if not 0.0 <= prob <= 1.0:
        raise ValueError("forgetting probability must lie in [0, 1]")
    rows = rng.random(state.batch_size) < prob
    if rows.any():
        state.clear(rows)
    return rows


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    decoder_l2: float = 0.0
    forget_prob: float = 0.0
    boost_factor: float = 1.0
    epoch_steps: int = 1000
    rsm_freeze_step: Optional[int] = None
    readout_lr: float = 1e-3
    readout_input: str = "y"

    def __post_init__(self):
        if not 0.0 <= self.forget_prob <= 1.0:
            raise ValueError("forget_prob must lie in [0, 1]")
        if not 0.0 < self.boost_factor <= 1.0:
            raise ValueError("boost_factor must lie in (0, 1]")
        if self.epoch_steps < 1:
            raise ValueError("epoch_steps must be >= 1")
        if self.readout_input not in ("y", "psi"):
            raise ValueError("readout_input must be 'y' or 'psi'")


def readout_features(out, new_state, which="y"):
    if which == "psi":
        return new_state.psi
    return out.y.reshape(out.y.shape[0], -1)


class LocalTrainer:
    """Runs the per-step training protocol for a layer and an optional readout.

    Each call to :meth:`step` performs one forward step for every sequence in
    the batch, one MSE update of the layer (unless frozen), one independent
    cross-entropy update of the readout, forgetting, and the boost schedule.
    """

    def __init__(self, layer, config, rng, readout=None):
        self.layer = layer
        self.config = config
        self.rng = rng
        self.readout = readout
        self.optimizer = Adam(lr=config.learning_rate)
        self.readout_optimizer = Adam(lr=config.readout_lr)
        self.steps = 0

    @property
    def frozen(self):
        freeze = self.config.rsm_freeze_step
        return freeze is not None and self.steps >= freeze

    def step(self, state, x, x_next, label_next=None):
        out, new_state = self.layer.step(x, state)
        x_next = np.atleast_2d(x_next)
        loss = mse_loss(out.x_hat, x_next)
        record = {"mse": loss}

        if not self.frozen:
            grads = backward_step(out, self.layer, mse_grad(out.x_hat, x_next))
            if self.config.decoder_l2:
                grads["w_d"] = grads["w_d"] + self.config.decoder_l2 * self.layer.weights.w_d
            params = self.layer.weights.__dict__
            self.optimizer.step(params, grads)

        if self.readout is not None and label_next is not None:
            feats = readout_features(out, new_state, self.config.readout_input)
            ce, probs = self.readout.train_step(feats, label_next, self.readout_optimizer)
            record["xent"] = float(ce)
            record["accuracy"] = float(np.mean(np.argmax(probs, axis=-1) == np.asarray(label_next)))

        cleared = maybe_forget(new_state, self.config.forget_prob, self.rng)
        record["forgotten"] = int(cleared.sum())

        self.steps += 1
        boundary = self.steps % self.config.epoch_steps == 0
        self.layer.boost_strength = boost_schedule(
            self.layer.boost_strength, self.config.boost_factor, boundary
        )
        return new_state, out, record


def train_loop(stream, trainer, state, max_steps=None, emit_every=1):
    """Drive ``trainer`` over ``stream`` of ``(x, label)`` batches.

    Each item's successor supplies the target, so the loop looks one item
    ahead. Yields ``(step, record, state)`` every ``emit_every`` steps and
    stops cleanly when the stream runs out.
    """
    it = iter(stream)
    try:
        x, _ = next(it)
    except StopIteration:
        return
    for x_next, label_next in it:
        if max_steps is not None and trainer.steps >= max_steps:
            return
        state, _, record = trainer.step(state, x, x_next, label_next)
        if trainer.steps % emit_every == 0:
            yield trainer.steps, record, state
        x = x_next
