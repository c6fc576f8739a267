"""scikit-learn style estimators around the bRSM layer.

Inputs are streams: ``X`` is either ``(T, d)`` (one stream) or ``(B, T, d)``
(``B`` parallel streams advanced in lock-step). Training pairs each item with
its successor, so ``partial_fit`` keeps the last item of a chunk and pairs it
with the first item of the next chunk; consecutive calls behave exactly like
one long stream.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dense import make_rng
from .layer import LayerGeometry, LayerWeights, PartitionSpec, RSMLayer
from .learning import LocalTrainer, TrainConfig, readout_features
from .metrics import DutyAccumulator
from .readout import Classifier


def check_stream(X, dtype=np.float64):
    """Validate a stream and return it as (B, T, d) plus whether it was 2-D."""
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 2:
        X, single = X[None], True
    elif X.ndim == 3:
        single = False
    else:
        raise ValueError(f"expected a (T, d) or (B, T, d) stream, got shape {X.shape}")
    if X.shape[1] < 1 or X.shape[2] < 1:
        raise ValueError("empty stream")
    if not np.all(np.isfinite(X)):
        raise ValueError("stream contains NaN or infinity")
    return X, single


def check_labels(y, shape):
    y = np.asarray(y)
    if y.ndim == 1:
        y = y[None]
    if y.shape != shape:
        raise ValueError(f"labels of shape {y.shape} do not match stream shape {shape}")
    return y.astype(np.int64)


class BRSMTransformer(TransformerMixin, BaseEstimator):
    """Boosted recurrent sparse memory trained to predict its next input.

    ``transform`` returns the sparse cell activity for every step, and
    ``predict`` the layer's prediction of the following input.
    """

    def __init__(
        self,
        m=200,
        n=1,
        k=24,
        epsilon=0.85,
        trainable_decay=False,
        decay_ceiling=0.99,
        duty_rate=0.005,
        strategy="boost",
        boost_strength=1.2,
        boost_factor=0.85,
        epoch_steps=1000,
        inhibition_decay=0.5,
        inhibition_strength=10.0,
        partitions=None,
        learning_rate=5e-4,
        decoder_l2=0.0,
        forget_prob=0.0,
        rsm_freeze_step=None,
        dtype="float64",
        random_state=0,
    ):
        self.m = m
        self.n = n
        self.k = k
        self.epsilon = epsilon
        self.trainable_decay = trainable_decay
        self.decay_ceiling = decay_ceiling
        self.duty_rate = duty_rate
        self.strategy = strategy
        self.boost_strength = boost_strength
        self.boost_factor = boost_factor
        self.epoch_steps = epoch_steps
        self.inhibition_decay = inhibition_decay
        self.inhibition_strength = inhibition_strength
        self.partitions = partitions
        self.learning_rate = learning_rate
        self.decoder_l2 = decoder_l2
        self.forget_prob = forget_prob
        self.rsm_freeze_step = rsm_freeze_step
        self.dtype = dtype
        self.random_state = random_state

    # -- construction --------------------------------------------------------

    def _partition_spec(self):
        parts = self.partitions
        if parts is None or isinstance(parts, PartitionSpec):
            return parts
        if isinstance(parts, dict):
            return PartitionSpec.from_fractions(parts, self.m * self.n)
        return PartitionSpec(tuple(parts))

    def _train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            decoder_l2=self.decoder_l2,
            forget_prob=self.forget_prob,
            boost_factor=self.boost_factor,
            epoch_steps=self.epoch_steps,
            rsm_freeze_step=self.rsm_freeze_step,
        )

    def _build(self, n_features, batch_size):
        self.rng_ = make_rng(self.random_state)
        geometry = LayerGeometry(self.m, self.n, self.k, n_features, self._partition_spec())
        weights = LayerWeights.initialize(
            geometry, self.rng_, self.trainable_decay, self.epsilon, np.dtype(self.dtype)
        )
        self.layer_ = RSMLayer(
            geometry,
            weights,
            epsilon=self.epsilon,
            decay_ceiling=self.decay_ceiling,
            duty_rate=self.duty_rate,
            boost_strength=self.boost_strength,
            strategy=self.strategy,
            inhibition_decay=self.inhibition_decay,
            inhibition_strength=self.inhibition_strength,
        )
        self.trainer_ = LocalTrainer(self.layer_, self._train_config(), self.rng_, self._make_readout())
        self.state_ = self.layer_.new_state(batch_size)
        self.n_features_in_ = n_features
        self.batch_size_ = batch_size
        self._pending = None
        self.history_ = []

    def _make_readout(self):
        return None

    # -- training --------------------------------------------------------------

    def fit(self, X, y=None):
        X, _ = check_stream(X, self.dtype)
        self._build(X.shape[2], X.shape[0])
        return self.partial_fit(X, y)

    def partial_fit(self, X, y=None):
        X, _ = check_stream(X, self.dtype)
        labels = None if y is None else check_labels(y, X.shape[:2])
        if not hasattr(self, "layer_"):
            self._build(X.shape[2], X.shape[0])
        if X.shape[0] != self.batch_size_ or X.shape[2] != self.n_features_in_:
            raise ValueError(
                f"stream shape {X.shape} incompatible with fitted "
                f"({self.batch_size_}, T, {self.n_features_in_})"
            )
        start = 0
        if self._pending is None:
            self._pending = (X[:, 0], None if labels is None else labels[:, 0])
            start = 1
        for t in range(start, X.shape[1]):
            x_prev, _ = self._pending
            label = None if labels is None else labels[:, t]
            self.state_, _, record = self.trainer_.step(self.state_, x_prev, X[:, t], label)
            self.history_.append(record)
            self._pending = (X[:, t], label)
        return self

    @property
    def n_steps_(self):
        return self.trainer_.steps

    # -- inference ---------------------------------------------------------------

    def run(self, X, duty=None):
        """Run a fresh memory over ``X`` without learning.

        Boost factors use the layer's current duty cycles, which are left
        untouched. Returns a list of step outputs and the final state.
        If ``duty`` is a :class:`DutyAccumulator` it is fed every winner mask.
        """
        check_is_fitted(self, "layer_")
        X, _ = check_stream(X, self.dtype)
        state = self.layer_.new_state(X.shape[0])
        outs, states = [], []
        for t in range(X.shape[1]):
            out, state = self.layer_.step(X[:, t], state, update_duty_cycle=False)
            if duty is not None:
                duty.update(out.winners)
            outs.append(out)
            states.append(state)
        return outs, states

    def transform(self, X):
        X, single = check_stream(X, self.dtype)
        outs, _ = self.run(X)
        act = np.stack([o.y.reshape(o.y.shape[0], -1) for o in outs], axis=1)
        return act[0] if single else act

    def predict(self, X):
        """Prediction of the next input after each step, shaped like ``X``."""
        X, single = check_stream(X, self.dtype)
        outs, _ = self.run(X)
        pred = np.stack([o.x_hat for o in outs], axis=1)
        return pred[0] if single else pred

    def score(self, X, y=None):
        """Negative mean squared error of next-input predictions."""
        X, _ = check_stream(X, self.dtype)
        pred = self.predict(X)
        if pred.ndim == 2:
            pred = pred[None]
        return -float(np.mean((pred[:, :-1] - X[:, 1:]) ** 2))

    def eval_entropy(self, X):
        """Layer entropy of a fresh duty accumulator driven by ``X``."""
        acc = DutyAccumulator(self.layer_.geometry.n_cells, self.duty_rate)
        self.run(X, duty=acc)
        return acc.entropy()


class BRSMSequenceClassifier(ClassifierMixin, BRSMTransformer):
    """bRSM plus a separately trained readout predicting the *next* item's label.

    ``fit(X, y)`` takes the label of every observation in ``X``; ``predict``
    returns, for each step, the predicted label of the following step.
    """

    def __init__(
        self,
        m=200,
        n=1,
        k=24,
        epsilon=0.85,
        trainable_decay=False,
        decay_ceiling=0.99,
        duty_rate=0.005,
        strategy="boost",
        boost_strength=1.2,
        boost_factor=0.85,
        epoch_steps=1000,
        inhibition_decay=0.5,
        inhibition_strength=10.0,
        partitions=None,
        learning_rate=5e-4,
        decoder_l2=0.0,
        forget_prob=0.0,
        rsm_freeze_step=None,
        dtype="float64",
        random_state=0,
        n_classes=None,
        hidden_size=200,
        readout_lr=1e-3,
        readout_input="y",
    ):
        super().__init__(
            m=m, n=n, k=k, epsilon=epsilon, trainable_decay=trainable_decay,
            decay_ceiling=decay_ceiling, duty_rate=duty_rate, strategy=strategy,
            boost_strength=boost_strength, boost_factor=boost_factor, epoch_steps=epoch_steps,
            inhibition_decay=inhibition_decay, inhibition_strength=inhibition_strength,
            partitions=partitions, learning_rate=learning_rate, decoder_l2=decoder_l2,
            forget_prob=forget_prob, rsm_freeze_step=rsm_freeze_step, dtype=dtype,
            random_state=random_state,
        )
        self.n_classes = n_classes
        self.hidden_size = hidden_size
        self.readout_lr = readout_lr
        self.readout_input = readout_input

    def _train_config(self):
        cfg = super()._train_config()
        cfg.readout_lr = self.readout_lr
        cfg.readout_input = self.readout_input
        return cfg

    def _make_readout(self):
        return Classifier(self.m * self.n, self.hidden_size, self.n_classes_, self.rng_,
                          np.dtype(self.dtype))

    def fit(self, X, y):
        X, _ = check_stream(X, self.dtype)
        y = check_labels(y, X.shape[:2])
        self.n_classes_ = int(self.n_classes or y.max() + 1)
        self.classes_ = np.arange(self.n_classes_)
        self._build(X.shape[2], X.shape[0])
        return self.partial_fit(X, y)

    def partial_fit(self, X, y):
        if y is None:
            raise ValueError("the classifier needs labels")
        if not hasattr(self, "layer_"):
            X_, _ = check_stream(X, self.dtype)
            y_ = check_labels(y, X_.shape[:2])
            self.n_classes_ = int(self.n_classes or y_.max() + 1)
            self.classes_ = np.arange(self.n_classes_)
        return super().partial_fit(X, y)

    def predict_proba(self, X, duty=None):
        """Next-label distribution after each step: (T, classes) or (B, T, classes)."""
        X, single = check_stream(X, self.dtype)
        outs, states = self.run(X, duty=duty)
        clf = self.trainer_.readout
        probs = np.stack(
            [clf.predict_proba(readout_features(o, s, self.readout_input)) for o, s in zip(outs, states)],
            axis=1,
        )
        return probs[0] if single else probs

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=-1)

    def score(self, X, y):
        """Accuracy of next-label predictions (each step's prediction vs the next label)."""
        X, _ = check_stream(X, self.dtype)
        y = check_labels(y, X.shape[:2])
        pred = self.predict(X)
        if pred.ndim == 1:
            pred = pred[None]
        return float(np.mean(pred[:, :-1] == y[:, 1:]))
