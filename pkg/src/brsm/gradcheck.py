"""Finite-difference check of every hand-written gradient in the package.

Each instance is a tiny random layer with a random memory history. The loss
is one step's prediction error, so central differences of the full forward
pass must agree with :func:`~brsm.learning.backward_step` as long as the
discrete choices (winners, per-group argmax, which side of the memory max
wins) do not move under the perturbation. Instances where they would move are
redrawn.
"""

from dataclasses import dataclass, field

import numpy as np

from .dense import finite_diff_grad, make_rng, relative_error
from .layer import LayerGeometry, LayerState, LayerWeights, PartitionSpec, RSMLayer
from .learning import backward_step, mse_grad, mse_loss
from .readout import Classifier

TOLERANCE = 1e-4
STEP = 1e-5
FLOOR = 1e-7
LAYER_TENSORS = ("w_a", "w_b", "w_d", "delta")
READOUT_TENSORS = ("w1", "b1", "w2", "b2")


class UnstableInstance(Exception):
    pass


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)
    instances: int = 0
    redrawn: int = 0
    tolerance: float = TOLERANCE

    def record(self, name, err):
        self.errors[name] = max(self.errors.get(name, 0.0), err)

    @property
    def passed(self):
        return self.instances > 0 and all(e <= self.tolerance for e in self.errors.values())

    def lines(self):
        out = [f"{name:8s} max relative error {err:.3e}  {'ok' if err <= self.tolerance else 'FAIL'}"
               for name, err in sorted(self.errors.items())]
        out.append(f"{self.instances} instances ({self.redrawn} redrawn for unstable winners): "
                   f"{'PASS' if self.passed else 'FAIL'}")
        return out


def _draw_layer(rng):
    m = int(rng.integers(3, 7))
    partitioned = rng.random() < 0.3
    n = 1 if partitioned else int(rng.integers(1, 4))
    d_in = int(rng.integers(2, 6))
    if partitioned:
        m = max(m, 6)
        sizes = (2, m - 4, 2)
        partitions = PartitionSpec(tuple(zip(("feed-forward", "recurrent", "integrated"), sizes)))
        k = int(rng.integers(3, m))
    else:
        partitions = None
        k = int(rng.integers(1, m))
    geometry = LayerGeometry(m, n, k, d_in, partitions)
    trainable = rng.random() < 0.7
    weights = LayerWeights.initialize(geometry, rng, trainable_decay=trainable, epsilon=0.7)
    # larger weights than the default init so tanh curvature matters
    weights.w_a *= 3.0
    weights.w_b *= 3.0
    if trainable:
        weights.delta = rng.normal(0.0, 1.0, size=weights.delta.shape)
    layer = RSMLayer(geometry, weights, epsilon=0.7, boost_strength=float(rng.uniform(0, 2)))
    layer.duty = rng.uniform(0.0, 0.3, size=geometry.n_cells)
    return layer


def _draw_history(layer, batch, rng):
    cells = layer.geometry.n_cells
    state = LayerState.zeros(batch, cells)
    state.psi_prev = rng.uniform(0.0, 1.0, size=(batch, cells)) * (rng.random((batch, cells)) < 0.7)
    state.y_prev = rng.uniform(0.0, 1.0, size=(batch, cells)) * (rng.random((batch, cells)) < 0.3)
    return state


def _signature(out):
    lazy = out.psi_prev * out.decay > out.y_prev
    return (out.mask_group.copy(), out.mask_cell.copy(), out.group_argmax.copy(), lazy)


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def check_layer(rng, report, corrupt=None):
    layer = _draw_layer(rng)
    batch = int(rng.integers(1, 4))
    state = _draw_history(layer, batch, rng)
    x = rng.normal(size=(batch, layer.geometry.d_in))
    target = rng.normal(size=(batch, layer.geometry.d_in))

    out, _ = layer.step(x, state, update_duty_cycle=False)
    base = _signature(out)
    if np.any(np.abs(out.y) > 0.999):
        raise UnstableInstance("saturated activation")
    # a margin on the memory max keeps the lazy merge choice fixed
    gap = np.abs(out.psi_prev * out.decay - out.y_prev)
    if np.any((gap < 1e-3) & (out.y_prev > 0)):
        raise UnstableInstance("memory max nearly tied")
    grads = backward_step(out, layer, mse_grad(out.x_hat, target))
    if corrupt in grads:
        grads[corrupt] = grads[corrupt] * 1.01 + 1e-3

    for name in LAYER_TENSORS:
        param = getattr(layer.weights, name)
        if param is None:
            continue

        def loss(value, name=name):
            original = getattr(layer.weights, name)
            setattr(layer.weights, name, value)
            try:
                o, _ = layer.step(x, state, update_duty_cycle=False)
            finally:
                setattr(layer.weights, name, original)
            if not _same(_signature(o), base):
                raise UnstableInstance(f"winner set moved under a perturbation of {name}")
            return mse_loss(o.x_hat, target)

        numeric = finite_diff_grad(loss, param, STEP)
        report.record(name, relative_error(grads[name], numeric, FLOOR))


def check_readout(rng, report, corrupt=None):
    n_in, n_hidden, n_classes = (int(v) for v in rng.integers(2, 7, size=3))
    clf = Classifier(n_in, n_hidden, n_classes, rng)
    batch = int(rng.integers(1, 5))
    hidden = rng.normal(size=(batch, n_in))
    labels = rng.integers(n_classes, size=batch)
    a1 = hidden @ clf.params["w1"].T + clf.params["b1"]
    if np.any(np.abs(a1) < 1e-3):
        raise UnstableInstance("rectifier input nearly zero")
    _, grads, _ = clf.loss_and_grads(hidden, labels)
    if corrupt in grads:
        grads[corrupt] = grads[corrupt] * 1.01 + 1e-3
    for name in READOUT_TENSORS:

        def loss(value, name=name):
            original = clf.params[name]
            clf.params[name] = value
            try:
                return clf.loss_and_grads(hidden, labels)[0]
            finally:
                clf.params[name] = original

        numeric = finite_diff_grad(loss, clf.params[name], STEP)
        report.record(name, relative_error(grads[name], numeric, FLOOR))


def run_gradcheck(seed=0, instances=20, tolerance=TOLERANCE, corrupt=None, max_redraws=1000):
    """Check ``instances`` random layer and readout instances.

    ``corrupt`` names one tensor whose analytic gradient is deliberately
    perturbed, as a negative control.
    """
    rng = make_rng(seed)
    report = GradcheckReport(tolerance=tolerance)
    while report.instances < instances:
        if report.redrawn > max_redraws:
            raise RuntimeError("could not draw stable instances")
        trial = GradcheckReport(tolerance=tolerance)
        try:
            check_layer(rng, trial, corrupt)
            check_readout(rng, trial, corrupt)
        except UnstableInstance:
            report.redrawn += 1
            continue
        for name, err in trial.errors.items():
            report.record(name, err)
        report.instances += 1
    return report
