import numpy as np
import pytest

from brsm.metrics import (
    DutyAccumulator,
    MetricsWriter,
    OrderError,
    accuracy,
    layer_entropy,
    max_entropy,
    perplexity,
    read_metrics,
)


def test_layer_entropy_examples():
    assert layer_entropy(np.full(10, 0.5)) == pytest.approx(10.0)
    assert layer_entropy([0.0, 1.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        layer_entropy([1.2])


def test_max_entropy_reference_layer():
    h = max_entropy(80, 1500)
    assert h == pytest.approx(450.6, abs=0.1)
    assert 425 / h == pytest.approx(0.943, abs=0.03)
    with pytest.raises(ValueError):
        max_entropy(0, 10)


def test_entropy_bounded_by_max():
    rng = np.random.default_rng(0)
    for _ in range(20):
        duty = rng.dirichlet(np.ones(50)) * 5
        duty = np.clip(duty, 0, 1)
        assert layer_entropy(duty) <= 50 + 1e-9


def test_perplexity_examples():
    assert perplexity(np.log(np.full(7, 0.1))) == pytest.approx(10.0)
    assert perplexity([0.0, 0.0]) == 1.0
    assert perplexity(np.log([0.5, 0.125])) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        perplexity([])
    with pytest.raises(ValueError):
        perplexity([-np.inf])


def test_accuracy():
    assert accuracy([1, 2, 3], [1, 0, 3]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        accuracy([1], [1, 2])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_duty_accumulator():
    acc = DutyAccumulator(4, 0.5)
    acc.update([[1, 0, 0, 0], [1, 1, 0, 0]])
    np.testing.assert_allclose(acc.duty, [0.5, 0.25, 0, 0])
    assert acc.entropy() > 0


def test_metrics_round_trip(tmp_path):
    with MetricsWriter(tmp_path, "r1", {"a": 1}) as w:
        w.emit(1, loss=np.float64(0.5), n=np.int64(3))
        w.emit(2, loss=float("nan"))
        with pytest.raises(OrderError):
            w.emit(1, loss=0.1)
    records = read_metrics(w.path)
    assert [r.step for r in records] == [1, 2]
    assert records[0].values == {"loss": 0.5, "n": 3}
    assert records[1].values["loss"] == "nan"
    assert records[0].run_id == "r1"


def test_metrics_file_is_per_run(tmp_path):
    for _ in range(2):
        with MetricsWriter(tmp_path, "r", {"a": 1}) as w:
            w.emit(1, x=1.0)
    assert len(read_metrics(w.path)) == 1
    other = MetricsWriter(tmp_path, "r", {"a": 2})
    other.close()
    assert other.path != w.path
