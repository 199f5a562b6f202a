import numpy as np
import pytest

from gradcheck import fd_gradient, max_relative_error, random_triple
from twa.errors import DimensionError, EmptyInputError, NumericError, ParseError
from twa.model_zoo import (
    Dataset,
    MlpSpec,
    evaluate,
    init_params,
    load_csv,
    loss_and_grad,
    make_synthetic,
)


def test_init_params_bias_zero_and_length():
    w = init_params(MlpSpec((2, 1), seed=0))
    assert w.shape == (3,)
    assert w[-1] == 0.0


def test_init_params_deterministic():
    spec = MlpSpec((2, 3, 2), seed=7)
    assert np.array_equal(init_params(spec), init_params(spec))


def test_init_params_fan_in_scale():
    spec = MlpSpec((16, 4), seed=1)
    w = init_params(spec)
    assert np.all(np.abs(w[:64]) <= 0.25)
    assert np.all(w[64:] == 0)


def test_parameter_count():
    assert MlpSpec((2, 3, 2)).num_params == 17
    assert init_params(MlpSpec((2, 3, 2))).size == 17


def test_uniform_logits_give_log2():
    spec = MlpSpec((1, 2))
    w = np.array([0.3, 0.3, -1.0, -1.0])  # both logits equal 0.3 x - 1
    for label in (0, 1):
        batch = Dataset(np.array([[2.5]]), np.array([label]), num_classes=2)
        assert loss_and_grad(spec, w, batch).value == pytest.approx(np.log(2), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    spec, w, batch = random_triple(seed)
    g = loss_and_grad(spec, w, batch).gradient
    assert max_relative_error(g, fd_gradient(spec, w, batch)) < 1e-5


def test_duplicated_batch_is_mean_invariant():
    spec, w, batch = random_triple(3)
    doubled = Dataset(np.vstack([batch.features] * 2), np.tile(batch.labels, 2),
                      num_classes=batch.num_classes)
    a, b = loss_and_grad(spec, w, batch), loss_and_grad(spec, w, doubled)
    assert a.value == pytest.approx(b.value, rel=1e-12)
    np.testing.assert_allclose(a.gradient, b.gradient, rtol=1e-12, atol=1e-15)


def test_loss_and_grad_deterministic():
    spec, w, batch = random_triple(4)
    a, b = loss_and_grad(spec, w, batch), loss_and_grad(spec, w, batch)
    assert a.value == b.value and np.array_equal(a.gradient, b.gradient)


def test_large_logits_stay_finite():
    spec = MlpSpec((1, 2))
    w = np.array([1e3, -1e3, 0.0, 0.0])
    batch = Dataset(np.array([[5.0]]), np.array([1]), num_classes=2)
    res = loss_and_grad(spec, w, batch)
    assert res.value == pytest.approx(1e4)
    assert np.all(np.isfinite(res.gradient))


def test_non_finite_activation_raises():
    spec = MlpSpec((1, 2))
    batch = Dataset(np.array([[1e300]]), np.array([0]), num_classes=2)
    with pytest.raises(NumericError):
        loss_and_grad(spec, np.array([1e300, 1.0, 0.0, 0.0]), batch)


def test_dimension_mismatch():
    spec = MlpSpec((2, 2))
    batch = Dataset(np.zeros((1, 2)), np.array([0]), num_classes=2)
    with pytest.raises(DimensionError):
        loss_and_grad(spec, np.zeros(5), batch)
    with pytest.raises(DimensionError):
        evaluate(MlpSpec((3, 2)), np.zeros(8), batch)


def _perfect_binary():
    # logit_1 - logit_0 = 2x, so the class is the sign of x.
    spec = MlpSpec((1, 2))
    w = np.array([-1.0, 1.0, 0.0, 0.0])
    X = np.array([[-2.0], [-1.0], [1.0], [3.0]])
    return spec, w, X, np.array([0, 0, 1, 1])


def test_evaluate_perfect_and_complement():
    spec, w, X, y = _perfect_binary()
    assert evaluate(spec, w, Dataset(X, y)) == 1.0
    assert evaluate(spec, w, Dataset(X, 1 - y)) == 0.0


def test_evaluate_constant_logits_ties_to_class_zero():
    spec = MlpSpec((2, 2))
    data = make_synthetic("two_gaussians", 10, 0.1, seed=0)
    # Enumerated: all-zero weights tie every row, argmax picks class 0,
    # and 5 of the 10 balanced labels are 0.
    assert evaluate(spec, np.zeros(spec.num_params), data) == 0.5


def test_evaluate_duplication_invariant():
    spec, w, X, y = _perfect_binary()
    y = np.array([0, 1, 1, 1])
    once = evaluate(spec, w, Dataset(X, y))
    twice = evaluate(spec, w, Dataset(np.vstack([X, X]), np.concatenate([y, y])))
    assert once == twice == 0.75


def test_two_gaussians_zero_noise_sits_on_means():
    d = make_synthetic("two_gaussians", 100, 0.0, seed=3)
    assert np.bincount(d.labels).tolist() == [50, 50]
    for label, mean in [(0, [-0.5, -0.5]), (1, [0.5, 0.5])]:
        np.testing.assert_array_equal(d.features[d.labels == label], np.tile(mean, (50, 1)))


@pytest.mark.parametrize("kind", ["two_gaussians", "two_moons"])
def test_synthetic_deterministic_and_balanced(kind):
    a = make_synthetic(kind, 101, 0.2, seed=5)
    b = make_synthetic(kind, 101, 0.2, seed=5)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    counts = np.bincount(a.labels)
    assert abs(counts[0] - counts[1]) <= 1


def test_two_gaussians_linear_probe_oracle():
    d = make_synthetic("two_gaussians", 1000, 0.3, seed=1)
    A = np.hstack([d.features, np.ones((len(d), 1))])
    coef, *_ = np.linalg.lstsq(A, 2.0 * d.labels - 1.0, rcond=None)
    acc = np.mean((A @ coef > 0) == (d.labels == 1))
    assert acc > 0.9


def test_load_csv_plain(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,2.0,0\n3.0,4.0,1")
    d = load_csv(p)
    assert len(d) == 2 and d.input_dim == 2
    np.testing.assert_array_equal(d.labels, [0, 1])


def test_load_csv_header(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("x1,x2,y\n0.5,0.25,1\n")
    d = load_csv(p)
    assert len(d) == 1
    np.testing.assert_array_equal(d.features, [[0.5, 0.25]])


def test_load_csv_malformed_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1.0,abc,0\n")
    with pytest.raises(ParseError) as exc:
        load_csv(p)
    assert exc.value.line == 1


def test_load_csv_empty(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(EmptyInputError):
        load_csv(p)
