"""From-scratch learners: losses, training loops, gradient checks, model files."""

from __future__ import annotations

import numpy as np
import pytest

from stacktag.errors import (
    CorruptionError,
    DivergenceError,
    FormatError,
    ValidationError,
)
from stacktag.learners import (
    GradientReport,
    LinearModel,
    MlpModel,
    TrainConfig,
    apply_inverted_dropout,
    build_mlp,
    finite_diff_check,
    glorot_uniform,
    linear_loss_and_grads,
    load_model,
    mlp_loss_and_grads,
    predict_proba,
    save_model,
    sigmoid,
    softplus,
    train_linear,
    train_mlp,
)


def _toy_problem(seed=0, n=40, d=5, tags=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    w_true = rng.normal(size=(tags, d))
    y = (sigmoid(x @ w_true.T) > 0.5).astype(np.float64)
    return x, y


# ---------------------------------------------------------------------------
# numerics


def test_sigmoid_is_stable_and_correct():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    big = sigmoid(np.array([500.0, -500.0]))
    assert 0.0 < big[1] < big[0] <= 1.0
    extreme = sigmoid(np.array([1000.0, -1000.0]))
    assert np.isfinite(extreme).all()  # saturates cleanly, never NaN/inf
    x = np.linspace(-5, 5, 11)
    assert np.allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), atol=1e-12)


def test_softplus_is_stable_and_correct():
    x = np.linspace(-5, 5, 11)
    assert np.allclose(softplus(x), np.log(1.0 + np.exp(x)), atol=1e-12)
    assert abs(softplus(np.array([1000.0]))[0] - 1000.0) < 1e-9
    assert softplus(np.array([-1000.0]))[0] == 0.0


def test_glorot_uniform_respects_bounds():
    rng = np.random.default_rng(1)
    w = glorot_uniform(rng, 30, 50)
    limit = np.sqrt(6.0 / 80.0)
    assert w.shape == (30, 50)
    assert np.abs(w).max() <= limit
    assert np.abs(w).max() > 0.5 * limit  # actually spreads toward the bounds
    again = glorot_uniform(np.random.default_rng(1), 30, 50)
    assert np.array_equal(w, again)


def test_dropout_zero_rate_is_identity():
    x = np.arange(6.0).reshape(2, 3)
    dropped, mask = apply_inverted_dropout(x, 0.0, np.random.default_rng(0))
    assert dropped is x
    assert np.array_equal(mask, np.ones_like(x))


def test_dropout_scales_survivors():
    x = np.ones((4, 50))
    dropped, mask = apply_inverted_dropout(x, 0.5, np.random.default_rng(3))
    values = set(np.unique(dropped))
    assert values <= {0.0, 2.0}
    assert np.array_equal(dropped, x * mask)


def test_dropout_rejects_bad_rate():
    rng = np.random.default_rng(0)
    with pytest.raises(ValidationError):
        apply_inverted_dropout(np.ones((1, 1)), 1.0, rng)
    with pytest.raises(ValidationError):
        apply_inverted_dropout(np.ones((1, 1)), -0.1, rng)


def test_dropout_preserves_expectation_within_monte_carlo_error():
    rate = 0.3
    v = np.linspace(0.5, 2.0, 8)
    rng = np.random.default_rng(12345)
    draws = 2000
    total = np.zeros_like(v)
    for _ in range(draws):
        dropped, _ = apply_inverted_dropout(v[None, :], rate, rng)
        total += dropped[0]
    mean = total / draws
    se = np.sqrt(v**2 * rate / (1.0 - rate) / draws)
    assert np.all(np.abs(mean - v) < 3.0 * se)


# ---------------------------------------------------------------------------
# training config and divergence


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValidationError):
        TrainConfig(l2=-0.01)
    with pytest.raises(ValidationError):
        TrainConfig(optimizer="rmsprop")


def test_divergence_error_names_the_epoch():
    x, y = _toy_problem()
    cfg = TrainConfig(learning_rate=1e9, epochs=5, optimizer="sgd")
    with pytest.raises(DivergenceError) as err:
        train_linear(x, y, tags=3, loss_kind="squared_hinge", cfg=cfg)
    assert err.value.epoch is not None
    assert err.value.exit_code == 4
    assert "epoch" in str(err.value)


# ---------------------------------------------------------------------------
# linear models


def test_zero_logistic_model_predicts_half_everywhere():
    model = LinearModel(np.zeros((3, 4)), np.zeros(3), "logistic")
    probs = model.predict_proba(np.random.default_rng(0).normal(size=(5, 4)))
    assert np.array_equal(probs, np.full((5, 3), 0.5))


def test_logistic_loss_decreases_on_separable_data():
    x = np.array([[-1.0], [1.0], [-1.0], [1.0]])
    y = np.array([[0.0], [1.0], [0.0], [1.0]])
    cfg = TrainConfig(learning_rate=0.1, epochs=20, batch_size=4, optimizer="sgd")
    model = train_linear(x, y, tags=1, loss_kind="logistic", cfg=cfg)
    hist = model.loss_history
    assert len(hist) == 20
    assert all(b < a for a, b in zip(hist, hist[1:]))


def test_squared_hinge_training_decreases_loss():
    x, y = _toy_problem(seed=2)
    cfg = TrainConfig(learning_rate=0.05, epochs=15, optimizer="sgd")
    model = train_linear(x, y, tags=3, loss_kind="squared_hinge", cfg=cfg)
    assert model.loss_history[-1] < model.loss_history[0]


def test_single_sgd_step_moves_against_the_gradient():
    x, y = _toy_problem(seed=4, n=16)
    lr = 0.01
    cfg = TrainConfig(learning_rate=lr, epochs=1, batch_size=16, optimizer="sgd")
    model = train_linear(x, y, tags=3, loss_kind="logistic", cfg=cfg, seed=7)
    # one full-batch step from zero init: params equal -lr * gradient at zero
    zero = LinearModel(np.zeros((3, 5)), np.zeros(3), "logistic")
    order = np.random.default_rng(7).permutation(16)
    _, grads = linear_loss_and_grads(zero, x[order], y[order], 0.0)
    assert np.allclose(model.weights, -lr * grads["weights"], atol=1e-14)
    assert np.allclose(model.bias, -lr * grads["bias"], atol=1e-14)


def test_train_linear_validates_inputs():
    with pytest.raises(ValidationError):
        train_linear(np.zeros((0, 3)), np.zeros((0, 2)), tags=2)
    with pytest.raises(ValidationError):
        train_linear(np.zeros(3), np.zeros((3, 2)), tags=2)
    with pytest.raises(ValidationError):
        train_linear(np.zeros((3, 2)), np.zeros((4, 2)), tags=2)
    with pytest.raises(ValidationError):
        train_linear(np.zeros((3, 2)), [frozenset({5})] * 3, tags=2)
    with pytest.raises(ValidationError):
        LinearModel(np.zeros((2, 2)), np.zeros(2), "perceptron")


def test_train_linear_accepts_frozenset_targets():
    x = np.array([[1.0], [-1.0]])
    model = train_linear(
        x,
        [frozenset({0}), frozenset()],
        tags=1,
        cfg=TrainConfig(epochs=2, optimizer="sgd", learning_rate=0.1),
    )
    assert model.weights.shape == (1, 1)


def test_probability_monotone_in_positively_weighted_feature():
    model = LinearModel(np.array([[2.0, -1.0]]), np.array([0.1]), "logistic")
    lo = model.predict_proba(np.array([[0.0, 0.3]]))[0, 0]
    hi = model.predict_proba(np.array([[1.0, 0.3]]))[0, 0]
    assert hi > lo


def test_predict_proba_outputs_are_probabilities():
    x, y = _toy_problem(seed=5)
    model = train_linear(x, y, tags=3, cfg=TrainConfig(epochs=3))
    probs = predict_proba(model, x)
    assert probs.shape == y.shape
    assert np.all((probs > 0.0) & (probs < 1.0))
    assert np.array_equal(probs, predict_proba(model, x))  # eval determinism


def test_predict_proba_rejects_dimension_mismatch_and_non_models():
    model = LinearModel(np.zeros((2, 3)), np.zeros(2), "logistic")
    with pytest.raises(ValidationError):
        model.predict_proba(np.zeros((1, 4)))
    with pytest.raises(ValidationError):
        predict_proba(object(), np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# MLP


def test_mlp_eval_forward_matches_manual_composition():
    model = build_mlp(3, [4], 2, dropout=0.5, seed=9)
    x = np.random.default_rng(1).normal(size=(6, 3))
    scores, _ = model.forward(x, train=False)
    h = np.maximum(x @ model.weights[0].T + model.biases[0], 0.0)
    manual = h @ model.weights[1].T + model.biases[1]
    assert np.allclose(scores, manual, atol=1e-12)


def test_mlp_train_mode_requires_rng():
    model = build_mlp(3, [4], 2, dropout=0.3, seed=0)
    with pytest.raises(ValidationError):
        model.forward(np.zeros((1, 3)), train=True)


def test_mlp_learns_xor():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([[0.0], [1.0], [1.0], [0.0]])
    cfg = TrainConfig(learning_rate=0.05, epochs=400, batch_size=4)
    model = train_mlp(x, y, tags=1, hidden=[8], cfg=cfg, seed=3)
    preds = model.predict_proba(x)
    assert np.array_equal((preds >= 0.5).astype(float), y)


def test_mlp_loss_history_has_one_entry_per_epoch():
    x, y = _toy_problem(seed=6, n=20)
    model = train_mlp(x, y, tags=3, hidden=[6], cfg=TrainConfig(epochs=4))
    assert len(model.loss_history) == 4


def test_mlp_structure_validation():
    with pytest.raises(ValidationError):
        build_mlp(3, [0], 2)
    with pytest.raises(ValidationError):
        build_mlp(3, [4], 2, dropout=[0.1, 0.2])
    with pytest.raises(ValidationError):
        MlpModel([np.zeros((4, 3)), np.zeros((2, 5))], [np.zeros(4), np.zeros(2)], [0.0])
    with pytest.raises(ValidationError):
        MlpModel([np.zeros((4, 3))], [np.zeros(4)], [0.5])  # rate without hidden layer
    with pytest.raises(ValidationError):
        MlpModel([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)], [1.0])


def test_mlp_divergence_raises():
    x, y = _toy_problem(seed=8, n=12)
    cfg = TrainConfig(learning_rate=1e12, epochs=3, optimizer="sgd")
    with pytest.raises(DivergenceError):
        train_mlp(x, y, tags=3, hidden=[4], cfg=cfg)


# ---------------------------------------------------------------------------
# determinism


def test_linear_training_is_bit_deterministic():
    x, y = _toy_problem(seed=10)
    cfg = TrainConfig(epochs=5)
    a = train_linear(x, y, tags=3, cfg=cfg, seed=21)
    b = train_linear(x, y, tags=3, cfg=cfg, seed=21)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert a.bias.tobytes() == b.bias.tobytes()
    assert a.loss_history == b.loss_history
    c = train_linear(x, y, tags=3, cfg=cfg, seed=22)
    assert a.weights.tobytes() != c.weights.tobytes()


def test_mlp_training_is_bit_deterministic():
    x, y = _toy_problem(seed=11, n=24)
    cfg = TrainConfig(epochs=4)
    a = train_mlp(x, y, tags=3, hidden=[5], dropout=0.4, cfg=cfg, seed=2)
    b = train_mlp(x, y, tags=3, hidden=[5], dropout=0.4, cfg=cfg, seed=2)
    for wa, wb in zip(a.weights, b.weights):
        assert wa.tobytes() == wb.tobytes()
    for ba, bb in zip(a.biases, b.biases):
        assert ba.tobytes() == bb.tobytes()


# ---------------------------------------------------------------------------
# gradient checks


def test_gradient_check_logistic():
    x, y = _toy_problem(seed=12, n=10, d=4, tags=2)
    rng = np.random.default_rng(0)
    model = LinearModel(rng.normal(scale=0.5, size=(2, 4)), rng.normal(size=2), "logistic")
    params = dict(model.parameter_blocks())
    report = finite_diff_check(lambda: linear_loss_and_grads(model, x, y, l2=0.01), params)
    assert report.max_rel_error < 1e-4
    assert report.ok
    assert set(report.per_block) == {"weights", "bias"}


def test_gradient_check_squared_hinge_off_boundary():
    x, y = _toy_problem(seed=13, n=10, d=4, tags=2)
    rng = np.random.default_rng(1)
    model = LinearModel(rng.normal(scale=0.5, size=(2, 4)), rng.normal(size=2), "squared_hinge")
    # precondition: no sample may sit on the hinge boundary for the check
    ypm = 2.0 * y - 1.0
    distance = np.abs(1.0 - ypm * model.scores(x))
    assert distance.min() > 1e-3
    params = dict(model.parameter_blocks())
    report = finite_diff_check(lambda: linear_loss_and_grads(model, x, y), params)
    assert report.max_rel_error < 1e-4


def test_gradient_check_mlp_without_dropout():
    x, y = _toy_problem(seed=14, n=8, d=3, tags=2)
    model = build_mlp(3, [5, 4], 2, dropout=0.0, seed=5)
    params = dict(model.parameter_blocks())
    report = finite_diff_check(
        lambda: mlp_loss_and_grads(model, x, y, l2=0.005, train=False), params
    )
    assert report.max_rel_error < 1e-4


def test_gradient_check_flat_hinge_region_is_all_zero():
    # all margins beyond 1: loss locally constant, both gradients exactly zero
    x = np.array([[1.0], [2.0]])
    y = np.array([[1.0], [1.0]])
    model = LinearModel(np.array([[5.0]]), np.array([0.0]), "squared_hinge")
    loss, grads = linear_loss_and_grads(model, x, y)
    assert loss == 0.0
    assert np.all(grads["weights"] == 0.0) and np.all(grads["bias"] == 0.0)
    report = finite_diff_check(
        lambda: linear_loss_and_grads(model, x, y), dict(model.parameter_blocks())
    )
    assert report.max_rel_error == 0.0


def test_gradient_check_subsamples_large_blocks():
    x, y = _toy_problem(seed=15, n=6, d=20, tags=4)
    model = LinearModel(np.random.default_rng(2).normal(size=(4, 20)), np.zeros(4), "logistic")
    report = finite_diff_check(
        lambda: linear_loss_and_grads(model, x, y),
        dict(model.parameter_blocks()),
        max_entries_per_block=10,
        rng=np.random.default_rng(0),
    )
    assert report.max_rel_error < 1e-4


def test_gradient_report_shape_mismatch_detected():
    with pytest.raises(ValidationError):
        finite_diff_check(
            lambda: (0.0, {"w": np.zeros((2, 2))}), {"w": np.zeros((3, 2))}
        )
    assert GradientReport(2e-4, {}).ok is False


# ---------------------------------------------------------------------------
# serialization


def test_linear_model_file_round_trip(tmp_path):
    x, y = _toy_problem(seed=16)
    model = train_linear(x, y, tags=3, cfg=TrainConfig(epochs=2))
    path = tmp_path / "linear.mmlm"
    save_model(model, path)
    back = load_model(path)
    assert isinstance(back, LinearModel)
    assert back.loss_kind == model.loss_kind
    assert np.allclose(back.weights, model.weights, atol=1e-6)
    # float32 fixpoint: a second save of the loaded model is byte-identical
    path2 = tmp_path / "linear2.mmlm"
    save_model(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_mlp_model_file_round_trip(tmp_path):
    x, y = _toy_problem(seed=17, n=16)
    model = train_mlp(x, y, tags=3, hidden=[5], dropout=0.25, cfg=TrainConfig(epochs=2), seed=4)
    path = tmp_path / "mlp.mmlm"
    save_model(model, path)
    back = load_model(path)
    assert isinstance(back, MlpModel)
    assert back.dropout_rates == [0.25]
    assert back.mask_seed == 4
    assert len(back.weights) == 2
    path2 = tmp_path / "mlp2.mmlm"
    save_model(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_loaded_model_predictions_match_float32_cast(tmp_path):
    x, y = _toy_problem(seed=18)
    model = train_linear(x, y, tags=3, cfg=TrainConfig(epochs=2))
    path = tmp_path / "m.mmlm"
    save_model(model, path)
    back = load_model(path)
    cast = LinearModel(
        model.weights.astype(np.float32).astype(np.float64),
        model.bias.astype(np.float32).astype(np.float64),
        model.loss_kind,
    )
    assert np.array_equal(back.predict_proba(x), cast.predict_proba(x))


def test_load_model_rejects_corrupt_files(tmp_path):
    x, y = _toy_problem(seed=19)
    model = train_linear(x, y, tags=3, cfg=TrainConfig(epochs=1))
    path = tmp_path / "m.mmlm"
    save_model(model, path)
    data = path.read_bytes()

    short = tmp_path / "short.mmlm"
    short.write_bytes(data[:2])
    with pytest.raises(CorruptionError):
        load_model(short)

    cut_header = tmp_path / "cut.mmlm"
    cut_header.write_bytes(data[:10])
    with pytest.raises(CorruptionError):
        load_model(cut_header)

    truncated = tmp_path / "trunc.mmlm"
    truncated.write_bytes(data[:-8])
    with pytest.raises(CorruptionError):
        load_model(truncated)

    trailing = tmp_path / "trail.mmlm"
    trailing.write_bytes(data + b"\x00\x00")
    with pytest.raises(CorruptionError):
        load_model(trailing)


def test_load_model_rejects_foreign_headers(tmp_path):
    import json
    import struct as _struct

    def with_header(header):
        raw = json.dumps(header).encode()
        return _struct.pack("<I", len(raw)) + raw

    bad_format = tmp_path / "f.mmlm"
    bad_format.write_bytes(with_header({"format": "ZZZZ", "version": 1}))
    with pytest.raises(FormatError):
        load_model(bad_format)

    bad_version = tmp_path / "v.mmlm"
    bad_version.write_bytes(with_header({"format": "MMLM", "version": 9}))
    with pytest.raises(FormatError):
        load_model(bad_version)

    bad_kind = tmp_path / "k.mmlm"
    bad_kind.write_bytes(with_header({"format": "MMLM", "version": 1, "kind": "tree", "blocks": []}))
    with pytest.raises(FormatError):
        load_model(bad_kind)

    not_json = tmp_path / "j.mmlm"
    not_json.write_bytes(_struct.pack("<I", 4) + b"{{{{")
    with pytest.raises(FormatError):
        load_model(not_json)
