import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scfusion.core import ScfModel
from scfusion.data import EmbeddingDataset, SynthConfig, synth_generate
from scfusion.errors import ConfigurationError, InputError, TrainingError
from scfusion.trainer import (
    Adam,
    ConcatBaseline,
    FoldReport,
    MlpHead,
    TrainConfig,
    adam_update,
    bce_loss,
    cross_validate,
    fused_width,
    grad,
    mlp_forward,
    predict,
    train,
)


def tiny_dataset(n=40, seed=0, flip=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(np.uint8)
    if flip:
        y = 1 - y
    return EmbeddingDataset(x[:, :1], x[:, 1:], y, ["g"] * n, [f"c{i}" for i in range(n)])


# -- MLP head ------------------------------------------------------------------


def test_zero_mlp_outputs_half():
    head = MlpHead([np.zeros((5, 3)), np.zeros((3, 1))], [np.zeros(3), np.zeros(1)])
    out = mlp_forward(head, np.random.default_rng(0).standard_normal((4, 5)))
    assert np.all(out == 0.5)


def test_single_linear_layer_is_logistic_regression():
    w = np.array([[0.5], [-1.0], [2.0]])
    head = MlpHead([w], [np.array([0.25])])
    x = np.array([1.0, 2.0, 0.5])
    assert mlp_forward(head, x[None])[0] == pytest.approx(1 / (1 + math.exp(-(0.5 - 2 + 1 + 0.25))), abs=1e-15)


def test_full_dropout_makes_output_input_independent():
    head = MlpHead.create(4, (6,), dropout=1.0, seed=0)
    rng = np.random.default_rng(0)
    a = mlp_forward(head, rng.standard_normal((3, 4)), training=True, rng=np.random.default_rng(1))
    b = mlp_forward(head, rng.standard_normal((3, 4)) * 50, training=True, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)


def test_inference_ignores_dropout_seed():
    head = MlpHead.create(4, (6,), dropout=0.5, seed=0)
    x = np.random.default_rng(0).standard_normal((5, 4))
    a = mlp_forward(head, x, training=False, rng=np.random.default_rng(1))
    b = mlp_forward(head, x, training=False, rng=np.random.default_rng(2))
    np.testing.assert_array_equal(a, b)


def test_width_mismatch():
    head = MlpHead.create(4, (3,))
    with pytest.raises(ConfigurationError):
        mlp_forward(head, np.zeros((2, 5)))
    with pytest.raises(ConfigurationError):
        MlpHead([np.zeros((3, 2))], [np.zeros(2)])


def test_head_param_round_trip():
    head = MlpHead.create(4, (3, 2), seed=5)
    params = head.get_params()
    assert set(params) == {"head.W0", "head.b0", "head.W1", "head.b1", "head.W2", "head.b2"}
    again = head.with_params(params)
    for a, b in zip(head.weights, again.weights):
        assert np.array_equal(a, b)


# -- loss ----------------------------------------------------------------------


def test_bce_examples():
    assert bce_loss(0.5, 1) == pytest.approx(0.693147, abs=1e-6)
    assert bce_loss(0.9, 0) == pytest.approx(2.302585, abs=1e-6)
    assert bce_loss(1.0 - 1e-12, 1) < 1e-6
    # clamping keeps the extremes finite
    assert np.isfinite(bce_loss(0.0, 1)) and np.isfinite(bce_loss(1.0, 0))


def test_head_bias_gradient_is_mean_residual():
    model = ScfModel.create([3, 3], (4, 4), rf_scale=0.0, seed=0)
    head = MlpHead.create(16, (5,), seed=1)
    rng = np.random.default_rng(0)
    stimuli = [rng.standard_normal((8, 3)) for _ in range(2)]
    labels = np.array([0, 1] * 4, dtype=float)
    _, grads, prob = grad(model, head, stimuli, labels)
    assert grads["head.b1"][0] == pytest.approx(np.mean(prob - labels), abs=1e-14)


def test_zero_steps_gives_zero_rf_gradient():
    model = ScfModel.create([3, 3], (4, 4), steps=0, seed=0)
    head = MlpHead.create(16, (5,), seed=1)
    rng = np.random.default_rng(0)
    _, grads, _ = grad(model, head, [rng.standard_normal((6, 3)) for _ in range(2)], np.arange(6) % 2)
    for name in ("rf.a", "rf.v"):
        assert np.all(grads[name] == 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises():
    head = MlpHead([np.full((2, 1), np.nan)], [np.zeros(1)])
    with pytest.raises(TrainingError, match="non-finite"):
        grad(ConcatBaseline(), head, [np.ones((2, 1)), np.ones((2, 1))], np.array([0.0, 1.0]))


def test_concat_head_gradient_matches_finite_differences():
    head = MlpHead.create(5, (4,), seed=2)
    rng = np.random.default_rng(3)
    stim = [rng.standard_normal((7, 2)), rng.standard_normal((7, 3))]
    y = rng.integers(0, 2, 7).astype(float)
    _, grads, _ = grad(ConcatBaseline(), head, stim, y)
    x = np.concatenate(stim, axis=1)
    params = head.get_params()
    h = 1e-6
    for name in params:
        for idx in np.ndindex(params[name].shape):
            vals = []
            for s in (1, -1):
                p = {k: v.copy() for k, v in params.items()}
                p[name][idx] += s * h
                vals.append(np.mean(bce_loss(mlp_forward(head.with_params(p), x), y)))
            num = (vals[0] - vals[1]) / (2 * h)
            assert grads[name][idx] == pytest.approx(num, rel=1e-5, abs=1e-9)


# -- Adam ----------------------------------------------------------------------


@given(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-3))
def test_adam_first_step_moves_by_lr(g):
    params = {"w": np.array([0.7])}
    Adam(lr=1e-3).step(params, {"w": np.array([g])})
    delta = params["w"][0] - 0.7
    assert delta == pytest.approx(-1e-3 * np.sign(g), rel=1e-4)


def test_adam_zero_gradient_is_noop():
    params = {"w": np.array([1.5, -2.0])}
    opt = Adam()
    for _ in range(20):
        opt.step(params, {"w": np.zeros(2)})
    assert np.array_equal(params["w"], [1.5, -2.0])


def test_adam_identical_entries_identical_trajectories():
    params = {"w": np.array([0.3, 0.3])}
    opt = Adam(lr=0.01)
    rng = np.random.default_rng(0)
    for _ in range(50):
        g = rng.standard_normal()
        opt.step(params, {"w": np.array([g, g]) * params["w"]})
    assert params["w"][0] == params["w"][1]


def test_adam_functional_and_state_round_trip():
    cfg = TrainConfig(lr=0.05)
    p0 = {"w": np.array([1.0, 2.0])}
    p1, state = adam_update(p0, {"w": np.array([0.5, -0.5])}, None, cfg)
    assert np.array_equal(p0["w"], [1.0, 2.0])  # input untouched
    clone = Adam.from_config(cfg)
    clone.load_state_dict(state.state_dict())
    a, _ = adam_update(p1, {"w": np.array([0.1, 0.2])}, state, cfg)
    b, _ = adam_update(p1, {"w": np.array([0.1, 0.2])}, clone, cfg)
    assert np.array_equal(a["w"], b["w"])


def test_train_config_validation():
    for kw in ({"beta1": 1.0}, {"beta2": 0.0}, {"eps": 0.0}, {"patience": 0}, {"dropout": 1.5}):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kw)


# -- training loop -------------------------------------------------------------


def test_early_stopping_on_rising_validation_loss():
    data = tiny_dataset(60)
    # validation labels are the opposite rule, so every improvement on the training set hurts it
    val = tiny_dataset(60, flip=True)
    head = MlpHead.create(2, (), seed=0)
    head = head.with_params({"head.W0": np.zeros((2, 1))})
    cfg = TrainConfig(lr=0.05, batch_size=60, max_epochs=20, patience=1, dropout=0.0, hidden=())
    snapshots = []
    res = train(ConcatBaseline(), head, data, cfg, validation=val,
                callback=lambda r, f, h: snapshots.append(h.get_params()))
    losses = [r.val_loss for r in res.history]
    assert losses[1] > losses[0]
    assert len(res.history) == 2
    assert res.best_epoch == 1
    for k, v in snapshots[0].items():
        assert np.array_equal(res.head.get_params()[k], v)


def test_best_epoch_has_minimal_validation_loss():
    ds = synth_generate(SynthConfig(grid=(9, 9), d_audio=8, d_visual=8, instances=300, groups=4, seed=0))
    cfg = TrainConfig(lr=1e-2, max_epochs=15, patience=3, hidden=(8,), seed=1)
    res = train(ConcatBaseline(), MlpHead.create(16, (8,), 0.1, seed=0), ds, cfg)
    losses = [r.val_loss for r in res.history]
    assert losses[res.best_epoch - 1] == min(losses)


def test_noise_free_concat_reaches_full_training_accuracy():
    cfg_data = SynthConfig(grid=(9, 9), d_audio=16, d_visual=16, noise_sigma=0.0, instances=600, groups=4, seed=0)
    ds = synth_generate(cfg_data)
    cfg = TrainConfig(lr=1e-2, max_epochs=200, patience=200, hidden=(64,), dropout=0.0, val_fraction=0.0,
                      batch_size=64, train_metrics="full")
    head = MlpHead.create(32, (64,), seed=0)
    res = train(ConcatBaseline(), head, ds, cfg)
    assert max(r.train_acc for r in res.history) == 1.0


def test_training_is_deterministic():
    ds = synth_generate(SynthConfig(grid=(5, 5), d_audio=4, d_visual=4, instances=80, groups=2,
                                    min_separation=1.0, seed=0))
    cfg = TrainConfig(max_epochs=3, batch_size=16, hidden=(4,))

    def run():
        model = ScfModel.create([4, 4], (5, 5), steps=4, seed=3)
        return train(model, MlpHead.create(25, (4,), 0.1, seed=4), ds, cfg)

    a, b = run(), run()
    assert a.history == b.history
    assert np.array_equal(a.fuser.unimodal[0].rf, b.fuser.unimodal[0].rf)


def test_scf_training_lowers_loss():
    ds = synth_generate(SynthConfig(grid=(5, 5), d_audio=6, d_visual=6, instances=200, groups=2,
                                    min_separation=1.0, seed=1))
    cfg = TrainConfig(lr=1e-2, max_epochs=8, patience=8, batch_size=20, hidden=(8,), dropout=0.0)
    model = ScfModel.create([6, 6], (5, 5), steps=5, seed=0)
    res = train(model, MlpHead.create(25, (8,), seed=0), ds, cfg)
    assert res.history[-1].train_loss < res.history[0].train_loss


def test_training_input_errors():
    head = MlpHead.create(2, (3,))
    with pytest.raises(InputError):
        train(ConcatBaseline(), head, tiny_dataset().subset([]), TrainConfig())
    one_class = tiny_dataset(40)
    one_class = one_class.subset(np.flatnonzero(one_class.labels == 1))
    with pytest.raises(InputError, match="single class"):
        train(ConcatBaseline(), head, one_class, TrainConfig(val_fraction=0.0))
    with pytest.raises(ConfigurationError):
        train(ConcatBaseline(), MlpHead.create(5, (3,)), tiny_dataset(), TrainConfig())


def test_fused_width():
    assert fused_width(ConcatBaseline(), (128, 64)) == 192
    assert fused_width(ScfModel.create([3, 3], (17, 17)), (3, 3)) == 289


def test_predict_batches_consistently():
    head = MlpHead.create(4, (3,), seed=0)
    rng = np.random.default_rng(0)
    stim = [rng.standard_normal((50, 2)), rng.standard_normal((50, 2))]
    np.testing.assert_array_equal(predict(ConcatBaseline(), head, stim, 7), predict(ConcatBaseline(), head, stim, 500))


# -- cross-validation ------------------------------------------------------------


def test_fold_report_example():
    rep = FoldReport([0.8, 0.9, 1.0, 0.9, 0.9], {})
    assert rep.mean == pytest.approx(0.9)
    assert rep.std == pytest.approx(0.0632456, abs=1e-6)
    assert rep.summary() == "90.00 (6.32) [%]"


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=10))
def test_fold_report_recomputable(accs):
    rep = FoldReport(accs, {})
    assert rep.mean == pytest.approx(sum(accs) / len(accs))
    assert rep.std == pytest.approx(math.sqrt(sum((a - rep.mean) ** 2 for a in accs) / len(accs)), abs=1e-12)


def test_cross_validation_independent_and_parity():
    ds = synth_generate(SynthConfig(grid=(7, 7), d_audio=6, d_visual=6, instances=250, groups=5,
                                    min_separation=2.0, seed=0))
    cfg = TrainConfig(max_epochs=2, batch_size=32, hidden=(4,))
    concat = cross_validate(ds, "independent", 5, cfg, lambda s: ConcatBaseline(), label="concat")
    scf = cross_validate(ds, "independent", 5, cfg,
                         lambda s: ScfModel.create([6, 6], (7, 7), steps=3, seed=s), label="scf")
    for rep in (concat, scf):
        assert len(rep.accuracies) == 5
        assert sorted(g for f in rep.held_out.values() for g in f) == sorted(set(ds.group_ids))
        assert all(len(f) == 1 for f in rep.held_out.values())
    assert concat.held_out == scf.held_out


def test_cross_validation_dependent_ten_instances():
    ds = tiny_dataset(10)
    cfg = TrainConfig(max_epochs=1, hidden=(2,), val_fraction=0.2)
    seen = []
    rep = cross_validate(ds, "dependent", 5, cfg, lambda s: ConcatBaseline(), callback=lambda f, a: seen.append(a))
    assert len(rep.accuracies) == 5 and seen == rep.accuracies
    assert all(a in (0.0, 0.5, 1.0) for a in rep.accuracies)  # two test instances per fold


def test_cross_validation_too_few_groups():
    with pytest.raises(InputError):
        cross_validate(tiny_dataset(), "independent", 5, TrainConfig(), lambda s: ConcatBaseline())
