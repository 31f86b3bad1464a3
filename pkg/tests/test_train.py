import math

import numpy as np
import pytest

from cvit import data, synthetic
from cvit.errors import ContractError, NonFiniteError
from cvit.model import CViTConfig, init_parameters
from cvit.tensor import Tensor
from cvit.train import (
    AdamState, Schedule, TrainingAborted, adam_step, aggregate_video, classify_video, evaluate,
    lr_at, report_from_scores, train, write_history_csv,
)

from conftest import tiny_config


def small_manifest(seed=0, videos=4, frames=2, size=64):
    samples = synthetic.make_samples(videos, frames, size=size, seed=seed)
    return data.split(samples, (0.5, 0.5, 0.0), seed=seed)


class TestAdam:
    def test_first_step_magnitude(self):
        p = {"w": Tensor(np.array([1.0, -2.0, 3.0]))}
        adam_step(p, {"w": np.array([0.3, -5.0, 1e-3])}, AdamState(learning_rate=1e-4, weight_decay=0.0))
        np.testing.assert_allclose(p["w"].data, [1.0 - 1e-4, -2.0 + 1e-4, 3.0 - 1e-4 * 1e-3 / (1e-3 + 1e-8)],
                                   rtol=0, atol=1e-10)

    def test_zero_gradient_no_decay_no_change(self):
        p = {"w": Tensor(np.array([1.0, 2.0]))}
        adam_step(p, {"w": np.zeros(2)}, AdamState(weight_decay=0.0))
        assert np.array_equal(p["w"].data, [1.0, 2.0])

    def test_decoupled_decay(self):
        p = {"w": Tensor(np.array([2.0]))}
        adam_step(p, {"w": np.zeros(1)}, AdamState(learning_rate=0.1, weight_decay=0.5))
        assert p["w"].data[0] == pytest.approx(2.0 * (1 - 0.05))

    def test_nan_rejected_before_any_update(self):
        p = {"a": Tensor(np.ones(2)), "b": Tensor(np.ones(2))}
        state = AdamState()
        with pytest.raises(NonFiniteError):
            adam_step(p, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, state)
        assert state.t == 0 and np.array_equal(p["a"].data, np.ones(2))

    def test_deterministic(self):
        def run():
            p = {"w": Tensor(np.linspace(-1, 1, 5))}
            s = AdamState(learning_rate=0.01)
            for _ in range(10):
                adam_step(p, {"w": 2 * p["w"].data}, s)
            return p["w"].data
        assert np.array_equal(run(), run())

    def test_decreases_convex_quadratic(self):
        target = np.array([0.5, -1.5, 2.0])
        p = {"w": Tensor(np.zeros(3))}
        s = AdamState(learning_rate=0.05, weight_decay=0.0)
        f = lambda w: float(((w - target) ** 2).sum())
        start = f(p["w"].data)
        for _ in range(300):
            adam_step(p, {"w": 2 * (p["w"].data - target)}, s)
        assert f(p["w"].data) < 1e-3 * start


class TestSchedule:
    def test_values(self):
        s = Schedule()
        assert [lr_at(s, e) for e in (0, 14, 15, 29, 30, 45, 49)] == [1e-4, 1e-4, 1e-5, 1e-5, 1e-6, 1e-7, 1e-7]

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            lr_at(Schedule(), 50)
        with pytest.raises(ContractError):
            lr_at(Schedule(), -1)


class TestVideoVerdict:
    def test_confident_fake(self):
        v = aggregate_video("v", [0.9] * 30)
        assert v.label_out == "fake" and v.aggregate == pytest.approx(0.9)

    def test_boundary_is_fake(self):
        assert aggregate_video("v", [0.5, 0.5]).label_out == "fake"

    def test_mixed(self):
        v = aggregate_video("v", [0.2] * 15 + [0.6] * 15)
        assert v.aggregate == pytest.approx(0.4) and v.label_out == "real"

    def test_order_invariant(self, rng):
        p = rng.uniform(size=20)
        assert aggregate_video("v", p).aggregate == pytest.approx(aggregate_video("v", p[::-1]).aggregate)

    def test_cap(self):
        v = aggregate_video("v", [1.0] * 30 + [0.0] * 15)
        assert len(v.frame_probabilities) == 30 and v.aggregate == 1.0

    def test_no_frames(self):
        with pytest.raises(ContractError):
            aggregate_video("v", [])

    def test_classify_video_uses_max_frames(self):
        model = init_parameters(tiny_config(image_size=32, depth=1), seed=0)
        frames = np.random.default_rng(0).uniform(size=(45, 3, 32, 32))
        v = classify_video(model, frames)
        assert len(v.frame_probabilities) == 30 and model.training
        assert len(classify_video(model, frames[:5]).frame_probabilities) == 5


class TestReport:
    def test_perfect(self):
        r = report_from_scores([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        assert (r.accuracy, r.auc) == (1.0, 1.0) and r.log_loss < 0.25

    def test_uninformative(self):
        r = report_from_scores([0.5] * 4, [0, 1, 0, 1])
        assert (r.accuracy, r.auc) == (0.5, 0.5)
        assert r.log_loss == pytest.approx(math.log(2), abs=1e-9)

    def test_single_class(self, caplog):
        r = report_from_scores([0.2, 0.7], [1, 1])
        assert r.auc is None and r.roc_points == [] and "single class" in caplog.text

    def test_video_grouping(self):
        r = report_from_scores([0.9, 0.7, 0.2, 0.4], [1, 1, 0, 0], ["b", "b", "a", "a"], [1, 0, 0, 1])
        assert [v.video_id for v in r.videos] == ["a", "b"]
        assert r.videos[1].frame_probabilities == [0.7, 0.9]
        assert r.video_accuracy == 1.0


class TestTrain:
    def test_zero_epochs_leaves_model(self):
        model = init_parameters(tiny_config(), seed=0)
        before = {k: v.copy() for k, v in model.state_dict().items()}
        result = train(model, small_manifest(), Schedule(total_epochs=0))
        assert result.history == [] and result.best_state is None
        after = model.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_deterministic(self):
        def run():
            model = init_parameters(tiny_config(depth=1), seed=3)
            r = train(model, small_manifest(), Schedule(base_lr=1e-3, total_epochs=2), seed=3, batch_size=4)
            return r.history, model.state_dict()
        (h1, s1), (h2, s2) = run(), run()
        assert h1 == h2
        assert all(np.array_equal(s1[k], s2[k]) for k in s1)

    def test_best_is_lowest_val_loss(self):
        model = init_parameters(tiny_config(depth=1), seed=1)
        r = train(model, small_manifest(), Schedule(base_lr=1e-3, total_epochs=3), batch_size=4)
        losses = [row["val_loss"] for row in r.history]
        assert r.best_epoch == int(np.argmin(losses))

    def test_abort_on_non_finite(self):
        model = init_parameters(tiny_config(depth=1), seed=0)
        model.params["head.b2"].data[:] = np.nan
        poisoned = {k: v.copy() for k, v in model.state_dict().items()}
        with pytest.raises(TrainingAborted) as info:
            train(model, small_manifest(), Schedule(total_epochs=2), batch_size=4)
        assert info.value.history == []
        assert np.isnan(info.value.last_good["head.b2"]).all()
        assert all(np.array_equal(poisoned[k], model.state_dict()[k], equal_nan=True) for k in poisoned)

    def test_evaluate_single_class_split(self):
        model = init_parameters(tiny_config(depth=1), seed=0)
        samples = [s for s in synthetic.make_samples(2, 2, size=64) if s.label == 1]
        assert evaluate(model, samples).auc is None

    def test_history_csv(self, tmp_path):
        write_history_csv([{"epoch": 0, "lr": 1e-4, "train_loss": 0.5, "val_loss": 0.6,
                            "val_accuracy": 0.5, "val_auc": float("nan")}], tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,lr,train_loss,val_loss,val_accuracy,val_auc"
        assert lines[1] == "0,0.0001,0.5,0.6,0.5,nan"
