import numpy as np
import pytest
import torch

from lymphodetect import model as fcn
from lymphodetect.annotations import AnnotationSet, DatasetSplit
from lymphodetect.synthetic import generate_scene
from lymphodetect.training import (
    FineTuneJob,
    Schedule,
    TrainState,
    assemble_finetune_job,
    compile_training_fov,
    finetune,
    l2_penalty,
    patch_loss,
    schedule_lookup,
    train,
    weighted_cross_entropy,
)

TINY = fcn.NetworkConfig(base_channels=4, scales=2, dropout_rate=0.1)


def make_fovs(count, dims=(96, 96), n_lymph=2, seed=0, clustering=0.0):
    rng = np.random.default_rng(seed)
    fovs = []
    for i in range(count):
        scene = generate_scene(dims, n_lymph, 0, clustering=clustering, rng=rng)
        fovs.append(
            compile_training_fov(f"fov{i}", scene.image, scene.annotations, None)
        )
    return fovs


class TestSchedule:
    def test_table_rows(self):
        assert schedule_lookup(1) == (1e-4, 0.9)
        assert schedule_lookup(50) == (1e-4, 0.9)
        assert schedule_lookup(51) == (1e-5, 0.99)
        assert schedule_lookup(120) == (1e-5, 0.99)
        assert schedule_lookup(121) == (1e-6, 0.999)
        assert schedule_lookup(200) == (1e-6, 0.999)

    def test_holds_last_row_beyond_table(self):
        assert schedule_lookup(250) == (1e-6, 0.999)

    def test_epoch_below_one_rejected(self):
        with pytest.raises(ValueError):
            schedule_lookup(0)

    def test_invalid_schedules_rejected(self):
        with pytest.raises(ValueError):
            Schedule(((1, 10, 1e-3, 0.9), (12, 20, 1e-4, 0.9)))  # gap
        with pytest.raises(ValueError):
            Schedule(((1, 10, 0.0, 0.9),))  # non-positive rate
        with pytest.raises(ValueError):
            Schedule(((1, 10, 1e-3, 1.0),))  # momentum out of range


class TestWeightedCrossEntropy:
    def test_perfect_prediction_is_zero(self):
        prob = np.zeros((4, 4, 2))
        labels = np.zeros((4, 4), dtype=np.uint8)
        weights = np.zeros((4, 4), dtype=np.float32)
        labels[0, 0], labels[1, 1] = 2, 1
        weights[0, 0], weights[1, 1] = 1.0, 0.5
        prob[0, 0, 1] = 1.0
        prob[1, 1, 0] = 1.0
        assert weighted_cross_entropy(prob, labels, weights) == 0.0

    def test_uniform_prediction_is_ln2(self):
        rng = np.random.default_rng(0)
        prob = np.full((8, 8, 2), 0.5)
        labels = rng.choice([0, 1, 2], size=(8, 8)).astype(np.uint8)
        weights = np.where(labels > 0, rng.choice([0.5, 1.0], size=(8, 8)), 0.0)
        got = weighted_cross_entropy(prob, labels, weights)
        assert got == pytest.approx(np.log(2.0), abs=1e-12)

    def test_two_pixel_arithmetic(self):
        prob = np.full((1, 2, 2), 0.5)
        prob[0, 0] = (0.3, 0.7)  # label 2 pixel: loss a = -log 0.7
        prob[0, 1] = (0.2, 0.8)  # label 1 pixel: loss b = -log 0.2
        labels = np.array([[2, 1]], dtype=np.uint8)
        weights = np.array([[1.0, 0.5]], dtype=np.float32)
        a = -np.log(0.7)
        b = -np.log(0.2)
        expected = (a + 0.5 * b) / 1.5
        assert weighted_cross_entropy(prob, labels, weights) == pytest.approx(expected, abs=1e-12)

    def test_all_zero_weights(self):
        prob = np.full((4, 4, 2), 0.5)
        labels = np.full((4, 4), 2, dtype=np.uint8)
        assert weighted_cross_entropy(prob, labels, np.zeros((4, 4))) == 0.0

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(1)
        prob = rng.dirichlet((1, 1), size=(6, 6))
        labels = rng.choice([0, 1, 2], size=(6, 6)).astype(np.uint8)
        weights = np.where(labels > 0, rng.random((6, 6)), 0.0)
        a = weighted_cross_entropy(prob, labels, weights)
        b = weighted_cross_entropy(prob, labels, 3.7 * weights)
        assert a == pytest.approx(b, rel=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            prob = rng.dirichlet((1, 1), size=(5, 5))
            labels = rng.choice([0, 1, 2], size=(5, 5)).astype(np.uint8)
            weights = np.where(labels > 0, rng.random((5, 5)), 0.0)
            assert weighted_cross_entropy(prob, labels, weights) >= 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            weighted_cross_entropy(np.zeros((4, 4, 2)), np.zeros((3, 3)), np.zeros((3, 3)))

    def test_matches_torch_data_term(self):
        rng = np.random.default_rng(3)
        prob = rng.dirichlet((1, 1), size=(8, 8))
        labels = rng.choice([0, 1, 2], size=(8, 8)).astype(np.uint8)
        weights = np.where(labels > 0, rng.choice([0.5, 1.0], size=(8, 8)), 0.0)
        torch_val = float(
            fcn.data_term(
                torch.from_numpy(prob.transpose(2, 0, 1)[None]),
                torch.from_numpy(labels.astype(np.int64)),
                torch.from_numpy(weights),
            )
        )
        assert weighted_cross_entropy(prob, labels, weights) == pytest.approx(torch_val, rel=1e-9)


class TestL2Penalty:
    def test_excludes_biases(self):
        params = fcn.init_params(TINY, rng_seed=0)
        before = l2_penalty(params)
        params.tensors["enc1.conv1.bias"][:] = 100.0
        assert l2_penalty(params) == before

    def test_matches_manual_sum(self):
        params = fcn.init_params(TINY, rng_seed=1)
        manual = sum(
            float(np.square(params.tensors[n].astype(np.float64)).sum())
            for n in params.manifest
            if n.endswith(".weight")
        )
        assert l2_penalty(params) == pytest.approx(1e-5 * manual, rel=1e-12)


class TestSgdStep:
    def test_single_step_decreases_patch_loss(self):
        rng = np.random.default_rng(0)
        params = fcn.init_params(TINY, rng_seed=2).astype(np.float64)
        image = rng.random((16, 16, 3))
        labels = np.zeros((16, 16), dtype=np.uint8)
        labels[4:8, 4:8] = 2
        labels[10:14, 10:14] = 1
        weights = (labels > 0).astype(np.float64)
        before = patch_loss(params, image, labels, weights)
        grads = fcn.backward(params, image, labels, weights, mode="eval")
        eta = 1e-6
        stepped = params.copy()
        for name in stepped.manifest:
            stepped.tensors[name] = stepped.tensors[name] - eta * grads[name]
        after = patch_loss(stepped, image, labels, weights)
        assert after < before


class TestTrain:
    def test_synthetic_convergence(self):
        fovs = make_fovs(4, dims=(160, 160), n_lymph=3, seed=0)
        split = DatasetSplit(train=fovs[:3], val=fovs[3:])
        config = fcn.NetworkConfig(base_channels=16, scales=2, dropout_rate=0.0)
        schedule = Schedule(((1, 18, 3e-3, 0.9), (19, 10**9, 5e-4, 0.9)))
        result = train(
            TrainState.new(fcn.init_params(config, 0), seed=1),
            {"synthetic": split},
            epochs=30,
            train_epoch_size=25,
            val_epoch_size=4,
            patience=100,
            K=48,
            schedule=schedule,
        )
        history = result.history
        assert history[-1]["train_loss"] < 0.1 * history[0]["train_loss"]

    def test_deterministic_loss_curves(self):
        fovs = make_fovs(3, seed=1)
        split = DatasetSplit(train=fovs[:2], val=fovs[2:])

        def run():
            return train(
                TrainState.new(fcn.init_params(TINY, 0), seed=5),
                {"synthetic": split},
                epochs=3,
                train_epoch_size=4,
                val_epoch_size=2,
                K=32,
            ).history

        a, b = run(), run()
        assert [(r["train_loss"], r["val_loss"]) for r in a] == [
            (r["train_loss"], r["val_loss"]) for r in b
        ]

    def test_zero_patience_stops_at_first_non_improvement(self):
        fovs = make_fovs(3, seed=2)
        split = DatasetSplit(train=fovs[:2], val=fovs[2:])
        result = train(
            TrainState.new(fcn.init_params(TINY, 0), seed=3),
            {"synthetic": split},
            epochs=40,
            train_epoch_size=4,
            val_epoch_size=2,
            patience=0,
            K=32,
        )
        vals = [r["val_loss"] for r in result.history]
        best = vals[0]
        stop_at = None
        for i, v in enumerate(vals[1:], start=1):
            if v >= best:
                stop_at = i
                break
            best = v
        assert stop_at is not None
        assert len(vals) == stop_at + 1

    def test_returns_best_validation_state(self):
        fovs = make_fovs(3, seed=4)
        split = DatasetSplit(train=fovs[:2], val=fovs[2:])
        result = train(
            TrainState.new(fcn.init_params(TINY, 0), seed=7),
            {"synthetic": split},
            epochs=6,
            train_epoch_size=4,
            val_epoch_size=2,
            patience=100,
            K=32,
        )
        vals = [r["val_loss"] for r in result.history]
        assert result.params.epoch == int(np.argmin(vals)) + 1
        assert result.best_val_loss == pytest.approx(min(vals))

    def test_empty_training_split_rejected(self):
        with pytest.raises(ValueError):
            train(
                TrainState.new(fcn.init_params(TINY, 0), seed=0),
                {"synthetic": DatasetSplit(train=[], val=[])},
                epochs=1,
            )

    def test_writes_loss_log_and_checkpoints(self, tmp_path):
        fovs = make_fovs(3, seed=5)
        split = DatasetSplit(train=fovs[:2], val=fovs[2:])
        train(
            TrainState.new(fcn.init_params(TINY, 0), seed=0),
            {"synthetic": split},
            epochs=2,
            train_epoch_size=3,
            val_epoch_size=2,
            K=32,
            checkpoint_dir=tmp_path,
        )
        log = (tmp_path / "loss_log.tsv").read_text().splitlines()
        assert log[0] == "epoch\ttrain_loss\tval_loss\tlr\tmomentum"
        assert len(log) == 3
        assert (tmp_path / "best").is_dir()


class TestFineTune:
    def test_job_assembly_sizes_and_disjointness(self):
        new = make_fovs(5, seed=6)
        prior = make_fovs(12, seed=7)
        job = assemble_finetune_job(new, prior, np.random.default_rng(0))
        assert len(job.new_fovs) == 5
        assert len(job.replay_fovs) == 5
        assert len(job.holdout_fovs) == 5
        replay_ids = {f.fov_id for f in job.replay_fovs}
        holdout_ids = {f.fov_id for f in job.holdout_fovs}
        assert not replay_ids & holdout_ids
        assert job.lr == 1e-6 and job.momentum == 0.999

    def test_small_prior_pool_shrinks_with_warning(self):
        new = make_fovs(4, seed=8)
        prior = make_fovs(5, seed=9)
        with pytest.warns(UserWarning):
            job = assemble_finetune_job(new, prior, np.random.default_rng(0))
        assert len(job.replay_fovs) == 2
        assert len(job.holdout_fovs) == 2

    def test_degenerate_no_prior_trains_five_epochs_without_validation(self):
        new = make_fovs(2, seed=10)
        job = FineTuneJob(new_fovs=new, replay_fovs=[], holdout_fovs=[])
        start = fcn.init_params(TINY, 0)
        result = finetune(
            TrainState.new(start, seed=0),
            job,
            train_epoch_size=3,
            val_epoch_size=2,
            K=32,
            parent_id="parent",
        )
        assert len(result.history) == 5
        assert all(np.isnan(r["val_loss"]) for r in result.history)
        assert result.params.parent_id == "parent"

    def test_finetune_validates_on_holdout_and_records_lineage(self):
        new = make_fovs(2, seed=11)
        prior = make_fovs(6, seed=12)
        job = assemble_finetune_job(new, prior, np.random.default_rng(1))
        result = finetune(
            TrainState.new(fcn.init_params(TINY, 0), seed=2),
            job,
            max_epochs=4,
            patience=1,
            train_epoch_size=3,
            val_epoch_size=2,
            K=32,
            parent_id="m0007",
        )
        assert result.params.parent_id == "m0007"
        assert all(np.isfinite(r["val_loss"]) for r in result.history)
        assert len(result.history) <= 4

    def test_empty_job_rejected(self):
        job = FineTuneJob(new_fovs=[], replay_fovs=[], holdout_fovs=[])
        with pytest.raises(ValueError):
            finetune(TrainState.new(fcn.init_params(TINY, 0), seed=0), job)


class TestCompileTrainingFov:
    def test_compiles_normalized_float_image(self):
        rng = np.random.default_rng(13)
        image = rng.integers(0, 255, size=(64, 64, 3), dtype=np.uint8)
        ann = AnnotationSet(fov_id="f", positive_points=[(32, 32)])
        from lymphodetect.stain import fit_reference

        fov = compile_training_fov("f", image, ann, reference=fit_reference(image))
        assert fov.image.dtype == np.float32
        assert 0.0 <= fov.image.min() and fov.image.max() <= 1.0
        assert fov.labels[32, 32] == 2
        assert fov.weights[32, 32] == 1.0
