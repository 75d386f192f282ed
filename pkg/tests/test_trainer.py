"""Optimizer, schedule, ablation resolution, and the training loop."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paeff import data, evaluation, losses, model, trainer
from paeff.autodiff import Tensor
from paeff.errors import ContractError, NumericError
from paeff.losses import LossWeights


def desk_setup(rho=1.0, seed=21):
    ds = data.synth_generate(10, 4, 12, 10, rho, 0.1, seed=seed, latent_dim=4)
    split = data.make_unseen_split(ds, n_val=2, n_test=2, seed=seed)
    cfg = model.ModelConfig(face_dim=12, voice_dim=10, num_identities=6, proj_dim=8)
    return ds, split, cfg


class TestCosineSchedule:
    def test_start_is_lr0(self):
        assert trainer.cosine_lr(0, 100, 2e-5) == 2e-5

    def test_end_is_lr_min(self):
        assert trainer.cosine_lr(100, 100, 2e-5, lr_min=1e-6) == pytest.approx(1e-6, abs=1e-20)

    def test_midpoint(self):
        assert trainer.cosine_lr(50, 100, 2e-5, lr_min=0.0) == pytest.approx(1e-5, abs=1e-18)

    def test_beyond_schedule_rejected(self):
        with pytest.raises(ContractError):
            trainer.cosine_lr(101, 100, 2e-5)

    @settings(max_examples=20, deadline=None)
    @given(total=st.integers(1, 500))
    def test_monotone_nonincreasing(self, total):
        values = [trainer.cosine_lr(t, total, 1e-3, 1e-6) for t in range(total + 1)]
        assert all(a >= b - 1e-18 for a, b in zip(values, values[1:]))


class _OneParam:
    def __init__(self, tensor):
        self._t = tensor

    def named(self):
        return [("p", self._t)]


class TestAdamw:
    def test_zero_grad_zero_decay_is_identity(self):
        cfg = trainer.TrainConfig(weight_decay=0.0)
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        trainer.adamw_step(_OneParam(p), trainer.AdamState(), lr=0.1, cfg=cfg)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_single_step_closed_form(self):
        # f(x) = x^2 at x = 1: grad 2; first-step m_hat = 2, v_hat = 4
        cfg = trainer.TrainConfig(weight_decay=0.01)
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([2.0])
        trainer.adamw_step(_OneParam(p), trainer.AdamState(), lr=0.1, cfg=cfg)
        expected = 1.0 - 0.1 * (2.0 / (math.sqrt(4.0) + cfg.adam_eps)) - 0.1 * 0.01 * 1.0
        assert p.data[0] == pytest.approx(expected, abs=1e-15)

    def test_pure_decay_shrink(self):
        cfg = trainer.TrainConfig(weight_decay=0.5)
        p = Tensor(np.array([2.0]), requires_grad=True)
        p.grad = np.zeros(1)
        trainer.adamw_step(_OneParam(p), trainer.AdamState(), lr=0.1, cfg=cfg)
        assert p.data[0] == pytest.approx(2.0 * (1.0 - 0.1 * 0.5), abs=1e-15)

    def test_two_steps_track_reference_formula(self):
        cfg = trainer.TrainConfig(weight_decay=0.0)
        p = Tensor(np.array([0.7]), requires_grad=True)
        state = trainer.AdamState()
        x, m, v = 0.7, 0.0, 0.0
        for t in (1, 2):
            g = 2.0 * x
            p.grad = np.array([g])
            trainer.adamw_step(_OneParam(p), state, lr=0.05, cfg=cfg)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.05 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + cfg.adam_eps)
            assert p.data[0] == pytest.approx(x, abs=1e-14)


class TestAblationResolution:
    def test_aliases(self):
        assert trainer.parse_ablation("full") == frozenset()
        assert trainer.parse_ablation("baseline") == frozenset(
            {"no_fa", "no_hyperbolic", "linear_fusion"}
        )
        assert trainer.parse_ablation("egff") == frozenset({"no_fa", "no_hyperbolic"})
        assert trainer.parse_ablation("egff_fa") == frozenset({"no_hyperbolic"})

    def test_joined_flags(self):
        assert trainer.parse_ablation("no_fa+linear_fusion") == frozenset(
            {"no_fa", "linear_fusion"}
        )

    def test_unknown_rejected(self):
        with pytest.raises(ContractError):
            trainer.parse_ablation("nonsense")

    def test_no_fa_zeroes_alignment_weight(self):
        w = trainer.effective_weights(LossWeights(), frozenset({"no_fa"}))
        assert w.alpha1 == 0.0 and w.alpha2 == 0.35 and w.alpha3 == 0.35


class TestBatchSizeResolution:
    def test_explicit_wins(self):
        ds, split, _ = desk_setup()
        cfg = trainer.TrainConfig(batch_size=7)
        assert trainer.resolve_batch_size(cfg, ds, split) == 7

    def test_desk_scale_default(self):
        ds, split, _ = desk_setup()
        cfg = trainer.TrainConfig()
        assert trainer.resolve_batch_size(cfg, ds, split) == 64

    def test_large_scale_default(self):
        ds = data.synth_generate(600, 10, 4, 4, 1.0, 0.1, seed=1, latent_dim=2)
        split = data.SplitSpec(
            "unseen_unheard", frozenset(ds.identities()), frozenset(), frozenset()
        )
        cfg = trainer.TrainConfig()
        assert trainer.resolve_batch_size(cfg, ds, split) == 1024


class TestTrainLoop:
    def test_single_epoch_logs_one_breakdown(self):
        ds, split, cfg = desk_setup()
        tc = trainer.TrainConfig(epochs=1, batch_size=4, lr0=1e-3, seed=0, val_trials=20)
        result = trainer.train(ds, split, cfg, tc)
        assert len(result.history) == 1
        log = result.history[0]
        assert log.epoch == 1
        assert math.isfinite(log.total) and math.isfinite(log.val_eer)

    def test_seed_repeatability(self):
        ds, split, cfg = desk_setup()
        tc = trainer.TrainConfig(epochs=3, batch_size=4, lr0=1e-3, seed=5, val_trials=20)
        a = trainer.train(ds, split, cfg, tc)
        b = trainer.train(ds, split, cfg, tc)
        assert [log.as_dict() for log in a.history] == [log.as_dict() for log in b.history]
        for (name, ta), (_, tb) in zip(a.params.named(), b.params.named()):
            np.testing.assert_array_equal(ta.data, tb.data, err_msg=name)

    def test_first_batch_total_matches_weighted_components(self):
        ds, split, cfg = desk_setup()
        batch = data.make_batches(ds, split, 4, seed=3)[0]
        params = model.init_params(cfg, seed=3)
        weights = LossWeights()
        breakdown = trainer.step_losses(
            batch.faces, batch.voices, batch.labels, params, cfg, weights
        )
        expected = (
            weights.alpha1 * breakdown.l_align.item()
            + weights.alpha2 * breakdown.l_op.item()
            + weights.alpha3 * breakdown.l_ce.item()
        )
        assert abs(breakdown.total.item() - expected) <= 1e-12

    def test_classifier_only_loss_decreases(self):
        ds, split, cfg = desk_setup()
        tc = trainer.TrainConfig(
            epochs=12, batch_size=4, lr0=5e-3, seed=1, val_trials=20,
            loss_weights=LossWeights(alpha1=0.0, alpha2=0.0, alpha3=1.0),
        )
        result = trainer.train(ds, split, cfg, tc)
        first, last = result.history[0].l_ce, result.history[-1].l_ce
        assert last < first

    def test_logit_scale_clamped(self):
        ds, split, cfg = desk_setup()
        tc = trainer.TrainConfig(epochs=4, batch_size=4, lr0=0.5, seed=2, val_trials=20)
        result = trainer.train(ds, split, cfg, tc)
        assert result.params.logit_scale.item() <= math.log(100.0) + 1e-12

    def test_divergence_aborts_with_step(self):
        ds, split, cfg = desk_setup()
        tc = trainer.TrainConfig(epochs=30, batch_size=4, lr0=1e9, seed=3, val_trials=20)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericError, match="step"):
                trainer.train(ds, split, cfg, tc)

    def test_best_checkpoint_selected_by_val_eer(self):
        ds, split, cfg = desk_setup()
        tc = trainer.TrainConfig(epochs=5, batch_size=4, lr0=5e-3, seed=4, val_trials=40)
        result = trainer.train(ds, split, cfg, tc)
        best = min(result.history, key=lambda log: log.val_eer)
        assert result.best_val_eer == best.val_eer
        assert result.best_epoch == best.epoch

    def test_coupled_data_improves_val_auc(self):
        ds, split, cfg = desk_setup(rho=1.0)
        tc = trainer.TrainConfig(epochs=25, batch_size=4, lr0=5e-3, seed=6, val_trials=60)
        result = trainer.train(ds, split, cfg, tc)
        assert max(log.val_auc for log in result.history[1:]) > result.history[0].val_auc

    def test_history_jsonl_schema(self, tmp_path):
        ds, split, cfg = desk_setup()
        tc = trainer.TrainConfig(epochs=2, batch_size=4, lr0=1e-3, seed=7, val_trials=20)
        result = trainer.train(ds, split, cfg, tc)
        path = tmp_path / "history.jsonl"
        trainer.write_history_jsonl(path, result.history)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        record = json.loads(lines[0])
        assert set(record) == {"epoch", "l_align", "l_op", "l_ce", "total", "val_eer", "val_auc", "lr"}

    def test_ablation_arm_changes_model_config(self):
        ds, split, cfg = desk_setup()
        tc = trainer.TrainConfig(
            epochs=1, batch_size=4, lr0=1e-3, seed=8, val_trials=20, ablation="baseline"
        )
        result = trainer.train(ds, split, cfg, tc)
        assert not result.model_cfg.use_hyperbolic
        assert result.model_cfg.fusion == "linear"
        assert result.model_cfg.similarity == "cosine"
