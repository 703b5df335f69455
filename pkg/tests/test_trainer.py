"""Trainer tests: cosine schedule closed form, AdamW against a scalar
reference, descent, determinism, and the frozen-input contract."""

import json
import math
import os

import numpy as np
import pytest

from fuseprobe import autodiff as ad
from fuseprobe.heads import FusionHeadConfig
from fuseprobe.store import load_manifest, read_embedding_file
from fuseprobe.synth import SynthConfig, generate
from fuseprobe.trainer import AdamWState, TrainConfig, adamw_step, cosine_lr, train


class TestCosineSchedule:
    def test_recipe_endpoints(self):
        assert cosine_lr(0, 100, 1e-3) == pytest.approx(1e-3, rel=1e-12)
        assert cosine_lr(100, 100, 1e-3) == pytest.approx(0.0, abs=1e-18)
        assert cosine_lr(50, 100, 1e-3) == pytest.approx(5e-4, rel=1e-12)

    def test_matches_closed_form_everywhere(self):
        total = 37
        for step in range(total + 1):
            expected = 0.5 * 1e-3 * (1.0 + math.cos(math.pi * step / total))
            assert cosine_lr(step, total, 1e-3) == expected

    def test_eta_min_floor(self):
        assert cosine_lr(10, 10, 2e-3, eta_min=1e-4) == pytest.approx(1e-4)

    def test_zero_total_steps(self):
        with pytest.raises(ValueError):
            cosine_lr(0, 0, 1e-3)


def adamw_reference(w0, grads, lr, wd, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar reference: decoupled decay before the moment update."""
    w = w0
    m = v = 0.0
    trajectory = []
    for t, g in enumerate(grads, start=1):
        w -= lr * wd * w
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        w -= lr * m_hat / (math.sqrt(v_hat) + eps)
        trajectory.append(w)
    return trajectory


class TestAdamW:
    def _params(self, value):
        return {"w": ad.Tensor(np.array([value], dtype=np.float64), requires_grad=True)}

    def test_zero_grad_zero_decay_is_identity(self):
        cfg = TrainConfig(weight_decay=0.0)
        params = self._params(1.5)
        state = AdamWState(params)
        adamw_step(params, {"w": np.zeros(1)}, state, cfg, lr=1e-3)
        assert params["w"].data[0] == 1.5

    def test_first_step_moves_by_lr(self):
        cfg = TrainConfig(weight_decay=0.0)
        params = self._params(1.0)
        state = AdamWState(params)
        adamw_step(params, {"w": np.ones(1)}, state, cfg, lr=1e-3)
        assert params["w"].data[0] == pytest.approx(1.0 - 1e-3, abs=1e-9)

    def test_three_step_trajectory_on_quadratic(self):
        # f(w) = w^2, gradient 2w, with decay active
        lr, wd = 1e-2, 0.02
        cfg = TrainConfig(lr0=lr, weight_decay=wd)
        params = self._params(1.0)
        state = AdamWState(params)
        got = []
        grads_seen = []
        for _ in range(3):
            g = 2.0 * float(params["w"].data[0])
            grads_seen.append(g)
            adamw_step(params, {"w": np.array([g])}, state, cfg, lr=lr)
            got.append(float(params["w"].data[0]))
        expected = adamw_reference(1.0, grads_seen, lr, wd, eps=cfg.eps)
        np.testing.assert_allclose(got, expected, atol=1e-7)

    def test_no_decay_set_respected(self):
        cfg = TrainConfig(weight_decay=0.5)
        params = self._params(1.0)
        state = AdamWState(params)
        adamw_step(params, {"w": np.zeros(1)}, state, cfg, lr=1e-3, no_decay={"w"})
        assert params["w"].data[0] == 1.0

    def test_nonfinite_grad_names_parameter(self):
        cfg = TrainConfig()
        params = self._params(1.0)
        state = AdamWState(params)
        with pytest.raises(ad.NonFiniteError, match="w"):
            adamw_step(params, {"w": np.array([np.nan])}, state, cfg, lr=1e-3)


@pytest.fixture(scope="module")
def tiny_bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = SynthConfig(
        name="tiny", order_task=False, class_count=2, views=("a", "b"),
        trained_view="a", videos_per_class_per_view=8, f_total=20,
        tokens_per_frame=2, dim=8, noise_sigma=0.05, seed=9,
        train_frac=0.5, val_frac=0.25,
    )
    manifest, path = generate(cfg, str(out))
    return manifest, path, cfg


class TestTraining:
    def test_separable_set_reaches_full_accuracy(self, tiny_bench, tmp_path):
        manifest, _, _ = tiny_bench
        head_cfg = FusionHeadConfig(kind="avg_pool", model_dim=8, seed=0)
        train_cfg = TrainConfig(epochs=25, batch_size=4, frames_per_clip=16, seed=0, lr0=3e-3)
        result = train(manifest, head_cfg, train_cfg, out_dir=str(tmp_path), quiet=True)
        assert result.epoch_accs[-1] == 1.0

    def test_loss_descends_on_average(self, tiny_bench, tmp_path):
        manifest, _, _ = tiny_bench
        head_cfg = FusionHeadConfig(kind="avg_pool", model_dim=8, seed=0)
        train_cfg = TrainConfig(epochs=6, batch_size=4, frames_per_clip=16, seed=0, lr0=3e-3)
        result = train(manifest, head_cfg, train_cfg, out_dir=str(tmp_path), quiet=True)
        first = result.epoch_losses[0]
        assert np.mean(result.epoch_losses[1:6]) < first

    def test_two_runs_bit_identical(self, tiny_bench, tmp_path):
        manifest, _, _ = tiny_bench
        head_cfg = FusionHeadConfig(kind="lstm", model_dim=8, hidden_dim=6, seed=1)
        train_cfg = TrainConfig(epochs=2, batch_size=4, frames_per_clip=16, seed=3)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            train(manifest, head_cfg, train_cfg, out_dir=str(out), quiet=True)
            outs.append(out)
        for fname in ("checkpoint_final.fpck", "checkpoint_best.fpck", "train_log.jsonl"):
            a = (outs[0] / fname).read_bytes()
            b = (outs[1] / fname).read_bytes()
            assert a == b, f"{fname} differs between identical runs"

    def test_embedding_files_never_mutated(self, tiny_bench, tmp_path):
        manifest, _, _ = tiny_bench
        record = manifest.records[0]
        before = open(manifest.resolve(record), "rb").read()
        head_cfg = FusionHeadConfig(kind="avg_pool", model_dim=8, seed=0)
        train_cfg = TrainConfig(epochs=1, batch_size=4, frames_per_clip=16, seed=0)
        train(manifest, head_cfg, train_cfg, out_dir=str(tmp_path), quiet=True)
        assert open(manifest.resolve(record), "rb").read() == before

    def test_only_head_and_probe_are_trainable(self, tiny_bench, tmp_path):
        manifest, _, _ = tiny_bench
        head_cfg = FusionHeadConfig(kind="self_attn_cls_avg", model_dim=8, num_heads=2, seed=0)
        train_cfg = TrainConfig(epochs=1, batch_size=4, frames_per_clip=16, seed=0)
        result = train(manifest, head_cfg, train_cfg, out_dir=str(tmp_path), quiet=True)
        from fuseprobe.checkpoint import load_checkpoint

        ckpt = load_checkpoint(result.checkpoint_final)
        names = set(ckpt.head.params) | set(ckpt.probe.params)
        assert all("backbone" not in n for n in names)

    def test_empty_train_split_rejected(self, tiny_bench, tmp_path):
        manifest, _, _ = tiny_bench
        import copy

        stripped = copy.deepcopy(manifest)
        stripped.records = [r for r in stripped.records if r.split != "train"]
        head_cfg = FusionHeadConfig(kind="avg_pool", model_dim=8)
        with pytest.raises(ValueError):
            train(stripped, head_cfg, TrainConfig(epochs=1), out_dir=str(tmp_path))

    def test_lr_trace_matches_closed_form(self, tiny_bench, tmp_path):
        manifest, _, _ = tiny_bench
        head_cfg = FusionHeadConfig(kind="avg_pool", model_dim=8, seed=0)
        train_cfg = TrainConfig(epochs=3, batch_size=4, frames_per_clip=16, seed=0)
        result = train(manifest, head_cfg, train_cfg, out_dir=str(tmp_path), quiet=True)
        steps_per_epoch = math.ceil(8 / 4)  # 8 train videos, batch 4
        total = steps_per_epoch * 3
        with open(result.log_path) as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["kind"] != "step":
                    continue
                expected = cosine_lr(rec["step"] - 1, total, train_cfg.lr0, train_cfg.eta_min)
                assert rec["lr"] == expected
