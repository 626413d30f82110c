import math

import numpy as np
import pytest
import torch

from talkseg.exceptions import InvalidInputError
from talkseg.sync import (
    EMBED_DIM, EPS_P, T_V, PairSampler, SyncExpert, SyncNetwork, lower_half_stack,
    sync_loss, sync_probability,
)

from oracles import cosine_prob_loop, sync_loss_loop


class TestProbability:
    def test_identical_unit(self):
        v = np.zeros(EMBED_DIM)
        v[3] = 1.0
        assert sync_probability(v, v) == 1.0

    def test_orthogonal_hits_floor(self):
        a, b = np.zeros(EMBED_DIM), np.zeros(EMBED_DIM)
        a[0], b[1] = 1.0, 1.0
        assert sync_probability(a, b) == EPS_P

    def test_zero_vector(self):
        assert sync_probability(np.zeros(EMBED_DIM), np.ones(EMBED_DIM)) == EPS_P

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            sync_probability(np.ones(512), np.ones(511))
        with pytest.raises(InvalidInputError):
            sync_probability(torch.ones(2, 512), torch.ones(2, 256))

    def test_matches_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s, m = rng.random(EMBED_DIM), rng.standard_normal(EMBED_DIM)
            assert math.isclose(sync_probability(s, m), cosine_prob_loop(list(s), list(m)), rel_tol=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        s, m = rng.random(EMBED_DIM), rng.random(EMBED_DIM)
        p = sync_probability(s, m)
        for k in (1e-3, 0.5, 7.0, 1e4):
            assert math.isclose(sync_probability(k * s, m), p, rel_tol=1e-12)
            assert math.isclose(sync_probability(s, k * m), p, rel_tol=1e-12)

    def test_torch_agrees_with_numpy(self):
        rng = np.random.default_rng(2)
        s, m = rng.random((4, EMBED_DIM)), rng.random((4, EMBED_DIM))
        t = sync_probability(torch.from_numpy(s), torch.from_numpy(m)).numpy()
        np.testing.assert_allclose(t, [sync_probability(a, b) for a, b in zip(s, m)], rtol=1e-12)


class TestLoss:
    def test_half(self):
        assert math.isclose(sync_loss([0.5], [1]), 0.693147, abs_tol=1e-6)

    def test_certain_positive(self):
        assert sync_loss([1.0], [1]) < 1e-6

    def test_mixed(self):
        assert math.isclose(sync_loss([0.9, 0.1], [1, 0]), 0.105361, abs_tol=1e-6)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            sync_loss([], [])
        with pytest.raises(InvalidInputError):
            sync_loss(torch.zeros(0), torch.zeros(0))

    def test_bounded_by_clamp(self):
        assert sync_loss([0.0], [1]) <= -math.log(EPS_P) + 1e-9

    def test_matches_loop(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = rng.uniform(0.01, 0.99, 8)
            y = rng.integers(0, 2, 8)
            assert math.isclose(sync_loss(p, y), sync_loss_loop(p, y), rel_tol=1e-12)

    def test_monotone(self):
        ps = np.linspace(0.05, 0.95, 19)
        pos = [sync_loss([p], [1]) for p in ps]
        neg = [sync_loss([p], [0]) for p in ps]
        assert all(a > b for a, b in zip(pos, pos[1:]))
        assert all(a < b for a, b in zip(neg, neg[1:]))


def _loss_of_embeddings(s, m, y):
    return sync_loss(sync_probability(s, m), y)


class TestGradients:
    def test_finite_differences(self):
        rng = np.random.default_rng(4)
        h = 1e-4
        checked = 0
        while checked < 20:
            s = torch.tensor(rng.uniform(0.1, 1.0, (1, 16)), dtype=torch.float64, requires_grad=True)
            m = torch.tensor(rng.uniform(0.1, 1.0, (1, 16)), dtype=torch.float64, requires_grad=True)
            y = torch.tensor([float(rng.integers(0, 2))], dtype=torch.float64)
            p = sync_probability(s, m).item()
            if not (1e-3 < p < 1 - 1e-3):
                continue
            _loss_of_embeddings(s, m, y).backward()
            for var, grad in ((s, s.grad), (m, m.grad)):
                num = torch.zeros_like(var)
                for i in range(var.shape[1]):
                    with torch.no_grad():
                        plus, minus = var.clone(), var.clone()
                        plus[0, i] += h
                        minus[0, i] -= h
                        if var is s:
                            lp, lm = _loss_of_embeddings(plus, m, y), _loss_of_embeddings(minus, m, y)
                        else:
                            lp, lm = _loss_of_embeddings(s, plus, y), _loss_of_embeddings(s, minus, y)
                    num[0, i] = (lp - lm) / (2 * h)
                rel = (num - grad).norm() / max(grad.norm().item(), 1e-12)
                assert rel < 1e-4
            checked += 1


class TestNetwork:
    def test_channel_count_enforced(self):
        net = SyncNetwork(num_classes=12, resolution=64)
        assert net.in_channels == 5 * 12
        with pytest.raises(InvalidInputError):
            net.embed_masks(torch.zeros(1, 5 * 11, 32, 64))

    def test_resolution_guard(self):
        with pytest.raises(InvalidInputError):
            SyncNetwork(resolution=48)

    def test_probabilities_in_range(self):
        torch.manual_seed(0)
        net = SyncNetwork(num_classes=12, resolution=64).eval()
        p = net(torch.rand(3, 60, 32, 64), torch.randn(3, 16, 80))
        assert p.shape == (3,) and bool(((p >= EPS_P) & (p <= 1)).all())

    def test_lower_half_stack(self):
        x = np.arange(5 * 2 * 4 * 3).reshape(5, 2, 4, 3)
        out = lower_half_stack(x)
        assert out.shape == (10, 2, 3)
        assert np.array_equal(out[2:4], x[1, :, 2:])


class TestSampler:
    def test_positive_fraction(self, small_clips):
        sampler = PairSampler(small_clips)
        rng = np.random.default_rng(0)
        labels = np.array([sampler.draw(rng)[4] for _ in range(10_000)])
        assert abs(labels.mean() - 0.5) <= 0.02

    def test_label_rules(self, small_clips):
        sampler = PairSampler(small_clips)
        rng = np.random.default_rng(1)
        for _ in range(2000):
            ci, t, cj, u, label = sampler.draw(rng)
            if label == 1:
                assert (ci, t) == (cj, u)
            else:
                assert ci != cj or abs(u - t) >= 5

    def test_sample_fields(self, small_clips):
        s = PairSampler(small_clips).build(0, 3, 0, 3, 1)
        assert s.mask_window.shape == (T_V * 12, 32, 64) and s.speech.shape == (16, 80)

    def test_short_clip_skipped(self, small_clips):
        from dataclasses import replace
        short = replace(small_clips[0], labels=small_clips[0].labels[:T_V + 9])
        with pytest.raises(InvalidInputError):
            PairSampler([short])


class TestExpert:
    def test_untrained_near_chance(self, small_clips):
        est = SyncExpert(steps=0).fit(small_clips)
        assert abs(est.score(small_clips, num_samples=800) - 0.5) <= 0.05

    def test_save_load_round_trip(self, small_clips, tmp_path):
        est = SyncExpert(steps=2, batch_size=2).fit(small_clips)
        est.save(tmp_path / "s.ckpt", "abc")
        back = SyncExpert.load(tmp_path / "s.ckpt", "abc")
        batch = PairSampler(small_clips).batch(np.random.default_rng(0), 4)
        assert np.array_equal(est.predict_proba(batch[0], batch[1]), back.predict_proba(batch[0], batch[1]))

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            SyncExpert().predict_proba(np.zeros((1, 60, 32, 64)), np.zeros((1, 16, 80)))
