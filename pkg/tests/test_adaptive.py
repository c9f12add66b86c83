import json

import numpy as np
import pytest

from advdf import audio_io
from advdf.adaptive import (
    AdaptiveConfig,
    AdaptiveEpochRecord,
    adaptive_update,
    adv_finetune,
    epoch_score,
    history_to_jsonl,
    sample_index,
    select_epoch,
    uniform_sampling_vector,
)
from advdf.attacks import AttackSpec
from advdf.training import TrainConfig


def cfg_with(n_attacks=2, **kw):
    roster = tuple(AttackSpec("fgsm", epsilon=0.001) for _ in range(n_attacks))
    return AdaptiveConfig(roster=roster, **kw)


def brute_force_score(a):
    """Literal (N+1) * prod / sum with python floats."""
    prod, total = 1.0, 0.0
    for v in a:
        prod *= v
        total += v
    if total == 0.0 or any(v == 0.0 for v in a):
        return 0.0
    return len(a) * prod / total


class TestAdaptiveUpdate:
    def test_worked_example(self):
        # N=2, uniform w, update index 1 with loss 2.0 (clipped to 1):
        # pre-normalization w1 = 0.2*1 + 0.8/3; s = 1.133...;
        # final w = (0.313725, 0.372549, 0.313725)
        w = np.full(3, 1.0 / 3.0)
        out = adaptive_update(w, 2.0, 1, cfg_with(2))
        np.testing.assert_allclose(out, [0.313725, 0.372549, 0.313725], atol=1e-6)
        assert abs(out.sum() - 1.0) < 1e-12

    def test_sum_one_and_floor_under_fuzz(self):
        rng = np.random.default_rng(42)
        cfg = cfg_with(3)
        floor = 0.5 * min(cfg.non_attack_proportion,
                          (1 - cfg.non_attack_proportion) / cfg.n_attacks)
        w = uniform_sampling_vector(3)
        for _ in range(10_000):
            i = int(rng.integers(0, 4))
            loss = float(rng.uniform(0, 5))
            w = adaptive_update(w, loss, i, cfg)
            assert abs(w.sum() - 1.0) < 1e-12
            assert np.all(w >= floor - 1e-15)
            assert np.all(w < 1.0)

    def test_monotone_in_loss(self):
        cfg = cfg_with(2)
        w = np.array([0.4, 0.35, 0.25])
        lo = adaptive_update(w, 0.2, 1, cfg)
        hi = adaptive_update(w, 0.9, 1, cfg)
        assert hi[1] >= lo[1]
        # pre-normalization monotonicity is exact
        pre_lo = cfg.momentum * 0.2 + (1 - cfg.momentum) * w[1]
        pre_hi = cfg.momentum * 0.9 + (1 - cfg.momentum) * w[1]
        assert pre_hi > pre_lo

    def test_clip_saturation_exact(self):
        cfg = cfg_with(2, clip_value=1.0)
        w = np.array([0.5, 0.3, 0.2])
        np.testing.assert_array_equal(adaptive_update(w, 1.0, 2, cfg),
                                      adaptive_update(w, 10.0, 2, cfg))

    def test_repeated_updates_converge_monotonically(self):
        # with saturated loss on a fixed index, w_i approaches its fixed
        # point monotonically
        cfg = cfg_with(2)
        w = uniform_sampling_vector(2)
        values = []
        for _ in range(100):
            w = adaptive_update(w, 5.0, 1, cfg)
            values.append(w[1])
        diffs = np.diff(values)
        assert np.all(diffs >= -1e-12)  # monotone approach from below
        assert abs(values[-1] - values[-2]) < 1e-9  # settled

    def test_bad_inputs(self):
        cfg = cfg_with(2)
        w = uniform_sampling_vector(2)
        with pytest.raises(ValueError):
            adaptive_update(w, float("nan"), 0, cfg)
        with pytest.raises(ValueError):
            adaptive_update(w, -0.5, 0, cfg)
        with pytest.raises(IndexError):
            adaptive_update(w, 0.5, 3, cfg)


class TestSampleIndex:
    def test_point_mass(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert sample_index(np.array([1.0, 0.0, 0.0]), rng) == 0

    def test_empirical_frequencies(self):
        w = np.array([0.5, 0.3, 0.2])
        rng = np.random.default_rng(314)
        draws = np.array([sample_index(w, rng) for _ in range(100_000)])
        freqs = np.bincount(draws, minlength=3) / draws.size
        np.testing.assert_allclose(freqs, w, atol=0.01)

    def test_deterministic_under_seed(self):
        w = np.array([0.4, 0.6])
        a = [sample_index(w, np.random.default_rng(9)) for _ in range(1)]
        seq1 = [sample_index(w, rng) for rng in [np.random.default_rng(9)] for _ in range(10)]
        rng1, rng2 = np.random.default_rng(9), np.random.default_rng(9)
        s1 = [sample_index(w, rng1) for _ in range(50)]
        s2 = [sample_index(w, rng2) for _ in range(50)]
        assert s1 == s2


class TestEpochScore:
    def test_uniform_accuracy_cancels(self):
        assert abs(epoch_score([0.9, 0.9, 0.9]) - 0.81) < 1e-12

    def test_unbalanced_loses_to_uniform(self):
        assert abs(epoch_score([1.0, 1.0, 0.5]) - 0.6) < 1e-12
        assert epoch_score([1.0, 1.0, 0.5]) < epoch_score([0.9, 0.9, 0.9])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(0.1, 1.0, 5)
        assert abs(epoch_score(a) - epoch_score(a[::-1])) < 1e-15

    def test_zero_conventions(self):
        assert epoch_score([0.0, 0.9, 0.9]) == 0.0
        assert epoch_score([0.0, 0.0, 0.0]) == 0.0

    def test_matches_brute_force_and_bounded(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(2, 7))
            a = rng.uniform(0.0, 1.0, n)
            s = epoch_score(a)
            assert abs(s - brute_force_score(list(a))) < 1e-12
            assert s <= 1.0 + 1e-12

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            epoch_score([0.5, 1.2])


def rec(epoch, score):
    return AdaptiveEpochRecord(epoch=epoch, w_snapshot=np.zeros(3),
                               accuracies=np.zeros(3), clean_eer=0.0,
                               attacked_eers=np.zeros(2), score=score)


class TestSelectEpoch:
    def test_singleton(self):
        assert select_epoch([rec(1, 0.4)]) == 1

    def test_worked_scores(self):
        assert select_epoch([rec(1, 0.81), rec(2, 0.6)]) == 1

    def test_tie_goes_to_earlier_epoch(self):
        assert select_epoch([rec(1, 0.5), rec(2, 0.5), rec(3, 0.2)]) == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_epoch([])

    def test_exhaustive_argmax_agreement(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            scores = rng.uniform(0, 1, int(rng.integers(1, 11)))
            history = [rec(e + 1, float(s)) for e, s in enumerate(scores)]
            best = max(range(len(scores)), key=lambda k: (scores[k], -k)) + 1
            assert select_epoch(history) == best


class TestAdvFinetune:
    def test_none_roster_degenerates_to_finetuning(self, tiny_corpus, toy_specnet):
        import copy

        records, _ = tiny_corpus
        det = copy.deepcopy(toy_specnet)
        cfg = AdaptiveConfig(roster=(AttackSpec("none"),), epochs=2)
        tcfg = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=2, seed=5)
        ckpt, history = adv_finetune(det, records, cfg, tcfg)
        assert len(history) == 2
        floor = 0.5 * min(cfg.non_attack_proportion, 1 - cfg.non_attack_proportion)
        for h in history:
            assert abs(h.w_snapshot.sum() - 1.0) < 1e-12
            assert np.all(h.w_snapshot >= floor - 1e-15)
        assert ckpt.epoch == select_epoch(history)

    def test_whole_run_deterministic(self, tiny_corpus, toy_specnet):
        import copy

        records, _ = tiny_corpus
        cfg = AdaptiveConfig(roster=(AttackSpec("fgsm", epsilon=0.001),), epochs=2)
        tcfg = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=2, seed=5)
        ck1, h1 = adv_finetune(copy.deepcopy(toy_specnet), records, cfg, tcfg)
        ck2, h2 = adv_finetune(copy.deepcopy(toy_specnet), records, cfg, tcfg)
        np.testing.assert_array_equal(ck1.params, ck2.params)
        for a, b in zip(h1, h2):
            np.testing.assert_array_equal(a.w_snapshot, b.w_snapshot)
            np.testing.assert_array_equal(a.accuracies, b.accuracies)

    def test_history_jsonl_format(self):
        history = [rec(1, 0.5), rec(2, 0.7)]
        blob = history_to_jsonl(history, selected_epoch=2)
        lines = blob.strip().split("\n")
        assert len(lines) == 3
        assert json.loads(lines[0])["epoch"] == 1
        assert json.loads(lines[-1]) == {"selected_epoch": 2}
