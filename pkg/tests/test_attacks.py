import numpy as np
import pytest

from advdf import audio_io
from advdf.attacks import (
    AttackOutcome,
    AttackSpec,
    ZeroGradientError,
    attack_batch,
    attack_dataset,
    export_attacked,
    fab_batch,
    fab_binary,
    fgsm,
    fgsm_batch,
    paper_attack_grid,
    pgd_l2,
    pgd_l2_batch,
    strongest_roster,
)
from advdf.models import bce_grad, bce_loss

RNG = np.random.default_rng(31337)


class StubDetector:
    """Linear logit z = w . x + b; exact gradients in closed form."""

    def __init__(self, w, b=0.0):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = float(b)

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        z = x @ self.w + self.b
        return z

    def loss_input_grads(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = x @ self.w + self.b
        g = bce_grad(z, y)[:, None] * self.w[None, :]
        return bce_loss(z, y), g

    def logit_input_grads(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = x @ self.w + self.b
        return z, np.tile(self.w, (x.shape[0], 1))


class ConstGradDetector(StubDetector):
    """Fixed loss gradient regardless of position (for step-rule tests)."""

    def __init__(self, grad):
        super().__init__(np.zeros_like(np.asarray(grad, dtype=np.float64)))
        self.g = np.asarray(grad, dtype=np.float64)

    def loss_input_grads(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.zeros(x.shape[0]), np.tile(self.g, (x.shape[0], 1))


class TestAttackSpec:
    def test_paper_grid_representable(self):
        grid = paper_attack_grid()
        assert len(grid) == 9
        assert [s.epsilon for s in grid[:3]] == [0.0005, 0.00075, 0.001]
        assert [s.epsilon for s in grid[3:6]] == [0.1, 0.15, 0.2]
        assert [s.eta for s in grid[6:]] == [10.0, 20.0, 30.0]
        assert all(s.steps == 10 for s in grid[3:])

    def test_strongest_roster(self):
        roster = strongest_roster()
        assert [s.kind for s in roster] == ["fgsm", "pgdl2", "fab"]
        assert roster[0].epsilon == 0.001 and roster[1].epsilon == 0.2 and roster[2].eta == 30.0

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            AttackSpec("fgsm")
        with pytest.raises(ValueError):
            AttackSpec("pgdl2", epsilon=-0.1)
        with pytest.raises(ValueError):
            AttackSpec("deepfool")


class TestFgsm:
    def test_zero_budget_is_identity(self):
        det = ConstGradDetector([1.0, -1.0, 0.5])
        x = RNG.uniform(-0.5, 0.5, (2, 3))
        np.testing.assert_array_equal(fgsm_batch(det, x, np.zeros(2), 0.0), x)

    def test_sign_step(self):
        det = ConstGradDetector([0.3, -0.7, 0.0])
        adv = fgsm_batch(det, np.zeros((1, 3)), np.zeros(1), 0.001)
        np.testing.assert_allclose(adv[0], [0.001, -0.001, 0.0])

    def test_linf_budget_with_equality_off_clamp(self, toy_rawnet):
        waves = RNG.uniform(-0.5, 0.5, (4, 64000))
        labels = np.array([0.0, 1.0, 0.0, 1.0])
        eps = 0.001
        adv = fgsm_batch(toy_rawnet, waves, labels, eps)
        delta = adv - waves
        assert np.abs(delta).max() <= eps + 1e-15
        assert np.all(np.abs(adv) <= 1.0)
        # interior coordinates with nonzero gradient move by exactly eps
        _, g = toy_rawnet.loss_input_grads(waves, labels)
        hot = (g != 0) & (np.abs(waves) < 0.99)
        assert np.allclose(np.abs(delta[hot]), eps)


class TestPgdL2:
    def test_constant_gradient_projects_to_ball(self):
        u = np.ones(100) / 10.0  # unit direction
        det = ConstGradDetector(u)
        eps = 0.5
        adv = pgd_l2_batch(det, np.zeros((1, 100)), np.zeros(1), eps, steps=10)
        delta = adv[0]
        # unprojected displacement would be 2.5 * eps; ball clips to eps
        assert abs(np.linalg.norm(delta) - eps) < 1e-9
        np.testing.assert_allclose(delta / np.linalg.norm(delta), u, atol=1e-12)

    def test_single_tiny_step_inside_ball(self):
        u = np.ones(100) / 10.0
        det = ConstGradDetector(u)
        adv = pgd_l2_batch(det, np.zeros((1, 100)), np.zeros(1), 0.5, steps=1,
                           step_size=1e-3)
        assert abs(np.linalg.norm(adv[0]) - 1e-3) < 1e-12

    def test_budget_on_real_model(self, toy_rawnet):
        waves = RNG.uniform(-0.6, 0.6, (4, 64000))
        labels = np.array([0.0, 1.0, 1.0, 0.0])
        eps = 0.2
        adv = pgd_l2_batch(toy_rawnet, waves, labels, eps, steps=10)
        norms = np.linalg.norm(adv - waves, axis=1)
        assert np.all(norms <= eps + 1e-9)
        assert np.all(np.abs(adv) <= 1.0)

    def test_loss_increases_on_trained_model(self, toy_rawnet, tiny_corpus):
        records, _ = tiny_corpus
        test = audio_io.split_records(records, "test")
        waves, labels = audio_io.load_split_waves(test)
        before, _ = toy_rawnet.loss_input_grads(waves, labels)
        adv = pgd_l2_batch(toy_rawnet, waves, labels, 0.2, steps=10)
        after, _ = toy_rawnet.loss_input_grads(adv, labels)
        assert np.mean(after >= before - 1e-12) >= 0.95


class TestFabBinary:
    def test_exact_linear_model_one_unscaled_projection(self):
        # z = x1 - x2, boundary {x1 = x2}; from (1, 0) the Linf-minimal
        # projection is (-0.5, 0.5) landing exactly on the boundary
        det = StubDetector([1.0, -1.0], 0.0)
        out = fab_binary(det, np.array([1.0, 0.0]), 1, eta=0.0, steps=1)
        np.testing.assert_allclose(out.adversarial, [0.5, 0.5], atol=1e-12)
        assert abs(float(det.logits(out.adversarial))) < 1e-9
        assert out.flipped
        assert abs(out.linf_delta - 0.5) < 1e-12

    def test_already_misclassified_returns_zero_delta(self):
        det = StubDetector([1.0, 1.0], 0.0)
        x = np.array([-0.3, -0.2])  # logit < 0 => predicted bonafide
        out = fab_binary(det, x, 1, eta=10.0)  # true label fake
        assert out.flipped
        assert out.linf_delta == 0.0
        np.testing.assert_array_equal(out.adversarial, x)

    def test_recorded_best_sequence_non_increasing(self, toy_rawnet, tiny_corpus):
        records, _ = tiny_corpus
        test = audio_io.split_records(records, "test")
        waves, labels = audio_io.load_split_waves(test)
        histories = []
        for i in range(len(test)):
            out = fab_binary(toy_rawnet, waves[i], int(labels[i]), eta=30.0,
                             record_history=True)
            if out.history:
                histories.append(out.history)
        assert histories, "FAB should flip at least one sample"
        for h in histories:
            assert all(b <= a + 1e-15 for a, b in zip(h, h[1:]))

    def test_zero_gradient_raises_distinct_error(self):
        det = StubDetector([0.0, 0.0], 0.5)  # logit constant, zero gradient
        with pytest.raises(ZeroGradientError):
            fab_binary(det, np.array([0.1, 0.2]), 1, eta=10.0)

    def test_clamps_to_amplitude_range(self):
        det = StubDetector([5.0, 5.0], 0.0)
        out = fab_binary(det, np.array([0.99, 0.99]), 0, eta=30.0, steps=3)
        assert np.all(np.abs(out.adversarial) <= 1.0)


class TestAttackDataset:
    def test_none_kind_is_identity_and_never_flips(self, toy_rawnet, tiny_corpus):
        records, _ = tiny_corpus
        test = audio_io.split_records(records, "test")
        outcomes = attack_dataset(toy_rawnet, AttackSpec("none"), test)
        assert len(outcomes) == len(test)
        for rec, out in zip(test, outcomes):
            clean = audio_io.load_standardized(rec.path).samples
            np.testing.assert_array_equal(out.adversarial, clean)
            assert not out.flipped
            assert out.linf_delta == 0.0 and out.l2_delta == 0.0

    def test_norm_contracts_across_split(self, toy_specnet, tiny_corpus):
        records, _ = tiny_corpus
        test = audio_io.split_records(records, "test")
        eps = 0.001
        outcomes = attack_dataset(toy_specnet, AttackSpec("fgsm", epsilon=eps), test)
        assert all(o.linf_delta <= eps + 1e-15 for o in outcomes)
        assert all(np.all(np.abs(o.adversarial) <= 1.0) for o in outcomes)

    def test_order_is_deterministic(self, toy_rawnet, tiny_corpus):
        records, _ = tiny_corpus
        test = audio_io.split_records(records, "test")
        spec = AttackSpec("fgsm", epsilon=0.0005)
        a = attack_dataset(toy_rawnet, spec, test)
        b = attack_dataset(toy_rawnet, spec, test)
        for oa, ob in zip(a, b):
            np.testing.assert_array_equal(oa.adversarial, ob.adversarial)

    def test_export_sidecar(self, toy_rawnet, tiny_corpus, tmp_path):
        import json

        records, _ = tiny_corpus
        test = audio_io.split_records(records, "test")[:3]
        spec = AttackSpec("fgsm", epsilon=0.001)
        outcomes = attack_dataset(toy_rawnet, spec, test)
        export_attacked(outcomes, test, tmp_path, spec)
        lines = (tmp_path / "attacked.jsonl").read_text().splitlines()
        assert len(lines) == 3
        row = json.loads(lines[0])
        assert row["kind"] == "fgsm" and row["params"]["epsilon"] == 0.001
        assert (tmp_path / json.loads(lines[0])["path"]).exists()


class TestAttackBatchDispatch:
    def test_unknown_handled_by_spec_validation(self):
        with pytest.raises(ValueError):
            AttackSpec("jsma")

    def test_fab_flip_mask_returned(self, toy_rawnet, tiny_corpus):
        records, _ = tiny_corpus
        test = audio_io.split_records(records, "test")[:4]
        waves, labels = audio_io.load_split_waves(test)
        adv, flips, errors = attack_batch(toy_rawnet, AttackSpec("fab", eta=30.0),
                                          waves, labels)
        assert adv.shape == waves.shape
        assert flips.shape == (4,)
        assert errors == [None] * 4
