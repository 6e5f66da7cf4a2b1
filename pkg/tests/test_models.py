import numpy as np
import pytest

from hiercert import rng
from hiercert.errors import CapabilityError, TrainingDivergenceError, ValidationError
from hiercert.models import (
    LinearSoftmax,
    LookupClassifier,
    MaskedModel,
    PgdParams,
    SmallMlp,
    accuracy,
    cross_entropy,
    gradient_check,
    gradient_check_random,
    pgd_attack,
    predict_proba,
    softmax,
    train,
)

from helpers import linearly_separable, make_blobs

XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_Y = np.array([0, 1, 1, 0])


class TestPredictProba:
    def test_uniform_on_zero_logits(self):
        model = LinearSoftmax(W=np.zeros((4, 3)), b=np.zeros(4))
        assert np.allclose(predict_proba(model, np.ones(3)), 0.25)

    def test_shift_invariance(self):
        logits = np.array([[1.3, -0.2, 0.7]])
        shifted = softmax(logits + 123.456)
        assert np.max(np.abs(shifted - softmax(logits))) < 1e-12

    def test_large_logits_do_not_overflow(self):
        out = softmax(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_lookup_by_sample_id(self):
        table = {"a": np.array([0.0, 1.0])}
        model = LookupClassifier(table=table, n_labels=2)
        assert predict_proba(model, "a")[1] > 0.5
        with pytest.raises(ValidationError):
            predict_proba(model, "missing")


class TestGradientCheck:
    def test_linear_random_init(self):
        model = LinearSoftmax.init(3, 5, seed=4)
        x = rng.normals(8, 300, 0, 5)
        assert gradient_check(model, x, 1) < 1e-5

    def test_mlp_random_init_off_kink(self):
        assert gradient_check_random(
            lambda s: SmallMlp.init(4, 3, 6, s), n_configs=20, seed=5) < 1e-4

    def test_constant_zero_model(self):
        # input gradient is identically zero (and finite differences agree);
        # parameter gradients of the uniform softmax are nonzero but match
        model = LinearSoftmax(W=np.zeros((3, 2)), b=np.zeros(3))
        X = np.array([[0.3, -0.1]])
        logits = model.logits(X)
        G = softmax(logits)
        G[0, 0] -= 1.0
        assert np.array_equal(model.input_grad_from_dlogits(X, G), np.zeros((1, 2)))
        assert gradient_check(model, X[0], 0) < 1e-9


class TestTrain:
    def test_separable_blobs_reach_full_accuracy(self):
        X, y = make_blobs(2, 60, [(-2.0, 0.0), (2.0, 0.0)])
        assert linearly_separable(X, y)
        model = train(LinearSoftmax.init(2, 2, seed=0), X, y,
                      epochs=500, learning_rate=0.5)
        assert accuracy(model, X, y) == 1.0

    def test_zero_learning_rate_is_identity(self):
        X, y = make_blobs(3, 10, [(-1.0, 0.0), (1.0, 0.0)])
        init = LinearSoftmax.init(2, 2, seed=6)
        out = train(init, X, y, epochs=50, learning_rate=0.0)
        assert np.array_equal(out.W, init.W) and np.array_equal(out.b, init.b)

    def test_xor_capacity_split(self):
        lin = train(LinearSoftmax.init(2, 2, seed=1), XOR_X, XOR_Y,
                    epochs=2000, learning_rate=0.5)
        assert accuracy(lin, XOR_X, XOR_Y) <= 0.75
        mlp = train(SmallMlp.init(2, 2, 4, seed=1), XOR_X, XOR_Y,
                    epochs=2000, learning_rate=0.5)
        assert accuracy(mlp, XOR_X, XOR_Y) == 1.0

    def test_loss_nonincreasing_on_convex_problem(self):
        X, y = make_blobs(4, 40, [(-1.5, 0.5), (1.5, -0.5)])
        model = LinearSoftmax.init(2, 2, seed=7)
        losses = []
        for _ in range(40):
            losses.append(cross_entropy(model.logits(X), y))
            model = train(model, X, y, epochs=1, learning_rate=0.05)
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_divergence_raises(self):
        # the hidden layer compounds the blow-up until the logits overflow;
        # the stabilized linear loss merely oscillates, so only the mlp
        # can genuinely diverge to non-finite values
        X, y = make_blobs(5, 30, [(-1.0, 0.0), (1.0, 0.0)])
        with pytest.raises(TrainingDivergenceError):
            train(SmallMlp.init(2, 2, 4, seed=8), X, y,
                  epochs=200, learning_rate=1e12)

    def test_noise_sigma_changes_training_deterministically(self):
        X, y = make_blobs(6, 30, [(-1.0, 0.0), (1.0, 0.0)])
        a = train(LinearSoftmax.init(2, 2, seed=9), X, y, 50, 0.1,
                  noise_sigma=0.5, seed=42)
        b = train(LinearSoftmax.init(2, 2, seed=9), X, y, 50, 0.1,
                  noise_sigma=0.5, seed=42)
        c = train(LinearSoftmax.init(2, 2, seed=9), X, y, 50, 0.1)
        assert np.array_equal(a.W, b.W)
        assert not np.array_equal(a.W, c.W)


class TestAdversarialTrain:
    def test_deterministic_and_robustness_comparable(self):
        from hiercert.models import adversarial_train, pgd_attack

        X, y = make_blobs(70, 120, [(-1.0, 0.0), (1.0, 0.0)], spread=0.45)
        params = PgdParams(epsilon=0.5, step=0.15, iters=10)

        def robust_acc(model):
            adv = pgd_attack(model, X, y, params, seed=5)
            return float(np.mean(np.argmax(model.logits(adv), axis=1) == y))

        plain = train(LinearSoftmax.init(2, 2, seed=0), X, y,
                      epochs=150, learning_rate=0.3)
        robust = adversarial_train(LinearSoftmax.init(2, 2, seed=0), X, y,
                                   epochs=150, learning_rate=0.3,
                                   attack=params, seed=1)
        again = adversarial_train(LinearSoftmax.init(2, 2, seed=0), X, y,
                                  epochs=150, learning_rate=0.3,
                                  attack=params, seed=1)
        assert np.array_equal(robust.W, again.W)
        assert accuracy(robust, X, y) >= 0.95
        assert robust_acc(robust) >= robust_acc(plain)


def binary_linear(w, b=0.0):
    w = np.asarray(w, dtype=np.float64)
    return LinearSoftmax(W=np.vstack([np.zeros_like(w), w]), b=np.array([0.0, b]))


class TestPgd:
    def test_zero_epsilon_is_identity(self):
        model = binary_linear([1.0, -0.5])
        x = np.array([0.4, 0.2])
        adv = pgd_attack(model, x, 1, PgdParams(epsilon=0.0, step=0.1, iters=5), seed=1)
        assert np.array_equal(adv, x)

    def test_matches_closed_form_on_binary_linear(self):
        # the optimal l-inf attack on a linear rule lands on the corner
        # x - eps * s * sign(w), s = +1 for the positive class
        w = np.array([1.5, -2.0])
        model = binary_linear(w, 0.1)
        X = rng.normals(3, 301, 0, 20).reshape(10, 2)
        y = np.argmax(model.logits(X), axis=1)
        eps = 0.2
        adv = pgd_attack(model, X, y, PgdParams(epsilon=eps, step=0.05, iters=20), seed=2)
        sgn = np.where(y == 1, -1.0, 1.0)
        opt = X + eps * sgn[:, None] * np.sign(w)[None, :]
        for i in range(10):
            la = cross_entropy(model.logits(adv[i:i + 1]), y[i:i + 1])
            lo = cross_entropy(model.logits(opt[i:i + 1]), y[i:i + 1])
            assert la == pytest.approx(lo, abs=1e-6)

    def test_projection_invariant(self):
        for t in range(20):
            model = SmallMlp.init(3, 4, 5, seed=100 + t)
            X = rng.normals(7, 302, t * 8, 8).reshape(2, 4)
            y = np.array([t % 3, (t + 1) % 3])
            eps = 0.05 + 0.01 * t
            adv = pgd_attack(model, X, y, PgdParams(epsilon=eps, step=eps / 3,
                                                    iters=7, restarts=3), seed=t)
            assert np.abs(adv - X).max() <= eps + 1e-15

    def test_loss_never_below_clean_start(self):
        model = SmallMlp.init(3, 4, 5, seed=200)
        X = rng.normals(9, 303, 0, 12).reshape(3, 4)
        y = np.array([0, 1, 2])
        adv = pgd_attack(model, X, y, PgdParams(epsilon=0.1, step=0.03, iters=10), seed=3)
        for i in range(3):
            clean = cross_entropy(model.logits(X[i:i + 1]), y[i:i + 1])
            attacked = cross_entropy(model.logits(adv[i:i + 1]), y[i:i + 1])
            assert attacked >= clean - 1e-12

    def test_lookup_rejected(self):
        model = LookupClassifier(table={"a": np.zeros(2)}, n_labels=2)
        with pytest.raises(CapabilityError):
            pgd_attack(model, np.zeros(2), 0, PgdParams(epsilon=0.1, step=0.05), seed=0)

    def test_params_validation(self):
        with pytest.raises(ValidationError):
            PgdParams(epsilon=-0.1, step=0.1)
        with pytest.raises(ValidationError):
            PgdParams(epsilon=0.1, step=0.0)
        with pytest.raises(ValidationError):
            PgdParams(epsilon=0.1, step=0.1, iters=0)


class TestMaskedModel:
    def test_logits_are_selected_columns(self):
        base = LinearSoftmax.init(5, 3, seed=11)
        masked = MaskedModel(base, (1, 3, 4))
        X = rng.normals(2, 304, 0, 6).reshape(2, 3)
        assert np.array_equal(masked.logits(X), base.logits(X)[:, [1, 3, 4]])

    def test_gradients_chain_through(self):
        base = LinearSoftmax.init(5, 3, seed=12)
        masked = MaskedModel(base, (0, 2))
        X = rng.normals(4, 305, 0, 3).reshape(1, 3)
        y = np.array([1])
        logits = masked.logits(X)
        G = softmax(logits)
        G[0, 1] -= 1.0
        analytic = masked.input_grad_from_dlogits(X, G)[0]
        # finite differences on the masked cross-entropy
        def loss(x):
            return cross_entropy(masked.logits(x[None, :]), y)
        step = 1e-6
        for j in range(3):
            xp, xm = X[0].copy(), X[0].copy()
            xp[j] += step
            xm[j] -= step
            num = (loss(xp) - loss(xm)) / (2 * step)
            assert analytic[j] == pytest.approx(num, abs=1e-6)
