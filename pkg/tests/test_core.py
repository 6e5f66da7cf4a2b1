import math

import numpy as np
import pytest

from hiercert import rng
from hiercert.core import (
    ABSTAIN,
    CertifiedPrediction,
    LabelPartition,
    LabelSpace,
    argmax_label,
    hinge_gap,
    renormalize,
)
from hiercert.errors import DegenerateRenormalizationError, ValidationError


class TestLabelSpace:
    def test_requires_two_labels(self):
        with pytest.raises(ValidationError):
            LabelSpace(m=1)

    def test_names_must_be_unique_and_match(self):
        LabelSpace(m=2, names=("a", "b"))
        with pytest.raises(ValidationError):
            LabelSpace(m=2, names=("a", "a"))
        with pytest.raises(ValidationError):
            LabelSpace(m=3, names=("a", "b"))


class TestLabelPartition:
    def test_valid_partition(self):
        p = LabelPartition(((0, 1, 2), (3, 4)))
        assert p.n_labels == 5
        assert p.class_of(3) == 1

    def test_rejects_overlap_gap_and_empty(self):
        with pytest.raises(ValidationError):
            LabelPartition(((0, 1), (1, 2)))
        with pytest.raises(ValidationError):
            LabelPartition(((0, 1), (3,)), n_labels=4)
        with pytest.raises(ValidationError):
            LabelPartition(((0, 1), ()), n_labels=2)


class TestCertifiedPrediction:
    def test_abstain_has_no_radius(self):
        c = CertifiedPrediction(label=ABSTAIN, radius=None, p_a_lower=0.4, sigma=0.5)
        assert c.abstained
        with pytest.raises(ValidationError):
            CertifiedPrediction(label=ABSTAIN, radius=1.0, p_a_lower=0.4, sigma=0.5)

    def test_radius_nonnegative(self):
        CertifiedPrediction(label=2, radius=0.0, p_a_lower=0.6, sigma=0.5)
        CertifiedPrediction(label=2, radius=math.inf, p_a_lower=1.0, sigma=0.5)
        with pytest.raises(ValidationError):
            CertifiedPrediction(label=2, radius=-0.1, p_a_lower=0.6, sigma=0.5)


class TestHingeGap:
    def test_direct_evaluation(self):
        assert hinge_gap([0.5, 0.3, 0.2], 0, {0, 1, 2}) == pytest.approx(0.2)

    def test_removing_runner_up_widens_gap(self):
        assert hinge_gap([0.5, 0.3, 0.2], 0, {0, 2}) == pytest.approx(0.3)

    def test_empty_competitor_set_is_infinite(self):
        assert hinge_gap([0.5, 0.3, 0.2], 0, {0}) == math.inf

    def test_input_validation(self):
        with pytest.raises(ValidationError):
            hinge_gap([0.5, 0.5], 2, {0, 1})
        with pytest.raises(ValidationError):
            hinge_gap([0.5, 0.5], 0, {0, 5})
        with pytest.raises(ValidationError):
            hinge_gap([0.5, 0.6], 0, {0, 1})  # not a probability vector

    def test_anti_monotone_in_competitor_set(self):
        # 10^4 random (alpha, c, L1 subset of L2) triples, exact comparison
        m = 8
        trials = 10_000
        u = rng.uniforms(21, 901, 0, trials * m).reshape(trials, m)
        probs = -np.log(u)
        probs /= probs.sum(axis=1, keepdims=True)
        picks = rng.uniforms(21, 902, 0, trials * (2 * m + 1)).reshape(trials, -1)
        violations = 0
        for t in range(trials):
            c = int(picks[t, 2 * m] * m)
            big = {i for i in range(m) if picks[t, i] < 0.6} | {c}
            small = {i for i in big if picks[t, m + i] < 0.5} | {c}
            gap_small = hinge_gap(probs[t], c, small)
            gap_big = hinge_gap(probs[t], c, big)
            if not gap_big <= gap_small:
                violations += 1
        assert violations == 0


class TestRenormalize:
    def test_proportional_rescale(self):
        out = renormalize([0.5, 0.3, 0.2], {1, 2})
        assert np.allclose(out, [0.6, 0.4])

    def test_identity_on_full_space(self):
        out = renormalize([0.5, 0.3, 0.2], {0, 1, 2})
        assert np.allclose(out, [0.5, 0.3, 0.2])

    def test_zero_mass_is_degenerate(self):
        with pytest.raises(DegenerateRenormalizationError):
            renormalize([1.0, 0.0, 0.0], {1, 2})

    def test_preserves_argmax_ordering(self):
        for t in range(2000):
            u = rng.uniforms(31, 903, t * 6, 6)
            p = -np.log(u)
            p /= p.sum()
            subset = tuple(sorted({int(v) for v in np.argsort(u)[:3]}))
            before = argmax_label(p, subset)
            after = renormalize(p, subset)
            assert subset[int(np.argmax(after))] == before

    def test_idempotent(self):
        p = np.array([0.5, 0.3, 0.15, 0.05])
        once = renormalize(p, (1, 2, 3))
        twice = renormalize(once, (0, 1, 2))
        assert np.max(np.abs(once - twice)) < 1e-12


class TestArgmaxLabel:
    def test_plain(self):
        assert argmax_label([0.2, 0.5, 0.3]) == 1

    def test_tie_breaks_to_lowest_index(self):
        assert argmax_label([0.4, 0.4, 0.2]) == 0

    def test_restricted(self):
        assert argmax_label([0.6, 0.1, 0.3], {1, 2}) == 2

    def test_empty_subset_rejected(self):
        with pytest.raises(ValidationError):
            argmax_label([0.5, 0.5], set())
