import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgmatch import autodiff as ad
from fgmatch.errors import UsageError
from fgmatch.losses import (
    coarse_triplet_loss,
    coarse_triplet_loss_node,
    finegrained_triplet_loss,
    finegrained_triplet_loss_node,
)


def coarse_oracle(scores, margin):
    """Literal double loop over ordered pairs, both hinge terms."""
    s = np.asarray(scores, dtype=np.float64)
    total = 0.0
    for i in range(s.shape[0]):
        for j in range(s.shape[0]):
            if i == j:
                continue
            total += max(0.0, margin + s[i, j] - s[i, i])
            total += max(0.0, margin + s[j, i] - s[i, i])
    return total


def fine_oracle(pos, negs, margin):
    total = 0.0
    for p, row in zip(pos, negs):
        for n in row:
            total += max(0.0, margin + n - p)
    return total


scores_matrix = st.integers(2, 6).flatmap(
    lambda b: st.lists(
        st.lists(st.floats(-1, 1, allow_nan=False, width=32), min_size=b, max_size=b),
        min_size=b, max_size=b))


class TestCoarseLoss:
    def test_separated_diagonal_is_zero(self):
        assert coarse_triplet_loss([[1.0, -1.0], [-1.0, 1.0]], 0.2) == 0.0

    def test_hand_expansion(self):
        loss = coarse_triplet_loss([[0.9, 0.5], [0.8, 0.9]], 0.2)
        assert loss == pytest.approx(0.2, abs=1e-9)

    def test_constant_scores_give_margin_times_terms(self):
        assert coarse_triplet_loss(np.full((2, 2), 0.3), 0.2) == pytest.approx(0.8, abs=1e-9)

    def test_constant_scores_general_batch(self):
        for b in (2, 3, 5):
            loss = coarse_triplet_loss(np.full((b, b), -0.1), 0.2)
            assert loss == pytest.approx(2 * b * (b - 1) * 0.2, abs=1e-9)

    def test_matches_double_loop_oracle(self, rng):
        for _ in range(100):
            b = int(rng.integers(2, 9))
            s = rng.uniform(-1, 1, size=(b, b))
            m = float(rng.uniform(0, 0.5))
            assert coarse_triplet_loss(s, m) == pytest.approx(coarse_oracle(s, m), abs=1e-6)

    def test_node_route_matches_array_route(self, rng):
        s = rng.uniform(-1, 1, size=(4, 4))
        node = coarse_triplet_loss_node(ad.leaf(s), 0.2)
        assert float(node.value) == pytest.approx(coarse_triplet_loss(s, 0.2), abs=1e-12)

    @given(scores_matrix, st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_nonnegative(self, scores, margin):
        assert coarse_triplet_loss(scores, margin) >= 0.0

    @given(scores_matrix, st.floats(-5, 5))
    @settings(max_examples=60, deadline=None)
    def test_shift_invariance(self, scores, shift):
        s = np.asarray(scores)
        base = coarse_triplet_loss(s, 0.2)
        assert coarse_triplet_loss(s + shift, 0.2) == pytest.approx(base, abs=1e-6)

    def test_zero_iff_margin_satisfied(self):
        sep = np.array([[1.0, 0.7], [0.6, 1.0]])
        assert coarse_triplet_loss(sep, 0.2) == 0.0
        barely = np.array([[1.0, 0.85], [0.6, 1.0]])
        assert coarse_triplet_loss(barely, 0.2) > 0.0

    def test_batch_of_one_rejected(self):
        with pytest.raises(UsageError):
            coarse_triplet_loss([[1.0]], 0.2)

    def test_non_square_rejected(self, rng):
        with pytest.raises(UsageError):
            coarse_triplet_loss(rng.uniform(size=(2, 3)), 0.2)

    def test_negative_margin_rejected(self):
        with pytest.raises(UsageError):
            coarse_triplet_loss(np.eye(2), -0.1)

    def test_gradient_matches_finite_differences(self, rng):
        from conftest import finite_difference, relative_error

        s = rng.uniform(-1, 1, size=(3, 3))
        # keep every hinge argument away from its kink
        margin = 0.2
        args = []
        for i in range(3):
            for j in range(3):
                if i != j:
                    args.append(margin + s[i, j] - s[i, i])
                    args.append(margin + s[j, i] - s[i, i])
        if min(abs(a) for a in args) < 1e-2:
            margin += 0.0123

        def f_node(sn):
            return coarse_triplet_loss_node(sn, margin)

        analytic = ad.grad_of(f_node, [s])
        numeric = finite_difference(lambda ps: coarse_triplet_loss(ps[0], margin), [s])
        assert relative_error(analytic, numeric) < 1e-4


class TestFineGrainedLoss:
    def test_margin_satisfied_is_zero(self):
        assert finegrained_triplet_loss([0.9], [[0.1, 0.2]], 0.05) == 0.0

    def test_single_hinge_at_tie(self):
        assert finegrained_triplet_loss([0.5], [[0.5]], 0.05) == pytest.approx(0.05, abs=1e-9)

    def test_hand_expansion(self):
        loss = finegrained_triplet_loss([0.4], [[0.6, 0.3]], 0.05)
        assert loss == pytest.approx(0.25, abs=1e-9)

    def test_sums_over_items(self):
        loss = finegrained_triplet_loss([0.5, 0.4], [[0.5], [0.6, 0.3]], 0.05)
        assert loss == pytest.approx(0.05 + 0.25, abs=1e-9)

    def test_matches_double_loop_oracle(self, rng):
        for _ in range(100):
            b = int(rng.integers(1, 9))
            n = int(rng.integers(1, 11))
            pos = rng.uniform(-1, 1, size=b)
            negs = rng.uniform(-1, 1, size=(b, n))
            m = float(rng.uniform(0, 0.5))
            assert finegrained_triplet_loss(pos, negs, m) == pytest.approx(
                fine_oracle(pos, negs, m), abs=1e-6)

    def test_node_route_matches_array_route(self, rng):
        pos = rng.uniform(-1, 1, size=5)
        negs = rng.uniform(-1, 1, size=(5, 3))
        node = finegrained_triplet_loss_node(ad.leaf(pos), ad.leaf(negs), 0.05)
        assert float(node.value) == pytest.approx(
            finegrained_triplet_loss(pos, negs, 0.05), abs=1e-12)

    def test_ragged_negative_lists(self):
        loss = finegrained_triplet_loss([0.5, 0.5], [[0.5], [0.5, 0.5, 0.5]], 0.1)
        assert loss == pytest.approx(0.4, abs=1e-9)

    @given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=6),
           st.floats(-5, 5))
    @settings(max_examples=60, deadline=None)
    def test_shift_invariance(self, pos, shift):
        pos_arr = np.asarray(pos)
        negs = np.linspace(-1, 1, 4)[None, :].repeat(len(pos), axis=0)
        base = finegrained_triplet_loss(pos_arr, negs, 0.05)
        shifted = finegrained_triplet_loss(pos_arr + shift, negs + shift, 0.05)
        assert shifted == pytest.approx(base, abs=1e-6)

    def test_zero_iff_every_positive_clears_margin(self):
        assert finegrained_triplet_loss([0.6, 0.7], [[0.5], [0.6]], 0.1) == 0.0
        assert finegrained_triplet_loss([0.6, 0.7], [[0.51], [0.6]], 0.1) > 0.0

    def test_empty_negatives_rejected(self):
        with pytest.raises(UsageError):
            finegrained_triplet_loss([0.5], [[]], 0.05)
        with pytest.raises(UsageError):
            finegrained_triplet_loss_node(ad.leaf(np.array([0.5])),
                                          ad.leaf(np.zeros((1, 0))), 0.05)

    def test_length_mismatch_rejected(self):
        with pytest.raises(UsageError):
            finegrained_triplet_loss([0.5, 0.6], [[0.1]], 0.05)

    def test_negative_margin_rejected(self):
        with pytest.raises(UsageError):
            finegrained_triplet_loss([0.5], [[0.1]], -0.01)

    def test_gradient_matches_finite_differences(self, rng):
        from conftest import finite_difference, relative_error

        pos = rng.uniform(-1, 1, size=4)
        negs = rng.uniform(-1, 1, size=(4, 3))
        margin = 0.05
        gaps = (margin + negs - pos[:, None]).ravel()
        if np.abs(gaps).min() < 1e-2:
            margin += 0.0123

        analytic = ad.grad_of(
            lambda p, n: finegrained_triplet_loss_node(p, n, margin), [pos, negs])
        numeric = finite_difference(
            lambda ps: finegrained_triplet_loss(ps[0], ps[1], margin), [pos, negs])
        assert relative_error(analytic, numeric) < 1e-4
