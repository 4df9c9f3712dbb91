import numpy as np
import pytest

from osfsl.episodes import TaskInputs
from osfsl.errors import DegenerateVectorError, ParameterError
from osfsl.model import (
    EOL,
    ORIENT_FLIPPED,
    ORIENT_VERBATIM,
    OSTIM,
    ModelState,
    PosteriorTable,
    calibrated_logits,
    center_episode,
    eol_inlier_probability,
    eol_posteriors,
    init_state,
    ostim_posteriors,
    query_posterior_table,
    row_softmax,
)
from osfsl.numerics import cosine_similarity


def make_inputs(support, labels, query, n_in):
    return TaskInputs(
        support_features=np.asarray(support, dtype=np.float64),
        support_labels=np.asarray(labels, dtype=np.int64),
        query_features=np.asarray(query, dtype=np.float64),
        n_in=n_in,
    )


class TestCentering:
    def test_two_point_mean(self):
        inputs = make_inputs([[1.0, 1.0]], [0], [[3.0, 3.0]], 1)
        te = center_episode(inputs)
        np.testing.assert_array_equal(te.mu, [2.0, 2.0])
        np.testing.assert_array_equal(te.centered_support, [[-1.0, -1.0]])
        np.testing.assert_array_equal(te.centered_query, [[1.0, 1.0]])

    def test_idempotent_on_centered_data(self, rng):
        feats = rng.normal(size=(8, 3))
        feats -= feats.mean(axis=0)
        inputs = make_inputs(feats[:4], [0, 0, 1, 1], feats[4:], 2)
        te = center_episode(inputs)
        np.testing.assert_allclose(te.mu, np.zeros(3), atol=1e-15)
        np.testing.assert_allclose(te.centered_query, feats[4:], atol=1e-15)

    def test_joint_mean_is_zero(self, balanced_episode):
        te = center_episode(balanced_episode.inputs)
        stacked = np.vstack([te.centered_support, te.centered_query])
        np.testing.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-9)

    def test_single_point_degenerates_downstream(self):
        inputs = make_inputs([[2.0, 2.0], [2.0, 2.0]], [0, 1],
                             np.empty((0, 2)), 2)
        te = center_episode(inputs)
        np.testing.assert_array_equal(te.centered_support, np.zeros((2, 2)))
        state = init_state(te, 2, EOL, 0.5)
        with pytest.raises(DegenerateVectorError):
            calibrated_logits(state, te)


class TestInitState:
    def test_one_shot_prototype_is_the_sample(self):
        inputs = make_inputs([[1.0, 0.0], [0.0, 2.0]], [0, 1],
                             [[1.0, 1.0]], 2)
        te = center_episode(inputs)
        state = init_state(te, 2, EOL, 0.5)
        np.testing.assert_array_equal(state.prototypes, te.centered_support)

    def test_two_point_class_mean(self):
        inputs = make_inputs([[0.0, 2.0], [2.0, 0.0], [-4.0, -4.0]], [0, 0, 1],
                             [[1.0, 1.0]], 2)
        te = center_episode(inputs)
        state = init_state(te, 2, OSTIM, 0.5)
        expected = 0.5 * (te.centered_support[0] + te.centered_support[1])
        np.testing.assert_allclose(state.prototypes[0], expected, atol=1e-15)

    def test_default_calibration(self, balanced_episode):
        te = center_episode(balanced_episode.inputs)
        state = init_state(te, 5, EOL, 0.5, eta0=10.0)
        np.testing.assert_array_equal(state.eta, np.full(5, 10.0))
        np.testing.assert_array_equal(state.delta, np.zeros(5))

    def test_missing_class_rejected(self):
        inputs = make_inputs([[1.0, 0.0], [0.0, 1.0]], [0, 0], [[1.0, 1.0]], 2)
        te = center_episode(inputs)
        with pytest.raises(ParameterError, match="class 1"):
            init_state(te, 2, EOL, 0.5)


class TestCalibratedLogits:
    def test_identity_calibration_matches_raw_cosines_bitwise(self, tiny_episode):
        te = center_episode(tiny_episode.inputs)
        state = init_state(te, 2, EOL, 0.5, eta0=1.0)
        l = calibrated_logits(state, te)
        rows = np.vstack([te.centered_support, te.centered_query])
        for i in range(rows.shape[0]):
            for j in range(2):
                assert l[i, j] == cosine_similarity(rows[i], state.prototypes[j])

    def test_scale_shift_substitution(self):
        # eta=2, delta=-1 at cosine 0.5 gives a logit of exactly 0
        from osfsl.model import TaskEmbedding

        te = TaskEmbedding(
            mu=np.zeros(2),
            centered_support=np.array([[0.5, np.sqrt(3) / 2]]),
            support_labels=np.array([0]),
            centered_query=np.empty((0, 2)),
            n_in=1,
        )
        state = ModelState(prototypes=np.array([[1.0, 0.0]]),
                           eta=np.array([2.0]), delta=np.array([-1.0]),
                           b=0.5, method=EOL)
        l = calibrated_logits(state, te)
        assert abs(l[0, 0]) < 1e-14

    def test_self_similarity_identity_calibration(self):
        from osfsl.model import TaskEmbedding

        v = np.array([0.3, -1.2, 0.7])
        te = TaskEmbedding(
            mu=np.zeros(3),
            centered_support=v[None, :],
            support_labels=np.array([0]),
            centered_query=np.empty((0, 3)),
            n_in=1,
        )
        state = ModelState(prototypes=v[None, :].copy(), eta=np.array([1.0]),
                           delta=np.array([0.0]), b=0.5, method=EOL)
        assert calibrated_logits(state, te)[0, 0] == 1.0

    def test_query_length_invariance(self, tiny_episode):
        te = center_episode(tiny_episode.inputs)
        state = init_state(te, 2, EOL, 0.5)
        l1 = calibrated_logits(state, te)
        te2 = center_episode(tiny_episode.inputs)
        object.__setattr__(te2, "centered_query", te.centered_query * 2.0)
        l2 = calibrated_logits(state, te2)
        n_s = te.centered_support.shape[0]
        np.testing.assert_allclose(l1[n_s:], l2[n_s:], atol=1e-12)


class TestOstimHead:
    def test_all_zero_logits_give_exact_uniform(self):
        table = ostim_posteriors(np.zeros((3, 4)))
        np.testing.assert_array_equal(table.probs, np.full((3, 5), 1.0 / 5.0))
        # marginals are a mean over identical rows: exact up to one rounding
        np.testing.assert_allclose(table.marginals, np.full(5, 1.0 / 5.0), atol=1e-15)

    def test_two_class_example(self):
        table = ostim_posteriors(np.array([[2.0, 0.0]]))
        np.testing.assert_allclose(table.probs[0], [0.8438, 0.1142, 0.0420], atol=1e-4)

    def test_no_shift_invariance_across_catch_all(self):
        base = ostim_posteriors(np.array([[1.0, 0.5]])).probs[0]
        shifted = ostim_posteriors(np.array([[2.0, 1.5]])).probs[0]
        assert not np.allclose(base, shifted, atol=1e-6)

    def test_rows_sum_to_one(self, rng):
        l = rng.normal(scale=5.0, size=(40, 5))
        table = ostim_posteriors(l)
        np.testing.assert_allclose(table.probs.sum(axis=1), 1.0, atol=1e-10)

    def test_marginals_average_full_query(self, rng):
        l = rng.normal(size=(30, 4))
        table = ostim_posteriors(l)
        np.testing.assert_allclose(table.marginals, table.probs.mean(axis=0), atol=1e-15)


class TestEolHead:
    def test_neutral_logits_b_one(self):
        p = eol_inlier_probability(np.zeros((1, 3)), 1.0, 3)
        assert p[0] == pytest.approx(0.5, abs=1e-15)

    def test_neutral_logits_b_half(self):
        for orient in (ORIENT_VERBATIM, ORIENT_FLIPPED):
            p = eol_inlier_probability(np.zeros((1, 2)), 0.5, 2, orient)
            assert p[0] == pytest.approx(2.0 / 3.0, abs=1e-14)

    def test_verbatim_orientation_decreases_in_logits(self):
        # literal reading: raising any class logit lowers the inlier probability
        base = eol_inlier_probability(np.array([[0.0, 0.0]]), 0.5, 2, ORIENT_VERBATIM)
        bumped = eol_inlier_probability(np.array([[0.3, 0.0]]), 0.5, 2, ORIENT_VERBATIM)
        assert bumped[0] < base[0]

    def test_flipped_orientation_increases_in_logits(self):
        base = eol_inlier_probability(np.array([[0.0, 0.0]]), 0.5, 2, ORIENT_FLIPPED)
        bumped = eol_inlier_probability(np.array([[0.3, 0.0]]), 0.5, 2, ORIENT_FLIPPED)
        assert bumped[0] > base[0]

    def test_bad_b_rejected(self):
        with pytest.raises(ParameterError):
            eol_inlier_probability(np.zeros((1, 2)), 0.0, 2)
        with pytest.raises(ParameterError):
            eol_inlier_probability(np.zeros((1, 2)), 1.5, 2)

    def test_composite_example(self):
        table = eol_posteriors(np.zeros((1, 2)), 0.5, 2)
        np.testing.assert_allclose(table.probs[0], [1 / 3, 1 / 3, 1 / 3], atol=1e-14)

    def test_inlier_prob_one_limit_collapses_to_softmax(self):
        l = np.array([[60.0, 0.0], [58.0, 2.0]])
        table = eol_posteriors(l, 0.5, 2, ORIENT_FLIPPED)
        np.testing.assert_allclose(table.probs[:, :2], row_softmax(l), atol=1e-12)
        np.testing.assert_allclose(table.probs[:, 2], 0.0, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        l = rng.normal(scale=8.0, size=(50, 5))
        table = eol_posteriors(l, 0.3, 5, ORIENT_FLIPPED)
        np.testing.assert_allclose(table.probs.sum(axis=1), 1.0, atol=1e-12)

    def test_class_prob_bounded_by_inlier_prob(self, rng):
        l = rng.normal(scale=4.0, size=(30, 4))
        p_in = eol_inlier_probability(l, 0.4, 4, ORIENT_FLIPPED)
        table = eol_posteriors(l, 0.4, 4, ORIENT_FLIPPED)
        assert np.all(table.probs[:, :4] <= p_in[:, None] + 1e-15)

    def test_argmax_invariant_to_b(self, rng):
        l = rng.normal(scale=3.0, size=(40, 5))
        ref = np.argmax(eol_posteriors(l, 0.1, 5).probs[:, :5], axis=1)
        for b in (0.3, 0.5, 0.9):
            cur = np.argmax(eol_posteriors(l, b, 5).probs[:, :5], axis=1)
            np.testing.assert_array_equal(ref, cur)


class TestPosteriorTableInvariant:
    def test_bad_rows_rejected(self):
        bad = np.array([[0.5, 0.4]])
        with pytest.raises(ParameterError):
            PosteriorTable(probs=bad, marginals=bad.mean(axis=0))


class TestQueryPosteriorDispatch:
    def test_method_dispatch(self, tiny_episode):
        te = center_episode(tiny_episode.inputs)
        for method, cols in ((OSTIM, 3), (EOL, 3)):
            state = init_state(te, 2, method, 0.5)
            table = query_posterior_table(state, te, ORIENT_FLIPPED)
            assert table.probs.shape == (len(te.centered_query), cols)
