import itertools

import numpy as np
import pytest

from grasscat.errors import ParameterError
from grasscat.grassmann import (
    GrassmannParams,
    IndexPartition,
    all_state_probabilities,
    check_p0,
    conditional_params,
    conditional_zero_moments,
    joint_probability,
    marginal_params,
    moments,
)
from grasscat.oracle import brute_force_table, oracle_conditional, oracle_marginal

from generators import random_valid_params
from reference_values import READER_LAMBDA_MINUS_I, READER_SIGMA


def reader_params():
    return GrassmannParams.from_lambda(np.eye(6) + READER_LAMBDA_MINUS_I)


class TestConstruction:
    def test_singular_lambda_rejected(self):
        with pytest.raises(ParameterError):
            GrassmannParams.from_lambda(np.ones((2, 2)))

    def test_inconsistent_pair_rejected(self):
        lam = np.diag([2.0, 2.0])
        with pytest.raises(ParameterError):
            GrassmannParams(lam=lam, sig=np.diag([0.5, 0.4]))

    def test_arrays_are_frozen(self):
        p = GrassmannParams.from_lambda(np.diag([2.0, 2.0]))
        with pytest.raises(ValueError):
            p.lam[0, 0] = 3.0


class TestJointProbability:
    def test_scalar(self):
        p = GrassmannParams.from_lambda(np.array([[2.0]]))
        assert joint_probability(p, [1]) == pytest.approx(0.5, abs=1e-15)
        assert joint_probability(p, [0]) == pytest.approx(0.5, abs=1e-15)

    def test_independent_pair(self):
        p = GrassmannParams.from_lambda(np.diag([2.0, 2.0]))
        assert joint_probability(p, [1, 1]) == pytest.approx(0.25, abs=1e-15)

    def test_reader_age_cooccurrence_is_zero(self):
        p = reader_params()
        # both Age bits set (indices 1 and 2) is disallowed
        for rest in itertools.product((0, 1), repeat=1):
            y = [rest[0], 1, 1, 0, 0, 0]
            assert abs(joint_probability(p, y)) <= 1e-12

    def test_normalization_over_all_states(self):
        rng = np.random.default_rng(7)
        for q in (2, 3, 4, 5):
            for _ in range(10):
                p = random_valid_params(rng, q)
                probs = all_state_probabilities(p)
                assert probs.min() >= -1e-12
                assert abs(probs.sum() - 1.0) <= 1e-10


class TestMarginal:
    def test_full_set_is_identity(self):
        rng = np.random.default_rng(3)
        p = random_valid_params(rng, 3)
        m = marginal_params(p, [0, 1, 2])
        np.testing.assert_allclose(m.sig, p.sig, atol=1e-12)

    def test_independent_diagonal(self):
        p = GrassmannParams.from_sigma(np.diag([0.3, 0.6]))
        m = marginal_params(p, [0])
        np.testing.assert_allclose(m.sig, [[0.3]], atol=1e-15)

    def test_against_enumeration(self):
        rng = np.random.default_rng(11)
        p = random_valid_params(rng, 4)
        table = brute_force_table(p)
        T = [0, 2]
        m = marginal_params(p, T)
        expected = oracle_marginal(table, T)
        for pattern, want in expected.items():
            assert joint_probability(m, pattern) == pytest.approx(want, abs=1e-10)

    def test_empty_set_rejected(self):
        p = GrassmannParams.from_lambda(np.diag([2.0, 2.0]))
        with pytest.raises(ParameterError):
            marginal_params(p, [])


class TestConditional:
    def test_unconditioned_independent_block(self):
        sig = np.diag([0.3, 0.4, 0.7])
        p = GrassmannParams.from_sigma(sig)
        part = IndexPartition(S=(0, 1), T=(2,), T1=())
        c = conditional_params(p, part)
        np.testing.assert_allclose(c.sig, sig[:2, :2], atol=1e-12)

    def test_zero_covariance_conditional_equals_marginal(self):
        # sig with sig_01 * sig_10 = 0 gives zero covariance, and with the
        # off diagonal fully zero the conditional collapses to the marginal
        sig = np.array([[0.4, 0.0], [0.0, 0.6]])
        p = GrassmannParams.from_sigma(sig)
        for t1 in ((), (1,)):
            c = conditional_params(p, IndexPartition(S=(0,), T=(1,), T1=t1))
            np.testing.assert_allclose(c.sig, [[0.4]], atol=1e-12)

    def test_ratio_against_enumeration(self):
        rng = np.random.default_rng(5)
        p = random_valid_params(rng, 3)
        table = brute_force_table(p)
        part = IndexPartition(S=(0, 1), T=(2,), T1=(2,))
        c = conditional_params(p, part)
        expected = oracle_conditional(table, (0, 1), (2,), (1,))
        assert expected.defined
        for pattern, want in expected.probs.items():
            assert joint_probability(c, pattern) == pytest.approx(want, abs=1e-10)

    def test_all_patterns_small_q(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            q = int(rng.integers(2, 5))
            p = random_valid_params(rng, q)
            table = brute_force_table(p)
            idx = list(range(q))
            for t_size in range(1, q):
                for T in itertools.combinations(idx, t_size):
                    S = tuple(i for i in idx if i not in T)
                    for t1_size in range(t_size + 1):
                        for T1 in itertools.combinations(T, t1_size):
                            y_T = [1 if t in T1 else 0 for t in T]
                            want = oracle_conditional(table, S, T, y_T)
                            if not want.defined:
                                continue
                            c = conditional_params(
                                p, IndexPartition(S=S, T=T, T1=T1)
                            )
                            for pattern, target in want.probs.items():
                                got = joint_probability(c, pattern)
                                assert got == pytest.approx(target, abs=1e-9)

    def test_product_rule(self):
        rng = np.random.default_rng(23)
        p = random_valid_params(rng, 4)
        part = IndexPartition(S=(0, 3), T=(1, 2), T1=(1,))
        c = conditional_params(p, part)
        m = marginal_params(p, part.T)
        y_T = [1, 0]
        for y_S in itertools.product((0, 1), repeat=2):
            joint = joint_probability(p, [y_S[0], y_T[0], y_T[1], y_S[1]])
            assert joint_probability(c, y_S) * joint_probability(m, y_T) == pytest.approx(
                joint, abs=1e-10
            )


class TestMoments:
    def test_scalar(self):
        p = GrassmannParams.from_lambda(np.array([[2.0]]))
        mean, cov = moments(p)
        assert mean[0] == pytest.approx(0.5)
        assert cov[0, 0] == pytest.approx(0.25)

    def test_reader_first_mean(self):
        p = GrassmannParams.from_sigma(READER_SIGMA)
        mean, _ = moments(p)
        assert mean[0] == pytest.approx(1.0 - 0.52, abs=1e-12)

    def test_against_enumeration(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            p = random_valid_params(rng, 4)
            table = brute_force_table(p)
            mean, cov = moments(p)
            np.testing.assert_allclose(mean, table.mean, atol=1e-10)
            np.testing.assert_allclose(cov, table.cov, atol=1e-10)


class TestConditionalZeroMoments:
    def test_mean_from_diagonal(self):
        p = GrassmannParams.from_lambda(np.diag([2.0, 3.0]))
        mean, _ = conditional_zero_moments(p, 0, 1)
        assert mean == pytest.approx(0.5)

    def test_zero_offdiagonal_gives_zero_covariance(self):
        p = GrassmannParams.from_lambda(np.diag([2.0, 3.0]))
        _, cov = conditional_zero_moments(p, 0, 1)
        assert cov == 0.0

    def test_against_enumeration(self):
        # the mean conditions on every other bit being zero; the covariance
        # conditions on everything but the pair being zero
        rng = np.random.default_rng(31)
        for _ in range(10):
            p = random_valid_params(rng, 3)
            table = brute_force_table(p)
            for r, s in itertools.permutations(range(3), 2):
                others = tuple(i for i in range(3) if i != r)
                cond_r = oracle_conditional(table, (r,), others, [0, 0])
                assert cond_r.defined
                want_mean = cond_r.probs.get((1,), 0.0)
                rest = tuple(i for i in range(3) if i not in (r, s))
                cond = oracle_conditional(table, (r, s), rest, [0] * len(rest))
                assert cond.defined
                mean_r = sum(p_ for (yr, _), p_ in cond.probs.items() if yr)
                mean_s = sum(p_ for (_, ys), p_ in cond.probs.items() if ys)
                e_rs = cond.probs.get((1, 1), 0.0)
                want_cov = e_rs - mean_r * mean_s
                got_mean, got_cov = conditional_zero_moments(p, r, s)
                assert got_mean == pytest.approx(want_mean, abs=1e-10)
                assert got_cov == pytest.approx(want_cov, abs=1e-10)

    def test_same_index_rejected(self):
        p = GrassmannParams.from_lambda(np.diag([2.0, 2.0]))
        with pytest.raises(ParameterError):
            conditional_zero_moments(p, 1, 1)


class TestCheckP0:
    def test_independent_passes(self):
        report = check_p0(GrassmannParams.from_lambda(np.diag([2.0, 2.0])))
        assert report.passed
        assert report.probability_sum == pytest.approx(1.0, abs=1e-12)

    def test_negative_minor_fails(self):
        p = GrassmannParams.from_lambda(np.array([[1.5, 2.0], [2.0, 1.5]]))
        report = check_p0(p)
        assert not report.passed
        assert report.min_probability < -1e-12

    def test_reader_matrix_passes(self):
        report = check_p0(reader_params())
        assert report.passed
        assert report.n_states == 64


def test_one_sided_zero_covariance_conditional_equals_marginal():
    # only the product sig_01 * sig_10 needs to vanish for the pair to be
    # uncorrelated AND the 2x2 conditional to collapse onto the marginal
    sig = np.array([[0.4, 0.0], [0.3, 0.6]])
    p = GrassmannParams.from_sigma(sig)
    mean, cov = moments(p)
    assert cov[0, 1] == 0.0
    marg = marginal_params(p, [0])
    for t1 in ((), (1,)):
        c = conditional_params(p, IndexPartition(S=(0,), T=(1,), T1=t1))
        np.testing.assert_allclose(c.sig, marg.sig, atol=1e-12)


def test_normalization_at_q16():
    rng = np.random.default_rng(161)
    p = random_valid_params(rng, 16)
    probs = all_state_probabilities(p)
    assert probs.size == 2**16
    assert probs.min() >= -1e-12
    assert abs(probs.sum() - 1.0) <= 1e-10


def test_reader_matrix_supports_all_allowed_states():
    # every allowed state carries strictly positive probability, so any
    # dataset over them has finite likelihood at this parameter
    from generators import reader_style_schema
    from grasscat.schema import enumerate_allowed_states

    p = reader_params()
    schema = reader_style_schema()
    probs = [joint_probability(p, s.bits) for s in enumerate_allowed_states(schema)]
    assert len(probs) == 24
    assert min(probs) > 0.0
    nll = -941 * sum(np.log(pr) / 24 for pr in probs)
    assert np.isfinite(nll)
