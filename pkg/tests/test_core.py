import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zigzag.core import (
    ModelEvaluationError,
    PhaseState,
    RefreshRates,
    Skeleton,
    TargetModel,
    canonical_rate,
    flip,
    position_at,
    positions_at,
    validate_skeleton,
)
from zigzag.models import (
    CauchyModel,
    GaussianMeanModel,
    ProductGaussianModel,
    synth_logistic,
    synth_nonident,
)


def all_models():
    return [
        ProductGaussianModel([1.0, 2.0, 0.5]),
        CauchyModel(),
        GaussianMeanModel.standard_normal(50, seed=3),
        synth_logistic(64, 2, (1.0, 2.0), seed=4),
        synth_nonident(64, (-2.0, 1.0), seed=5),
    ]


def velocities(d):
    return st.lists(st.sampled_from([-1, 1]), min_size=d, max_size=d).map(np.array)


class TestFlip:
    def test_examples(self):
        assert flip([1, 1], 0).tolist() == [-1, 1]
        assert flip([-1, -1], 1).tolist() == [-1, 1]

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            flip([1, 1], 2)
        with pytest.raises(IndexError):
            flip([1, 1], -1)

    @given(st.integers(1, 8).flatmap(lambda d: st.tuples(velocities(d), st.integers(0, d - 1))))
    def test_involution_and_closure(self, args):
        v, i = args
        w = flip(v, i)
        assert set(np.abs(w)) == {1}
        assert np.array_equal(flip(w, i), v)
        assert np.sum(w != v) == 1 and w[i] == -v[i]


class TestTypes:
    def test_velocity_must_be_signs(self):
        with pytest.raises(ValueError):
            PhaseState([0.0, 1.0], [1, 0])

    def test_dimensions_must_match(self):
        with pytest.raises(ValueError):
            PhaseState([0.0, 1.0], [1])

    def test_position_must_be_finite(self):
        with pytest.raises(ValueError):
            PhaseState([math.nan], [1])


class TestCanonicalRate:
    def test_gaussian_example(self):
        m = ProductGaussianModel([1.0])
        assert canonical_rate(m, PhaseState([2.0], [1]), 0) == pytest.approx(2.0)
        assert canonical_rate(m, PhaseState([2.0], [-1]), 0) == 0.0

    def test_refreshment_adds(self):
        m = ProductGaussianModel([1.0])
        g = RefreshRates(np.array([0.5]))
        assert canonical_rate(m, PhaseState([2.0], [1]), 0, g) == pytest.approx(2.5)
        assert canonical_rate(m, PhaseState([2.0], [-1]), 0, g) == pytest.approx(0.5)

    @given(st.floats(-1e6, 1e6), st.sampled_from([-1, 1]))
    def test_cauchy_rate_at_most_one(self, x, v):
        assert canonical_rate(CauchyModel(), PhaseState([x], [v]), 0) <= 1.0

    def test_non_finite_gradient_raises(self):
        class Bad(TargetModel):
            def _datum_grads(self, xi, idx):
                return np.full((len(idx), 1), math.inf)

        with pytest.raises(ModelEvaluationError):
            canonical_rate(Bad(), PhaseState([0.0], [1]), 0)

    @pytest.mark.parametrize("model", all_models(), ids=lambda m: type(m).__name__)
    def test_rate_identity(self, model):
        rng = np.random.default_rng(0)
        g = RefreshRates(np.full(model.dim, 0.3))
        for _ in range(50):
            xi = rng.normal(size=model.dim)
            theta = rng.choice([-1, 1], size=model.dim)
            i = int(rng.integers(model.dim))
            lhs = canonical_rate(model, PhaseState(xi, theta), i, g) - canonical_rate(
                model, PhaseState(xi, flip(theta, i)), i, g)
            rhs = theta[i] * model.grad_psi_i(xi, i)
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)

    def test_refresh_symmetry(self):
        g = RefreshRates(np.array([0.2, 0.7]), fn=lambda xi, th, i: abs(xi[i]))
        rng = np.random.default_rng(1)
        for _ in range(100):
            xi, th, i = rng.normal(size=2), rng.choice([-1, 1], size=2), int(rng.integers(2))
            assert g.value(xi, th, i) == g.value(xi, flip(th, i), i)

    def test_negative_refresh_rejected(self):
        with pytest.raises(ValueError):
            RefreshRates(np.array([-1.0])).as_array(1)


@pytest.mark.parametrize("model", all_models()[2:], ids=lambda m: type(m).__name__)
def test_estimator_consistency(model):
    rng = np.random.default_rng(2)
    for _ in range(100):
        xi = rng.normal(size=model.dim)
        i = int(rng.integers(model.dim))
        est = [model.estimator(xi, i, j) for j in range(model.n_data)]
        assert np.mean(est) == pytest.approx(model.grad_psi_i(xi, i), rel=1e-8, abs=1e-10)


def test_evaluation_counter():
    m = GaussianMeanModel.standard_normal(20)
    m.grad_psi_i([0.1], 0)
    assert m.counter.count == 20
    m.estimator([0.1], 0, 3)
    assert m.counter.count == 21
    assert m.fresh().counter.count == 0


# ---------------------------------------------------------------------------
# skeletons


def random_skeleton(rng, d=3, k=30):
    times = np.concatenate([[0.0], np.cumsum(rng.exponential(size=k - 1))])
    pos = [rng.normal(size=d)]
    vel = [rng.choice([-1, 1], size=d)]
    for dt in np.diff(times):
        pos.append(pos[-1] + vel[-1] * dt)
        v = vel[-1].copy()
        if rng.random() < 0.8:
            v[rng.integers(d)] *= -1
        vel.append(v)
    return Skeleton(times, np.array(pos), np.array(vel))


class TestPositionAt:
    def test_example(self):
        sk = Skeleton.from_points([(0.0, 0.0, 1), (1.0, 1.0, -1)])
        s = position_at(sk, 0.5)
        assert s.position[0] == 0.5 and s.velocity[0] == 1

    def test_at_skeleton_times(self):
        sk = random_skeleton(np.random.default_rng(3))
        for k in range(len(sk)):
            s = position_at(sk, sk.times[k])
            assert np.array_equal(s.position, sk.positions[k])
            assert np.array_equal(s.velocity, sk.velocities[k])

    def test_outside_horizon(self):
        sk = Skeleton.from_points([(0.0, 0.0, 1), (1.0, 1.0, -1)])
        with pytest.raises(ValueError):
            position_at(sk, 1.5)
        with pytest.raises(ValueError):
            positions_at(sk, np.array([-0.1]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0, 1))
    def test_replay_oracle(self, seed, frac):
        sk = random_skeleton(np.random.default_rng(seed))
        t = frac * sk.final_time
        # replay segments from the start
        x, clock = sk.positions[0].copy(), 0.0
        for k in range(len(sk) - 1):
            step = min(sk.times[k + 1], t) - clock
            if step <= 0:
                break
            x += sk.velocities[k] * step
            clock += step
        np.testing.assert_allclose(position_at(sk, t).position, x, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(positions_at(sk, np.array([t]))[0], x, rtol=1e-9, atol=1e-9)


class TestValidate:
    def test_valid(self):
        ok, msgs = validate_skeleton(Skeleton.from_points([(0.0, 0.0, 1), (1.0, 1.0, -1)]))
        assert ok and msgs == []

    def test_flow_violation(self):
        ok, msgs = validate_skeleton(Skeleton.from_points([(0.0, 0.0, 1), (1.0, 1.5, -1)]))
        assert not ok and "flow violation at 1" in msgs

    def test_two_flips(self):
        sk = Skeleton.from_points([(0.0, [0.0, 0.0], [1, 1]), (1.0, [1.0, 1.0], [-1, -1])])
        assert not validate_skeleton(sk)[0]

    def test_non_increasing_times(self):
        sk = Skeleton.from_points([(0.0, 0.0, 1), (1.0, 1.0, -1), (1.0, 1.0, 1)])
        assert not validate_skeleton(sk)[0]

    def test_nonzero_start(self):
        assert not validate_skeleton(Skeleton.from_points([(1.0, 0.0, 1), (2.0, 1.0, 1)]))[0]

    def test_random_skeletons_valid(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            assert validate_skeleton(random_skeleton(rng))[0]


def test_pruning_keeps_trajectory():
    rng = np.random.default_rng(5)
    sk = random_skeleton(rng, k=200)
    pr = sk.pruned()
    assert len(pr) <= len(sk) and pr.final_time == sk.final_time
    assert validate_skeleton(pr)[0]
    ts = np.sort(rng.uniform(0, sk.final_time, 500))
    np.testing.assert_allclose(positions_at(pr, ts), positions_at(sk, ts), rtol=1e-9, atol=1e-9)
